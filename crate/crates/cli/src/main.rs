mod config;
mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plot::PlotKind;

const BUNDLED: &str = include_str!("../scenarios/bundled.toml");

#[derive(Parser)]
#[command(name = "oulab", version, about = "Batch norm-gap and spectral studies for Ornstein-Uhlenbeck semigroups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario of a config file.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long, env = "OULAB_OUT", default_value = "oulab-out")]
        out: PathBuf,
        /// Scenarios run in parallel on at most this many threads.
        #[arg(long)]
        workers: Option<usize>,
        /// Replace every scenario seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Write plot data (CSV) from a scenario report.
    Plot {
        report: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inspect the bundled scenario library.
    Scenarios {
        #[arg(long)]
        list: bool,
    },
}

const EXIT_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;

fn cmd_run(config: PathBuf, out: PathBuf, workers: Option<usize>, seed_override: Option<u64>) -> ExitCode {
    if workers == Some(0) {
        eprintln!("--workers must be positive");
        return ExitCode::from(EXIT_INVALID);
    }
    let src = match std::fs::read_to_string(&config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}: {e}", config.display());
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let cfg = match config::parse(&src) {
        Ok(c) => c,
        Err(e) => {
            for d in &e.diagnostics {
                eprintln!("{}: {d}", config.display());
            }
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let index = match run::run_all(&cfg, &config.display().to_string(), &out, workers, seed_override) {
        Ok(i) => i,
        Err(e) => {
            eprintln!("writing reports to {}: {e}", out.display());
            return ExitCode::from(EXIT_INVALID);
        }
    };
    for e in &index.scenarios {
        let status = if e.passed { "ok" } else { "FAILED" };
        println!("{status:<6} {} ({}, {:.2}s)", e.scenario, e.study.name(), e.wall_clock_seconds);
    }
    println!("{} scenarios, reports in {}", index.scenarios.len(), out.display());
    if index.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}

fn cmd_plot(report: PathBuf, kind: PlotKind, out: PathBuf) -> ExitCode {
    let parsed = std::fs::read_to_string(&report)
        .map_err(|e| e.to_string())
        .and_then(|s| serde_json::from_str::<run::RunReport>(&s).map_err(|e| e.to_string()));
    let data = parsed.and_then(|r| plot::plot_data(&r, kind));
    match data.and_then(|csv| std::fs::write(&out, csv).map_err(|e| e.to_string())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {e}", report.display());
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn cmd_scenarios(list: bool) -> ExitCode {
    if !list {
        eprintln!("nothing to do; pass --list");
        return ExitCode::from(EXIT_INVALID);
    }
    let cfg = config::parse(BUNDLED).expect("bundled scenarios validate");
    for (name, s) in &cfg.scenarios {
        println!(
            "{name:<24} {:<20} {:<26} {}",
            s.study.name(),
            s.system.kind(),
            s.description.as_deref().unwrap_or("")
        );
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            workers,
            seed_override,
        } => cmd_run(config, out, workers, seed_override),
        Command::Plot { report, kind, out } => cmd_plot(report, kind, out),
        Command::Scenarios { list } => cmd_scenarios(list),
    }
}
