//! Study execution and report assembly.

use std::path::Path;
use std::time::Instant;

use oulab::mc::McBudget;
use oulab::norm_gap::{self, BallWitness, DichotomyVerdict, Space, WitnessReport, DEFAULT_LEVELS, DEFAULT_RADII};
use oulab::ou::{OUSystem, SemigroupKind};
use oulab::spectral::{self, NormKind, SpectralMap};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Config, ScenarioConfig, Study};

pub const ARTIFACT: &str = "oulab";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Dichotomy commensurability tolerance when the config gives none.
const DEFAULT_TOLERANCE: f64 = 1e-9;
const DEFAULT_WEIGHTED_CELLS: usize = 800;
const DEFAULT_HERMITE_DIM: usize = 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedSource {
    Config,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedProvenance {
    pub value: u64,
    pub source: SeedSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub check: String,
    pub context: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyResults {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub witnesses: Vec<WitnessReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disjoint_balls: Vec<BallWitness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dichotomy: Option<DichotomyVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral_map: Option<SpectralMap>,
}

impl StudyResults {
    /// Names of the result sections present, for error messages.
    pub fn available(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.witnesses.is_empty() {
            out.push("witnesses");
        }
        if !self.disjoint_balls.is_empty() {
            out.push("disjoint_balls");
        }
        if self.dichotomy.is_some() {
            out.push("dichotomy");
        }
        if self.spectral_map.is_some() {
            out.push("spectral_map");
        }
        out
    }
}

/// Everything written for one scenario. Contains no wall-clock data, so
/// reruns of the same config are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub artifact: String,
    pub version: String,
    pub scenario: String,
    pub config: ScenarioConfig,
    pub seed: SeedProvenance,
    pub study: Study,
    pub results: StudyResults,
    pub failures: Vec<Failure>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub scenario: String,
    pub study: Study,
    pub report: String,
    pub passed: bool,
    pub failures: usize,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub artifact: String,
    pub version: String,
    pub config: String,
    pub scenarios: Vec<IndexEntry>,
    pub passed: bool,
    pub wall_clock_seconds: f64,
}

struct Collector {
    results: StudyResults,
    failures: Vec<Failure>,
}

impl Collector {
    fn fail(&mut self, check: &str, context: String, detail: impl ToString) {
        self.failures.push(Failure {
            check: check.into(),
            context,
            detail: detail.to_string(),
        });
    }

    fn witness(&mut self, context: String, r: oulab::Result<WitnessReport>, (t, s): (f64, f64)) {
        match r {
            Ok(mut w) => {
                if !w.sandwich_holds() {
                    self.fail(
                        "sandwich-violation",
                        context,
                        format!("lower {} upper {} outside 0 <= lower <= upper <= 2", w.lower_bound, w.upper_bound),
                    );
                }
                w.t = t;
                w.s = s;
                self.results.witnesses.push(w);
            }
            Err(e) => self.fail("study-error", context, e),
        }
    }
}

fn context(t: f64, s: f64) -> String {
    format!("t={t}, s={s}")
}

/// Zero gap for coinciding times, recorded without calling a witness.
fn identical_times(space: Space, semigroup: SemigroupKind, t: f64) -> WitnessReport {
    WitnessReport {
        space,
        semigroup,
        t,
        s: t,
        witness: norm_gap::WitnessDescription {
            kind: "identical-times".into(),
            params: Default::default(),
        },
        lower_bound: 0.0,
        upper_bound: 0.0,
        levels: vec![(0.0, 0.0)],
        flagged: false,
        diagnostics: Vec::new(),
        notes: Vec::new(),
    }
}

fn budget(cfg: &ScenarioConfig, seed: u64) -> McBudget {
    let mut b = McBudget::with_seed(seed);
    if let Some(n) = cfg.samples {
        b.max_samples = n;
    }
    if let Some(e) = cfg.target_std_error {
        b.target_std_error = e;
    }
    b
}

fn run_study(cfg: &ScenarioConfig, sys: &OUSystem, seed: u64, out: &mut Collector) {
    let budget = budget(cfg, seed);
    let levels = cfg.levels.clone().unwrap_or_else(|| DEFAULT_LEVELS.to_vec());
    let radii = cfg.radii.clone().unwrap_or_else(|| DEFAULT_RADII.to_vec());
    // The gaps are symmetric in (t, s); witnesses that need t > s get the
    // ordered pair and the report keeps the configured one.
    let ordered = |t: f64, s: f64| if t >= s { (t, s) } else { (s, t) };
    match cfg.study {
        Study::NormGapBuc => {
            for (t, s) in cfg.pairs() {
                out.witness(context(t, s), norm_gap::buc_gap(sys, t, s, &radii, &budget), (t, s));
            }
        }
        Study::NormGapL1 => {
            let kind = cfg.semigroup.unwrap_or(SemigroupKind::P);
            for (t, s) in cfg.pairs() {
                let r = if t == s {
                    Ok(identical_times(Space::L1Lebesgue, kind, t))
                } else {
                    let (hi, lo) = ordered(t, s);
                    norm_gap::l1_lebesgue_gap(sys, hi, lo, kind, &levels, &budget)
                };
                out.witness(context(t, s), r, (t, s));
            }
        }
        Study::NormGapInvariant => {
            for (t, s) in cfg.pairs() {
                out.witness(context(t, s), norm_gap::l1_invariant_gap(sys, t, s, &levels, &budget), (t, s));
            }
        }
        Study::Dichotomy => {
            match norm_gap::dichotomy_classify(sys, cfg.tolerance.unwrap_or(DEFAULT_TOLERANCE)) {
                Ok(v) => out.results.dichotomy = Some(v),
                Err(e) => out.fail("study-error", "dichotomy".into(), e),
            }
        }
        Study::SpectralMap => {
            let kind = cfg.norm.unwrap_or(NormKind::WeightedL1);
            let dim = cfg.disc_dim.unwrap_or(match kind {
                NormKind::WeightedL1 => DEFAULT_WEIGHTED_CELLS,
                NormKind::L2Hermite => DEFAULT_HERMITE_DIM,
            });
            let grid = cfg.grid.expect("validated");
            match spectral::resolvent_map(sys, &grid, kind, dim) {
                Ok(map) => {
                    if map.violations > 0 {
                        out.fail(
                            "contraction-breach",
                            "spectral-map".into(),
                            format!("{} points with Re > 0 exceed 1/Re", map.violations),
                        );
                    }
                    out.results.spectral_map = Some(map);
                }
                Err(e) => out.fail("study-error", "spectral-map".into(), e),
            }
        }
        Study::WitnessGallery => {
            for (t, s) in cfg.pairs() {
                if t == s {
                    continue;
                }
                let (hi, lo) = ordered(t, s);
                out.witness(context(t, s), norm_gap::cosine_witness(sys, t, s, seed), (t, s));
                out.witness(
                    context(t, s),
                    norm_gap::l1_lebesgue_gap(sys, hi, lo, SemigroupKind::R, &levels, &budget),
                    (t, s),
                );
                if sys.dim() <= norm_gap::L1_MAX_DIM {
                    out.witness(
                        context(t, s),
                        norm_gap::l1_lebesgue_gap(sys, hi, lo, SemigroupKind::P, &levels, &budget),
                        (t, s),
                    );
                }
                match norm_gap::disjoint_balls_witness(sys, hi, lo) {
                    Ok(b) => out.results.disjoint_balls.push(b),
                    Err(e) => out.fail("study-error", context(t, s), e),
                }
            }
        }
    }
}

/// Runs one validated scenario.
pub fn run_scenario(name: &str, cfg: &ScenarioConfig, seed_override: Option<u64>) -> RunReport {
    let seed = SeedProvenance {
        value: seed_override.unwrap_or(cfg.seed),
        source: if seed_override.is_some() {
            SeedSource::Override
        } else {
            SeedSource::Config
        },
    };
    let mut out = Collector {
        results: StudyResults::default(),
        failures: Vec::new(),
    };
    match cfg.system.build() {
        Ok(sys) => run_study(cfg, &sys, seed.value, &mut out),
        Err(e) => out.fail("invalid-system", "system".into(), e),
    }
    RunReport {
        artifact: ARTIFACT.into(),
        version: VERSION.into(),
        scenario: name.into(),
        config: cfg.clone(),
        seed,
        study: cfg.study,
        passed: out.failures.is_empty(),
        results: out.results,
        failures: out.failures,
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// Runs every scenario on a pool of `workers` threads and writes one report
/// per scenario plus `index.json` into `out_dir`.
pub fn run_all(
    config: &Config,
    config_label: &str,
    out_dir: &Path,
    workers: Option<usize>,
    seed_override: Option<u64>,
) -> std::io::Result<Index> {
    std::fs::create_dir_all(out_dir)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(std::io::Error::other)?;
    let start = Instant::now();
    let runs: Vec<(RunReport, f64)> = pool.install(|| {
        config
            .scenarios
            .par_iter()
            .map(|(name, cfg)| {
                let t0 = Instant::now();
                let r = run_scenario(name, cfg, seed_override);
                (r, t0.elapsed().as_secs_f64())
            })
            .collect()
    });
    let mut entries = Vec::with_capacity(runs.len());
    for (report, secs) in runs {
        let file = format!("{}.json", report.scenario);
        std::fs::write(out_dir.join(&file), to_json(&report))?;
        entries.push(IndexEntry {
            scenario: report.scenario.clone(),
            study: report.study,
            report: file,
            passed: report.passed,
            failures: report.failures.len(),
            wall_clock_seconds: secs,
        });
    }
    let index = Index {
        artifact: ARTIFACT.into(),
        version: VERSION.into(),
        config: config_label.into(),
        passed: entries.iter().all(|e| e.passed),
        scenarios: entries,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    std::fs::write(out_dir.join("index.json"), to_json(&index))?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse;

    fn scenario(src: &str) -> ScenarioConfig {
        parse(src).unwrap().scenarios.into_values().next().unwrap()
    }

    #[test]
    fn rotation_dichotomy_is_periodic() {
        let cfg = scenario("[scenario.r]\nsystem = { kind = \"rotation\" }\nstudy = \"dichotomy\"\nseed = 1\n");
        let r = run_scenario("r", &cfg, None);
        assert!(r.passed);
        let v = r.results.dichotomy.unwrap();
        assert_eq!(v.kind, norm_gap::DichotomyKind::Periodic);
        assert!((v.period.unwrap() - 2.0 * std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn l1_gap_keeps_configured_order() {
        let cfg = scenario(
            "[scenario.x]\nsystem = { kind = \"rotation\" }\nstudy = \"norm-gap-l1\"\nsemigroup = \"R\"\nseed = 1\nt = [0.5, 1.0]\ns = [1.0]\n",
        );
        let r = run_scenario("x", &cfg, None);
        assert!(r.passed, "{:?}", r.failures);
        let w = &r.results.witnesses;
        assert_eq!((w[0].t, w[0].s), (0.5, 1.0));
        assert!(w[0].lower_bound >= 2.0 - 1e-12);
        assert_eq!(w[1].witness.kind, "identical-times");
        assert_eq!(w[1].upper_bound, 0.0);
    }

    #[test]
    fn study_errors_become_failures() {
        // the cosine witness needs distinct drifts; S(2π) = S(0) for the rotation
        let cfg = scenario(
            "[scenario.x]\nsystem = { kind = \"rotation\" }\nstudy = \"witness-gallery\"\nseed = 1\nt = [6.283185307179586]\ns = [0.0]\n",
        );
        let r = run_scenario("x", &cfg, None);
        assert!(!r.passed);
        assert!(r.failures.iter().all(|f| f.check == "study-error"));
    }

    #[test]
    fn seed_override_is_recorded() {
        let cfg = scenario("[scenario.r]\nsystem = { kind = \"rotation\" }\nstudy = \"dichotomy\"\nseed = 1\n");
        let r = run_scenario("r", &cfg, Some(99));
        assert_eq!(r.seed, SeedProvenance { value: 99, source: SeedSource::Override });
        assert_eq!(r.config.seed, 1);
    }
}
