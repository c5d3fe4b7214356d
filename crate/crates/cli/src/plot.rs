//! Columnar plot data from run reports.

use std::fmt::Write;

use clap::ValueEnum;

use crate::run::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// Certified gap over the (t, s) pairs.
    GapHeatmap,
    /// Resolvent norm over the complex grid.
    SpectralContour,
    /// Certified lower bound per witness level.
    WitnessCurve,
}

fn label<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn missing(report: &RunReport, needed: &str) -> String {
    let available = report.results.available();
    let available = if available.is_empty() {
        "none".to_string()
    } else {
        available.join(", ")
    };
    format!("report {} has no {needed} results; available: {available}", report.scenario)
}

/// CSV text with a header row, one record per line.
pub fn plot_data(report: &RunReport, kind: PlotKind) -> Result<String, String> {
    let mut out = String::new();
    match kind {
        PlotKind::GapHeatmap => {
            if report.results.witnesses.is_empty() {
                return Err(missing(report, "witnesses"));
            }
            out.push_str("t,s,value,upper_bound,space,semigroup\n");
            for w in &report.results.witnesses {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    w.t,
                    w.s,
                    w.lower_bound,
                    w.upper_bound,
                    label(&w.space),
                    label(&w.semigroup)
                );
            }
        }
        PlotKind::SpectralContour => {
            let map = report.results.spectral_map.as_ref().ok_or_else(|| missing(report, "spectral_map"))?;
            out.push_str("re,im,value\n");
            for p in &map.points {
                let v = p.value.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{},{},{v}", p.re, p.im);
            }
        }
        PlotKind::WitnessCurve => {
            if report.results.witnesses.is_empty() {
                return Err(missing(report, "witnesses"));
            }
            out.push_str("t,s,level,lower_bound,space,semigroup\n");
            for w in &report.results.witnesses {
                for (level, bound) in &w.levels {
                    let _ = writeln!(
                        out,
                        "{},{},{level},{bound},{},{}",
                        w.t,
                        w.s,
                        label(&w.space),
                        label(&w.semigroup)
                    );
                }
            }
        }
    }
    Ok(out)
}
