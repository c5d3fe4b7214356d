//! Scenario configuration: TOML parsing, validation and system construction.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use oulab::norm_gap::L1_MAX_DIM;
use oulab::ou::{OUSystem, SemigroupKind};
use oulab::spectral::{ComplexGrid, NormKind};
use oulab::systems;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    Inline {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
    },
    Rotation {
        #[serde(default = "one")]
        omega: f64,
    },
    StableRandom {
        #[serde(default = "two")]
        dim: usize,
        seed: u64,
    },
    Jordan {
        dim: usize,
        lambda: f64,
    },
    #[serde(rename = "discretized-1d-diffusion")]
    Diffusion {
        dim: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn two() -> usize {
    2
}

fn rows_to_matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>, String> {
    let n = rows.len();
    if n == 0 {
        return Err(format!("{field}: empty matrix"));
    }
    let m = rows[0].len();
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
        return Err(format!("{field}: row {i} has {} entries, expected {m}", r.len()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl SystemSpec {
    pub fn build(&self) -> Result<OUSystem, String> {
        let sys = match self {
            SystemSpec::Inline { a, b } => {
                OUSystem::new(rows_to_matrix(a, "system.a")?, rows_to_matrix(b, "system.b")?).map_err(|e| e.to_string())?
            }
            SystemSpec::Rotation { omega } => systems::rotation(*omega),
            SystemSpec::StableRandom { dim, seed } => {
                if *dim == 0 {
                    return Err("system.dim: must be positive".into());
                }
                systems::stable_random(*dim, *seed)
            }
            SystemSpec::Jordan { dim, lambda } => {
                if *dim == 0 {
                    return Err("system.dim: must be positive".into());
                }
                systems::jordan(*dim, *lambda)
            }
            SystemSpec::Diffusion { dim } => systems::discretized_diffusion(*dim).map_err(|e| e.to_string())?,
        };
        Ok(sys)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SystemSpec::Inline { .. } => "inline",
            SystemSpec::Rotation { .. } => "rotation",
            SystemSpec::StableRandom { .. } => "stable-random",
            SystemSpec::Jordan { .. } => "jordan",
            SystemSpec::Diffusion { .. } => "discretized-1d-diffusion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    NormGapBuc,
    NormGapL1,
    NormGapInvariant,
    Dichotomy,
    SpectralMap,
    WitnessGallery,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::NormGapBuc => "norm-gap-buc",
            Study::NormGapL1 => "norm-gap-l1",
            Study::NormGapInvariant => "norm-gap-invariant",
            Study::Dichotomy => "dichotomy",
            Study::SpectralMap => "spectral-map",
            Study::WitnessGallery => "witness-gallery",
        }
    }

    fn uses_times(self) -> bool {
        !matches!(self, Study::Dichotomy | Study::SpectralMap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub system: SystemSpec,
    pub study: Study,
    pub seed: u64,
    /// Times `t` and `s`; the study runs on every pair of the product.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub s: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semigroup: Option<SemigroupKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_std_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<ComplexGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disc_dim: Option<usize>,
}

impl ScenarioConfig {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.t.iter().flat_map(|&t| self.s.iter().map(move |&s| (t, s))).collect()
    }

    /// Field-level problems; an empty list means the scenario is runnable.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let sys = match self.system.build() {
            Ok(sys) => Some(sys),
            Err(e) => {
                errs.push(e);
                None
            }
        };
        let positive = |xs: &Option<Vec<f64>>, field: &str, errs: &mut Vec<String>| {
            if let Some(xs) = xs {
                if xs.is_empty() || xs.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    errs.push(format!("{field}: needs a nonempty list of positive finite values"));
                }
            }
        };
        for (field, xs) in [("t", &self.t), ("s", &self.s)] {
            if let Some(x) = xs.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                errs.push(format!("{field}: times must be finite and nonnegative, got {x}"));
            }
            if self.study.uses_times() && xs.is_empty() {
                errs.push(format!("{field}: required by study {}", self.study.name()));
            }
        }
        positive(&self.levels, "levels", &mut errs);
        positive(&self.radii, "radii", &mut errs);
        if self.samples == Some(0) {
            errs.push("samples: must be positive".into());
        }
        if let Some(e) = self.target_std_error {
            if !(e.is_finite() && e >= 0.0) {
                errs.push("target_std_error: must be finite and nonnegative".into());
            }
        }
        if let Some(tol) = self.tolerance {
            if !(tol.is_finite() && tol > 0.0) {
                errs.push("tolerance: must be positive".into());
            }
        }
        let Some(sys) = sys else { return errs };
        let d = sys.dim();
        let l1_p = matches!(self.study, Study::NormGapInvariant)
            || (self.study == Study::NormGapL1 && self.semigroup != Some(SemigroupKind::R));
        if l1_p && d > L1_MAX_DIM {
            errs.push(format!("system: L1 gaps for P run up to dimension {L1_MAX_DIM}, got {d}"));
        }
        if matches!(self.study, Study::NormGapInvariant | Study::SpectralMap) && !oulab::linalg::is_hurwitz(sys.a()) {
            errs.push(format!("system: study {} needs a stable drift", self.study.name()));
        }
        if self.study == Study::SpectralMap {
            match &self.grid {
                None => errs.push("grid: required by study spectral-map".into()),
                Some(g) => {
                    if g.n_re == 0 || g.n_im == 0 || !(g.re_min <= g.re_max && g.im_min <= g.im_max) {
                        errs.push("grid: needs n_re, n_im > 0 and min <= max on both axes".into());
                    }
                }
            }
            if self.norm.unwrap_or(NormKind::WeightedL1) == NormKind::WeightedL1 && d != 1 {
                errs.push(format!("norm: weighted-L1 maps are one-dimensional, system has dimension {d}"));
            }
            if self.disc_dim == Some(0) {
                errs.push("disc_dim: must be positive".into());
            }
        }
        errs
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    scenario: BTreeMap<String, toml::Spanned<ScenarioConfig>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub scenarios: BTreeMap<String, ScenarioConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub diagnostics: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.diagnostics.join("\n"))
    }
}

impl std::error::Error for ConfigError {}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Parses and validates a whole config; diagnostics carry line numbers and
/// `scenario.<name>.<field>` paths.
pub fn parse(src: &str) -> Result<Config, ConfigError> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| {
        let line = e.span().map(|s| format!("line {}: ", line_of(src, s.start))).unwrap_or_default();
        ConfigError {
            diagnostics: vec![format!("{line}{}", e.message())],
        }
    })?;
    let mut diagnostics = Vec::new();
    let mut scenarios = BTreeMap::new();
    for (name, spanned) in raw.scenario {
        let line = line_of(src, spanned.span().start);
        let cfg = spanned.into_inner();
        for e in cfg.validate() {
            diagnostics.push(format!("line {line}: scenario.{name}.{e}"));
        }
        scenarios.insert(name, cfg);
    }
    if diagnostics.is_empty() {
        Ok(Config { scenarios })
    } else {
        Err(ConfigError { diagnostics })
    }
}
