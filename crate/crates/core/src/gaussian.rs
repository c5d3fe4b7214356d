//! Gaussian measures on ℝᵈ: densities, sampling, pushforwards, affinities,
//! total variation and the equivalence/singularity dichotomy.

use nalgebra::linalg::SymmetricEigen;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};
use statrs::function::gamma::gamma_lr;

use crate::error::{OuError, Result};
use crate::linalg::{max_abs, psd_sqrt, support, PsdMatrix};
pub use crate::mc::McBudget;
use crate::mc::stream;
use crate::quad::integrate_breaks;

/// Tolerance for comparing support ranges and mean offsets.
pub const RANGE_TOL: f64 = 1e-8;

const LN_2PI: f64 = 1.8378770664093453;

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(a < Z < b)` for a standard normal `Z`, evaluated on the side of the
/// nearer tail so small probabilities keep relative precision.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if a >= 0.0 {
        normal_cdf(-a) - normal_cdf(-b)
    } else if b <= 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_cdf(-b)
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeasure {
    mean: DVector<f64>,
    cov: PsdMatrix,
}

impl GaussianMeasure {
    pub fn new(mean: DVector<f64>, cov: PsdMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(OuError::Dimension(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(GaussianMeasure { mean, cov })
    }

    /// Convenience constructor from a raw covariance matrix.
    pub fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(mean, PsdMatrix::new(cov)?)
    }

    pub fn standard(dim: usize) -> Self {
        GaussianMeasure {
            mean: DVector::zeros(dim),
            cov: PsdMatrix::identity(dim),
        }
    }

    pub fn point_mass(x: DVector<f64>) -> Self {
        let d = x.len();
        GaussianMeasure {
            mean: x,
            cov: PsdMatrix::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &PsdMatrix {
        &self.cov
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(OuError::Dimension(format!(
                "point has length {} but measure lives in dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn cholesky(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let d = self.dim();
        if d > 0 {
            let eig = SymmetricEigen::new(self.cov.matrix().clone()).eigenvalues;
            let top = eig.max();
            let low = eig.min();
            if !(low > 1e-12 * top) {
                return Err(OuError::Degenerate(format!(
                    "smallest covariance eigenvalue {low:e} vs largest {top:e}"
                )));
            }
        }
        self.cov
            .matrix()
            .clone()
            .cholesky()
            .ok_or_else(|| OuError::Degenerate("Cholesky factorization failed".into()))
    }

    /// Log of the Lebesgue density.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_point(x)?;
        Ok(DensityEval::new(self)?.log_density(x))
    }

    /// Lebesgue density at `x`; requires a nondegenerate covariance.
    pub fn density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// Reusable sampler (factorizes the covariance once).
    pub fn sampler(&self) -> Result<GaussianSampler> {
        Ok(GaussianSampler {
            mean: self.mean.clone(),
            factor: psd_sqrt(self.cov.matrix())?,
        })
    }

    /// `n` i.i.d. draws; deterministic given the stream state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<DVector<f64>>> {
        let s = self.sampler()?;
        Ok((0..n).map(|_| s.draw(rng)).collect())
    }

    /// Image measure under the linear map `t`.
    pub fn pushforward(&self, t: &DMatrix<f64>) -> Result<GaussianMeasure> {
        if t.ncols() != self.dim() {
            return Err(OuError::Dimension(format!(
                "map has {} columns but measure lives in dimension {}",
                t.ncols(),
                self.dim()
            )));
        }
        let cov = t * self.cov.matrix() * t.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        GaussianMeasure::new(t * &self.mean, PsdMatrix::new(cov)?)
    }

    /// Probability of the open ball `B(center, radius)`; nondegenerate only.
    pub fn ball_probability(&self, center: &DVector<f64>, radius: f64) -> Result<f64> {
        self.check_point(center)?;
        let d = self.dim();
        let m = -DMatrix::<f64>::identity(d, d);
        let b = center * 2.0;
        let c = radius * radius - center.norm_squared();
        quadric_probability(&self.mean, self.cov.matrix(), &m, &b, c)
    }
}

/// Precomputed Cholesky data for repeated log-density evaluation.
#[derive(Debug, Clone)]
pub struct DensityEval {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl DensityEval {
    pub fn new(m: &GaussianMeasure) -> Result<Self> {
        let chol = m.cholesky()?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(DensityEval {
            mean: m.mean.clone(),
            chol_l: l,
            log_norm: -0.5 * (m.dim() as f64 * LN_2PI + log_det),
        })
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let z = self
            .chol_l
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.mean.len();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

// ---------------------------------------------------------------------------
// Quadric probabilities
// ---------------------------------------------------------------------------

/// `P(d·w² + β·w + γ > 0)` for `w ~ N(0,1)`.
fn quadric_prob_1d(d: f64, beta: f64, gamma: f64) -> f64 {
    if d == 0.0 {
        if beta == 0.0 {
            return if gamma > 0.0 { 1.0 } else { 0.0 };
        }
        return normal_cdf(gamma / beta.abs());
    }
    let disc = beta * beta - 4.0 * d * gamma;
    if !(disc > 0.0) {
        return if d > 0.0 { 1.0 } else { 0.0 };
    }
    let sq = disc.sqrt();
    let q = -0.5 * (beta + if beta >= 0.0 { sq } else { -sq });
    let (r1, r2) = (q / d, gamma / q);
    let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
    if d > 0.0 {
        normal_cdf(lo) + normal_cdf(-hi)
    } else {
        normal_interval(lo, hi)
    }
}

const OUTER_LIMIT: f64 = 38.0;

/// `P(Σ dᵢwᵢ² + βᵢwᵢ + γ > 0)` for independent standard normals, by
/// nesting adaptive quadrature over all but the last coordinate.
fn quadric_prob_separable(d: &[f64], beta: &[f64], gamma: f64) -> f64 {
    match d.len() {
        0 => {
            if gamma > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        1 => quadric_prob_1d(d[0], beta[0], gamma),
        k => {
            let (d0, b0) = (d[0], beta[0]);
            let (rest_d, rest_b) = (&d[1..], &beta[1..]);
            // Largest attainable value of the remaining terms, if bounded.
            let mut sup_rest = 0.0;
            for (&di, &bi) in rest_d.iter().zip(rest_b) {
                if di < 0.0 {
                    sup_rest += -bi * bi / (4.0 * di);
                } else if di == 0.0 && bi == 0.0 {
                } else {
                    sup_rest = f64::INFINITY;
                    break;
                }
            }
            let (mut lo, mut hi) = (-OUTER_LIMIT, OUTER_LIMIT);
            if sup_rest.is_finite() {
                let g = gamma + sup_rest;
                if d0 < 0.0 {
                    let disc = b0 * b0 - 4.0 * d0 * g;
                    if !(disc > 0.0) {
                        return 0.0;
                    }
                    let sq = disc.sqrt();
                    let r1 = (-b0 + sq) / (2.0 * d0);
                    let r2 = (-b0 - sq) / (2.0 * d0);
                    lo = lo.max(r1.min(r2));
                    hi = hi.min(r1.max(r2));
                } else if d0 == 0.0 && b0 != 0.0 {
                    let root = -g / b0;
                    if b0 > 0.0 {
                        lo = lo.max(root);
                    } else {
                        hi = hi.min(root);
                    }
                }
            }
            if !(hi > lo) {
                return 0.0;
            }
            let pieces = 8;
            let breaks: Vec<f64> = (0..=pieces)
                .map(|i| lo + (hi - lo) * i as f64 / pieces as f64)
                .collect();
            let budget = if k == 2 { 20_000 } else { 4_000 };
            let r = integrate_breaks(
                |w: f64| std_normal_pdf(w) * quadric_prob_separable(rest_d, rest_b, gamma + d0 * w * w + b0 * w),
                &breaks,
                1e-300,
                1e-11,
                budget,
            );
            r.value.clamp(0.0, 1.0)
        }
    }
}

/// `P(XᵀMX + bᵀX + c > 0)` for `X ~ N(mean, cov)` with `cov` positive
/// definite. Exact in one dimension, adaptive quadrature above.
pub fn quadric_probability(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    c: f64,
) -> Result<f64> {
    let d = mean.len();
    if cov.shape() != (d, d) || m.shape() != (d, d) || b.len() != d {
        return Err(OuError::Dimension("quadric probability inputs disagree".into()));
    }
    let l = cov
        .clone()
        .cholesky()
        .ok_or_else(|| OuError::Degenerate("covariance is not positive definite".into()))?
        .l();
    let ms = (m + m.transpose()) * 0.5;
    let mw = l.transpose() * &ms * &l;
    let bw = l.transpose() * (&ms * mean * 2.0 + b);
    let cw = mean.dot(&(&ms * mean)) + b.dot(mean) + c;
    let eig = SymmetricEigen::new((&mw + mw.transpose()) * 0.5);
    let beta = eig.eigenvectors.transpose() * bw;
    // Least curved coordinates go to the outer integrals.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].abs().total_cmp(&eig.eigenvalues[j].abs()));
    let dv: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let bv: Vec<f64> = order.iter().map(|&i| beta[i]).collect();
    Ok(quadric_prob_separable(&dv, &bv, cw))
}

// ---------------------------------------------------------------------------
// Equivalence, affinity and total variation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FhClass {
    Equivalent,
    Singular,
}

/// Coordinates on a common support: `basis` is d×r orthonormal.
struct Reduced {
    delta: DVector<f64>,
    c1: DMatrix<f64>,
    c2: DMatrix<f64>,
}

fn check_pair(m1: &GaussianMeasure, m2: &GaussianMeasure) -> Result<()> {
    if m1.dim() != m2.dim() {
        return Err(OuError::Dimension(format!(
            "measures live in dimensions {} and {}",
            m1.dim(),
            m2.dim()
        )));
    }
    Ok(())
}

fn reduce(m1: &GaussianMeasure, m2: &GaussianMeasure) -> Option<Reduced> {
    let s1 = support(m1.cov.matrix());
    let s2 = support(m2.cov.matrix());
    if s1.rank() != s2.rank() {
        return None;
    }
    let u = &s1.basis;
    let proj = u * u.transpose();
    if s2.rank() > 0 && max_abs(&(&s2.basis - &proj * &s2.basis)) > RANGE_TOL {
        return None;
    }
    let diff = &m1.mean - &m2.mean;
    let scale = 1f64.max(m1.mean.norm()).max(m2.mean.norm());
    if (&diff - &proj * &diff).norm() > RANGE_TOL * scale {
        return None;
    }
    let sym = |x: DMatrix<f64>| (&x + x.transpose()) * 0.5;
    Some(Reduced {
        delta: u.transpose() * diff,
        c1: sym(u.transpose() * m1.cov.matrix() * u),
        c2: sym(u.transpose() * m2.cov.matrix() * u),
    })
}

/// Finite-dimensional Feldman-Hajek dichotomy: equivalent iff the supports
/// coincide and the mean offset lies in the common range.
pub fn fh_classify(m1: &GaussianMeasure, m2: &GaussianMeasure) -> Result<FhClass> {
    check_pair(m1, m2)?;
    Ok(if reduce(m1, m2).is_some() {
        FhClass::Equivalent
    } else {
        FhClass::Singular
    })
}

fn log_det_pd(m: &DMatrix<f64>) -> Option<f64> {
    let l = m.clone().cholesky()?.l();
    Some(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Bhattacharyya coefficient `∫√(dμ₁dμ₂)`; zero for singular pairs.
pub fn hellinger_affinity(m1: &GaussianMeasure, m2: &GaussianMeasure) -> Result<f64> {
    check_pair(m1, m2)?;
    let Some(r) = reduce(m1, m2) else { return Ok(0.0) };
    if r.delta.is_empty() {
        return Ok(1.0);
    }
    let avg = (&r.c1 + &r.c2) * 0.5;
    let (Some(ld), Some(l1), Some(l2)) = (log_det_pd(&avg), log_det_pd(&r.c1), log_det_pd(&r.c2)) else {
        return Err(OuError::Numerical("reduced covariance lost definiteness".into()));
    };
    let sol = avg
        .clone()
        .cholesky()
        .expect("checked above")
        .solve(&r.delta);
    let db = 0.125 * r.delta.dot(&sol) + 0.5 * (ld - 0.5 * (l1 + l2));
    Ok((-db).exp().clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TvMethod {
    ClosedForm1d,
    EqualCov,
    IsotropicRadial,
    Quadrature,
    MonteCarlo,
    /// Supports or mean offsets disagree; the value is exactly 2.
    SingularSupport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvEstimate {
    pub value: f64,
    pub method: TvMethod,
    pub std_error: f64,
    /// Monte Carlo stopped at `max_samples` before reaching the target error.
    pub flagged: bool,
    pub samples: usize,
}

impl TvEstimate {
    fn exact(value: f64, method: TvMethod) -> Self {
        TvEstimate {
            value: value.clamp(0.0, 2.0),
            method,
            std_error: 0.0,
            flagged: false,
            samples: 0,
        }
    }
}

/// Orders a pair deterministically so that distances are exactly symmetric.
fn canonical<'a>(m1: &'a GaussianMeasure, m2: &'a GaussianMeasure) -> (&'a GaussianMeasure, &'a GaussianMeasure) {
    let key = |m: &'a GaussianMeasure| m.mean.iter().chain(m.cov.matrix().iter());
    for (a, b) in key(m1).zip(key(m2)) {
        match a.total_cmp(b) {
            std::cmp::Ordering::Less => return (m1, m2),
            std::cmp::Ordering::Greater => return (m2, m1),
            std::cmp::Ordering::Equal => {}
        }
    }
    (m1, m2)
}

/// Total variation `‖μ₁ − μ₂‖_var` on the scale `[0, 2]`.
///
/// Dispatch: singular pairs give 2; equal covariances use the 1-D reduction
/// along the mean offset; centred isotropic pairs use the radial crossing;
/// supports of dimension ≤ 2 use the quadric-probability formula; anything
/// else falls back to Monte Carlo.
pub fn tv_distance(m1: &GaussianMeasure, m2: &GaussianMeasure, budget: &McBudget) -> Result<TvEstimate> {
    check_pair(m1, m2)?;
    let (m1, m2) = canonical(m1, m2);
    let Some(r) = reduce(m1, m2) else {
        return Ok(TvEstimate::exact(2.0, TvMethod::SingularSupport));
    };
    let k = r.delta.len();
    if k == 0 {
        return Ok(TvEstimate::exact(0.0, TvMethod::EqualCov));
    }
    let cscale = max_abs(&r.c1).max(max_abs(&r.c2));
    if max_abs(&(&r.c1 - &r.c2)) <= 1e-12 * cscale {
        let l = r
            .c1
            .clone()
            .cholesky()
            .ok_or_else(|| OuError::Numerical("reduced covariance lost definiteness".into()))?
            .l();
        let z = l.solve_lower_triangular(&r.delta).expect("positive diagonal");
        let delta = z.norm();
        return Ok(TvEstimate::exact(
            2.0 * erf(delta / (2.0 * std::f64::consts::SQRT_2)),
            TvMethod::EqualCov,
        ));
    }
    let mscale = 1f64.max(m1.mean.norm()).max(m2.mean.norm());
    if r.delta.norm() <= 1e-12 * mscale {
        if let (Some(a), Some(b)) = (isotropic_scale(&r.c1), isotropic_scale(&r.c2)) {
            return Ok(TvEstimate::exact(radial_tv(k, a, b), TvMethod::IsotropicRadial));
        }
    }
    match k {
        1 => Ok(TvEstimate::exact(reduced_quadric_tv(&r)?, TvMethod::ClosedForm1d)),
        2 => Ok(TvEstimate::exact(reduced_quadric_tv(&r)?, TvMethod::Quadrature)),
        _ => reduced_monte_carlo(&r, budget),
    }
}

/// Total variation by the quadric-probability formula regardless of which
/// closed form would apply; supports of dimension ≤ 3.
pub fn tv_distance_quadrature(m1: &GaussianMeasure, m2: &GaussianMeasure) -> Result<TvEstimate> {
    check_pair(m1, m2)?;
    let (m1, m2) = canonical(m1, m2);
    let Some(r) = reduce(m1, m2) else {
        return Ok(TvEstimate::exact(2.0, TvMethod::SingularSupport));
    };
    match r.delta.len() {
        0 => Ok(TvEstimate::exact(0.0, TvMethod::Quadrature)),
        1..=3 => Ok(TvEstimate::exact(reduced_quadric_tv(&r)?, TvMethod::Quadrature)),
        k => Err(OuError::Capability(format!(
            "quadrature total variation supports dimension <= 3, got {k}; use Monte Carlo"
        ))),
    }
}

/// Monte Carlo total variation regardless of dimension.
pub fn tv_distance_monte_carlo(
    m1: &GaussianMeasure,
    m2: &GaussianMeasure,
    budget: &McBudget,
) -> Result<TvEstimate> {
    check_pair(m1, m2)?;
    let (m1, m2) = canonical(m1, m2);
    let Some(r) = reduce(m1, m2) else {
        return Ok(TvEstimate::exact(2.0, TvMethod::SingularSupport));
    };
    if r.delta.is_empty() {
        return Ok(TvEstimate::exact(0.0, TvMethod::MonteCarlo));
    }
    reduced_monte_carlo(&r, budget)
}

fn isotropic_scale(c: &DMatrix<f64>) -> Option<f64> {
    let k = c.nrows();
    let a = c.trace() / k as f64;
    let dev = max_abs(&(c - DMatrix::<f64>::identity(k, k) * a));
    (dev <= 1e-12 * a.abs()).then_some(a)
}

/// TV between N(0, aI) and N(0, bI) in dimension `k`.
fn radial_tv(k: usize, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    let rho = k as f64 * a * b * (b / a).ln() / (b - a);
    let half = 0.5 * k as f64;
    let f = |x: f64| gamma_lr(half, 0.5 * x);
    (2.0 * (f(rho / a) - f(rho / b))).clamp(0.0, 2.0)
}

/// `2(P₁(A) − P₂(A))` with `A = {p₁ > p₂}` written as a quadric.
fn reduced_quadric_tv(r: &Reduced) -> Result<f64> {
    let k = r.delta.len();
    let inv = |c: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        c.clone()
            .cholesky()
            .map(|ch| ch.inverse())
            .ok_or_else(|| OuError::Numerical("reduced covariance lost definiteness".into()))
    };
    let p1 = inv(&r.c1)?;
    let p2 = inv(&r.c2)?;
    let m1 = r.delta.clone();
    let m2 = DVector::zeros(k);
    let ld1 = log_det_pd(&r.c1).expect("definite");
    let ld2 = log_det_pd(&r.c2).expect("definite");
    let m = (&p2 - &p1) * 0.5;
    let b = &p1 * &m1;
    let c = -0.5 * m1.dot(&(&p1 * &m1)) + 0.5 * (ld2 - ld1);
    let a1 = quadric_probability(&m1, &r.c1, &m, &b, c)?;
    let a2 = quadric_probability(&m2, &r.c2, &m, &b, c)?;
    Ok((2.0 * (a1 - a2)).clamp(0.0, 2.0))
}

const MC_BATCH: usize = 4096;
const MC_BATCHES_PER_ROUND: usize = 8;

/// Stratified balanced-mixture estimator: half the draws from each law,
/// integrand `2|p₁−p₂|/(p₁+p₂) = 2|tanh(q/2)|` with `q = log p₁ − log p₂`.
fn reduced_monte_carlo(r: &Reduced, budget: &McBudget) -> Result<TvEstimate> {
    let k = r.delta.len();
    let g1 = GaussianMeasure::from_parts(r.delta.clone(), r.c1.clone())?;
    let g2 = GaussianMeasure::from_parts(DVector::zeros(k), r.c2.clone())?;
    let e1 = DensityEval::new(&g1)?;
    let e2 = DensityEval::new(&g2)?;
    let s1 = g1.sampler()?;
    let s2 = g2.sampler()?;
    let h = |x: &DVector<f64>| 2.0 * (0.5 * (e1.log_density(x) - e2.log_density(x))).tanh().abs();

    // Per stratum: (count, sum, sum of squares).
    let mut acc = [(0usize, 0.0f64, 0.0f64); 2];
    let mut round = 0u64;
    loop {
        let batches: Vec<[(usize, f64, f64); 2]> = (0..MC_BATCHES_PER_ROUND)
            .into_par_iter()
            .map(|j| {
                let mut rng = stream(budget.seed, round * MC_BATCHES_PER_ROUND as u64 + j as u64);
                let mut out = [(0usize, 0.0, 0.0); 2];
                for _ in 0..MC_BATCH {
                    let v = h(&s1.draw(&mut rng));
                    out[0].0 += 1;
                    out[0].1 += v;
                    out[0].2 += v * v;
                    let v = h(&s2.draw(&mut rng));
                    out[1].0 += 1;
                    out[1].1 += v;
                    out[1].2 += v * v;
                }
                out
            })
            .collect();
        for b in batches {
            for s in 0..2 {
                acc[s].0 += b[s].0;
                acc[s].1 += b[s].1;
                acc[s].2 += b[s].2;
            }
        }
        round += 1;
        let (value, se) = stratified(&acc);
        let total = acc[0].0 + acc[1].0;
        let done = se <= budget.target_std_error;
        let exhausted = total + 2 * MC_BATCH * MC_BATCHES_PER_ROUND > budget.max_samples;
        if done || exhausted {
            return Ok(TvEstimate {
                value: value.clamp(0.0, 2.0),
                method: TvMethod::MonteCarlo,
                std_error: se,
                flagged: !done,
                samples: total,
            });
        }
    }
}

fn stratified(acc: &[(usize, f64, f64); 2]) -> (f64, f64) {
    let mut value = 0.0;
    let mut var = 0.0;
    for &(n, s, ss) in acc {
        let n = n as f64;
        let mean = s / n;
        let v = (ss / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        value += 0.5 * mean;
        var += 0.25 * v / n;
    }
    (value, var.sqrt())
}

// ---------------------------------------------------------------------------
// Cameron-Martin space
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "member", rename_all = "kebab-case")]
pub enum CameronMartin {
    /// `x` lies in the range of `cov^{1/2}`; `norm = ‖cov^{-1/2}x‖`.
    Yes { norm: f64 },
    /// Least-squares residual exceeded `1e-8·‖x‖`.
    No { residual: f64 },
}

/// Membership of `x` in the Cameron-Martin space of `m`.
pub fn cameron_martin_contains(m: &GaussianMeasure, x: &DVector<f64>) -> Result<CameronMartin> {
    m.check_point(x)?;
    let xn = x.norm();
    if xn == 0.0 {
        return Ok(CameronMartin::Yes { norm: 0.0 });
    }
    let s = support(m.cov.matrix());
    let coeff = s.basis.transpose() * x;
    let residual = (x - &s.basis * &coeff).norm();
    if residual > 1e-8 * xn {
        return Ok(CameronMartin::No { residual });
    }
    let norm_sq: f64 = coeff
        .iter()
        .zip(s.eigenvalues.iter())
        .map(|(c, l)| c * c / l)
        .sum();
    Ok(CameronMartin::Yes { norm: norm_sq.sqrt() })
}
