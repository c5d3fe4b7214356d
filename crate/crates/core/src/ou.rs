//! The linear system `dU = AU dt + B dW`: transition laws, the invariant
//! measure, path sampling, the semigroups `P(t)` and `R(t)` acting on
//! fields, and generator identities.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OuError, Result};
use crate::field::{Continuity, ScalarField, C64};
use crate::gaussian::{GaussianMeasure, GaussianSampler};
use crate::linalg::{self, expm, lyapunov_solve, support, van_loan_qt, PsdMatrix};
use crate::mc::{mc_mean, McBudget};
use crate::quad::{integrate, GaussHermite};

/// Gauss-Hermite nodes per axis for `P(t)f` quadrature.
pub const GH_NODES: usize = 32;
/// Largest support dimension handled by tensor quadrature.
pub const GH_MAX_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct OUSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: PsdMatrix,
}

impl OUSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let d = linalg::ensure_square(&a)?;
        if b.nrows() != d {
            return Err(OuError::Dimension(format!(
                "noise map has {} rows but drift is {d}x{d}",
                b.nrows()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(OuError::Domain("system matrices must be finite".into()));
        }
        let q = PsdMatrix::new(&b * b.transpose())?;
        Ok(OUSystem { a, b, q })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn q(&self) -> &PsdMatrix {
        &self.q
    }

    pub fn trace_a(&self) -> f64 {
        self.a.trace()
    }

    /// `S(t) = e^{tA}`.
    pub fn drift(&self, t: f64) -> Result<DMatrix<f64>> {
        expm(&self.a, t)
    }

    /// `Q_t`.
    pub fn qt(&self, t: f64) -> Result<PsdMatrix> {
        van_loan_qt(&self.a, &self.q, t)
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(OuError::Dimension(format!(
                "state has length {} but system dimension is {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn check_field(&self, f: &ScalarField) -> Result<()> {
        if f.dim() != self.dim() {
            return Err(OuError::Dimension(format!(
                "field lives in dimension {} but system dimension is {}",
                f.dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(OuError::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    Ok(())
}

/// Law of `U(t, x)`: `N(S(t)x, Q_t)`.
pub fn transition_law(sys: &OUSystem, t: f64, x: &DVector<f64>) -> Result<GaussianMeasure> {
    check_time(t)?;
    sys.check_point(x)?;
    GaussianMeasure::new(sys.drift(t)? * x, sys.qt(t)?)
}

/// Noise law `μ_t = N(0, Q_t)`.
pub fn noise_law(sys: &OUSystem, t: f64) -> Result<GaussianMeasure> {
    check_time(t)?;
    GaussianMeasure::new(DVector::zeros(sys.dim()), sys.qt(t)?)
}

/// `μ_∞ = N(0, Q_∞)`; requires a Hurwitz drift.
pub fn invariant_measure(sys: &OUSystem) -> Result<GaussianMeasure> {
    GaussianMeasure::new(DVector::zeros(sys.dim()), lyapunov_solve(&sys.a, &sys.q)?)
}

/// Exact samples of `U(t, x) = S(t)x + Q_t^{1/2}ξ`.
pub fn simulate_paths<R: Rng + ?Sized>(
    sys: &OUSystem,
    t: f64,
    x: &DVector<f64>,
    rng: &mut R,
    n: usize,
) -> Result<Vec<DVector<f64>>> {
    transition_law(sys, t, x)?.sample(rng, n)
}

/// Euler-Maruyama endpoints, only as a cross-check of [`simulate_paths`].
pub fn simulate_paths_euler<R: Rng + ?Sized>(
    sys: &OUSystem,
    t: f64,
    x: &DVector<f64>,
    rng: &mut R,
    n: usize,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    check_time(t)?;
    sys.check_point(x)?;
    let steps = steps.max(1);
    let h = t / steps as f64;
    let m = sys.b.ncols();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u = x.clone();
        for _ in 0..steps {
            let dw = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal) * h.sqrt());
            u = &u + &sys.a * &u * h + &sys.b * dw;
        }
        out.push(u);
    }
    Ok(out)
}

/// `R(t)f = f ∘ S(t)`, composed lazily.
pub fn drift_apply(sys: &OUSystem, t: f64, f: &ScalarField) -> Result<ScalarField> {
    check_time(t)?;
    sys.check_field(f)?;
    f.compose_linear(&sys.drift(t)?, format!("R({t})[{}]", f.label()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApplyMethod {
    Quadrature,
    MonteCarlo,
}

/// A scalar result with its error bar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: C64,
    /// Monte Carlo standard error, or the gap between two quadrature orders.
    pub error: f64,
    pub method: ApplyMethod,
    pub flagged: bool,
}

/// `P(t)` with `S(t)` and a factor of `Q_t` precomputed.
#[derive(Debug, Clone)]
pub struct OuOperator {
    s: DMatrix<f64>,
    /// `d×r` factor with `factor·factorᵀ = Q_t`, `r` the support rank.
    factor: DMatrix<f64>,
}

impl OuOperator {
    pub fn new(sys: &OUSystem, t: f64) -> Result<Self> {
        check_time(t)?;
        let s = sys.drift(t)?;
        let qt = sys.qt(t)?;
        Ok(OuOperator {
            s,
            factor: support(qt.matrix()).factor(),
        })
    }

    pub fn support_dim(&self) -> usize {
        self.factor.ncols()
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// `E f(S(t)x + Y/scale)` by tensor Gauss-Hermite on the support.
    pub fn expect_quadrature(&self, f: &ScalarField, x: &DVector<f64>, scale: f64, rule: &GaussHermite) -> Result<C64> {
        let r = self.support_dim();
        if r > GH_MAX_DIM {
            return Err(OuError::Capability(format!(
                "tensor quadrature supports noise rank <= {GH_MAX_DIM}, got {r}; use monte-carlo"
            )));
        }
        let center = &self.s * x;
        let fac = &self.factor / scale;
        let mut y = center.clone();
        Ok(rule.expect_tensor(r, |z| {
            y.copy_from(&center);
            for (k, zk) in z.iter().enumerate() {
                y.axpy(*zk, &fac.column(k), 1.0);
            }
            f.eval(&y)
        }))
    }

    pub fn apply(&self, f: &ScalarField, x: &DVector<f64>, method: ApplyMethod, budget: &McBudget) -> Result<Estimate> {
        if f.dim() != self.s.nrows() || x.len() != self.s.nrows() {
            return Err(OuError::Dimension("field, point and system dimensions disagree".into()));
        }
        match method {
            ApplyMethod::Quadrature => {
                let hi = self.expect_quadrature(f, x, 1.0, &GaussHermite::new(GH_NODES))?;
                let lo = self.expect_quadrature(f, x, 1.0, &GaussHermite::new(GH_NODES * 3 / 4))?;
                Ok(Estimate {
                    value: hi,
                    error: (hi - lo).norm(),
                    method,
                    flagged: false,
                })
            }
            ApplyMethod::MonteCarlo => {
                let center = &self.s * x;
                let r = self.support_dim();
                let m = mc_mean(budget, |rng| {
                    let z = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
                    f.eval(&(&center + &self.factor * z))
                });
                Ok(Estimate {
                    value: m.mean,
                    error: m.std_error,
                    method,
                    flagged: m.flagged,
                })
            }
        }
    }
}

/// `P(t)f(x) = E f(S(t)x + Y)`, `Y ~ N(0, Q_t)`.
pub fn ou_apply(
    sys: &OUSystem,
    t: f64,
    f: &ScalarField,
    x: &DVector<f64>,
    method: ApplyMethod,
    budget: &McBudget,
) -> Result<Estimate> {
    sys.check_field(f)?;
    sys.check_point(x)?;
    OuOperator::new(sys, t)?.apply(f, x, method, budget)
}

/// `P(t)f` as a field evaluated by Gauss-Hermite quadrature.
pub fn ou_field(sys: &OUSystem, t: f64, f: &ScalarField) -> Result<ScalarField> {
    sys.check_field(f)?;
    let op = OuOperator::new(sys, t)?;
    if op.support_dim() > GH_MAX_DIM {
        return Err(OuError::Capability("noise rank too large for quadrature".into()));
    }
    let rule = GaussHermite::new(GH_NODES);
    let inner = f.clone();
    let mut out = ScalarField::new(sys.dim(), format!("P({t})[{}]", f.label()), move |x| {
        op.expect_quadrature(&inner, x, 1.0, &rule).expect("rank checked")
    });
    if let Some(s) = f.sup_norm() {
        out = out.with_sup_norm(s);
    }
    Ok(out)
}

/// `½ Tr(Q D²f(x)) + ⟨Ax, Df(x)⟩`, with central differences when oracles
/// are absent and `fd_fallback` is set.
pub fn apply_generator(sys: &OUSystem, f: &ScalarField, x: &DVector<f64>, fd_fallback: bool) -> Result<C64> {
    sys.check_field(f)?;
    sys.check_point(x)?;
    let g = f.grad_or_fd(x, fd_fallback)?;
    let h = f.hess_or_fd(x, fd_fallback)?;
    Ok(second_order(sys.q.matrix(), &(&sys.a * x), &g, &h))
}

fn second_order(q: &DMatrix<f64>, drift: &DVector<f64>, g: &DVector<C64>, h: &DMatrix<C64>) -> C64 {
    let d = q.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            acc += h[(i, j)] * (0.5 * q[(i, j)]);
        }
        acc += g[i] * drift[i];
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    Oracles,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjugationCheck {
    pub a_tilde: DMatrix<f64>,
    pub k: f64,
    pub max_residual: f64,
}

/// Compares `½Tr QD²f + ⟨Ãx, Df⟩ + kf` with `b·L(b⁻¹f)` at the probes,
/// where `b` is the invariant density, `Ã = −Q_∞AᵀQ_∞⁻¹` and `k = −Tr A`.
pub fn conjugated_generator_check(
    sys: &OUSystem,
    f: &ScalarField,
    probes: &[DVector<f64>],
    mode: DerivativeMode,
) -> Result<ConjugationCheck> {
    sys.check_field(f)?;
    let q_inf = lyapunov_solve(&sys.a, &sys.q)?;
    let p = q_inf
        .matrix()
        .clone()
        .cholesky()
        .filter(|_| {
            let s = support(q_inf.matrix());
            s.rank() == sys.dim()
        })
        .ok_or_else(|| OuError::Degenerate("invariant covariance is singular".into()))?
        .inverse();
    let a_tilde = -(q_inf.matrix() * sys.a.transpose() * &p);
    let k = -sys.trace_a();
    let fd = mode == DerivativeMode::FiniteDifference;

    // g = b̂⁻¹ f with b̂(x) = exp(−½xᵀPx); the normalizing constant cancels.
    let p = Arc::new(p);
    let (pe, fe) = (p.clone(), f.clone());
    let mut g = ScalarField::new(sys.dim(), "conjugated", move |x| fe.eval(x) * (0.5 * x.dot(&(&*pe * x))).exp());
    if !fd {
        let (pg, fg) = (p.clone(), f.clone());
        let (ph, fh) = (p.clone(), f.clone());
        if f.has_grad() && f.has_hess() {
            g = g
                .with_grad(move |x| {
                    let px = &*pg * x;
                    let w = (0.5 * x.dot(&px)).exp();
                    let fx = fg.eval(x);
                    let df = fg.grad(x).expect("checked");
                    (df + px.map(|v| fx * v)).scale(w)
                })
                .with_hess(move |x| {
                    let px = &*ph * x;
                    let w = (0.5 * x.dot(&px)).exp();
                    let fx = fh.eval(x);
                    let df = fh.grad(x).expect("checked");
                    let d2f = fh.hess(x).expect("checked");
                    let pxc = px.map(|v| C64::new(v, 0.0));
                    let extra = (&*ph + &px * px.transpose()).map(|v| fx * v);
                    (d2f + &df * pxc.transpose() + &pxc * df.transpose() + extra).scale(w)
                });
        }
    }

    let mut worst = 0.0_f64;
    for x in probes {
        sys.check_point(x)?;
        let gf = f.grad_or_fd(x, fd)?;
        let hf = f.hess_or_fd(x, fd)?;
        let lhs = second_order(sys.q.matrix(), &(&a_tilde * x), &gf, &hf) + f.eval(x) * k;
        let b_hat = (-0.5 * x.dot(&(&*p * x))).exp();
        let rhs = apply_generator(sys, &g, x, fd)? * b_hat;
        worst = worst.max((lhs - rhs).norm());
    }
    Ok(ConjugationCheck {
        a_tilde,
        k,
        max_residual: worst,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SemigroupKind {
    /// The OU semigroup `P`.
    P,
    /// The drift semigroup `R`.
    R,
}

/// `f_δ(x) = δ⁻¹∫₀^δ T(t)f(x) dt` by adaptive quadrature in `t`.
pub fn smooth_delta(sys: &OUSystem, f: &ScalarField, delta: f64, kind: SemigroupKind) -> Result<ScalarField> {
    sys.check_field(f)?;
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(OuError::Domain(format!("smoothing time must be positive, got {delta}")));
    }
    if kind == SemigroupKind::P && sys.dim() > GH_MAX_DIM {
        return Err(OuError::Capability("P-smoothing uses quadrature and needs d <= 4".into()));
    }
    let sys = sys.clone();
    let inner = f.clone();
    let rule = Arc::new(GaussHermite::new(GH_NODES));
    let eval = move |x: &DVector<f64>| -> C64 {
        let at = |t: f64| -> C64 {
            match kind {
                SemigroupKind::R => inner.eval(&(sys.drift(t).expect("finite drift") * x)),
                SemigroupKind::P => OuOperator::new(&sys, t)
                    .and_then(|op| op.expect_quadrature(&inner, x, 1.0, &rule))
                    .expect("quadrature on a small system"),
            }
        };
        integrate(at, 0.0, delta, 1e-12, 1e-10, 4_000).value / delta
    };
    let mut out = ScalarField::new(f.dim(), format!("smoothed({delta})[{}]", f.label()), eval);
    if let Some(s) = f.sup_norm() {
        out = out.with_sup_norm(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitDefect {
    pub n: f64,
    /// Grid sup of `|V_n⁻¹P(t)V_n f − R(t)f|`.
    pub defect: f64,
    /// Monte Carlo estimate of `∫ω_f(|y|/n) dμ_t(y)`.
    pub bound: f64,
    pub bound_std_error: f64,
}

/// Samples used for the modulus bound.
pub const LIMIT_BOUND_SAMPLES: usize = 10_000;

/// Defects of the dilated OU semigroup against the drift semigroup, with
/// `V_n f(x) = f(x/n)`: `V_n⁻¹P(t)V_n f(x) = E f(S(t)x + Y/n)`.
pub fn limit_class_check(
    sys: &OUSystem,
    t: f64,
    f: &ScalarField,
    n_values: &[f64],
    probes: &[DVector<f64>],
    seed: u64,
) -> Result<Vec<LimitDefect>> {
    sys.check_field(f)?;
    let cont = f.continuity().cloned().ok_or(OuError::MissingContinuity)?;
    let op = OuOperator::new(sys, t)?;
    let law = noise_law(sys, t)?;
    let sampler: GaussianSampler = law.sampler()?;
    let mut rng = crate::mc::stream(seed, 0);
    let norms: Vec<f64> = (0..LIMIT_BOUND_SAMPLES).map(|_| sampler.draw(&mut rng).norm()).collect();
    let rule = GaussHermite::new(GH_NODES);
    let mut out = Vec::with_capacity(n_values.len());
    for &n in n_values {
        if !(n > 0.0) {
            return Err(OuError::Domain(format!("dilation factor must be positive, got {n}")));
        }
        let mut defect = 0.0_f64;
        for x in probes {
            sys.check_point(x)?;
            let lhs = if op.support_dim() <= GH_MAX_DIM {
                op.expect_quadrature(f, x, n, &rule)?
            } else {
                let center = op.drift() * x;
                let fac = &op.factor / n;
                let r = op.support_dim();
                mc_mean(&McBudget::fixed(LIMIT_BOUND_SAMPLES, seed ^ 0x51), |g| {
                    let z = DVector::from_fn(r, |_, _| g.sample::<f64, _>(StandardNormal));
                    f.eval(&(&center + &fac * z))
                })
                .mean
            };
            let rhs = f.eval(&(op.drift() * x));
            defect = defect.max((lhs - rhs).norm());
        }
        let vals: Vec<f64> = norms.iter().map(|r| cont.modulus(r / n)).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() as f64 - 1.0);
        out.push(LimitDefect {
            n,
            defect,
            bound: m,
            bound_std_error: (var / vals.len() as f64).sqrt(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongFeller {
    pub holds: bool,
    /// Largest relative residual of a column of `S(t)` off `range(Q_t)`.
    pub margin: f64,
}

/// Decides `range(S(t)) ⊆ range(Q_t^{1/2})` at tolerance `1e-8`.
pub fn strong_feller_check(sys: &OUSystem, t: f64) -> Result<StrongFeller> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(OuError::Domain(format!("strong Feller test needs t > 0, got {t}")));
    }
    let s = sys.drift(t)?;
    let sup = support(sys.qt(t)?.matrix());
    let proj = sup.projector();
    let mut margin = 0.0_f64;
    for c in s.column_iter() {
        let c = c.clone_owned();
        let res = (&c - &proj * &c).norm() / c.norm().max(f64::MIN_POSITIVE);
        margin = margin.max(res);
    }
    Ok(StrongFeller {
        holds: margin <= 1e-8,
        margin,
    })
}

/// Continuity information inherited by `R(t)f` when `f` is Lipschitz.
pub fn drift_lipschitz(sys: &OUSystem, t: f64, f: &ScalarField) -> Result<Option<Continuity>> {
    Ok(match f.continuity() {
        Some(Continuity::Lipschitz(l)) => Some(Continuity::Lipschitz(l * linalg::spectral_norm(&sys.drift(t)?))),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rot() -> OUSystem {
        OUSystem::new(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]), DMatrix::identity(2, 2)).unwrap()
    }

    fn stable2() -> OUSystem {
        OUSystem::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.8, -0.3, -0.7]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.4, 0.8]),
        )
        .unwrap()
    }

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn transition_law_cases() {
        let x = v2(1.0, -2.0);
        let l0 = transition_law(&stable2(), 0.0, &x).unwrap();
        assert_eq!(l0.mean(), &x);
        assert_eq!(l0.cov().amax(), 0.0);
        let bm = OUSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
        let l = transition_law(&bm, 1.5, &x).unwrap();
        assert!((l.cov().matrix() - DMatrix::<f64>::identity(2, 2) * 1.5).amax() < 1e-13);
        let l = transition_law(&rot(), 2.0, &x).unwrap();
        assert!((l.cov().matrix() - DMatrix::<f64>::identity(2, 2) * 2.0).amax() < 1e-12);
        assert!((l.mean() - rot().drift(2.0).unwrap() * &x).amax() < 1e-14);
    }

    #[test]
    fn invariant_measure_cases() {
        let s = OUSystem::new(-DMatrix::<f64>::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let m = invariant_measure(&s).unwrap();
        assert!((m.cov().matrix() - DMatrix::<f64>::identity(2, 2) * 0.5).amax() < 1e-14);
        let s = OUSystem::new(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_relative_eq!(invariant_measure(&s).unwrap().cov()[(0, 0)], 0.5, epsilon = 1e-15);
        assert!(matches!(invariant_measure(&rot()), Err(OuError::NotHurwitz { .. })));
    }

    #[test]
    fn simulate_paths_moments() {
        let s = stable2();
        let x = v2(1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let z = simulate_paths(&s, 0.0, &x, &mut rng, 3).unwrap();
        assert!(z.iter().all(|v| v == &x));
        let n = 100_000;
        let xs = simulate_paths(&s, 1.0, &x, &mut rng, n).unwrap();
        let mean = xs.iter().fold(DVector::zeros(2), |a, v| a + v) / n as f64;
        let qt = s.qt(1.0).unwrap();
        assert!((&mean - s.drift(1.0).unwrap() * &x).norm() < 4.0 * (qt.trace() / n as f64).sqrt());
        let mut c = DMatrix::zeros(2, 2);
        for v in &xs {
            let d = v - &mean;
            c += &d * d.transpose();
        }
        c /= (n - 1) as f64;
        let err = linalg::spectral_norm(&(c - qt.matrix()));
        assert!(err < 0.05 * linalg::spectral_norm(qt.matrix()));
    }

    #[test]
    fn euler_cross_check_agrees_in_mean() {
        let s = stable2();
        let x = v2(2.0, -1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs = simulate_paths_euler(&s, 1.0, &x, &mut rng, 4000, 400).unwrap();
        let mean = xs.iter().fold(DVector::zeros(2), |a, v| a + v) / xs.len() as f64;
        assert!((&mean - s.drift(1.0).unwrap() * &x).norm() < 0.06);
    }

    #[test]
    fn drift_apply_cases() {
        let f = ScalarField::linear(v2(0.3, -1.0));
        let s = stable2();
        let r0 = drift_apply(&s, 0.0, &f).unwrap();
        let x = v2(0.4, 0.9);
        assert_eq!(r0.eval(&x), f.eval(&x));
        let rt = drift_apply(&s, 0.7, &f).unwrap();
        let expect = x.dot(&(s.drift(0.7).unwrap().transpose() * v2(0.3, -1.0)));
        assert!((rt.eval_re(&x) - expect).abs() < 1e-14);

        let up = OUSystem::new(DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(1, 1)).unwrap();
        let ind = ScalarField::real(1, "(0,1)", |x| if x[0] > 0.0 && x[0] < 1.0 { 1.0 } else { 0.0 });
        let r = drift_apply(&up, std::f64::consts::LN_2, &ind).unwrap();
        for (p, e) in [(0.25, 1.0), (0.49, 1.0), (0.51, 0.0), (0.75, 0.0), (-0.1, 0.0)] {
            assert_eq!(r.eval_re(&DVector::from_element(1, p)), e);
        }
    }

    #[test]
    fn ou_apply_identities() {
        let s = stable2();
        let x = v2(0.5, -0.3);
        let b = McBudget::fixed(200_000, 3);
        let one = ou_apply(&s, 1.0, &ScalarField::constant(2, 1.0), &x, ApplyMethod::Quadrature, &b).unwrap();
        assert!((one.value.re - 1.0).abs() < 1e-13);
        let v = v2(1.0, 2.0);
        let lin = ou_apply(&s, 1.0, &ScalarField::linear(v.clone()), &x, ApplyMethod::Quadrature, &b).unwrap();
        assert!((lin.value.re - (s.drift(1.0).unwrap() * &x).dot(&v)).abs() < 1e-12);
        let c = ou_apply(&s, 1.0, &ScalarField::cosine(v.clone()), &x, ApplyMethod::Quadrature, &b).unwrap();
        let qt = s.qt(1.0).unwrap();
        let exact = (-0.5 * v.dot(&(qt.matrix() * &v))).exp() * (s.drift(1.0).unwrap() * &x).dot(&v).cos();
        assert!((c.value.re - exact).abs() < 1e-10);
        let mc = ou_apply(&s, 1.0, &ScalarField::cosine(v), &x, ApplyMethod::MonteCarlo, &b).unwrap();
        assert!((mc.value.re - exact).abs() <= 1e-6f64.max(3.0 * mc.error));
    }

    #[test]
    fn quadrature_capability_limit() {
        let s = OUSystem::new(-DMatrix::<f64>::identity(5, 5), DMatrix::identity(5, 5)).unwrap();
        let f = ScalarField::constant(5, 1.0);
        let r = ou_apply(&s, 1.0, &f, &DVector::zeros(5), ApplyMethod::Quadrature, &McBudget::default());
        assert!(matches!(r, Err(OuError::Capability(_))));
    }

    #[test]
    fn generator_cases() {
        let s = OUSystem::new(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let sq = ScalarField::real(1, "x^2", |x| x[0] * x[0])
            .with_grad(|x| DVector::from_element(1, C64::new(2.0 * x[0], 0.0)))
            .with_hess(|_| DMatrix::from_element(1, 1, C64::new(2.0, 0.0)));
        for x in [-1.5, 0.0, 0.7] {
            let p = DVector::from_element(1, x);
            assert!((apply_generator(&s, &sq, &p, false).unwrap().re - (1.0 - 2.0 * x * x)).abs() < 1e-14);
            let fd = apply_generator(&s, &sq.clone().without_derivatives(), &p, true).unwrap().re;
            assert!((fd - (1.0 - 2.0 * x * x)).abs() < 1e-6);
        }
        let s2 = stable2();
        let x = v2(0.3, 0.2);
        assert_eq!(apply_generator(&s2, &ScalarField::constant(2, 3.0), &x, false).unwrap().re, 0.0);
        let v = v2(1.0, -2.0);
        let l = apply_generator(&s2, &ScalarField::linear(v.clone()), &x, false).unwrap().re;
        assert!((l - (s2.a() * &x).dot(&v)).abs() < 1e-15);
        let ind = ScalarField::indicator_ball(x.clone(), 1.0);
        assert!(matches!(apply_generator(&s2, &ind, &x, false), Err(OuError::MissingOracle(_))));
    }

    #[test]
    fn conjugation_one_dim() {
        let s = OUSystem::new(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let f = ScalarField::gaussian_bump(DVector::from_element(1, 0.3), 0.5);
        let probes: Vec<_> = (-8..=8).map(|i| DVector::from_element(1, i as f64 * 0.25)).collect();
        let c = conjugated_generator_check(&s, &f, &probes, DerivativeMode::Oracles).unwrap();
        assert_relative_eq!(c.a_tilde[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(c.k, 1.0, epsilon = 1e-15);
        assert!(c.max_residual <= 1e-6);
    }

    #[test]
    fn conjugation_nonsymmetric_fd() {
        let s = stable2();
        let f = ScalarField::gaussian_bump(v2(0.2, -0.1), 0.6);
        let probes: Vec<_> = (0..25).map(|k| v2((k % 5) as f64 * 0.4 - 0.8, (k / 5) as f64 * 0.4 - 0.8)).collect();
        let c = conjugated_generator_check(&s, &f, &probes, DerivativeMode::FiniteDifference).unwrap();
        assert!(c.max_residual <= 1e-5, "residual {}", c.max_residual);
    }

    #[test]
    fn smooth_delta_properties() {
        let s = stable2();
        let f = ScalarField::constant(2, 2.0);
        let fd = smooth_delta(&s, &f, 0.5, SemigroupKind::P).unwrap();
        assert!((fd.eval_re(&v2(0.3, 0.1)) - 2.0).abs() < 1e-12);

        let v = v2(1.0, 0.5);
        let cosf = ScalarField::cosine(v);
        let delta = 0.4;
        let fd = smooth_delta(&s, &cosf, delta, SemigroupKind::R).unwrap();
        let rt = drift_apply(&s, delta / 10.0, &fd).unwrap();
        let mut worst = 0.0_f64;
        for i in -5..=5 {
            for j in -5..=5 {
                let x = v2(i as f64 * 0.6, j as f64 * 0.6);
                worst = worst.max((rt.eval(&x) - fd.eval(&x)).norm());
            }
        }
        assert!(worst <= 0.2, "sup {worst}");
        let small = smooth_delta(&s, &cosf, 1e-6, SemigroupKind::R).unwrap();
        let x = v2(0.7, -0.2);
        assert!((small.eval_re(&x) - cosf.eval_re(&x)).abs() < 1e-5);
    }

    #[test]
    fn limit_class_defects() {
        let s = stable2();
        let probes: Vec<_> = (0..9).map(|k| v2((k % 3) as f64 - 1.0, (k / 3) as f64 - 1.0)).collect();
        let c = ScalarField::constant(2, 1.0);
        for d in limit_class_check(&s, 1.0, &c, &[1.0, 2.0], &probes, 1).unwrap() {
            assert!(d.defect < 1e-13);
        }
        let f = ScalarField::cosine(v2(1.0, -0.5));
        let ds = limit_class_check(&s, 1.0, &f, &[1.0, 2.0, 4.0, 8.0, 1000.0], &probes, 1).unwrap();
        for w in ds.windows(2) {
            assert!(w[1].defect <= w[0].defect + 1e-12);
            assert_relative_eq!(w[1].bound * w[1].n, w[0].bound * w[0].n, epsilon = 1e-10);
        }
        for d in &ds {
            assert!(d.defect <= d.bound + 3.0 * d.bound_std_error);
        }
        assert!(ds.last().unwrap().defect < 1e-3);
        let ind = ScalarField::indicator_ball(DVector::zeros(2), 1.0);
        assert!(matches!(
            limit_class_check(&s, 1.0, &ind, &[1.0], &probes, 1),
            Err(OuError::MissingContinuity)
        ));
    }

    #[test]
    fn strong_feller_cases() {
        assert!(strong_feller_check(&stable2(), 0.3).unwrap().holds);
        let nb = OUSystem::new(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.5, -2.0]), DMatrix::zeros(2, 1)).unwrap();
        assert!(!strong_feller_check(&nb, 1.0).unwrap().holds);
        let hypo = OUSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        )
        .unwrap();
        // controllability rank of [B, AB]
        let ctrl = DMatrix::from_columns(&[hypo.b().column(0).clone_owned(), (hypo.a() * hypo.b()).column(0).clone_owned()]);
        assert_eq!(ctrl.rank(1e-12), 2);
        assert!(strong_feller_check(&hypo, 1.0).unwrap().holds);
    }
}
