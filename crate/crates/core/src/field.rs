//! Scalar fields on state space with optional derivative oracles.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{OuError, Result};

pub type C64 = Complex<f64>;
pub type EvalFn = Arc<dyn Fn(&DVector<f64>) -> C64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&DVector<f64>) -> DVector<C64> + Send + Sync>;
pub type HessFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<C64> + Send + Sync>;
pub type ModulusFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Uniform continuity information.
#[derive(Clone)]
pub enum Continuity {
    Lipschitz(f64),
    /// Modulus of continuity `ω(r)`.
    Modulus(ModulusFn),
}

impl Continuity {
    pub fn modulus(&self, r: f64) -> f64 {
        match self {
            Continuity::Lipschitz(l) => l * r,
            Continuity::Modulus(w) => w(r),
        }
    }
}

impl fmt::Debug for Continuity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Continuity::Lipschitz(l) => write!(f, "Lipschitz({l})"),
            Continuity::Modulus(_) => write!(f, "Modulus(..)"),
        }
    }
}

/// Gradient step of the finite-difference fallback at `x`.
pub fn fd_grad_step(x: &DVector<f64>) -> f64 {
    1e-5 * (1.0 + x.norm())
}

/// Hessian step of the finite-difference fallback at `x`; larger than the
/// gradient step because second differences divide by `h²`.
pub fn fd_hess_step(x: &DVector<f64>) -> f64 {
    1e-4 * (1.0 + x.norm())
}

/// A complex-valued function on ℝᵈ (real fields have zero imaginary part).
#[derive(Clone)]
pub struct ScalarField {
    dim: usize,
    label: String,
    eval: EvalFn,
    grad: Option<GradFn>,
    hess: Option<HessFn>,
    continuity: Option<Continuity>,
    sup_norm: Option<f64>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("grad", &self.grad.is_some())
            .field("hess", &self.hess.is_some())
            .field("continuity", &self.continuity)
            .field("sup_norm", &self.sup_norm)
            .finish()
    }
}

impl ScalarField {
    pub fn new<F>(dim: usize, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> C64 + Send + Sync + 'static,
    {
        ScalarField {
            dim,
            label: label.into(),
            eval: Arc::new(f),
            grad: None,
            hess: None,
            continuity: None,
            sup_norm: None,
        }
    }

    pub fn real<F>(dim: usize, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        Self::new(dim, label, move |x| C64::new(f(x), 0.0))
    }

    pub fn with_grad<G>(mut self, g: G) -> Self
    where
        G: Fn(&DVector<f64>) -> DVector<C64> + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(g));
        self
    }

    pub fn with_hess<H>(mut self, h: H) -> Self
    where
        H: Fn(&DVector<f64>) -> DMatrix<C64> + Send + Sync + 'static,
    {
        self.hess = Some(Arc::new(h));
        self
    }

    pub fn with_continuity(mut self, c: Continuity) -> Self {
        self.continuity = Some(c);
        self
    }

    pub fn with_sup_norm(mut self, s: f64) -> Self {
        self.sup_norm = Some(s);
        self
    }

    pub fn without_derivatives(mut self) -> Self {
        self.grad = None;
        self.hess = None;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn continuity(&self) -> Option<&Continuity> {
        self.continuity.as_ref()
    }

    pub fn sup_norm(&self) -> Option<f64> {
        self.sup_norm
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn has_hess(&self) -> bool {
        self.hess.is_some()
    }

    pub fn eval(&self, x: &DVector<f64>) -> C64 {
        (self.eval)(x)
    }

    pub fn eval_re(&self, x: &DVector<f64>) -> f64 {
        (self.eval)(x).re
    }

    pub fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(OuError::Dimension(format!(
                "field `{}` lives in dimension {} but point has length {}",
                self.label,
                self.dim,
                x.len()
            )));
        }
        Ok(())
    }

    pub fn grad(&self, x: &DVector<f64>) -> Option<DVector<C64>> {
        self.grad.as_ref().map(|g| g(x))
    }

    pub fn hess(&self, x: &DVector<f64>) -> Option<DMatrix<C64>> {
        self.hess.as_ref().map(|h| h(x))
    }

    /// Central-difference gradient with step `h`.
    pub fn fd_grad(&self, x: &DVector<f64>, h: f64) -> DVector<C64> {
        let mut g = DVector::from_element(self.dim, C64::new(0.0, 0.0));
        let mut y = x.clone();
        for i in 0..self.dim {
            y[i] = x[i] + h;
            let fp = self.eval(&y);
            y[i] = x[i] - h;
            let fm = self.eval(&y);
            y[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    /// Central-difference Hessian with step `h`.
    pub fn fd_hess(&self, x: &DVector<f64>, h: f64) -> DMatrix<C64> {
        let d = self.dim;
        let mut hm = DMatrix::from_element(d, d, C64::new(0.0, 0.0));
        let f0 = self.eval(x);
        let mut y = x.clone();
        for i in 0..d {
            y[i] = x[i] + h;
            let fp = self.eval(&y);
            y[i] = x[i] - h;
            let fm = self.eval(&y);
            y[i] = x[i];
            hm[(i, i)] = (fp - f0 * 2.0 + fm) / (h * h);
            for j in 0..i {
                let mut at = |si: f64, sj: f64| {
                    y[i] = x[i] + si * h;
                    y[j] = x[j] + sj * h;
                    let v = self.eval(&y);
                    y[i] = x[i];
                    y[j] = x[j];
                    v
                };
                let v = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
                hm[(i, j)] = v;
                hm[(j, i)] = v;
            }
        }
        hm
    }

    /// Oracle gradient, or the finite-difference fallback when allowed.
    pub fn grad_or_fd(&self, x: &DVector<f64>, fallback: bool) -> Result<DVector<C64>> {
        match self.grad(x) {
            Some(g) => Ok(g),
            None if fallback => Ok(self.fd_grad(x, fd_grad_step(x))),
            None => Err(OuError::MissingOracle(format!("gradient of `{}`", self.label))),
        }
    }

    pub fn hess_or_fd(&self, x: &DVector<f64>, fallback: bool) -> Result<DMatrix<C64>> {
        match self.hess(x) {
            Some(h) => Ok(h),
            None if fallback => Ok(self.fd_hess(x, fd_hess_step(x))),
            None => Err(OuError::MissingOracle(format!("Hessian of `{}`", self.label))),
        }
    }

    /// `x ↦ f(Mx)` for a `k×d` matrix `M` (this field lives on ℝᵏ).
    pub fn compose_linear(&self, m: &DMatrix<f64>, label: impl Into<String>) -> Result<ScalarField> {
        if m.nrows() != self.dim {
            return Err(OuError::Dimension(format!(
                "map has {} rows but field lives in dimension {}",
                m.nrows(),
                self.dim
            )));
        }
        let m = Arc::new(m.clone());
        let mc = Arc::new(m.map(|v| C64::new(v, 0.0)));
        let inner = self.eval.clone();
        let mm = m.clone();
        let mut out = ScalarField::new(m.ncols(), label, move |x| inner(&(&*mm * x)));
        if let Some(g) = self.grad.clone() {
            let (mm, mcc) = (m.clone(), mc.clone());
            out.grad = Some(Arc::new(move |x| mcc.transpose() * g(&(&*mm * x))));
        }
        if let Some(h) = self.hess.clone() {
            let (mm, mcc) = (m.clone(), mc.clone());
            out.hess = Some(Arc::new(move |x| mcc.transpose() * h(&(&*mm * x)) * &*mcc));
        }
        out.sup_norm = self.sup_norm;
        out.continuity = match &self.continuity {
            Some(Continuity::Lipschitz(l)) => Some(Continuity::Lipschitz(l * crate::linalg::spectral_norm(&m))),
            Some(Continuity::Modulus(w)) => {
                let w = w.clone();
                let s = crate::linalg::spectral_norm(&m);
                Some(Continuity::Modulus(Arc::new(move |r| w(s * r))))
            }
            None => None,
        };
        Ok(out)
    }

    // -- standard fields ---------------------------------------------------

    pub fn constant(dim: usize, c: f64) -> Self {
        ScalarField::real(dim, format!("constant({c})"), move |_| c)
            .with_grad(move |_| DVector::from_element(dim, C64::new(0.0, 0.0)))
            .with_hess(move |_| DMatrix::from_element(dim, dim, C64::new(0.0, 0.0)))
            .with_continuity(Continuity::Lipschitz(0.0))
            .with_sup_norm(c.abs())
    }

    /// `x ↦ ⟨x, v⟩`.
    pub fn linear(v: DVector<f64>) -> Self {
        let d = v.len();
        let lip = v.norm();
        let vc = v.map(|t| C64::new(t, 0.0));
        let v2 = v.clone();
        ScalarField::real(d, "linear", move |x| x.dot(&v2))
            .with_grad(move |_| vc.clone())
            .with_hess(move |_| DMatrix::from_element(d, d, C64::new(0.0, 0.0)))
            .with_continuity(Continuity::Lipschitz(lip))
    }

    /// `x ↦ cos⟨x, v⟩`.
    pub fn cosine(v: DVector<f64>) -> Self {
        Self::cosine_phase(v, 0.0)
    }

    /// `x ↦ cos(⟨x,v⟩ + φ)`.
    pub fn cosine_phase(v: DVector<f64>, phase: f64) -> Self {
        let d = v.len();
        let lip = v.norm();
        let label = if phase == 0.0 { "cosine".to_string() } else { format!("cosine(phase={phase})") };
        let (v1, v2, v3) = (v.clone(), v.clone(), v.clone());
        ScalarField::real(d, label, move |x| (x.dot(&v1) + phase).cos())
            .with_grad(move |x| v2.map(|t| C64::new(-(x.dot(&v2) + phase).sin() * t, 0.0)))
            .with_hess(move |x| (&v3 * v3.transpose() * -(x.dot(&v3) + phase).cos()).map(|t| C64::new(t, 0.0)))
            .with_continuity(Continuity::Lipschitz(lip))
            .with_sup_norm(1.0)
    }

    /// `x ↦ exp(−‖x−c‖²/(2w²))`.
    pub fn gaussian_bump(center: DVector<f64>, width: f64) -> Self {
        let d = center.len();
        let w2 = width * width;
        let (c1, c2, c3) = (center.clone(), center.clone(), center.clone());
        let val = move |x: &DVector<f64>, c: &DVector<f64>| (-(x - c).norm_squared() / (2.0 * w2)).exp();
        ScalarField::real(d, format!("gaussian-bump(w={width})"), move |x| val(x, &c1))
            .with_grad(move |x| {
                let r = x - &c2;
                let f = val(x, &c2);
                r.map(|t| C64::new(-t / w2 * f, 0.0))
            })
            .with_hess(move |x| {
                let r = x - &c3;
                let f = val(x, &c3);
                let h = (&r * r.transpose() / (w2 * w2) - DMatrix::<f64>::identity(d, d) / w2) * f;
                h.map(|t| C64::new(t, 0.0))
            })
            .with_continuity(Continuity::Lipschitz(1.0 / (width * std::f64::consts::E.sqrt())))
            .with_sup_norm(1.0)
    }

    /// Compactly supported `x ↦ exp(1 − 1/(1−‖x−c‖²/r²))` on the ball, 0 outside.
    pub fn smooth_bump(center: DVector<f64>, radius: f64) -> Self {
        let d = center.len();
        let r2 = radius * radius;
        let u_of = move |x: &DVector<f64>, c: &DVector<f64>| (x - c).norm_squared() / r2;
        let prof = |u: f64| if u < 1.0 { (1.0 - 1.0 / (1.0 - u)).exp() } else { 0.0 };
        let (c1, c2, c3) = (center.clone(), center.clone(), center.clone());
        // sup |d/dρ exp(1 − 1/(1−ρ²))| over ρ ∈ [0,1), by a fine grid
        let lip = (1..4000)
            .map(|i| {
                let rho = i as f64 / 4000.0;
                let u = rho * rho;
                2.0 * rho / (1.0 - u).powi(2) * prof(u)
            })
            .fold(0.0, f64::max)
            * 1.01
            / radius;
        ScalarField::real(d, format!("smooth-bump(r={radius})"), move |x| prof(u_of(x, &c1)))
            .with_grad(move |x| {
                let u = u_of(x, &c2);
                if u >= 1.0 {
                    return DVector::from_element(d, C64::new(0.0, 0.0));
                }
                let df = -prof(u) / (1.0 - u).powi(2);
                (x - &c2).map(|t| C64::new(df * 2.0 * t / r2, 0.0))
            })
            .with_hess(move |x| {
                let u = u_of(x, &c3);
                if u >= 1.0 {
                    return DMatrix::from_element(d, d, C64::new(0.0, 0.0));
                }
                let f = prof(u);
                let df = -f / (1.0 - u).powi(2);
                let d2f = f * (2.0 * u - 1.0) / (1.0 - u).powi(4);
                let du = (x - &c3) * (2.0 / r2);
                let h = &du * du.transpose() * d2f + DMatrix::<f64>::identity(d, d) * (2.0 * df / r2);
                h.map(|t| C64::new(t, 0.0))
            })
            .with_continuity(Continuity::Lipschitz(lip))
            .with_sup_norm(1.0)
    }

    /// Indicator of the open ball `B(center, radius)`.
    pub fn indicator_ball(center: DVector<f64>, radius: f64) -> Self {
        let d = center.len();
        ScalarField::real(d, format!("indicator-ball(r={radius})"), move |x| {
            if (x - &center).norm() < radius {
                1.0
            } else {
                0.0
            }
        })
        .with_sup_norm(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probes(d: usize) -> Vec<DVector<f64>> {
        (0..6)
            .map(|k| DVector::from_fn(d, |i, _| ((k * 7 + i * 3) as f64 * 0.37).sin() * 0.8))
            .collect()
    }

    fn check_oracles(f: &ScalarField) {
        for x in probes(f.dim()) {
            let g = f.grad(&x).unwrap();
            let gf = f.fd_grad(&x, 1e-6);
            let h = f.hess(&x).unwrap();
            let hf = f.fd_hess(&x, 1e-4);
            let gs = g.iter().map(|v| v.norm()).fold(1.0, f64::max);
            let hs = h.iter().map(|v| v.norm()).fold(1.0, f64::max);
            assert!((&g - &gf).iter().all(|v| v.norm() <= 1e-5 * gs), "{}: grad", f.label());
            assert!((&h - &hf).iter().all(|v| v.norm() <= 1e-5 * hs), "{}: hess", f.label());
        }
    }

    #[test]
    fn oracles_match_finite_differences() {
        check_oracles(&ScalarField::cosine(DVector::from_vec(vec![1.3, -0.4])));
        check_oracles(&ScalarField::gaussian_bump(DVector::from_vec(vec![0.2, 0.1]), 0.7));
        check_oracles(&ScalarField::smooth_bump(DVector::from_vec(vec![0.0, 0.3]), 2.0));
        check_oracles(&ScalarField::linear(DVector::from_vec(vec![1.0, 2.0, 3.0])));
    }

    #[test]
    fn compose_linear_chain_rule() {
        let f = ScalarField::cosine(DVector::from_vec(vec![0.5, 1.0]));
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 0.0, -0.3, 1.0, 2.0]);
        let g = f.compose_linear(&m, "composed").unwrap();
        check_oracles(&g);
        let x = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        assert_eq!(g.eval(&x), f.eval(&(&m * &x)));
    }

    #[test]
    fn missing_oracle_without_fallback() {
        let f = ScalarField::indicator_ball(DVector::zeros(1), 1.0);
        assert!(matches!(f.grad_or_fd(&DVector::zeros(1), false), Err(OuError::MissingOracle(_))));
    }
}
