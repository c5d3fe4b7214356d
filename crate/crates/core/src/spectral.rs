//! Riesz projections, eigenfunction transport, heat-semigroup approximate
//! eigenvectors and resolvent-norm maps of discretized generators.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OuError, Result};
use crate::field::{ScalarField, C64};
use crate::linalg::{eigenvalues, expm, onenorm_estimate, spectral_norm, support, to_complex};
use crate::mc::{mc_mean, McBudget};
use crate::ou::{invariant_measure, OUSystem, GH_MAX_DIM, GH_NODES};
use crate::quad::GaussHermite;

// ---------------------------------------------------------------------------
// Riesz projections
// ---------------------------------------------------------------------------

pub const RIESZ_INITIAL_NODES: usize = 64;
pub const RIESZ_MAX_NODES: usize = 1024;
pub const IDEMPOTENCY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RieszProjection {
    pub lambda0: (f64, f64),
    /// Real projector; for non-real `λ₀` it projects onto the sum of the
    /// generalized eigenspaces of `λ₀` and `λ̄₀`.
    pub projector: DMatrix<f64>,
    pub subspace_dim: usize,
    pub nodes: usize,
    pub idempotency_residual: f64,
}

impl RieszProjection {
    /// `‖π₀e^{tA} − e^{tA}π₀‖₂`.
    pub fn commutation_residual(&self, a: &DMatrix<f64>, t: f64) -> Result<f64> {
        let s = expm(a, t)?;
        Ok(spectral_norm(&(&self.projector * &s - &s * &self.projector)))
    }

    /// Orthonormal basis of the range (columns).
    pub fn range_basis(&self) -> DMatrix<f64> {
        let svd = self.projector.clone().svd(true, false);
        let u = svd.u.expect("requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        DMatrix::from_fn(self.projector.nrows(), self.subspace_dim, |r, c| u[(r, order[c])])
    }
}

fn contour_integral(a: &DMatrix<C64>, center: C64, radius: f64, nodes: usize) -> Result<DMatrix<C64>> {
    let n = a.nrows();
    let id = DMatrix::<C64>::identity(n, n);
    let mut acc = DMatrix::<C64>::zeros(n, n);
    for k in 0..nodes {
        let theta = 2.0 * PI * (k as f64 + 0.5) / nodes as f64;
        let e = C64::from_polar(radius, theta);
        let z = center + e;
        let r = (&id * z - a)
            .lu()
            .try_inverse()
            .ok_or_else(|| OuError::Contour(format!("contour node {z} hits the spectrum")))?;
        acc += r * e;
    }
    Ok(acc.unscale(nodes as f64))
}

/// `π₀ = (2πi)⁻¹∮(z−A)⁻¹dz` over the circle `|z−λ₀| = ρ`, trapezoid rule
/// with node doubling until `‖π₀² − π₀‖ ≤ 1e-10`.
pub fn riesz_projection(a: &DMatrix<f64>, lambda0: C64, radius: f64) -> Result<RieszProjection> {
    crate::linalg::ensure_square(a)?;
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(OuError::Domain(format!("contour radius must be positive, got {radius}")));
    }
    let evs = eigenvalues(a)?;
    let cluster_tol = 1e-6 * (1.0 + lambda0.norm());
    let mut inside = 0usize;
    for ev in &evs {
        let dist = (ev - lambda0).norm();
        let conj_dist = (ev - lambda0.conj()).norm();
        let near_pair = dist <= cluster_tol || conj_dist <= cluster_tol;
        if near_pair {
            inside += 1;
            continue;
        }
        if (dist - radius).abs() <= 1e-8 * radius.max(1.0) {
            return Err(OuError::Contour(format!("eigenvalue {ev} lies on the contour")));
        }
        if dist < 2.0 * radius || (lambda0.im != 0.0 && conj_dist < 2.0 * radius) {
            return Err(OuError::Inapplicable(format!(
                "eigenvalue {ev} is within 2ρ of λ₀ = {lambda0}; λ₀ is not isolated at this radius"
            )));
        }
    }
    if inside == 0 {
        return Err(OuError::Inapplicable(format!("{lambda0} is not an eigenvalue")));
    }
    let real = lambda0.im.abs() <= cluster_tol;
    // a circle that would also enclose the conjugate: fold into one real circle
    let pair_inside = !real && lambda0.im.abs() < radius;
    let ac = to_complex(a);
    let mut nodes = RIESZ_INITIAL_NODES;
    loop {
        let p = contour_integral(&ac, lambda0, radius, nodes)?;
        let proj = if real || pair_inside {
            p.map(|z| z.re)
        } else {
            p.map(|z| 2.0 * z.re)
        };
        let resid = crate::linalg::max_abs(&(&proj * &proj - &proj));
        if resid <= IDEMPOTENCY_TOL || nodes >= RIESZ_MAX_NODES {
            if resid > IDEMPOTENCY_TOL {
                return Err(OuError::Numerical(format!(
                    "projector idempotency residual {resid:e} after {nodes} nodes"
                )));
            }
            let rank = proj.trace().round().max(0.0) as usize;
            return Ok(RieszProjection {
                lambda0: (lambda0.re, lambda0.im),
                projector: proj,
                subspace_dim: rank,
                nodes,
                idempotency_residual: resid,
            });
        }
        nodes *= 2;
    }
}

// ---------------------------------------------------------------------------
// Eigenfunction transport
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub t: f64,
    /// `‖P(t)f − e^{λt}f‖_{L¹(μ∞)} / ‖f‖_{L¹(μ∞)}`.
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// A base eigenfunction on the projected coordinates with its solve residual.
pub struct BaseEigenfunction {
    pub field: ScalarField,
    pub lambda: C64,
    /// Smallest singular value of `A₀ᵀ − λ` relative to `‖A₀‖`.
    pub solve_residual: f64,
}

/// Eigenfunction of the generator restricted to affine functions: the
/// restriction is `w ↦ Aᵀw` on linear parts, so `f(c) = ⟨c, w⟩` with
/// `Aᵀw = λw` (a null vector found by complex SVD).
pub fn linear_eigenfunction(sys: &OUSystem, lambda: C64) -> Result<BaseEigenfunction> {
    let k = sys.dim();
    let m = to_complex(&sys.a().transpose()) - DMatrix::<C64>::identity(k, k) * lambda;
    let svd = m.svd(false, true);
    let imin = svd.singular_values.imin();
    let scale = 1f64.max(spectral_norm(sys.a()));
    let rel = svd.singular_values[imin] / scale;
    if rel > 1e-8 {
        return Err(OuError::Domain(format!(
            "{lambda} is not an eigenvalue of the projected drift (relative gap {rel:e})"
        )));
    }
    let vt = svd.v_t.expect("requested");
    let w: DVector<C64> = vt.row(imin).transpose().map(|z| z.conj());
    let w = w.unscale(w.norm());
    let (w1, w2) = (w.clone(), w.clone());
    let field = ScalarField::new(k, "linear-eigenfunction", move |c| {
        w1.iter().zip(c.iter()).map(|(wi, ci)| wi * *ci).sum()
    })
    .with_grad(move |_| w2.clone())
    .with_hess(move |_| DMatrix::from_element(k, k, C64::new(0.0, 0.0)));
    Ok(BaseEigenfunction {
        field,
        lambda,
        solve_residual: rel,
    })
}

pub struct Transported {
    /// `f₀ = f ∘ C` on the ambient space.
    pub field: ScalarField,
    /// Coordinate map `C = Uᵀπ₀` onto the projected subspace.
    pub coords: DMatrix<f64>,
    /// The system seen in the coordinates of the invariant subspace.
    pub projected: OUSystem,
    pub residuals: Vec<Residual>,
    pub base_residuals: Vec<Residual>,
}

/// `‖P(t)(f∘C) − e^{λt}(f∘C)‖_{L¹(μ∞)} / ‖f∘C‖_{L¹(μ∞)}`: outer Monte Carlo
/// over `μ∞`, inner Gauss-Hermite over the projected noise `CY`.
pub fn eigen_residual(
    sys: &OUSystem,
    coords: &DMatrix<f64>,
    f: &ScalarField,
    lambda: C64,
    t: f64,
    budget: &McBudget,
) -> Result<Residual> {
    if coords.ncols() != sys.dim() || coords.nrows() != f.dim() {
        return Err(OuError::Dimension("coordinate map does not match system and field".into()));
    }
    let mu = invariant_measure(sys)?.sampler()?;
    let s = sys.drift(t)?;
    let cs = coords * &s;
    let cq = coords * sys.qt(t)?.matrix() * coords.transpose();
    let fac = support(&((&cq + cq.transpose()) * 0.5)).factor();
    let r = fac.ncols();
    if r > GH_MAX_DIM {
        return Err(OuError::Capability(format!(
            "projected noise has rank {r}; quadrature supports up to {GH_MAX_DIM}"
        )));
    }
    let rule = GaussHermite::new(GH_NODES);
    let growth = (lambda * t).exp();
    let pair = |rng: &mut ChaCha8Rng| -> (f64, f64) {
        let x = mu.draw(rng);
        let m = &cs * &x;
        let pf: C64 = if r == 0 {
            f.eval(&m)
        } else {
            rule.expect_tensor(r, |z| f.eval(&(&m + &fac * DVector::from_column_slice(z))))
        };
        let f0 = f.eval(&(coords * &x));
        ((pf - growth * f0).norm(), f0.norm())
    };
    let num = mc_mean(budget, |rng| Complex::new(pair(rng).0, 0.0));
    let den = mc_mean(budget, |rng| Complex::new(pair(rng).1, 0.0));
    let (n, d) = (num.mean.re, den.mean.re);
    if d <= 0.0 {
        return Err(OuError::Degenerate("field vanishes in L1(mu_inf)".into()));
    }
    Ok(Residual {
        t,
        value: n / d,
        std_error: num.std_error / d + n * den.std_error / (d * d),
        samples: num.samples,
    })
}

/// `f₀ = f∘π₀` in coordinates `Uᵀπ₀`, with eigen-residuals measured in the
/// ambient system and in the projected one at each `t`.
pub fn transport_eigenfunction(
    sys: &OUSystem,
    proj: &RieszProjection,
    lambda: C64,
    base: &ScalarField,
    times: &[f64],
    budget: &McBudget,
) -> Result<Transported> {
    if lambda.re >= 0.0 {
        return Err(OuError::Domain(format!("need Re λ < 0, got {lambda}")));
    }
    if proj.projector.nrows() != sys.dim() {
        return Err(OuError::Dimension("projector does not match the system".into()));
    }
    let u = proj.range_basis();
    if base.dim() != u.ncols() {
        return Err(OuError::Dimension(format!(
            "base field lives in dimension {} but the subspace has dimension {}",
            base.dim(),
            u.ncols()
        )));
    }
    let coords = u.transpose() * &proj.projector;
    let a0 = u.transpose() * sys.a() * &u;
    let b0 = &coords * sys.b();
    let projected = OUSystem::new(a0, b0)?;
    let field = base.compose_linear(&coords, format!("{} o pi0", base.label()))?;
    let id = DMatrix::<f64>::identity(u.ncols(), u.ncols());
    let mut residuals = Vec::new();
    let mut base_residuals = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let b = McBudget {
            seed: budget.seed.wrapping_add(i as u64),
            ..*budget
        };
        residuals.push(eigen_residual(sys, &coords, base, lambda, t, &b)?);
        base_residuals.push(eigen_residual(&projected, &id, base, lambda, t, &b)?);
    }
    Ok(Transported {
        field,
        coords,
        projected,
        residuals,
        base_residuals,
    })
}

// ---------------------------------------------------------------------------
// Heat-semigroup approximate eigenvectors
// ---------------------------------------------------------------------------

pub struct HeatApprox {
    pub lambda: C64,
    pub n: usize,
    /// `f(ξ) = exp(λ|ξ|²/n)` on ℝⁿ.
    pub f: ScalarField,
    /// `g(ξ) = −2λ²|ξ|²/n² · f(ξ)`.
    pub g: ScalarField,
    pub f_sup: f64,
    pub g_sup: f64,
    pub g_sup_formula: f64,
    /// Radius of the maximizer of `|g|`.
    pub argmax_radius: f64,
    /// `max |(λ − ½Δ)f − g|` over the probes.
    pub identity_residual: f64,
}

pub const HEAT_PROBES: usize = 100;

/// `|g|` along a ray as a function of `u = |ξ|²`.
fn heat_g_abs(lambda: C64, n: f64, u: f64) -> f64 {
    2.0 * lambda.norm_sqr() * u / (n * n) * (lambda.re * u / n).exp()
}

pub fn heat_approx_eigenvector(lambda: C64, n: usize, seed: u64) -> Result<HeatApprox> {
    if !(lambda.re < 0.0) {
        return Err(OuError::Domain(format!("need Re λ < 0, got {lambda}")));
    }
    if n == 0 {
        return Err(OuError::Domain("n must be positive".into()));
    }
    let nf = n as f64;
    let a = lambda / nf;
    let f = {
        let (a1, a2, a3) = (a, a, a);
        ScalarField::new(n, format!("heat-approx-f(n={n})"), move |x| (a1 * x.norm_squared()).exp())
            .with_grad(move |x| {
                let e = (a2 * x.norm_squared()).exp();
                x.map(|v| a2 * 2.0 * v * e)
            })
            .with_hess(move |x| {
                let e = (a3 * x.norm_squared()).exp();
                DMatrix::from_fn(n, n, |i, j| {
                    let diag = if i == j { a3 * 2.0 } else { C64::new(0.0, 0.0) };
                    (diag + a3 * a3 * 4.0 * x[i] * x[j]) * e
                })
            })
            .with_sup_norm(1.0)
    };
    let g = ScalarField::new(n, format!("heat-approx-g(n={n})"), move |x| {
        let r2 = x.norm_squared();
        lambda * lambda * (-2.0 * r2 / (nf * nf)) * (a * r2).exp()
    });

    // ln|g| = const + ln u + Re λ·u/n is concave in ln u; golden section there.
    let u_star = nf / lambda.re.abs();
    let (mut lo, mut hi) = ((u_star * 1e-3).ln(), (u_star * 1e3).ln());
    let obj = |s: f64| heat_g_abs(lambda, nf, s.exp());
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = hi - gr * (hi - lo);
        let d = lo + gr * (hi - lo);
        if obj(c) < obj(d) {
            lo = c;
        } else {
            hi = d;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let s_best = 0.5 * (lo + hi);
    let g_sup = obj(s_best);
    let g_sup_formula = 2.0 * lambda.norm_sqr() / (nf * std::f64::consts::E * lambda.re.abs());
    let f_sup = f.eval(&DVector::zeros(n)).norm();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (2.0 * u_star).sqrt();
    let mut identity_residual = 0.0_f64;
    for _ in 0..HEAT_PROBES {
        let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal)).normalize();
        let x = dir * (scale * rng.gen::<f64>());
        let lap: C64 = f.hess(&x).expect("oracle").trace();
        let lhs = lambda * f.eval(&x) - lap * 0.5;
        identity_residual = identity_residual.max((lhs - g.eval(&x)).norm());
    }
    Ok(HeatApprox {
        lambda,
        n,
        f,
        g,
        f_sup,
        g_sup,
        g_sup_formula,
        argmax_radius: (0.5 * s_best).exp(),
        identity_residual,
    })
}

// ---------------------------------------------------------------------------
// Resolvent maps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    #[serde(rename = "weighted-L1")]
    WeightedL1,
    #[serde(rename = "L2-hermite")]
    L2Hermite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexGrid {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    pub n_re: usize,
    pub n_im: usize,
}

impl ComplexGrid {
    pub fn points(&self) -> Vec<C64> {
        let lin = |a: f64, b: f64, n: usize, i: usize| {
            if n <= 1 {
                a
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(self.n_re * self.n_im);
        for j in 0..self.n_im {
            for i in 0..self.n_re {
                out.push(C64::new(
                    lin(self.re_min, self.re_max, self.n_re, i),
                    lin(self.im_min, self.im_max, self.n_im, j),
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    pub re: f64,
    pub im: f64,
    /// Resolvent norm estimate; `None` when the factorization failed.
    pub value: Option<f64>,
    /// `Re λ > 0` and `value > (1+1e-6)/Re λ`.
    pub contraction_violation: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralMap {
    pub grid: Option<ComplexGrid>,
    pub norm_kind: NormKind,
    pub discretization_dim: usize,
    /// Half-width of the truncated domain and mesh step (weighted-L1 only).
    pub truncation: Option<f64>,
    pub step: Option<f64>,
    pub points: Vec<SpectralPoint>,
    pub violations: usize,
}

/// Mesh step used below the refinement threshold: twelve standard
/// deviations over this many cells.
pub const BASE_CELLS: usize = 200;
pub const MAX_DISC_DIM: usize = 20_000;

/// Tridiagonal matrix `(lower, diag, upper)`.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub lower: Vec<C64>,
    pub diag: Vec<C64>,
    pub upper: Vec<C64>,
}

impl Tridiagonal {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i + 1, i)] = self.lower[i];
                m[(i, i + 1)] = self.upper[i];
            }
        }
        m
    }

    pub fn adjoint(&self) -> Tridiagonal {
        Tridiagonal {
            lower: self.upper.iter().map(|z| z.conj()).collect(),
            diag: self.diag.iter().map(|z| z.conj()).collect(),
            upper: self.lower.iter().map(|z| z.conj()).collect(),
        }
    }

    /// `λ − self`.
    pub fn shifted(&self, lambda: C64) -> Tridiagonal {
        Tridiagonal {
            lower: self.lower.iter().map(|z| -z).collect(),
            diag: self.diag.iter().map(|z| lambda - z).collect(),
            upper: self.upper.iter().map(|z| -z).collect(),
        }
    }
}

/// LU with partial pivoting of a tridiagonal matrix (two superdiagonals
/// after pivoting).
pub struct TridiagonalLu {
    dl: Vec<C64>,
    d: Vec<C64>,
    du: Vec<C64>,
    du2: Vec<C64>,
    swap: Vec<bool>,
}

impl TridiagonalLu {
    pub fn new(m: &Tridiagonal) -> Result<Self> {
        let n = m.dim();
        let (mut dl, mut d, mut du) = (m.lower.clone(), m.diag.clone(), m.upper.clone());
        let mut du2 = vec![C64::new(0.0, 0.0); n.saturating_sub(2)];
        let mut swap = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i].norm() == 0.0 {
                    return Err(OuError::Numerical(format!("zero pivot at row {i}")));
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let tmp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = tmp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swap[i] = true;
            }
        }
        if n > 0 && d[n - 1].norm() == 0.0 {
            return Err(OuError::Numerical("singular tridiagonal matrix".into()));
        }
        Ok(TridiagonalLu { dl, d, du, du2, swap })
    }

    pub fn solve(&self, rhs: &DVector<C64>) -> DVector<C64> {
        let n = self.d.len();
        let mut b = rhs.clone();
        for i in 0..n.saturating_sub(1) {
            if self.swap[i] {
                let tmp = b[i] - self.dl[i] * b[i + 1];
                b[i] = b[i + 1];
                b[i + 1] = tmp;
            } else {
                let v = b[i];
                b[i + 1] -= self.dl[i] * v;
            }
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            if i + 1 < n {
                v -= self.du[i] * b[i + 1];
            }
            if i + 2 < n {
                v -= self.du2[i] * b[i + 2];
            }
            b[i] = v / self.d[i];
        }
        b
    }
}

/// Generator of the 1-D OU semigroup on `L¹(μ∞)`, carried to `L¹(dx)` by
/// `f ↦ fρ∞` and discretized by a zero-flux scheme whose off-diagonal
/// weights `√(ρⱼ/ρᵢ)` keep every column sum at zero; the discrete semigroup
/// is then Markov and contractive in `ℓ¹`.
pub fn weighted_l1_generator(sys: &OUSystem, cells: usize) -> Result<(Tridiagonal, f64, f64)> {
    if sys.dim() != 1 {
        return Err(OuError::Capability("weighted-L1 discretization is implemented for d = 1".into()));
    }
    if cells < 3 || cells > MAX_DISC_DIM {
        return Err(OuError::Domain(format!("discretization size {cells} outside 3..={MAX_DISC_DIM}")));
    }
    crate::linalg::check_hurwitz(sys.a())?;
    let q = sys.q().matrix()[(0, 0)];
    if q <= 0.0 {
        return Err(OuError::Degenerate("weighted-L1 discretization needs q > 0".into()));
    }
    let a = sys.a()[(0, 0)];
    let sigma = (-q / (2.0 * a)).sqrt();
    let h0 = 12.0 * sigma / BASE_CELLS as f64;
    let half = (6.0 * sigma).max(0.5 * cells as f64 * h0);
    let h = 2.0 * half / cells as f64;
    let log_rho = |i: usize| {
        let x = -half + (i as f64 + 0.5) * h;
        -x * x / (2.0 * sigma * sigma)
    };
    let c = q / (2.0 * h * h);
    let w = |i: usize, j: usize| c * (0.5 * (log_rho(j) - log_rho(i))).exp();
    let mut m = Tridiagonal {
        lower: vec![C64::new(0.0, 0.0); cells - 1],
        diag: vec![C64::new(0.0, 0.0); cells],
        upper: vec![C64::new(0.0, 0.0); cells - 1],
    };
    for j in 0..cells {
        // column j: mass leaving cell j to its neighbours
        if j + 1 < cells {
            let v = w(j, j + 1);
            m.lower[j] = C64::new(v, 0.0);
            m.diag[j] -= v;
        }
        if j > 0 {
            let v = w(j, j - 1);
            m.upper[j - 1] = C64::new(v, 0.0);
            m.diag[j] -= v;
        }
    }
    Ok((m, half, h))
}

fn multi_indices(d: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(d: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == d - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in (0..=left).rev() {
            cur.push(k);
            rec(d, left - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=degree {
        rec(d, total, &mut Vec::new(), &mut out);
    }
    out
}

/// Number of multi-indices of total degree `≤ m` in `d` variables.
pub fn hermite_basis_size(d: usize, m: usize) -> usize {
    let mut c = 1usize;
    for i in 1..=d {
        c = c * (m + i) / i;
    }
    c
}

/// Galerkin matrix of the generator in the orthonormal Hermite basis of
/// `L²(μ∞)` up to total degree `m`, in whitened coordinates `y = L⁻¹x`
/// (`Q∞ = LLᵀ`). The diffusion and the symmetric part of the drift cancel,
/// leaving `L h_α = Σᵢₖ Ãᵢₖ √αᵢ √(αₖ − δᵢₖ + 1) h_{α−eᵢ+eₖ}` with `Ã = L⁻¹AL`;
/// the matrix is block diagonal by degree.
pub fn hermite_galerkin_matrix(sys: &OUSystem, degree: usize) -> Result<(DMatrix<f64>, Vec<Vec<usize>>)> {
    let d = sys.dim();
    let mu = invariant_measure(sys)?;
    let l = mu
        .cov()
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| OuError::Degenerate("invariant covariance is singular".into()))?
        .l();
    let linv = l.clone().try_inverse().ok_or_else(|| OuError::Numerical("singular factor".into()))?;
    let at = &linv * sys.a() * &l;
    let basis = multi_indices(d, degree);
    let index: std::collections::HashMap<Vec<usize>, usize> =
        basis.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
    let n = basis.len();
    let mut m = DMatrix::zeros(n, n);
    for (col, alpha) in basis.iter().enumerate() {
        for i in 0..d {
            if alpha[i] == 0 {
                continue;
            }
            for k in 0..d {
                let mut beta = alpha.clone();
                beta[i] -= 1;
                let up = beta[k] + 1;
                beta[k] += 1;
                let coef = at[(i, k)] * (alpha[i] as f64).sqrt() * (up as f64).sqrt();
                m[(index[&beta], col)] += coef;
            }
        }
    }
    Ok((m, basis))
}

fn degree_blocks(basis: &[Vec<usize>]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=basis.len() {
        let deg = |j: usize| basis[j].iter().sum::<usize>();
        if i == basis.len() || deg(i) != deg(start) {
            out.push(start..i);
            start = i;
        }
    }
    out
}

fn point_value(re: f64, value: Result<f64>) -> SpectralPoint {
    match value {
        Ok(v) => SpectralPoint {
            re,
            im: 0.0,
            value: Some(v),
            contraction_violation: re > 0.0 && v > (1.0 + 1e-6) / re,
            error: None,
        },
        Err(e) => SpectralPoint {
            re,
            im: 0.0,
            value: None,
            contraction_violation: false,
            error: Some(e.to_string()),
        },
    }
}

/// Resolvent norms `‖(λ − L)⁻¹‖` at the given points.
pub fn resolvent_at(sys: &OUSystem, points: &[C64], kind: NormKind, disc_dim: usize) -> Result<SpectralMap> {
    crate::linalg::check_hurwitz(sys.a())?;
    match kind {
        NormKind::WeightedL1 => {
            let (gen, half, h) = weighted_l1_generator(sys, disc_dim)?;
            let pts: Vec<SpectralPoint> = points
                .par_iter()
                .map(|&z| {
                    let shifted = gen.shifted(z);
                    let v = TridiagonalLu::new(&shifted).and_then(|lu| {
                        let adj = TridiagonalLu::new(&shifted.adjoint())?;
                        onenorm_estimate(|x| lu.solve(x), |x| adj.solve(x), disc_dim)
                    });
                    SpectralPoint {
                        im: z.im,
                        ..point_value(z.re, v)
                    }
                })
                .collect();
            Ok(assemble(None, kind, disc_dim, Some(half), Some(h), pts))
        }
        NormKind::L2Hermite => {
            let d = sys.dim();
            if disc_dim == 0 {
                return Err(OuError::Domain("discretization size must be positive".into()));
            }
            let mut degree = 0;
            while hermite_basis_size(d, degree + 1) <= disc_dim.min(MAX_DISC_DIM) {
                degree += 1;
            }
            let (m, basis) = hermite_galerkin_matrix(sys, degree)?;
            let blocks = degree_blocks(&basis);
            let mc = to_complex(&m);
            let pts: Vec<SpectralPoint> = points
                .par_iter()
                .map(|&z| {
                    let mut worst = 0.0_f64;
                    for b in &blocks {
                        let k = b.len();
                        let blk = DMatrix::<C64>::identity(k, k) * z - mc.view((b.start, b.start), (k, k));
                        let smin = blk.singular_values().min();
                        worst = worst.max(1.0 / smin);
                    }
                    let v = if worst.is_finite() {
                        Ok(worst)
                    } else {
                        Err(OuError::Numerical(format!("λ = {z} is an eigenvalue of the Galerkin matrix")))
                    };
                    SpectralPoint {
                        im: z.im,
                        ..point_value(z.re, v)
                    }
                })
                .collect();
            Ok(assemble(None, kind, m.nrows(), None, None, pts))
        }
    }
}

fn assemble(
    grid: Option<ComplexGrid>,
    kind: NormKind,
    dim: usize,
    truncation: Option<f64>,
    step: Option<f64>,
    points: Vec<SpectralPoint>,
) -> SpectralMap {
    let violations = points.iter().filter(|p| p.contraction_violation).count();
    SpectralMap {
        grid,
        norm_kind: kind,
        discretization_dim: dim,
        truncation,
        step,
        points,
        violations,
    }
}

/// [`resolvent_at`] over every point of a rectangular grid.
pub fn resolvent_map(sys: &OUSystem, grid: &ComplexGrid, kind: NormKind, disc_dim: usize) -> Result<SpectralMap> {
    let mut map = resolvent_at(sys, &grid.points(), kind, disc_dim)?;
    map.grid = Some(*grid);
    Ok(map)
}
