//! Dense linear-algebra kernels shared by every other module.
//!
//! Everything here is a pure function of its inputs. Matrices are
//! `nalgebra::DMatrix<f64>`; complex work uses `Complex<f64>`.

use nalgebra::linalg::{Schur, SymmetricEigen};
use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{OuError, Result};

pub type C64 = Complex<f64>;

/// Largest admissible `‖tA‖₁` before scaling and squaring.
pub const EXPM_NORM_CAP: f64 = 1_099_511_627_776.0; // 2^40

/// Relative symmetry tolerance for PSD inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Relative eigenvalue floor for PSD inputs and clipping in square roots.
pub const PSD_TOL: f64 = 1e-10;

/// Real-part tolerance of the Hurwitz test.
pub const HURWITZ_TOL: f64 = 1e-10;

/// Relative rank tolerance for support (range) computations.
pub const RANK_TOL: f64 = 1e-10;

const SCHUR_MAX_ITER: usize = 100_000;

pub(crate) fn ensure_square(a: &DMatrix<f64>) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(OuError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(a.nrows())
}

/// Induced 1-norm (maximum absolute column sum).
pub fn onenorm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Induced 1-norm of a complex matrix.
pub fn onenorm_c(a: &DMatrix<C64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn to_complex(a: &DMatrix<f64>) -> DMatrix<C64> {
    a.map(|v| C64::new(v, 0.0))
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

// ---------------------------------------------------------------------------
// Matrix exponential
// ---------------------------------------------------------------------------

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Backward-error bounds for the [m/m] approximants in the 1-norm.
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

fn pade_solve(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = &v + &u;
    let q = &v - &u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| OuError::Numerical("singular Pade denominator".into()))
}

fn pade_low(a: &DMatrix<f64>, coeffs: &[f64]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let a2 = a * a;
    let mut pow = DMatrix::<f64>::identity(n, n);
    let mut u_inner = DMatrix::<f64>::zeros(n, n);
    let mut v = DMatrix::<f64>::zeros(n, n);
    for k in (0..coeffs.len()).step_by(2) {
        v += &pow * coeffs[k];
        u_inner += &pow * coeffs[k + 1];
        pow = &pow * &a2;
    }
    pade_solve(a * u_inner, v)
}

fn pade13(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_tail = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (u_tail + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let v_tail = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_tail + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    pade_solve(u, v)
}

/// `e^{tA}` by scaling and squaring around diagonal Padé approximants.
///
/// Negative `t` is allowed. Inputs with `‖tA‖₁ > 2^40` are rejected rather
/// than squared into overflow.
pub fn expm(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let n = ensure_square(a)?;
    if !t.is_finite() {
        return Err(OuError::Domain(format!("time {t} is not finite")));
    }
    let ta = a * t;
    let norm = onenorm(&ta);
    if !norm.is_finite() || norm > EXPM_NORM_CAP {
        return Err(OuError::Range(format!(
            "‖tA‖₁ = {norm:e} exceeds the cap 2^40"
        )));
    }
    if norm == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    for &(m, theta) in THETA.iter() {
        if norm <= theta {
            let coeffs: &[f64] = match m {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            return pade_low(&ta, coeffs);
        }
    }
    let s = (norm / THETA13).log2().ceil().max(0.0) as i32;
    let scaled = ta * 2f64.powi(-s);
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(OuError::Range("matrix exponential overflowed".into()));
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// Eigenvalues and the Hurwitz test
// ---------------------------------------------------------------------------

/// Real Schur form `A = U T Uᵀ`, returned as `(U, T)`.
pub fn real_schur(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    ensure_square(a)?;
    let schur = Schur::try_new(a.clone(), f64::EPSILON, SCHUR_MAX_ITER)
        .ok_or_else(|| OuError::Numerical("Schur iteration did not converge".into()))?;
    Ok(schur.unpack())
}

/// Diagonal blocks `(start, size)` of a quasi-triangular Schur factor.
fn schur_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n {
            let sub = t[(i + 1, i)].abs();
            let scale = t[(i, i)].abs() + t[(i + 1, i + 1)].abs();
            if sub > 1e-14 * scale.max(f64::MIN_POSITIVE) && sub != 0.0 {
                blocks.push((i, 2));
                i += 2;
                continue;
            }
        }
        blocks.push((i, 1));
        i += 1;
    }
    blocks
}

/// Eigenvalues of a real square matrix (complex pairs adjacent).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<C64>> {
    let n = ensure_square(a)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let (_, t) = real_schur(a)?;
    let mut out = Vec::with_capacity(n);
    for (i, size) in schur_blocks(&t) {
        if size == 1 {
            out.push(C64::new(t[(i, i)], 0.0));
        } else {
            let (p, q, r, s) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let mean = 0.5 * (p + s);
            let disc = 0.25 * (p - s) * (p - s) + q * r;
            if disc >= 0.0 {
                out.push(C64::new(mean + disc.sqrt(), 0.0));
                out.push(C64::new(mean - disc.sqrt(), 0.0));
            } else {
                out.push(C64::new(mean, (-disc).sqrt()));
                out.push(C64::new(mean, -(-disc).sqrt()));
            }
        }
    }
    Ok(out)
}

/// Rejects matrices with an eigenvalue of real part `>= -1e-10`.
pub fn check_hurwitz(a: &DMatrix<f64>) -> Result<()> {
    for ev in eigenvalues(a)? {
        if ev.re >= -HURWITZ_TOL {
            return Err(OuError::NotHurwitz { re: ev.re, im: ev.im });
        }
    }
    Ok(())
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    check_hurwitz(a).is_ok()
}

// ---------------------------------------------------------------------------
// PSD matrices
// ---------------------------------------------------------------------------

/// A real symmetric positive-semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix(DMatrix<f64>);

impl PsdMatrix {
    /// Validates symmetry and the eigenvalue floor, then stores the
    /// symmetrized matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        ensure_square(&m)?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(OuError::NotPsd("non-finite entry".into()));
        }
        let scale = max_abs(&m);
        let asym = max_abs(&(&m - m.transpose()));
        if asym > SYMMETRY_TOL * scale {
            return Err(OuError::NotPsd(format!(
                "asymmetry {asym:e} exceeds {SYMMETRY_TOL:e} relative"
            )));
        }
        let sym = symmetrize(&m);
        if sym.nrows() > 0 {
            let eig = SymmetricEigen::new(sym.clone()).eigenvalues;
            let top = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let low = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            if low < -PSD_TOL * top.max(1.0) {
                return Err(OuError::NotPsd(format!("eigenvalue {low:e} below floor")));
            }
        }
        Ok(PsdMatrix(sym))
    }

    pub fn identity(n: usize) -> Self {
        PsdMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        PsdMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl std::ops::Deref for PsdMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Orthonormal basis of the range of a PSD matrix with its nonzero
/// eigenvalues, sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct Support {
    pub basis: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl Support {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Square-root factor `U Λ^{1/2}`: maps standard normals on the support
    /// to the law with this covariance.
    pub fn factor(&self) -> DMatrix<f64> {
        let mut f = self.basis.clone();
        for (j, mut col) in f.column_iter_mut().enumerate() {
            col *= self.eigenvalues[j].sqrt();
        }
        f
    }

    /// Orthogonal projector onto the range.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

/// Rank-revealing eigendecomposition of a PSD matrix.
pub fn support(m: &DMatrix<f64>) -> Support {
    let n = m.nrows();
    if n == 0 {
        return Support {
            basis: DMatrix::zeros(0, 0),
            eigenvalues: DVector::zeros(0),
        };
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| top > 0.0 && eig.eigenvalues[i] > RANK_TOL * top)
        .collect();
    let mut basis = DMatrix::zeros(n, keep.len());
    let mut vals = DVector::zeros(keep.len());
    for (k, &i) in keep.iter().enumerate() {
        basis.set_column(k, &eig.eigenvectors.column(i));
        vals[k] = eig.eigenvalues[i];
    }
    Support {
        basis,
        eigenvalues: vals,
    }
}

/// Symmetric square root `C` with `C·C = X`; eigenvalues in `[-1e-10, 0)`
/// (relative) are clipped to zero.
pub fn psd_sqrt(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let psd = PsdMatrix::new(x.clone())?;
    let n = psd.dim();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(psd.into_inner());
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let c = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok(symmetrize(&c))
}

// ---------------------------------------------------------------------------
// Lyapunov and covariance integrals
// ---------------------------------------------------------------------------

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            out.view_mut((i * br, j * bc), (br, bc))
                .copy_from(&(b * a[(i, j)]));
        }
    }
    out
}

/// Solves `T Y + Y Tᵀ = R` for quasi-triangular `T` by block back-substitution.
fn quasi_triangular_lyapunov(t: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    let blocks = schur_blocks(t);
    let mut y = DMatrix::<f64>::zeros(n, n);
    for &(j0, q) in blocks.iter().rev() {
        let je = j0 + q;
        for &(i0, p) in blocks.iter().rev() {
            let ie = i0 + p;
            let mut rhs = r.view((i0, j0), (p, q)).clone_owned();
            if ie < n {
                rhs -= t.view((i0, ie), (p, n - ie)) * y.view((ie, j0), (n - ie, q));
            }
            if je < n {
                rhs -= y.view((i0, je), (p, n - je)) * t.view((j0, je), (q, n - je)).transpose();
            }
            let tii = t.view((i0, i0), (p, p)).clone_owned();
            let tjj = t.view((j0, j0), (q, q)).clone_owned();
            let k = kron(&DMatrix::identity(q, q), &tii) + kron(&tjj, &DMatrix::identity(p, p));
            let vec_rhs = DVector::from_column_slice(rhs.as_slice());
            let sol = k
                .lu()
                .solve(&vec_rhs)
                .ok_or_else(|| OuError::Numerical("singular Lyapunov block".into()))?;
            y.view_mut((i0, j0), (p, q))
                .copy_from(&DMatrix::from_column_slice(p, q, sol.as_slice()));
        }
    }
    Ok(y)
}

/// Solves `A X + X Aᵀ + C = 0` for Hurwitz `A` (Bartels-Stewart on the real
/// Schur form).
pub fn lyapunov_solve(a: &DMatrix<f64>, c: &PsdMatrix) -> Result<PsdMatrix> {
    let n = ensure_square(a)?;
    if c.dim() != n {
        return Err(OuError::Dimension(format!(
            "drift is {n}x{n} but right-hand side is {0}x{0}",
            c.dim()
        )));
    }
    check_hurwitz(a)?;
    if n == 0 {
        return Ok(PsdMatrix::zeros(0));
    }
    let (u, t) = real_schur(a)?;
    let rt = -(u.transpose() * c.matrix() * &u);
    let y = quasi_triangular_lyapunov(&t, &rt)?;
    let x = symmetrize(&(&u * y * u.transpose()));
    PsdMatrix::new(x)
}

/// `Q_t = ∫₀ᵗ e^{sA} Q e^{sAᵀ} ds` from one block-matrix exponential on a
/// short step followed by exact doubling `Q_{2h} = Q_h + e^{hA} Q_h e^{hAᵀ}`.
pub fn van_loan_qt(a: &DMatrix<f64>, q: &PsdMatrix, t: f64) -> Result<PsdMatrix> {
    let n = ensure_square(a)?;
    if q.dim() != n {
        return Err(OuError::Dimension(format!(
            "drift is {n}x{n} but noise covariance is {0}x{0}",
            q.dim()
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(OuError::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    if t == 0.0 || n == 0 {
        return Ok(PsdMatrix::zeros(n));
    }
    let rate = onenorm(a).max(onenorm(q.matrix()));
    let doublings = if rate * t > 0.5 {
        (rate * t / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let h = t / 2f64.powi(doublings as i32);
    let mut block = DMatrix::<f64>::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-a));
    block.view_mut((0, n), (n, n)).copy_from(q.matrix());
    block.view_mut((n, n), (n, n)).copy_from(&a.transpose());
    let e = expm(&block, h)?;
    let f12 = e.view((0, n), (n, n)).clone_owned();
    let mut s = e.view((n, n), (n, n)).transpose();
    let mut qt = symmetrize(&(&s * f12));
    for _ in 0..doublings {
        qt = &qt + &s * &qt * s.transpose();
        s = &s * &s;
        qt = symmetrize(&qt);
    }
    if qt.iter().any(|v| !v.is_finite()) {
        return Err(OuError::Range("covariance integral overflowed".into()));
    }
    PsdMatrix::new(qt)
}

// ---------------------------------------------------------------------------
// 1-norm estimation
// ---------------------------------------------------------------------------

/// Number of random restarts on top of the deterministic starting vector.
pub const ONENORM_RESTARTS: usize = 4;

fn sign_vec(y: &DVector<C64>) -> DVector<C64> {
    y.map(|v| {
        let m = v.norm();
        if m == 0.0 {
            C64::new(1.0, 0.0)
        } else {
            v / m
        }
    })
}

fn l1(v: &DVector<C64>) -> f64 {
    v.iter().map(|c| c.norm()).sum()
}

/// Lower-bound estimate of the induced 1-norm of a linear map given only
/// through `apply` and `apply_adjoint` (conjugate transpose).
///
/// Hager's iteration from the uniform vector, Higham's alternating-sign
/// probe, and [`ONENORM_RESTARTS`] random ±1 restarts; the maximum is
/// returned. Exact for diagonal maps.
pub fn onenorm_estimate<F, G>(apply: F, apply_adjoint: G, dim: usize) -> Result<f64>
where
    F: Fn(&DVector<C64>) -> DVector<C64>,
    G: Fn(&DVector<C64>) -> DVector<C64>,
{
    onenorm_estimate_seeded(apply, apply_adjoint, dim, ONENORM_RESTARTS, 0x0ddba11)
}

pub fn onenorm_estimate_seeded<F, G>(
    apply: F,
    apply_adjoint: G,
    dim: usize,
    restarts: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&DVector<C64>) -> DVector<C64>,
    G: Fn(&DVector<C64>) -> DVector<C64>,
{
    if dim == 0 {
        return Ok(0.0);
    }
    let call = |f: &F, x: &DVector<C64>| -> Result<DVector<C64>> {
        let y = f(x);
        if y.len() != dim {
            return Err(OuError::Dimension(format!(
                "oracle returned length {} for dimension {dim}",
                y.len()
            )));
        }
        Ok(y)
    };
    let call_adj = |g: &G, x: &DVector<C64>| -> Result<DVector<C64>> {
        let y = g(x);
        if y.len() != dim {
            return Err(OuError::Dimension(format!(
                "adjoint oracle returned length {} for dimension {dim}",
                y.len()
            )));
        }
        Ok(y)
    };

    let hager = |start: DVector<C64>| -> Result<f64> {
        let mut x = start.unscale(l1(&start));
        let mut best = 0.0_f64;
        let mut last_j: Option<usize> = None;
        for iter in 0..6 {
            let y = call(&apply, &x)?;
            best = best.max(l1(&y));
            let z = call_adj(&apply_adjoint, &sign_vec(&y))?;
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.norm()))
                .fold((0, -1.0), |acc, it| if it.1 > acc.1 { it } else { acc });
            let zx: f64 = z.iter().zip(x.iter()).map(|(a, b)| (a.conj() * b).re).sum();
            if iter > 0 && (zmax <= zx || last_j == Some(j)) {
                break;
            }
            x = DVector::from_element(dim, C64::new(0.0, 0.0));
            x[j] = C64::new(1.0, 0.0);
            last_j = Some(j);
        }
        Ok(best)
    };

    let mut est = hager(DVector::from_element(dim, C64::new(1.0, 0.0)))?;
    let alt = DVector::from_fn(dim, |i, _| {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let mag = if dim > 1 { 1.0 + i as f64 / (dim - 1) as f64 } else { 1.0 };
        C64::new(sign * mag, 0.0)
    });
    let y = call(&apply, &alt)?;
    est = est.max(2.0 * l1(&y) / (3.0 * dim as f64));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..restarts {
        let start =
            DVector::from_fn(dim, |_, _| C64::new(if rng.gen::<bool>() { 1.0 } else { -1.0 }, 0.0));
        est = est.max(hager(start)?);
    }
    Ok(est)
}

/// [`onenorm_estimate`] applied to an explicit real matrix.
pub fn onenorm_estimate_matrix(m: &DMatrix<f64>) -> Result<f64> {
    ensure_square(m)?;
    let mc = to_complex(m);
    let mh = mc.adjoint();
    onenorm_estimate(|x| &mc * x, |x| &mh * x, m.nrows())
}
