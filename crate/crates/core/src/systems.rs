//! Named systems used by scenarios and tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{OuError, Result};
use crate::ou::OUSystem;

/// `A = [[0, −ω], [ω, 0]]`, `B = I₂`.
pub fn rotation(omega: f64) -> OUSystem {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, -omega, omega, 0.0]);
    OUSystem::new(a, DMatrix::identity(2, 2)).expect("square")
}

/// `A = a`, `B = b` in one dimension.
pub fn scalar(a: f64, b: f64) -> OUSystem {
    OUSystem::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b)).expect("square")
}

/// `A = −I_d`, `B = I_d`.
pub fn isotropic_stable(dim: usize) -> OUSystem {
    OUSystem::new(-DMatrix::<f64>::identity(dim, dim), DMatrix::identity(dim, dim)).expect("square")
}

/// Single Jordan block `λI + N` with `B = I`.
pub fn jordan(dim: usize, lambda: f64) -> OUSystem {
    let mut a = DMatrix::<f64>::identity(dim, dim) * lambda;
    for i in 0..dim.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    OUSystem::new(a, DMatrix::identity(dim, dim)).expect("square")
}

/// Random well-conditioned change of basis `I + 0.3G/√d`.
pub fn random_basis(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    DMatrix::identity(dim, dim) + g * (0.3 / (dim as f64).sqrt())
}

/// Hurwitz drift with eigenvalues spread in `Re ∈ [−2.5, −0.5]`, a random
/// basis, and a random full-rank `B`.
pub fn stable_random(dim: usize, seed: u64) -> OUSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut core = DMatrix::zeros(dim, dim);
    let mut i = 0;
    while i < dim {
        let re = -0.5 - 2.0 * rng.gen::<f64>();
        if i + 1 < dim && rng.gen::<bool>() {
            let im = 0.2 + 1.5 * rng.gen::<f64>();
            core[(i, i)] = re;
            core[(i + 1, i + 1)] = re;
            core[(i, i + 1)] = -im;
            core[(i + 1, i)] = im;
            i += 2;
        } else {
            core[(i, i)] = re;
            i += 1;
        }
    }
    let v = random_basis(dim, &mut rng);
    let vinv = v.clone().try_inverse().expect("near-identity basis is invertible");
    let b = random_basis(dim, &mut rng);
    OUSystem::new(&v * core * vinv, b).expect("square")
}

/// Ten-dimensional system with the isolated rotating block
/// `[[−0.5, −2], [2, −0.5]]` (eigenvalues `−0.5 ± 2i`) and an eight-dimensional
/// block with eigenvalues in `[−4, −1.5]`, in a random basis, `B = I`.
pub fn block_system_10d(seed: u64) -> (OUSystem, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut core = DMatrix::zeros(10, 10);
    core[(0, 0)] = -0.5;
    core[(1, 1)] = -0.5;
    core[(0, 1)] = -2.0;
    core[(1, 0)] = 2.0;
    let diag = DVector::from_fn(8, |i, _| -1.5 - 2.5 * i as f64 / 7.0);
    for i in 0..8 {
        core[(i + 2, i + 2)] = diag[i];
        if i + 1 < 8 && i % 2 == 0 {
            core[(i + 2, i + 3)] = 0.3 * rng.gen::<f64>();
        }
    }
    let v = random_basis(10, &mut rng);
    let vinv = v.clone().try_inverse().expect("near-identity basis is invertible");
    let sys = OUSystem::new(&v * core * vinv, DMatrix::identity(10, 10)).expect("square");
    (sys, v)
}

/// Second-difference Laplacian on `dim` interior nodes of `(0, 1)` with
/// Dirichlet ends, `A = (dim+1)²·tridiag(1, −2, 1)`, `B = I`.
pub fn discretized_diffusion(dim: usize) -> Result<OUSystem> {
    if dim == 0 {
        return Err(OuError::Domain("diffusion needs at least one node".into()));
    }
    let h2 = ((dim + 1) * (dim + 1)) as f64;
    let mut a = DMatrix::<f64>::identity(dim, dim) * (-2.0 * h2);
    for i in 0..dim - 1 {
        a[(i, i + 1)] = h2;
        a[(i + 1, i)] = h2;
    }
    OUSystem::new(a, DMatrix::identity(dim, dim))
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut m = DMatrix::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        if b.nrows() != b.ncols() {
            return Err(OuError::NotSquare {
                rows: b.nrows(),
                cols: b.ncols(),
            });
        }
        m.view_mut((off, off), (b.nrows(), b.nrows())).copy_from(b);
        off += b.nrows();
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigenvalues, is_hurwitz};

    #[test]
    fn diffusion_spectrum_is_sine_modes() {
        let n = 6;
        let mut evs: Vec<f64> = eigenvalues(discretized_diffusion(n).unwrap().a()).unwrap().iter().map(|z| z.re).collect();
        evs.sort_by(|a, b| b.total_cmp(a));
        let h2 = ((n + 1) * (n + 1)) as f64;
        for (k, e) in evs.iter().enumerate() {
            let theta = (k + 1) as f64 * std::f64::consts::PI / (2 * (n + 1)) as f64;
            assert!((e + 4.0 * h2 * theta.sin().powi(2)).abs() < 1e-9);
        }
        assert!(discretized_diffusion(0).is_err());
    }

    #[test]
    fn stable_random_is_hurwitz() {
        for seed in 0..20 {
            assert!(is_hurwitz(stable_random(4, seed).a()));
        }
    }

    #[test]
    fn block_system_spectrum() {
        let (sys, _) = block_system_10d(1);
        let evs = eigenvalues(sys.a()).unwrap();
        let near = evs.iter().filter(|z| (z.re + 0.5).abs() < 1e-8 && (z.im.abs() - 2.0).abs() < 1e-8).count();
        assert_eq!(near, 2);
        assert!(evs.iter().filter(|z| z.re < -1.0).count() == 8);
    }
}
