use nalgebra::DMatrix;
use oulab::linalg::*;
use oulab::quad::integrate;
use oulab::systems::stable_random;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_psd(dim: usize, rank: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(dim, rank, |_, _| rng.gen::<f64>() - 0.5);
    &g * g.transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn semigroup_law(seed in 0u64..10_000, dim in 1usize..6, t in 0.0f64..2.0, s in 0.0f64..2.0) {
        let a = stable_random(dim, seed).a().clone();
        let lhs = expm(&a, t).unwrap() * expm(&a, s).unwrap();
        let rhs = expm(&a, t + s).unwrap();
        prop_assert!(max_abs(&(lhs - &rhs)) <= 1e-9 * 1f64.max(spectral_norm(&rhs)));
    }

    #[test]
    fn covariance_is_monotone(seed in 0u64..10_000, s in 0.0f64..3.0, dt in 0.0f64..3.0) {
        let sys = stable_random(3, seed);
        let qs = van_loan_qt(sys.a(), sys.q(), s).unwrap();
        let qt = van_loan_qt(sys.a(), sys.q(), s + dt).unwrap();
        let diff = qt.matrix() - qs.matrix();
        let sym = (&diff + diff.transpose()) * 0.5;
        prop_assert!(sym.symmetric_eigenvalues().min() >= -1e-10);
    }
}

#[test]
fn psd_sqrt_residual_up_to_fifty() {
    for (i, dim) in [1usize, 2, 5, 10, 25, 50].into_iter().enumerate() {
        for rank in [dim, (dim / 2).max(1)] {
            let x = random_psd(dim, rank, i as u64 * 31 + rank as u64);
            let r = psd_sqrt(&x).unwrap();
            let resid = max_abs(&(&r * &r - &x));
            assert!(resid <= 1e-10 * spectral_norm(&x), "dim {dim} rank {rank}: {resid}");
        }
    }
}

#[test]
fn lyapunov_matches_long_time_covariance() {
    for seed in 0..10 {
        let sys = stable_random(3, seed);
        let slowest = eigenvalues(sys.a()).unwrap().iter().map(|z| z.re.abs()).fold(f64::INFINITY, f64::min);
        let qinf = lyapunov_solve(sys.a(), sys.q()).unwrap();
        let q40 = van_loan_qt(sys.a(), sys.q(), 40.0 / slowest).unwrap();
        assert!(max_abs(&(qinf.matrix() - q40.matrix())) <= 1e-8);
        // distance to the limit shrinks with t
        let mut prev = f64::INFINITY;
        for k in 1..8 {
            let qt = van_loan_qt(sys.a(), sys.q(), k as f64 * 2.0 / slowest).unwrap();
            let d = max_abs(&(qinf.matrix() - qt.matrix()));
            assert!(d <= prev * (1.0 + 1e-12));
            prev = d;
        }
    }
}

#[test]
fn van_loan_matches_adaptive_quadrature() {
    for seed in 0..5 {
        let sys = stable_random(3, 100 + seed);
        let t = 0.5 + seed as f64;
        let qt = van_loan_qt(sys.a(), sys.q(), t).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v = integrate(
                    |s| {
                        let e = expm(sys.a(), s).unwrap();
                        (&e * sys.q().matrix() * e.transpose())[(i, j)]
                    },
                    0.0,
                    t,
                    1e-15,
                    1e-12,
                    100_000,
                )
                .value;
                let scale = max_abs(qt.matrix());
                assert!((v - qt.matrix()[(i, j)]).abs() <= 1e-9 * scale, "({i},{j}) {v}");
            }
        }
    }
}

#[test]
fn onenorm_estimate_within_factor_three() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let m = DMatrix::from_fn(20, 20, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let inv = m.clone().try_inverse().unwrap();
        let exact = onenorm(&inv);
        let est = onenorm_estimate_matrix(&inv).unwrap();
        assert!(est <= exact * (1.0 + 1e-12));
        assert!(est >= exact / 3.0);
    }
}
