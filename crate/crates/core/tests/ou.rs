use nalgebra::{DMatrix, DVector};
use oulab::field::ScalarField;
use oulab::gaussian::normal_cdf;
use oulab::mc::McBudget;
use oulab::ou::*;
use oulab::quad::GaussHermite;
use oulab::systems::{rotation, stable_random};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quad(sys: &OUSystem, t: f64, f: &ScalarField, x: &DVector<f64>) -> Estimate {
    ou_apply(sys, t, f, x, ApplyMethod::Quadrature, &McBudget::default()).unwrap()
}

/// `P(t)` of the Gaussian bump `exp(−‖x−c‖²/2w²)` in closed form.
fn bump_semigroup(sys: &OUSystem, t: f64, c: &DVector<f64>, w: f64, x: &DVector<f64>) -> f64 {
    let d = sys.dim();
    let m = DMatrix::<f64>::identity(d, d) * (w * w) + sys.qt(t).unwrap().matrix();
    let r = sys.drift(t).unwrap() * x - c;
    let det = (m.clone() / (w * w)).determinant();
    (-0.5 * r.dot(&(m.try_inverse().unwrap() * &r))).exp() / det.sqrt()
}

#[test]
fn chapman_kolmogorov() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (dim, seed) in [(1usize, 3u64), (2, 4), (2, 5)] {
        let sys = stable_random(dim, seed);
        let f = ScalarField::cosine(DVector::from_fn(dim, |i, _| 0.7 + 0.3 * i as f64));
        let ps = ou_field(&sys, 0.4, &f).unwrap();
        for _ in 0..3 {
            let x = DVector::from_fn(dim, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let lhs = quad(&sys, 0.6, &ps, &x).value;
            let rhs = quad(&sys, 1.0, &f, &x).value;
            assert!((lhs - rhs).norm() <= 1e-6, "d={dim}: {lhs} vs {rhs}");
        }
    }
    // d = 3: outer quadrature against the closed-form inner semigroup
    let sys = stable_random(3, 6);
    let c = DVector::from_vec(vec![0.2, -0.1, 0.4]);
    let sys_in = sys.clone();
    let c_in = c.clone();
    let inner = ScalarField::real(3, "P(0.4) bump", move |y| bump_semigroup(&sys_in, 0.4, &c_in, 0.8, y));
    for _ in 0..3 {
        let x = DVector::from_fn(3, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let lhs = quad(&sys, 0.6, &inner, &x).value.re;
        let rhs = bump_semigroup(&sys, 1.0, &c, 0.8, &x);
        assert!((lhs - rhs).abs() <= 1e-6, "{lhs} vs {rhs}");
    }
}

#[test]
fn contraction_on_probes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..4 {
        let sys = stable_random(2, seed);
        let fields = [
            ScalarField::cosine(DVector::from_vec(vec![1.3, -0.4])),
            ScalarField::gaussian_bump(DVector::from_vec(vec![0.5, 0.5]), 0.3),
            ScalarField::smooth_bump(DVector::zeros(2), 1.0),
        ];
        for f in &fields {
            for _ in 0..5 {
                let x = DVector::from_fn(2, |_, _| rng.gen::<f64>() * 4.0 - 2.0);
                let v = quad(&sys, 0.7, f, &x).value.norm();
                assert!(v <= f.sup_norm().unwrap() + 1e-8);
            }
        }
    }
}

#[test]
fn invariance_of_the_stationary_law() {
    let rule = GaussHermite::new(GH_NODES);
    for seed in 0..3 {
        let sys = stable_random(2, 10 + seed);
        let mu = invariant_measure(&sys).unwrap();
        let l = mu.cov().matrix().clone().cholesky().unwrap().l();
        let qt = sys.qt(0.8).unwrap().matrix().clone().cholesky().unwrap().l();
        let s = sys.drift(0.8).unwrap();
        let polys: Vec<ScalarField> = vec![
            ScalarField::real(2, "x^4", |x| x[0].powi(4)),
            ScalarField::real(2, "x^2 y^2 - 3xy", |x| x[0] * x[0] * x[1] * x[1] - 3.0 * x[0] * x[1]),
            ScalarField::real(2, "y^3 + x", |x| x[1].powi(3) + x[0]),
            ScalarField::cosine(DVector::from_vec(vec![0.9, -1.2])),
        ];
        for f in &polys {
            let lhs: f64 = rule.expect_tensor(4, |z| {
                let x = &l * DVector::from_column_slice(&z[..2]);
                let y = &qt * DVector::from_column_slice(&z[2..]);
                f.eval_re(&(&s * x + y))
            });
            let rhs: f64 = rule.expect_tensor(2, |z| f.eval_re(&(&l * DVector::from_column_slice(z))));
            assert!((lhs - rhs).abs() <= 1e-5 * (1.0 + rhs.abs()), "{}: {lhs} vs {rhs}", f.label());
        }
    }
}

#[test]
fn generator_is_first_order_consistent() {
    let sys = stable_random(2, 21);
    let f = ScalarField::smooth_bump(DVector::from_vec(vec![0.2, 0.1]), 1.5);
    let x = DVector::from_vec(vec![0.4, -0.3]);
    let lf = apply_generator(&sys, &f, &x, false).unwrap();
    let err = |h: f64| ((quad(&sys, h, &f, &x).value - f.eval(&x)) / h - lf).norm();
    let (e2, e4) = (err(1e-2), err(1e-4));
    let order = (e2 / e4).log10() / 2.0;
    assert!(order >= 0.9, "errors {e2} {e4} order {order}");
}

#[test]
fn transition_law_matches_paths_ks() {
    let sys = stable_random(2, 30);
    let x = DVector::from_vec(vec![1.0, -0.5]);
    let law = transition_law(&sys, 0.7, &x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 4000;
    let paths = simulate_paths(&sys, 0.7, &x, &mut rng, n).unwrap();
    for k in 0..2 {
        let mut v: Vec<f64> = paths.iter().map(|p| p[k]).collect();
        v.sort_by(f64::total_cmp);
        let (m, s) = (law.mean()[k], law.cov().matrix()[(k, k)].sqrt());
        let d = v
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let c = normal_cdf((y - m) / s);
                (c - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - c).abs())
            })
            .fold(0.0, f64::max);
        // Kolmogorov critical value at level 0.01
        assert!(d * (n as f64).sqrt() < 1.628, "coordinate {k}: D = {d}");
    }
}

#[test]
fn euler_paths_approach_exact_law() {
    let sys = rotation(1.0);
    let x = DVector::from_vec(vec![1.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let paths = simulate_paths_euler(&sys, 1.0, &x, &mut rng, 4000, 200).unwrap();
    let mean: DVector<f64> = paths.iter().fold(DVector::zeros(2), |a, p| a + p) / 4000.0;
    let exact = transition_law(&sys, 1.0, &x).unwrap();
    assert!((mean - exact.mean()).norm() < 0.1);
}

#[test]
fn conjugation_identity_on_bumps() {
    let systems = [
        stable_random(2, 50),
        stable_random(2, 51),
        OUSystem::new(DMatrix::from_row_slice(2, 2, &[-1.0, 3.0, 0.0, -2.0]), DMatrix::identity(2, 2)).unwrap(),
        stable_random(3, 52),
        OUSystem::new(DMatrix::from_element(1, 1, -0.7), DMatrix::from_element(1, 1, 1.3)).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    for sys in &systems {
        let d = sys.dim();
        let f = ScalarField::gaussian_bump(DVector::from_element(d, 0.3), 0.9);
        let probes: Vec<DVector<f64>> = (0..20).map(|_| DVector::from_fn(d, |_, _| rng.gen::<f64>() * 2.0 - 1.0)).collect();
        let r = conjugated_generator_check(sys, &f, &probes, DerivativeMode::Oracles).unwrap();
        assert!(r.max_residual <= 1e-5, "{}", r.max_residual);
        assert!((r.k + sys.trace_a()).abs() < 1e-12);
        assert!((r.a_tilde.trace() + sys.trace_a()).abs() < 1e-9);
    }
}

#[test]
fn rotation_covariance_is_t_identity() {
    let sys = rotation(1.0);
    for t in [0.1, 1.0, 2.0 * std::f64::consts::PI] {
        let q = sys.qt(t).unwrap();
        assert!((q.matrix() - DMatrix::<f64>::identity(2, 2) * t).amax() <= 1e-10);
    }
}
