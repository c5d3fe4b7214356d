//! Parallel Monte Carlo means with deterministic per-batch streams.

use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Sample budget shared by every Monte Carlo estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McBudget {
    pub max_samples: usize,
    /// Stop as soon as the standard error drops below this.
    pub target_std_error: f64,
    pub seed: u64,
}

impl Default for McBudget {
    fn default() -> Self {
        McBudget {
            max_samples: 2_000_000,
            target_std_error: 5e-3,
            seed: 0x7e57,
        }
    }
}

impl McBudget {
    pub fn with_seed(seed: u64) -> Self {
        McBudget {
            seed,
            ..Self::default()
        }
    }

    /// Fixed sample count, no early stop.
    pub fn fixed(samples: usize, seed: u64) -> Self {
        McBudget {
            max_samples: samples,
            target_std_error: 0.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McMean {
    pub mean: Complex<f64>,
    pub std_error: f64,
    pub samples: usize,
    /// The budget ran out before the target standard error was reached.
    pub flagged: bool,
}

const BATCHES_PER_ROUND: usize = 8;

/// Seeded stream for batch `index` of a run.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mean of `draw` over i.i.d. calls, evaluated in parallel batches.
///
/// Batch `j` of round `r` always uses stream `r·8 + j`, so the result does
/// not depend on the thread count.
pub fn mc_mean<F>(budget: &McBudget, draw: F) -> McMean
where
    F: Fn(&mut ChaCha8Rng) -> Complex<f64> + Sync,
{
    let batch = (budget.max_samples / BATCHES_PER_ROUND).clamp(1, 4096);
    let mut n = 0usize;
    let mut sum = Complex::new(0.0, 0.0);
    let mut sum_sq = 0.0;
    let mut round = 0u64;
    loop {
        let parts: Vec<(Complex<f64>, f64)> = (0..BATCHES_PER_ROUND)
            .into_par_iter()
            .map(|j| {
                let mut rng = stream(budget.seed, round * BATCHES_PER_ROUND as u64 + j as u64);
                let mut s = Complex::new(0.0, 0.0);
                let mut ss = 0.0;
                for _ in 0..batch {
                    let v = draw(&mut rng);
                    s += v;
                    ss += v.norm_sqr();
                }
                (s, ss)
            })
            .collect();
        for (s, ss) in parts {
            sum += s;
            sum_sq += ss;
        }
        n += batch * BATCHES_PER_ROUND;
        round += 1;
        let mean = sum / n as f64;
        let var = ((sum_sq / n as f64) - mean.norm_sqr()).max(0.0) * n as f64 / (n as f64 - 1.0).max(1.0);
        let se = (var / n as f64).sqrt();
        let done = budget.target_std_error > 0.0 && se <= budget.target_std_error;
        if done || n + batch * BATCHES_PER_ROUND > budget.max_samples {
            return McMean {
                mean,
                std_error: se,
                samples: n,
                flagged: !done && budget.target_std_error > 0.0,
            };
        }
    }
}

/// Result of [`mixture_tv`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureTv {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub flagged: bool,
}

/// `∫|p₀ − p₁|` for two probability densities known through exact samplers
/// and log-densities, by the stratified balanced-mixture estimator with
/// integrand `2|p₀−p₁|/(p₀+p₁)`. Points where both densities underflow
/// contribute zero, which can only lower the estimate.
pub fn mixture_tv<S, L>(budget: &McBudget, sample: S, log_density: L) -> MixtureTv
where
    S: Fn(usize, &mut ChaCha8Rng) -> nalgebra::DVector<f64> + Sync,
    L: Fn(usize, &nalgebra::DVector<f64>) -> f64 + Sync,
{
    let h = |x: &nalgebra::DVector<f64>| -> f64 {
        let (a, b) = (log_density(0, x), log_density(1, x));
        if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
            return 0.0;
        }
        let v = 2.0 * (0.5 * (a - b)).tanh().abs();
        if v.is_nan() {
            0.0
        } else {
            v
        }
    };
    let batch = (budget.max_samples / (2 * BATCHES_PER_ROUND)).clamp(1, 1024);
    let mut acc = [(0usize, 0.0f64, 0.0f64); 2];
    let mut round = 0u64;
    loop {
        let parts: Vec<[(usize, f64, f64); 2]> = (0..BATCHES_PER_ROUND)
            .into_par_iter()
            .map(|j| {
                let mut rng = stream(budget.seed, round * BATCHES_PER_ROUND as u64 + j as u64);
                let mut out = [(0usize, 0.0, 0.0); 2];
                for _ in 0..batch {
                    for (k, o) in out.iter_mut().enumerate() {
                        let v = h(&sample(k, &mut rng));
                        o.0 += 1;
                        o.1 += v;
                        o.2 += v * v;
                    }
                }
                out
            })
            .collect();
        for p in parts {
            for k in 0..2 {
                acc[k].0 += p[k].0;
                acc[k].1 += p[k].1;
                acc[k].2 += p[k].2;
            }
        }
        round += 1;
        let mut value = 0.0;
        let mut var = 0.0;
        for &(n, s, ss) in &acc {
            let n = n as f64;
            let m = s / n;
            value += 0.5 * m;
            var += 0.25 * (ss / n - m * m).max(0.0) / (n - 1.0).max(1.0);
        }
        let se = var.sqrt();
        let total = acc[0].0 + acc[1].0;
        let done = budget.target_std_error > 0.0 && se <= budget.target_std_error;
        if done || total + 2 * batch * BATCHES_PER_ROUND > budget.max_samples {
            return MixtureTv {
                value: value.clamp(0.0, 2.0),
                std_error: se,
                samples: total,
                flagged: !done && budget.target_std_error > 0.0,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn uniform_mean_and_determinism() {
        let b = McBudget::fixed(80_000, 5);
        let a = mc_mean(&b, |r| Complex::new(r.gen::<f64>(), 0.0));
        assert!((a.mean.re - 0.5).abs() < 4.0 * a.std_error);
        let c = mc_mean(&b, |r| Complex::new(r.gen::<f64>(), 0.0));
        assert_eq!(a.mean, c.mean);
        assert!(!a.flagged);
    }

    #[test]
    fn mixture_tv_of_two_uniforms() {
        // U(0,1) vs U(0.5,1.5): total variation 1.
        let b = McBudget::fixed(40_000, 2);
        let r = mixture_tv(
            &b,
            |k, rng| nalgebra::DVector::from_element(1, rng.gen::<f64>() + 0.5 * k as f64),
            |k, x| {
                let lo = 0.5 * k as f64;
                if x[0] > lo && x[0] < lo + 1.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            },
        );
        assert!((r.value - 1.0).abs() < 4.0 * r.std_error + 1e-12, "{r:?}");
    }

    #[test]
    fn early_stop_on_target() {
        let b = McBudget {
            max_samples: 10_000_000,
            target_std_error: 1e-2,
            seed: 1,
        };
        let a = mc_mean(&b, |r| Complex::new(r.gen::<f64>(), 0.0));
        assert!(a.samples < 100_000);
        assert!(a.std_error <= 1e-2);
    }
}
