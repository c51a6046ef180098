//! Monte Carlo check that an attention-weighted average of noisy copies of a
//! common mean has variance at most `σ²·Σω²` and recovers the mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// Uniform on `±√(3σ²)`: same variance, bounded support.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    #[serde(rename = "K")]
    pub k: usize,
    pub omega: Vec<f64>,
    pub sigma2: f64,
    /// `σ²·Σω²`.
    pub bound: f64,
    /// Per-coordinate unbiased sample variance of `Σ ω_k q_k`, averaged over
    /// coordinates.
    pub empirical_var: f64,
    /// `‖mean − μ‖ / √dim`: RMS per-coordinate error of the sample mean.
    pub empirical_mean_err: f64,
    pub n_trials: usize,
    pub dim: usize,
    pub noise: NoiseKind,
    /// `bound·(1 + 5/√n)`.
    pub var_tolerance: f64,
    /// `5σ·√(Σω²)/√n`.
    pub mean_tolerance: f64,
    pub var_pass: bool,
    pub mean_pass: bool,
    pub pass: bool,
}

pub const DEFAULT_DIM: usize = 4;

fn validate_omega(omega: &[f64]) -> Result<()> {
    if omega.is_empty() {
        return Err(Error::Domain("omega must have at least one weight".into()));
    }
    if let Some(w) = omega.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Domain(format!("omega weights must be finite and ≥ 0, found {w}")));
    }
    let total: f64 = omega.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("omega must sum to 1, sums to {total}")));
    }
    Ok(())
}

/// Draws `q_k = μ + ε_k` with iid zero-mean noise of variance `σ²` per
/// coordinate, forms `Σ ω_k q_k`, and compares its spread with the bound.
pub fn verify_variance_bound(
    omega: &[f64],
    sigma2: f64,
    n_trials: usize,
    seed: u64,
    noise: NoiseKind,
    dim: usize,
) -> Result<VarianceReport> {
    validate_omega(omega)?;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
    }
    if n_trials < 1000 {
        return Err(Error::Domain(format!("need at least 1000 trials, got {n_trials}")));
    }
    if dim == 0 {
        return Err(Error::Domain("dim must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sigma = sigma2.sqrt();
    let half_width = (3.0 * sigma2).sqrt();
    let draw = |rng: &mut ChaCha8Rng| match noise {
        NoiseKind::Gaussian => sigma * rng.sample::<f64, _>(StandardNormal),
        NoiseKind::Uniform => rng.random_range(-half_width..half_width),
    };

    // Accumulate deviations of h from μ; shifting by a constant leaves the
    // variance unchanged and avoids cancellation.
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut h = vec![0.0; dim];
    for _ in 0..n_trials {
        h.iter_mut().for_each(|v| *v = 0.0);
        for &w in omega {
            for (v, m) in h.iter_mut().zip(&mu) {
                *v += w * (m + draw(&mut rng));
            }
        }
        for c in 0..dim {
            let d = h[c] - mu[c];
            sum[c] += d;
            sum_sq[c] += d * d;
        }
    }
    let n = n_trials as f64;
    let mut var = 0.0;
    let mut mean_err_sq = 0.0;
    for c in 0..dim {
        let m = sum[c] / n;
        var += (sum_sq[c] - n * m * m) / (n - 1.0);
        // m is the sample mean of h minus μ.
        mean_err_sq += m * m;
    }
    let empirical_var = var / dim as f64;
    let empirical_mean_err = (mean_err_sq / dim as f64).sqrt();

    let w2: f64 = omega.iter().map(|w| w * w).sum();
    let bound = sigma2 * w2;
    let var_tolerance = bound * (1.0 + 5.0 / n.sqrt());
    let mean_tolerance = 5.0 * sigma * w2.sqrt() / n.sqrt();
    let var_pass = empirical_var <= var_tolerance;
    let mean_pass = empirical_mean_err <= mean_tolerance;
    Ok(VarianceReport {
        k: omega.len(),
        omega: omega.to_vec(),
        sigma2,
        bound,
        empirical_var,
        empirical_mean_err,
        n_trials,
        dim,
        noise,
        var_tolerance,
        mean_tolerance,
        var_pass,
        mean_pass,
        pass: var_pass && mean_pass,
    })
}

/// Uniform weights `1/K`.
pub fn uniform_omega(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_bound_is_one_over_k() {
        let r = verify_variance_bound(&uniform_omega(5), 1.0, 20_000, 0, NoiseKind::Gaussian, DEFAULT_DIM).unwrap();
        assert!((r.bound - 0.2).abs() < 1e-15);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn degenerate_single_weight() {
        let r = verify_variance_bound(&[1.0, 0.0, 0.0], 2.0, 50_000, 3, NoiseKind::Uniform, DEFAULT_DIM).unwrap();
        assert_eq!(r.bound, 2.0);
        assert!((r.empirical_var - 2.0).abs() < 0.05, "{}", r.empirical_var);
        assert!(r.pass);
    }

    #[test]
    fn invalid_inputs() {
        for omega in [vec![], vec![0.5, 0.4], vec![1.5, -0.5], vec![f64::NAN]] {
            assert!(matches!(
                verify_variance_bound(&omega, 1.0, 1000, 0, NoiseKind::Gaussian, 2),
                Err(Error::Domain(_))
            ));
        }
        assert!(verify_variance_bound(&[1.0], 1.0, 999, 0, NoiseKind::Gaussian, 2).is_err());
        assert!(verify_variance_bound(&[1.0], 0.0, 1000, 0, NoiseKind::Gaussian, 2).is_err());
    }
}
