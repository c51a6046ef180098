//! Synthetic series with known shared mechanisms.
//!
//! Each mechanism is a linear trend plus one sinusoid. Channels assigned to
//! the same mechanism share it, perturbed per channel by `dynamic_jitter`
//! (phase, amplitude, slope) and overlaid with Gaussian noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::window::SeriesChannel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_mechanisms: usize,
    /// Trend slope scale, in units per season period.
    pub trend_amp: f64,
    pub seasonal_amp: f64,
    pub noise_std: f64,
    pub season_period: usize,
    pub dynamic_jitter: f64,
    pub seed: u64,
    pub n_channels: usize,
    pub length: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_mechanisms: 3,
            trend_amp: 0.5,
            seasonal_amp: 1.0,
            noise_std: 0.1,
            season_period: 16,
            dynamic_jitter: 0.3,
            seed: 0,
            n_channels: 24,
            length: 600,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_mechanisms == 0 {
            return Err(Error::Config("n_mechanisms must be at least 1".into()));
        }
        if self.season_period < 2 {
            return Err(Error::Config(format!("season_period must be ≥ 2, got {}", self.season_period)));
        }
        for (name, v) in [
            ("trend_amp", self.trend_amp),
            ("seasonal_amp", self.seasonal_amp),
            ("noise_std", self.noise_std),
            ("dynamic_jitter", self.dynamic_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Parameters of one shared generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mechanism {
    pub slope: f64,
    pub amplitude: f64,
    pub phase: f64,
}

/// Mechanism `k` gets seasonal amplitude `seasonal_amp·(k+1)/n`, so low ids
/// are trend-dominated and high ids fluctuate strongly.
pub fn mechanisms(spec: &SyntheticSpec) -> Vec<Mechanism> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_mechanisms;
    (0..n)
        .map(|k| Mechanism {
            slope: spec.trend_amp * rng.random_range(-1.0..=1.0),
            amplitude: spec.seasonal_amp * (k + 1) as f64 / n as f64,
            phase: rng.random_range(0.0..2.0 * PI),
        })
        .collect()
}

/// Generates `n_channels` series of `length` samples; channel `c` follows
/// mechanism `c mod n_mechanisms`.
pub fn generate_synthetic<S: Scalar>(spec: &SyntheticSpec, n_channels: usize, length: usize) -> Result<Vec<SeriesChannel<S>>> {
    spec.validate()?;
    let mechs = mechanisms(spec);
    let period = spec.season_period as f64;
    let jitter = spec.dynamic_jitter;
    let channels = (0..n_channels)
        .map(|c| {
            let k = c % spec.n_mechanisms;
            let m = mechs[k];
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(c as u64 + 1);
            let mut gauss = || -> f64 { rng.sample(StandardNormal) };
            let amplitude = m.amplitude * (1.0 + jitter * gauss());
            let phase = m.phase + jitter * PI * gauss();
            let slope = m.slope * (1.0 + jitter * gauss());
            let values = (0..length)
                .map(|t| {
                    let t = t as f64;
                    let v = slope * t / period + amplitude * (2.0 * PI * t / period + phase).sin() + spec.noise_std * gauss();
                    S::of(v)
                })
                .collect();
            SeriesChannel {
                name: format!("synthetic_{c}"),
                values,
                frequency_tag: format!("period={}", spec.season_period),
                mechanism: Some(k),
                start_offset: 0,
            }
        })
        .collect();
    Ok(channels)
}
