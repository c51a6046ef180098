//! Run configuration.
//!
//! A TOML file may name a `profile` (`"desk"` or `"paper"`, default desk),
//! override any [`TrainConfig`] key at top level, and override the synthetic
//! generator in a `[synthetic]` table. Unknown keys are rejected.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{PatchConfig, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{Ablation, ForwardConfig, ModelDims};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile '{s}'; valid options: desk, paper"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub context_len: usize,
    pub horizon_len: usize,
    pub patch_len: usize,
    pub patch_stride: usize,
    pub d_model: usize,
    pub d_hidden: usize,
    /// Retrieved neighbours per query.
    pub k: usize,
    /// Weight of the disentanglement term.
    pub rho: f64,
    pub lr: f64,
    pub dropout: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// Attention temperature over cosine logits.
    pub temperature: f64,
    /// Step between consecutive training / knowledge-base windows.
    pub window_stride: usize,
    /// Step between consecutive held-out windows.
    pub eval_stride: usize,
    /// Leading share of each channel used for training and the knowledge base.
    pub train_fraction: f64,
    /// Steps between metric log records.
    pub eval_interval: u64,
    /// Seasonal period for the trend/seasonal error split.
    pub period: usize,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            context_len: 64,
            horizon_len: 16,
            patch_len: 16,
            patch_stride: 16,
            d_model: 32,
            d_hidden: 64,
            k: 3,
            rho: 0.1,
            lr: 1e-3,
            dropout: 0.3,
            steps: 2000,
            batch_size: 32,
            seed: 0,
            ablation: Ablation::Full,
            temperature: 1.0,
            window_stride: 4,
            eval_stride: 16,
            train_fraction: 0.7,
            eval_interval: 200,
            period: 16,
        }
    }

    pub fn paper() -> Self {
        Self {
            context_len: 512,
            horizon_len: 64,
            patch_len: 32,
            patch_stride: 32,
            d_model: 64,
            d_hidden: 128,
            k: 5,
            rho: 0.1,
            lr: 3e-4,
            dropout: 0.3,
            steps: 10_000,
            batch_size: 256,
            seed: 0,
            ablation: Ablation::Full,
            temperature: 1.0,
            window_stride: 16,
            eval_stride: 64,
            train_fraction: 0.7,
            eval_interval: 500,
            period: 24,
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            context_len: self.context_len,
            horizon_len: self.horizon_len,
            patch: PatchConfig::new(self.patch_len, self.patch_stride),
            d_model: self.d_model,
            d_hidden: self.d_hidden,
        }
    }

    pub fn forward_config(&self) -> ForwardConfig {
        ForwardConfig {
            k: self.k,
            temperature: self.temperature,
            ablation: self.ablation,
            shards: 1,
        }
    }

    /// ρ as applied to the gradient: zero under the `no_dis` ablation.
    pub fn effective_rho(&self) -> f64 {
        if self.ablation == Ablation::NoDis {
            0.0
        } else {
            self.rho
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be finite and ≥ 0, got {}", self.rho));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        for (name, v) in [
            ("k", self.k),
            ("batch_size", self.batch_size),
            ("window_stride", self.window_stride),
            ("eval_stride", self.eval_stride),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be at least 1".into());
        }
        if self.period < 2 {
            return bad(format!("period must be ≥ 2, got {}", self.period));
        }
        Ok(())
    }
}

/// Everything a run needs: training settings plus the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub train: TrainConfig,
    pub synthetic: SyntheticSpec,
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let train = TrainConfig::for_profile(profile);
        let synthetic = match profile {
            Profile::Desk => SyntheticSpec {
                season_period: train.period,
                ..SyntheticSpec::default()
            },
            Profile::Paper => SyntheticSpec {
                season_period: train.period,
                length: 4000,
                ..SyntheticSpec::default()
            },
        };
        Self {
            profile,
            train,
            synthetic,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
        let profile = match table.remove("profile") {
            None => Profile::Desk,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::Config(format!("profile must be a string, got {other}"))),
        };
        let mut cfg = Self::for_profile(profile);

        if let Some(syn) = table.remove("synthetic") {
            let overrides = syn
                .as_table()
                .ok_or_else(|| Error::Config("[synthetic] must be a table".into()))?;
            cfg.synthetic = overlay(&cfg.synthetic, overrides, "synthetic")?;
        }
        cfg.train = overlay(&cfg.train, &table, "")?;
        cfg.train.validate()?;
        cfg.synthetic.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Replaces keys of `base` with those in `overrides`, rejecting unknown ones.
fn overlay<T: Serialize + for<'de> Deserialize<'de>>(base: &T, overrides: &toml::Table, section: &str) -> Result<T> {
    let mut merged = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
    for (k, v) in overrides {
        if !merged.contains_key(k) {
            let valid: Vec<_> = merged.keys().cloned().collect();
            let key = if section.is_empty() { k.clone() } else { format!("{section}.{k}") };
            return Err(Error::Config(format!("unknown config key '{key}'; valid keys: {}", valid.join(", "))));
        }
        merged.insert(k.clone(), v.clone());
    }
    merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        TrainConfig::desk().validate().unwrap();
        TrainConfig::paper().validate().unwrap();
        let p = TrainConfig::paper();
        assert_eq!((p.context_len, p.horizon_len, p.k, p.lr, p.dropout, p.steps, p.batch_size), (512, 64, 5, 3e-4, 0.3, 10_000, 256));
    }

    #[test]
    fn file_overrides_profile() {
        let cfg = ExperimentConfig::from_toml_str(
            "profile = \"desk\"\nsteps = 7\nablation = \"no_idd\"\n[synthetic]\nn_channels = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.train.ablation, Ablation::NoIdd);
        assert_eq!(cfg.train.k, 3);
        assert_eq!(cfg.synthetic.n_channels, 5);
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::for_profile(Profile::Desk));
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let e = ExperimentConfig::from_toml_str("stepz = 1").unwrap_err();
        assert!(e.to_string().contains("stepz"));
        assert!(ExperimentConfig::from_toml_str("rho = -1.0").is_err());
        let e = ExperimentConfig::from_toml_str("ablation = \"nope\"").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(ExperimentConfig::from_toml_str("profile = \"huge\"").is_err());
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::for_profile(Profile::Paper);
        let text = toml::to_string(&cfg.train).unwrap();
        let back = ExperimentConfig::from_toml_str(&format!("profile = \"paper\"\n{text}")).unwrap();
        assert_eq!(back, cfg);
    }
}
