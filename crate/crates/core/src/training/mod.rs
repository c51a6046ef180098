//! Composite loss, Adam, configuration profiles, and the training loop.

pub mod adam;
pub mod config;
pub mod loss;
pub mod trainer;

pub use adam::Adam;
pub use config::{ExperimentConfig, Profile, TrainConfig};
pub use loss::{loss, sample_loss, LossBreakdown};
pub use trainer::{evaluate_normalized, keyed_rng, metrics_jsonl, train, write_metrics, MetricsRecord, TrainOptions, Trainer};
