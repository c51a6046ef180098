//! Metrics, theory checks and diagnostic studies.

pub mod bias;
pub mod decompose;
pub mod metrics;
pub mod probe;
pub mod studies;
pub mod variance;

pub use bias::{compare_models, error_histogram, rag_bias_study, write_plot_csv, BiasReport, BiasStudy, Component, ErrorHistogram, Evaluated, MetricDeltas, PlotRow, HISTOGRAM_BINS, PLOT_HEADERS};
pub use decompose::{decompose_series, decompose_series_exact, high_fluctuation, reconstruction_mismatches, seasonal_share};
pub use metrics::{evaluate, evaluate_model, ErrorPair, Forecaster, MetricReport, ModelForecaster, OracleForecaster, ZeroForecaster};
pub use probe::{disentanglement_probe, ProbeReport, Summary};
pub use studies::{ablation_study, disentanglement_study, sensitivity_grid, sensitivity_sweep, AblationStudy, DisentanglementPair, SweepGrid, SWEEP_KS, SWEEP_RHOS};
pub use variance::{uniform_omega, verify_variance_bound, NoiseKind, VarianceReport};
