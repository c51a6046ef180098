//! The forecasting network: patch encoder, retrieval attention, gated
//! fusion, routing decomposition, dual predictors and fusion decoder.

pub mod checkpoint;
pub mod forward;
pub mod params;

pub use checkpoint::Checkpoint;
pub use forward::{
    aggregate_retrieval, backward, check_kb, decompose, encode, forward, forward_tape, fuse, predict, Ablation,
    ForecastOutput, ForwardConfig, Gradients, OutputGrads, Tape,
};
pub use params::{Encoder, ModelDims, ModelParams, ParamId, PARAM_NAMES};
