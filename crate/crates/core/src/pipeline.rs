//! Glue from raw channels to training-ready data.

use crate::data::{generate_synthetic, normalized_windows, split_channels, SeriesChannel, Window};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::retrieval::{build_kb, KnowledgeBase};
use crate::scalar::Scalar;
use crate::training::{ExperimentConfig, TrainConfig};

/// Train/held-out split of a channel set plus the knowledge base built over
/// the training windows.
#[derive(Clone, Debug)]
pub struct Dataset<S> {
    pub channels: Vec<SeriesChannel<S>>,
    pub train: Vec<Window<S>>,
    pub held_out: Vec<Window<S>>,
    pub kb: KnowledgeBase<S>,
}

/// Knowledge base over `windows`, embedded by the frozen encoder a model
/// initialized from `cfg` will carry.
pub fn knowledge_base<S: Scalar>(windows: &[Window<S>], cfg: &TrainConfig) -> Result<KnowledgeBase<S>> {
    let init = ModelParams::<S>::init(cfg.dims(), cfg.dropout, cfg.seed)?;
    build_kb(windows, init.retrieval_encoder())
}

/// Training and held-out windows, without the knowledge base. Fails when
/// no channel is long enough for a single training window.
pub fn split_windows<S: Scalar>(channels: &[SeriesChannel<S>], cfg: &TrainConfig) -> Result<(Vec<Window<S>>, Vec<Window<S>>)> {
    cfg.validate()?;
    let (head, tail) = split_channels(channels, cfg.train_fraction);
    let train = normalized_windows(&head, cfg.context_len, cfg.horizon_len, cfg.window_stride);
    let held_out = normalized_windows(&tail, cfg.context_len, cfg.horizon_len, cfg.eval_stride);
    if train.is_empty() {
        return Err(Error::Domain(format!(
            "no training windows: channels too short for T + L = {}",
            cfg.context_len + cfg.horizon_len
        )));
    }
    Ok((train, held_out))
}

pub fn prepare<S: Scalar>(channels: Vec<SeriesChannel<S>>, cfg: &TrainConfig) -> Result<Dataset<S>> {
    let (train, held_out) = split_windows(&channels, cfg)?;
    let kb = knowledge_base(&train, cfg)?;
    Ok(Dataset {
        channels,
        train,
        held_out,
        kb,
    })
}

pub fn prepare_synthetic<S: Scalar>(cfg: &ExperimentConfig) -> Result<Dataset<S>> {
    let channels = generate_synthetic(&cfg.synthetic, cfg.synthetic.n_channels, cfg.synthetic.length)?;
    prepare(channels, &cfg.train)
}
