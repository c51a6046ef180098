use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Floor applied to the context standard deviation during normalization.
pub const STD_FLOOR: f64 = 1e-8;

/// One named univariate series.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesChannel<S> {
    pub name: String,
    pub values: Vec<S>,
    pub frequency_tag: String,
    /// Ground-truth generator id for synthetic channels.
    pub mechanism: Option<usize>,
    /// Index of `values[0]` in the original series, so window sources stay
    /// unique after a train/held-out split.
    pub start_offset: usize,
}

impl<S: Scalar> SeriesChannel<S> {
    pub fn new(name: impl Into<String>, values: Vec<S>) -> Self {
        Self {
            name: name.into(),
            values,
            frequency_tag: String::new(),
            mechanism: None,
            start_offset: 0,
        }
    }
}

/// Where a window came from: channel index and start offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SourceId {
    pub channel: usize,
    pub start: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats<S> {
    pub mean: S,
    pub std: S,
}

impl<S: Scalar> NormStats<S> {
    pub fn identity() -> Self {
        Self {
            mean: S::zero(),
            std: S::one(),
        }
    }
}

/// A (context, horizon) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Window<S> {
    pub context: Tensor<S>,
    pub horizon: Tensor<S>,
    pub norm_stats: NormStats<S>,
    pub source_id: SourceId,
    pub normalized: bool,
}

impl<S: Scalar> Window<S> {
    pub fn new(context: Vec<S>, horizon: Vec<S>, source_id: SourceId) -> Self {
        Self {
            context: Tensor::vector(context),
            horizon: Tensor::vector(horizon),
            norm_stats: NormStats::identity(),
            source_id,
            normalized: false,
        }
    }

    pub fn context_len(&self) -> usize {
        self.context.len()
    }

    pub fn horizon_len(&self) -> usize {
        self.horizon.len()
    }

    /// Maps a normalized-space series back to the original scale.
    pub fn denormalize_values(&self, values: &[S]) -> Vec<S> {
        let NormStats { mean, std } = self.norm_stats;
        values.iter().map(|&v| v * std + mean).collect()
    }

    pub fn raw_context(&self) -> Vec<S> {
        self.denormalize_values(self.context.data())
    }

    pub fn raw_horizon(&self) -> Vec<S> {
        self.denormalize_values(self.horizon.data())
    }
}

/// Population mean and standard deviation.
pub fn mean_std<S: Scalar>(x: &[S]) -> (S, S) {
    if x.is_empty() {
        return (S::zero(), S::zero());
    }
    let n = S::of_usize(x.len());
    let mean = x.iter().copied().sum::<S>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
    (mean, var.sqrt())
}

/// Instance normalization by the context's mean and (floored) std, applied
/// to both context and horizon. Already-normalized windows are returned
/// unchanged.
pub fn normalize_window<S: Scalar>(w: &Window<S>) -> Window<S> {
    if w.normalized {
        return w.clone();
    }
    let (mean, std) = mean_std(w.context.data());
    let std = std.max(S::of(STD_FLOOR));
    let scale = |t: &Tensor<S>| Tensor::vector(t.data().iter().map(|&v| (v - mean) / std).collect());
    Window {
        context: scale(&w.context),
        horizon: scale(&w.horizon),
        norm_stats: NormStats { mean, std },
        source_id: w.source_id,
        normalized: true,
    }
}

pub fn denormalize_window<S: Scalar>(w: &Window<S>) -> Window<S> {
    if !w.normalized {
        return w.clone();
    }
    Window {
        context: Tensor::vector(w.raw_context()),
        horizon: Tensor::vector(w.raw_horizon()),
        norm_stats: NormStats::identity(),
        source_id: w.source_id,
        normalized: false,
    }
}

/// Windows at starts `0, stride, 2·stride, …` while `start + T + L ≤ len`.
pub fn slice_windows<S: Scalar>(
    ch: &SeriesChannel<S>,
    channel: usize,
    context_len: usize,
    horizon_len: usize,
    stride: usize,
) -> Vec<Window<S>> {
    let span = context_len + horizon_len;
    if stride == 0 || ch.values.len() < span {
        return Vec::new();
    }
    (0..=ch.values.len() - span)
        .step_by(stride)
        .map(|start| {
            let ctx = ch.values[start..start + context_len].to_vec();
            let hor = ch.values[start + context_len..start + span].to_vec();
            let source = SourceId {
                channel,
                start: ch.start_offset + start,
            };
            Window::new(ctx, hor, source)
        })
        .collect()
}

/// Slices every channel, ordered by channel then start index.
pub fn slice_all<S: Scalar>(
    channels: &[SeriesChannel<S>],
    context_len: usize,
    horizon_len: usize,
    stride: usize,
) -> Vec<Window<S>> {
    channels
        .iter()
        .enumerate()
        .flat_map(|(i, ch)| slice_windows(ch, i, context_len, horizon_len, stride))
        .collect()
}
