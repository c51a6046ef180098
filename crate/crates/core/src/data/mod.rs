//! Series ingestion, synthetic generation, windowing, normalization and
//! patching.

pub mod csv_input;
pub mod patch;
pub mod synthetic;
pub mod window;

pub use csv_input::{load_csv, ColumnSpec};
pub use patch::{patch, PatchConfig};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use window::{
    denormalize_window, normalize_window, slice_all, slice_windows, NormStats, SeriesChannel, SourceId, Window,
};

use crate::scalar::Scalar;

/// Splits every channel in time: the first `train_fraction` of samples go to
/// the training/knowledge-base side, the rest are held out.
pub fn split_channels<S: Scalar>(
    channels: &[SeriesChannel<S>],
    train_fraction: f64,
) -> (Vec<SeriesChannel<S>>, Vec<SeriesChannel<S>>) {
    channels
        .iter()
        .map(|ch| {
            let cut = ((ch.values.len() as f64) * train_fraction).floor() as usize;
            let cut = cut.min(ch.values.len());
            let mut head = ch.clone();
            let mut tail = ch.clone();
            head.values.truncate(cut);
            tail.values = ch.values[cut..].to_vec();
            tail.start_offset = ch.start_offset + cut;
            (head, tail)
        })
        .unzip()
}

/// Slices and instance-normalizes every channel.
pub fn normalized_windows<S: Scalar>(
    channels: &[SeriesChannel<S>],
    context_len: usize,
    horizon_len: usize,
    stride: usize,
) -> Vec<Window<S>> {
    slice_all(channels, context_len, horizon_len, stride)
        .iter()
        .map(normalize_window)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_preserves_samples() {
        let ch = vec![SeriesChannel::new("a", (0..10).map(|v| v as f64).collect())];
        let (head, tail) = split_channels(&ch, 0.7);
        assert_eq!(head[0].values.len(), 7);
        assert_eq!(tail[0].values, vec![7.0, 8.0, 9.0]);
    }
}
