use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::metrics::ModelForecaster;
use crate::data::Window;
use crate::error::Result;
use crate::model::{ForwardConfig, ModelParams};
use crate::retrieval::KnowledgeBase;
use crate::scalar::Scalar;

/// Location and spread of a sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p10: f64,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
}

impl Summary {
    /// Sorts internally, so the result does not depend on input order.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let q = |p: f64| v[((n - 1) as f64 * p).round() as usize];
        Self {
            n,
            mean,
            std: var.sqrt(),
            min: v[0],
            p10: q(0.1),
            median: q(0.5),
            p90: q(0.9),
            max: v[n - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub n_windows: usize,
    /// |cos(z_inv, z_dyn)| per window.
    pub abs_cos: Summary,
    /// Every γ entry of every window.
    pub gamma: Summary,
}

/// Cosine that treats a zero vector as orthogonal to everything, and clamps
/// round-off so `|cos| ≤ 1`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Per-window |cos(z_inv, z_dyn)| and γ entries, in window order.
pub fn probe_values<S: Scalar>(
    params: &ModelParams<S>,
    kb: Option<&KnowledgeBase<S>>,
    windows: &[Window<S>],
    cfg: &ForwardConfig,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let model = ModelForecaster { params, kb, cfg: *cfg };
    windows
        .par_iter()
        .map(|w| {
            let out = model.run(w)?;
            let widen = |v: &[S]| v.iter().map(|x| x.widen()).collect::<Vec<_>>();
            Ok((cosine(&widen(&out.z_inv), &widen(&out.z_dyn)).abs(), widen(&out.gamma_gate)))
        })
        .collect()
}

pub fn disentanglement_probe<S: Scalar>(
    params: &ModelParams<S>,
    kb: Option<&KnowledgeBase<S>>,
    windows: &[Window<S>],
    cfg: &ForwardConfig,
) -> Result<ProbeReport> {
    let values = probe_values(params, kb, windows, cfg)?;
    let cos: Vec<f64> = values.iter().map(|v| v.0).collect();
    let gamma: Vec<f64> = values.iter().flat_map(|v| v.1.iter().copied()).collect();
    Ok(ProbeReport {
        n_windows: windows.len(),
        abs_cos: Summary::of(&cos),
        gamma: Summary::of(&gamma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_small_sample() {
        let s = Summary::of(&[3.0, 1.0, 2.0]);
        assert_eq!((s.n, s.min, s.median, s.max, s.mean), (3, 1.0, 2.0, 3.0, 2.0));
        assert_eq!(Summary::of(&[]).n, 0);
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((cosine(&[2.0, 2.0], &[1.0, 1.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[-3.0, 0.0]), -1.0);
    }
}
