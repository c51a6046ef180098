#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ridde_core::data::{normalize_window, PatchConfig, SourceId, Window};
use ridde_core::model::{
    backward, forward, forward_tape, ForwardConfig, Gradients, ModelDims, ModelParams,
};
use ridde_core::numerics::ParamSet;
use ridde_core::retrieval::{build_kb, KnowledgeBase};
use ridde_core::training::sample_loss;

/// Relative-error floor for whole-model gradient checks. Finite-difference
/// noise on the full loss is ~1e-10 absolute, so entries whose gradient is
/// below 1e-6 are judged on absolute error (≤ 1e-10 at tolerance 1e-4).
pub const MODEL_FLOOR: f64 = 1e-6;

pub fn desk_dims() -> ModelDims {
    ModelDims {
        context_len: 64,
        horizon_len: 16,
        patch: PatchConfig::new(16, 16),
        d_model: 32,
        d_hidden: 64,
    }
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Normalized random-walk windows with distinct sources.
pub fn random_windows(rng: &mut ChaCha8Rng, n: usize, t: usize, l: usize) -> Vec<Window<f64>> {
    (0..n)
        .map(|i| {
            let mut v = 0.0;
            let series: Vec<f64> = (0..t + l)
                .map(|_| {
                    v += rng.sample::<f64, _>(StandardNormal);
                    v
                })
                .collect();
            let w = Window::new(series[..t].to_vec(), series[t..].to_vec(), SourceId { channel: i, start: 0 });
            normalize_window(&w)
        })
        .collect()
}

/// Randomly initialized model plus a knowledge base of `n` windows embedded
/// with its frozen encoder. Gate weights are scaled up so the gates are far
/// from their neutral 0.5.
pub fn random_setup(seed: u64, n: usize) -> (ModelParams<f64>, KnowledgeBase<f64>, Vec<Window<f64>>) {
    let dims = desk_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(dims, 0.0, seed).unwrap();
    for p in params.params_mut() {
        for v in p.value.data_mut() {
            if *v == 0.0 {
                *v = 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    params.snapshot_encoder();
    let windows = random_windows(&mut rng, n, dims.context_len, dims.horizon_len);
    let kb = build_kb(&windows, params.retrieval_encoder()).unwrap();
    (params, kb, windows)
}

/// Batch loss of `windows` under inference-mode forward.
pub fn batch_loss(
    params: &ModelParams<f64>,
    kb: &KnowledgeBase<f64>,
    windows: &[Window<f64>],
    cfg: &ForwardConfig,
    rho: f64,
) -> f64 {
    windows
        .iter()
        .map(|w| {
            let out = forward(w.context.data(), Some(kb), params, cfg, kb.id_for_source(&w.source_id)).unwrap();
            sample_loss(&out.y_hat, w.horizon.data(), &out.z_inv, &out.z_dyn, rho, windows.len()).0.total
        })
        .sum()
}

/// Loads analytic adjoints of [`batch_loss`] into `params`' grad slots.
pub fn load_adjoints(
    params: &mut ModelParams<f64>,
    kb: &KnowledgeBase<f64>,
    windows: &[Window<f64>],
    cfg: &ForwardConfig,
    rho: f64,
) {
    params.zero_grads();
    let mut g = Gradients::zeros_like(params);
    for w in windows {
        let (out, tape) = forward_tape::<f64, ChaCha8Rng>(
            w.context.data(),
            Some(kb),
            params,
            cfg,
            kb.id_for_source(&w.source_id),
            None,
        )
        .unwrap();
        let (_, up) = sample_loss(&out.y_hat, w.horizon.data(), &out.z_inv, &out.z_dyn, rho, windows.len());
        backward(params, &out, &tape, &up, &mut g);
    }
    g.accumulate_into(params);
}
