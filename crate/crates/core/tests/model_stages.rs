mod common;

use common::{desk_dims, gaussian, random_setup};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ridde_core::model::{
    aggregate_retrieval, decompose, encode, forward, fuse, predict, Ablation, ForwardConfig, ModelParams, ParamId,
};

fn zeroed(params: &mut ModelParams<f64>, ids: &[ParamId]) {
    for &id in ids {
        params.value_mut(id).iter_mut().for_each(|v| *v = 0.0);
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn identical_patches_pool_to_one_feature() {
    let (params, _, _) = random_setup(1, 4);
    let patch: Vec<f64> = gaussian(&mut ChaCha8Rng::seed_from_u64(9), 16);
    let x: Vec<f64> = patch.iter().cycle().take(64).copied().collect();
    let q = encode(&x, &params).unwrap();
    let single = params.encoder().encode(&x[..16].repeat(4)).unwrap();
    assert!(close(&q, &single, 1e-15));
    // Oracle: one patch through the two layers by hand.
    let (w1, b1, w2, b2) = (
        params.value(ParamId::EncW1),
        params.value(ParamId::EncB1),
        params.value(ParamId::EncW2),
        params.value(ParamId::EncB2),
    );
    let hid: Vec<f64> = (0..64).map(|r| (b1[r] + (0..16).map(|c| w1[r * 16 + c] * patch[c]).sum::<f64>()).tanh()).collect();
    let feat: Vec<f64> = (0..32).map(|r| b2[r] + (0..64).map(|c| w2[r * 64 + c] * hid[c]).sum::<f64>()).collect();
    assert!(close(&q, &feat, 1e-12));
}

#[test]
fn zero_encoder_weights_give_constant_embedding() {
    let (mut params, _, _) = random_setup(2, 4);
    zeroed(&mut params, &[ParamId::EncW1, ParamId::EncW2]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = encode(&gaussian(&mut rng, 64), &params).unwrap();
    let b = encode(&gaussian(&mut rng, 64), &params).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, params.value(ParamId::EncB2));
}

#[test]
fn patch_order_does_not_change_embedding() {
    let (params, _, _) = random_setup(3, 4);
    let x = gaussian(&mut ChaCha8Rng::seed_from_u64(4), 64);
    let mut shuffled = Vec::new();
    for p in [2, 0, 3, 1] {
        shuffled.extend_from_slice(&x[p * 16..(p + 1) * 16]);
    }
    assert!(close(&encode(&x, &params).unwrap(), &encode(&shuffled, &params).unwrap(), 1e-14));
}

#[test]
fn attention_examples() {
    let (params, _, _) = random_setup(4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = gaussian(&mut rng, 32);
    let y1 = gaussian(&mut rng, 16);
    // K = 1: the single projected horizon.
    let (h, w) = aggregate_retrieval(&q, &y1, &params, 1.0).unwrap();
    assert_eq!(w, vec![1.0]);
    let (t1, _) = aggregate_retrieval(&q, &y1, &params, 0.3).unwrap();
    assert_eq!(h, t1);
    // Equal horizons: fixed point whatever the weights.
    let (h3, w3) = aggregate_retrieval(&q, &y1.repeat(3), &params, 1.0).unwrap();
    assert!(close(&h3, &h, 1e-14));
    assert!(close(&w3, &[1.0 / 3.0; 3], 1e-15));
    // Zero query: every cosine is 0, so the weights are uniform.
    let ys = gaussian(&mut rng, 5 * 16);
    let (hm, wm) = aggregate_retrieval(&[0.0; 32], &ys, &params, 1.0).unwrap();
    assert!(close(&wm, &[0.2; 5], 1e-15));
    let ts: Vec<Vec<f64>> = ys.chunks(16).map(|y| aggregate_retrieval(&q, y, &params, 1.0).unwrap().0).collect();
    let mean: Vec<f64> = (0..32).map(|j| ts.iter().map(|t| t[j]).sum::<f64>() / 5.0).collect();
    assert!(close(&hm, &mean, 1e-14));
    assert!(aggregate_retrieval(&q, &[], &params, 1.0).is_err());
}

#[test]
fn fusion_gate_examples() {
    let (mut params, _, _) = random_setup(5, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (q, r) = (gaussian(&mut rng, 32), gaussian(&mut rng, 32));
    let (h, _) = fuse(&q, &q, &params);
    assert!(close(&h, &q, 1e-15));
    params.value_mut(ParamId::LambdaB).iter_mut().for_each(|v| *v = 60.0);
    let (h, lambda) = fuse(&q, &r, &params);
    assert!(close(&h, &q, 1e-15));
    assert!(lambda.iter().all(|&l| l > 1.0 - 1e-15));
    zeroed(&mut params, &[ParamId::LambdaW, ParamId::LambdaB]);
    let (h, lambda) = fuse(&q, &r, &params);
    assert!(lambda.iter().all(|&l| l == 0.5));
    let avg: Vec<f64> = q.iter().zip(&r).map(|(a, b)| (a + b) / 2.0).collect();
    assert!(close(&h, &avg, 1e-15));
}

#[test]
fn routing_gate_examples() {
    let (mut params, _, _) = random_setup(6, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (h, r) = (gaussian(&mut rng, 32), gaussian(&mut rng, 32));
    let (zi, zd, _) = decompose(&[0.0; 32], &r, &params);
    assert!(zi.iter().chain(&zd).all(|&v| v == 0.0));
    zeroed(&mut params, &[ParamId::GammaW, ParamId::GammaB]);
    let (zi, zd, g) = decompose(&h, &r, &params);
    assert!(g.iter().all(|&v| v == 0.5));
    let half: Vec<f64> = h.iter().map(|v| v / 2.0).collect();
    assert_eq!(zi, half);
    assert_eq!(zd, half);
}

#[test]
fn predictor_examples() {
    let params = ModelParams::<f64>::init(desk_dims(), 0.0, 3).unwrap();
    let (y, _, _) = predict(&[0.0; 32], &[0.0; 32], &params);
    assert!(y.iter().all(|&v| v == 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (y, yi, yd) = predict(&gaussian(&mut rng, 32), &gaussian(&mut rng, 32), &params);
    let avg: Vec<f64> = yi.iter().zip(&yd).map(|(a, b)| (a + b) / 2.0).collect();
    assert!(close(&y, &avg, 1e-15));
}

#[test]
fn forward_is_the_composition_of_its_stages() {
    let (params, kb, windows) = random_setup(7, 50);
    let cfg = ForwardConfig {
        k: 3,
        ..ForwardConfig::default()
    };
    for w in &windows[..5] {
        let x = w.context.data();
        let exclude = kb.id_for_source(&w.source_id);
        let out = forward(x, Some(&kb), &params, &cfg, exclude).unwrap();

        let q = encode(x, &params).unwrap();
        let search = params.retrieval_encoder().encode(x).unwrap();
        let ret = kb.top_k(&search, 3, exclude).unwrap();
        let (h_ret, omega) = aggregate_retrieval(&q, ret.horizons.data(), &params, 1.0).unwrap();
        let (h, lambda) = fuse(&q, &h_ret, &params);
        let (zi, zd, gamma) = decompose(&h, &h_ret, &params);
        let (y, yi, yd) = predict(&zi, &zd, &params);

        assert_eq!(out.q, q);
        assert_eq!(out.retrieved_ids, ret.ids);
        assert!(!out.retrieved_ids.contains(&exclude.unwrap()));
        assert_eq!((out.h_ret, out.omega), (h_ret, omega));
        assert_eq!((out.h, out.lambda_gate), (h, lambda));
        assert_eq!((out.z_inv, out.z_dyn, out.gamma_gate), (zi, zd, gamma));
        assert_eq!((out.y_hat, out.y_inv, out.y_dyn), (y, yi, yd));
    }
}

#[test]
fn inference_is_deterministic() {
    let (params, kb, windows) = random_setup(8, 30);
    let cfg = ForwardConfig::default();
    let x = windows[0].context.data();
    assert_eq!(forward(x, Some(&kb), &params, &cfg, None).unwrap(), forward(x, Some(&kb), &params, &cfg, None).unwrap());
}

#[test]
fn no_retrieval_equals_saturated_fusion_gate() {
    let (mut params, kb, windows) = random_setup(9, 30);
    // λ ≡ 1 makes h = q; zeroing the h_ret half of W_γ removes its only
    // other path into the output.
    params.value_mut(ParamId::LambdaB).iter_mut().for_each(|v| *v = 1e3);
    let d = 32;
    for row in params.value_mut(ParamId::GammaW).chunks_mut(2 * d) {
        row[d..].iter_mut().for_each(|v| *v = 0.0);
    }
    let full = ForwardConfig::default();
    let ablated = ForwardConfig {
        ablation: Ablation::NoRetrieval,
        ..full
    };
    for w in &windows[..8] {
        let x = w.context.data();
        let a = forward(x, Some(&kb), &params, &full, None).unwrap();
        let b = forward(x, None, &params, &ablated, None).unwrap();
        assert!(a.lambda_gate.iter().all(|&l| l == 1.0));
        assert_eq!(a.h, b.h);
        assert_eq!(a.y_hat, b.y_hat);
        assert!(b.omega.is_empty() && b.retrieved_ids.is_empty());
    }
}

#[test]
fn retrieval_ablations_require_a_kb_and_matching_encoder() {
    let (params, kb, windows) = random_setup(10, 10);
    let x = windows[0].context.data();
    assert!(forward(x, None, &params, &ForwardConfig::default(), None).is_err());
    let other = ModelParams::<f64>::init(desk_dims(), 0.0, 99).unwrap();
    assert!(matches!(
        ridde_core::model::check_kb(&other, &kb),
        Err(ridde_core::Error::StaleEmbeddings { .. })
    ));
    ridde_core::model::check_kb(&params, &kb).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_invariants(seed in 0u64..10_000, k in 1usize..8, which in 0usize..20) {
        let (params, kb, windows) = random_setup(seed, 20);
        let w = &windows[which];
        let cfg = ForwardConfig { k, temperature: 0.5, ..ForwardConfig::default() };
        let out = forward(w.context.data(), Some(&kb), &params, &cfg, kb.id_for_source(&w.source_id)).unwrap();
        for j in 0..32 {
            prop_assert!((out.z_inv[j] + out.z_dyn[j] - out.h[j]).abs() <= 1e-12);
            let (lo, hi) = (out.q[j].min(out.h_ret[j]), out.q[j].max(out.h_ret[j]));
            prop_assert!(out.h[j] >= lo - 1e-12 && out.h[j] <= hi + 1e-12);
            prop_assert!(out.lambda_gate[j] > 0.0 && out.lambda_gate[j] < 1.0);
            prop_assert!(out.gamma_gate[j] > 0.0 && out.gamma_gate[j] < 1.0);
        }
        prop_assert_eq!(out.omega.len(), k);
        prop_assert!((out.omega.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(out.omega.iter().all(|&w| w >= 0.0));
        prop_assert!(out.retrieval_similarities.windows(2).all(|p| p[0] >= p[1]));
    }
}
