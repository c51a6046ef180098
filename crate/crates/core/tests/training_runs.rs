mod common;

use common::random_setup;
use rand_chacha::ChaCha8Rng;
use ridde_core::data::SyntheticSpec;
use ridde_core::model::{backward, forward_tape, Ablation, Checkpoint, ForwardConfig, Gradients, ModelParams, OutputGrads};
use ridde_core::numerics::ParamSet;
use ridde_core::pipeline::{prepare_synthetic, Dataset};
use ridde_core::training::{
    evaluate_normalized, metrics_jsonl, sample_loss, train, ExperimentConfig, Profile, TrainConfig, TrainOptions, Trainer,
};

/// Desk model on a smaller synthetic set with short, cheap runs.
fn small(steps: u64) -> (ExperimentConfig, Dataset<f64>) {
    let mut exp = ExperimentConfig::for_profile(Profile::Desk);
    exp.synthetic = SyntheticSpec {
        n_channels: 6,
        length: 300,
        ..exp.synthetic
    };
    exp.train.steps = steps;
    exp.train.batch_size = 8;
    exp.train.eval_interval = 50;
    let data = prepare_synthetic(&exp).unwrap();
    (exp, data)
}

fn bytes(params: &ModelParams<f64>, step: u64) -> Vec<u8> {
    Checkpoint::from_params(params, step, 0).encode().unwrap()
}

#[test]
fn zero_steps_returns_initial_params() {
    let (exp, data) = small(0);
    let (params, log) = train(&exp.train, &data.train, Some(&data.kb), &data.held_out, TrainOptions::default()).unwrap();
    assert!(log.is_empty());
    let init = ModelParams::init(exp.train.dims(), exp.train.dropout, exp.train.seed).unwrap();
    assert_eq!(params, init);
}

#[test]
fn same_seed_gives_identical_runs_at_any_parallelism() {
    let (exp, data) = small(120);
    let run = |parallel| {
        let opts = TrainOptions { parallel, timing: false };
        train(&exp.train, &data.train, Some(&data.kb), &data.held_out, opts).unwrap()
    };
    let (a, la) = run(false);
    let (b, lb) = run(false);
    let (c, lc) = run(true);
    assert_eq!(bytes(&a, 120), bytes(&b, 120));
    assert_eq!(bytes(&a, 120), bytes(&c, 120));
    assert_eq!(metrics_jsonl(&la), metrics_jsonl(&lb));
    assert_eq!(metrics_jsonl(&la), metrics_jsonl(&lc));
    assert_eq!(la.len(), 3);
}

#[test]
fn resume_matches_straight_run() {
    let (exp, data) = small(1000);
    let opts = TrainOptions::default();
    let mut straight = Trainer::new(&exp.train, &data.train, Some(&data.kb), &[], opts).unwrap();
    straight.run(|_, _| Ok(())).unwrap();

    let half = TrainConfig {
        steps: 500,
        ..exp.train.clone()
    };
    let mut first = Trainer::new(&half, &data.train, Some(&data.kb), &[], opts).unwrap();
    first.run(|_, _| Ok(())).unwrap();
    let ckpt = Checkpoint::decode(&first.checkpoint().encode().unwrap()).unwrap();
    let mut second = Trainer::resume(&exp.train, &ckpt, &data.train, Some(&data.kb), &[], opts).unwrap();
    second.run(|_, _| Ok(())).unwrap();

    assert_eq!(second.step(), 1000);
    assert_eq!(second.checkpoint().encode().unwrap(), straight.checkpoint().encode().unwrap());
    assert_eq!(second.log(), &straight.log()[straight.log().len() - second.log().len()..]);
}

#[test]
fn resume_rejects_mismatched_config() {
    let (exp, data) = small(10);
    let t = Trainer::new(&exp.train, &data.train, Some(&data.kb), &[], TrainOptions::default()).unwrap();
    let other = TrainConfig {
        seed: 7,
        ..exp.train.clone()
    };
    assert!(Trainer::resume(&other, &t.checkpoint(), &data.train, Some(&data.kb), &[], TrainOptions::default()).is_err());
}

#[test]
fn logged_totals_decompose_and_no_dis_zeroes_the_penalty() {
    let (exp, data) = small(100);
    for ablation in [Ablation::Full, Ablation::NoDis] {
        let cfg = TrainConfig {
            ablation,
            rho: 0.5,
            eval_interval: 10,
            ..exp.train.clone()
        };
        let (_, log) = train(&cfg, &data.train, Some(&data.kb), &[], TrainOptions::default()).unwrap();
        assert_eq!(log.len(), 10);
        for r in &log {
            let rho = cfg.effective_rho();
            assert!((r.total - (r.pred + rho * r.dis)).abs() <= 1e-10);
            assert!(r.dis > 0.0);
            if ablation == Ablation::NoDis {
                assert_eq!(r.total, r.pred);
            }
        }
    }
}

#[test]
fn zero_rho_gradient_equals_prediction_only_gradient() {
    let (params, kb, windows) = random_setup(3, 40);
    let cfg = ForwardConfig {
        k: 3,
        ..ForwardConfig::default()
    };
    let grads_for = |rho: Option<f64>| {
        let mut g = Gradients::zeros_like(&params);
        for w in &windows[..4] {
            let (out, tape) =
                forward_tape::<f64, ChaCha8Rng>(w.context.data(), Some(&kb), &params, &cfg, None, None).unwrap();
            let up = match rho {
                Some(rho) => sample_loss(&out.y_hat, w.horizon.data(), &out.z_inv, &out.z_dyn, rho, 4).1,
                // Hand-written adjoint of Σ‖ŷ − y‖²/B alone.
                None => OutputGrads {
                    y_hat: out.y_hat.iter().zip(w.horizon.data()).map(|(p, t)| 2.0 * (p - t) / 4.0).collect(),
                    z_inv: vec![0.0; 32],
                    z_dyn: vec![0.0; 32],
                },
            };
            backward(&params, &out, &tape, &up, &mut g);
        }
        g
    };
    let pred_only = grads_for(None);
    assert_eq!(grads_for(Some(0.0)), pred_only);
    assert_ne!(grads_for(Some(0.5)), pred_only);
}

#[test]
fn desk_run_reduces_held_out_error() {
    let exp = ExperimentConfig::for_profile(Profile::Desk);
    let data = prepare_synthetic::<f64>(&exp).unwrap();
    let cfg = exp.train.forward_config();
    let init = ModelParams::init(exp.train.dims(), exp.train.dropout, exp.train.seed).unwrap();
    let (before, _) = evaluate_normalized(&init, Some(&data.kb), &data.held_out, &cfg, false).unwrap();
    let (params, log) = train(&exp.train, &data.train, Some(&data.kb), &data.held_out, TrainOptions::default()).unwrap();
    let (after, _) = evaluate_normalized(&params, Some(&data.kb), &data.held_out, &cfg, false).unwrap();
    assert!(after < before, "held-out MSE {before} → {after}");
    assert_eq!(log.last().unwrap().val_mse, Some(after));
    assert!(params.all_finite() && params.params().len() == 16);
}

#[test]
fn single_precision_pipeline_trains() {
    let mut exp = ExperimentConfig::for_profile(Profile::Desk);
    exp.synthetic = SyntheticSpec {
        n_channels: 6,
        length: 300,
        ..exp.synthetic
    };
    exp.train.steps = 200;
    exp.train.batch_size = 8;
    let data = prepare_synthetic::<f32>(&exp).unwrap();
    let cfg = exp.train.forward_config();
    let init = ModelParams::<f32>::init(exp.train.dims(), exp.train.dropout, exp.train.seed).unwrap();
    let (before, _) = evaluate_normalized(&init, Some(&data.kb), &data.held_out, &cfg, false).unwrap();
    let (params, _) = train(&exp.train, &data.train, Some(&data.kb), &[], TrainOptions::default()).unwrap();
    let (after, _) = evaluate_normalized(&params, Some(&data.kb), &data.held_out, &cfg, false).unwrap();
    assert!(after < before, "{before} → {after}");
}
