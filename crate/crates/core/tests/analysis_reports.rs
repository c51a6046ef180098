mod common;

use common::{desk_dims, gaussian, random_setup};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ridde_core::analysis::bias::PlotRow;
use ridde_core::analysis::studies::sensitivity_sweep;
use ridde_core::analysis::*;
use ridde_core::data::{normalize_window, SourceId, SyntheticSpec, Window};
use ridde_core::model::{Ablation, ForwardConfig, ModelParams, ParamId};
use ridde_core::pipeline::prepare_synthetic;
use ridde_core::retrieval::build_kb;
use ridde_core::training::{ExperimentConfig, Profile, TrainOptions};

fn iid_windows(seed: u64, n: usize) -> Vec<Window<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let v = gaussian(&mut rng, 80);
            normalize_window(&Window::new(v[..64].to_vec(), v[64..].to_vec(), SourceId { channel: i, start: 0 }))
        })
        .collect()
}

#[test]
fn zero_forecast_on_unit_variance_targets_scores_about_one() {
    let windows = iid_windows(0, 700);
    let r = evaluate(&ZeroForecaster, &windows, 16).unwrap();
    assert!(r.n_points >= 10_000);
    // Predicting the context mean of iid unit-variance data: 1 + 1/T.
    assert!((r.mse - 1.0).abs() <= 0.05, "{}", r.mse);
    assert!(r.mae > 0.0 && r.per_component.trend.mse >= 0.0 && r.per_component.seasonal.mse >= 0.0);
}

#[test]
fn trained_model_evaluation_matches_raw_forecasts() {
    let (params, kb, windows) = random_setup(2, 30);
    let cfg = ForwardConfig::default();
    let r = evaluate_model(&params, Some(&kb), &windows, &cfg, 16).unwrap();
    let model = ModelForecaster {
        params: &params,
        kb: Some(&kb),
        cfg,
    };
    let mut se = 0.0;
    for w in &windows {
        let pred = w.denormalize_values(&model.forecast(w).unwrap());
        se += pred.iter().zip(w.raw_horizon()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
    }
    assert!((r.mse - se / (30.0 * 16.0)).abs() <= 1e-12 * r.mse);
    let stale = ModelParams::init(desk_dims(), 0.0, 77).unwrap();
    assert!(evaluate_model(&stale, Some(&kb), &windows, &cfg, 16).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn evaluation_ignores_window_order(seed in 0u64..1000) {
        let mut windows = iid_windows(seed, 12);
        let a = evaluate(&ZeroForecaster, &windows, 8).unwrap();
        windows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
        prop_assert_eq!(a, evaluate(&ZeroForecaster, &windows, 8).unwrap());
    }

    #[test]
    fn exact_decomposition_reconstructs(
        nums in prop::collection::vec(-1000i64..1000, 20..60),
        den in 1i64..97,
        period in 2usize..10,
    ) {
        let y: Vec<BigRational> = nums.iter().map(|&n| BigRational::new(BigInt::from(n), BigInt::from(den))).collect();
        let (t, s) = decompose_series_exact(&y, period).unwrap();
        for i in 0..y.len() {
            prop_assert_eq!(&t[i] + &s[i], y[i].clone());
        }
    }

    #[test]
    fn variance_bound_holds_for_random_weights(seed in 0u64..1000, k in 1usize..16, sigma2 in 0.1f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = gaussian(&mut rng, k).iter().map(|v| v.exp()).collect();
        let total: f64 = raw.iter().sum();
        let omega: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let r = verify_variance_bound(&omega, sigma2, 5000, seed, NoiseKind::Gaussian, 4).unwrap();
        prop_assert!((r.bound - sigma2 * omega.iter().map(|w| w * w).sum::<f64>()).abs() <= 1e-12);
        prop_assert!(r.pass, "{:?}", r);
    }
}

#[test]
fn variance_bound_spot_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let raw: Vec<f64> = gaussian(&mut rng, 5).iter().map(|v| v.exp()).collect();
    let omega: Vec<f64> = raw.iter().map(|v| v / raw.iter().sum::<f64>()).collect();
    for noise in [NoiseKind::Gaussian, NoiseKind::Uniform] {
        let r = verify_variance_bound(&omega, 1.0, 100_000, 0, noise, 4).unwrap();
        assert!(r.pass, "{r:?}");
        assert!((r.empirical_var / r.bound - 1.0).abs() < 0.05);
    }
    let json = serde_json::to_value(verify_variance_bound(&uniform_omega(5), 1.0, 1000, 0, NoiseKind::Gaussian, 4).unwrap()).unwrap();
    assert!((json["bound"].as_f64().unwrap() - 0.2).abs() <= 1e-12);
    assert_eq!(json["K"], 5);
}

#[test]
fn probe_of_neutral_gates() {
    let dims = desk_dims();
    let mut params = ModelParams::<f64>::init(dims, 0.0, 1).unwrap();
    params.value_mut(ParamId::GammaW).iter_mut().for_each(|v| *v = 0.0);
    let windows = iid_windows(3, 20);
    let kb = build_kb(&windows, params.retrieval_encoder()).unwrap();
    let r = disentanglement_probe(&params, Some(&kb), &windows, &ForwardConfig::default()).unwrap();
    assert_eq!((r.gamma.min, r.gamma.max), (0.5, 0.5));
    assert!((r.abs_cos.min - 1.0).abs() < 1e-12);
    assert_eq!(r.n_windows, 20);

    let (params, kb, windows) = random_setup(4, 30);
    let r = disentanglement_probe(&params, Some(&kb), &windows, &ForwardConfig::default()).unwrap();
    assert!(r.abs_cos.min >= 0.0 && r.abs_cos.max <= 1.0);
    assert!(r.gamma.min > 0.0 && r.gamma.max < 1.0);
    // Without decomposition z_dyn is zero, reported as orthogonal.
    let cfg = ForwardConfig {
        ablation: Ablation::NoIdd,
        ..ForwardConfig::default()
    };
    let r = disentanglement_probe(&params, Some(&kb), &windows, &cfg).unwrap();
    assert_eq!(r.abs_cos.max, 0.0);
}

fn small_experiment(steps: u64) -> ExperimentConfig {
    let mut exp = ExperimentConfig::for_profile(Profile::Desk);
    exp.synthetic = SyntheticSpec {
        n_channels: 6,
        length: 300,
        ..exp.synthetic
    };
    exp.train.steps = steps;
    exp.train.batch_size = 8;
    exp
}

fn check_study(study: &BiasStudy, n_points: usize) {
    for h in &study.report.histograms {
        assert_eq!(h.baseline_counts.len(), HISTOGRAM_BINS);
        assert_eq!(h.baseline_counts.iter().sum::<u64>(), h.baseline_samples);
        assert_eq!(h.rag_counts.iter().sum::<u64>(), h.rag_samples);
        assert_eq!(h.baseline_samples as usize, n_points);
    }
    assert_eq!(study.baseline_plot.len(), 3 * n_points);
    assert_eq!(study.rag_plot.len(), 3 * n_points);
}

#[test]
fn bias_control_has_zero_deltas() {
    let exp = small_experiment(60);
    let data = prepare_synthetic::<f64>(&exp).unwrap();
    let study = rag_bias_study(&data, &exp.train, Ablation::NoRetrieval, TrainOptions::default()).unwrap();
    assert_eq!(study.report.all.deltas, MetricDeltas::default());
    assert_eq!(study.baseline_plot, study.rag_plot);
    check_study(&study, data.held_out.len() * 16);
}

#[test]
fn bias_study_report_and_plot_files() {
    let exp = small_experiment(60);
    let data = prepare_synthetic::<f64>(&exp).unwrap();
    let study = rag_bias_study(&data, &exp.train, Ablation::NoIdd, TrainOptions::default()).unwrap();
    check_study(&study, data.held_out.len() * 16);
    let r = &study.report;
    assert_eq!((r.baseline_ablation, r.rag_ablation), (Ablation::NoRetrieval, Ablation::NoIdd));
    assert!((r.all.deltas.mse - (r.all.rag.mse - r.all.baseline.mse)).abs() == 0.0);
    let n_high = r.high_fluctuation.as_ref().map_or(0, |g| g.baseline.n_windows);
    let n_low = r.low_fluctuation.as_ref().map_or(0, |g| g.baseline.n_windows);
    assert_eq!(n_high + n_low, data.held_out.len());
    serde_json::to_string(r).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plot.csv");
    write_plot_csv(&path, &study.rag_plot).unwrap();
    let mut rd = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), PLOT_HEADERS);
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), study.rag_plot.len());
    let first: &PlotRow = &study.rag_plot[0];
    assert_eq!(&rows[0][7], "raw");
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), first.y);
    assert_eq!(&rows[1][5], "");
}

#[test]
fn sensitivity_grid_is_complete() {
    let exp = small_experiment(20);
    let grid = sensitivity_sweep(&exp, &[1, 3], &[0.01, 1.0], TrainOptions::default()).unwrap();
    assert_eq!(grid.cells.len(), 4);
    let keys: Vec<(usize, f64)> = grid.cells.iter().map(|c| (c.k, c.rho)).collect();
    assert_eq!(keys, vec![(1, 0.01), (1, 1.0), (3, 0.01), (3, 1.0)]);
    assert!(grid.cells.iter().all(|c| c.mse.is_finite() && c.final_loss.is_finite()));
}
