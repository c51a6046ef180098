use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use ridde_core::analysis::metrics::{aggregate, window_errors_all};
use ridde_core::analysis::{rag_bias_study, sensitivity_grid, uniform_omega, verify_variance_bound, write_plot_csv, ModelForecaster, NoiseKind};
use ridde_core::data::{normalized_windows, split_channels, SeriesChannel, Window};
use ridde_core::model::{Ablation, ForecastOutput};
use ridde_core::pipeline::{knowledge_base, prepare, split_windows};
use ridde_core::retrieval::{save_kb, sidecar_path};
use ridde_core::training::{metrics_jsonl, ExperimentConfig, MetricsRecord, TrainConfig, TrainOptions, Trainer};

use crate::data::{
    checkpoint_config, checkpoint_config_path, config_toml, load_channels, model_for, read_checkpoint, required_kb, resolve_config,
    resolve_period,
};
use crate::manifest::{output, with_suffix, write_file, CliError, CliResult, Recorder};
use crate::{BuildKbArgs, ConfigArgs, EvalArgs, EvalSplit, ForecastArgs, KbSplit, Noise, RagBiasArgs, SweepArgs, TrainArgs, TrainOverrides, VerifyArgs};

/// Profile, config file, then flags.
fn resolved(c: &ConfigArgs, o: &TrainOverrides, rec: &mut Recorder) -> CliResult<ExperimentConfig> {
    let mut exp = resolve_config(c.config.as_deref(), c.profile.as_deref(), rec)?;
    if let Some(seed) = c.seed {
        exp.train.seed = seed;
        exp.synthetic.seed = seed;
    }
    let t = &mut exp.train;
    if let Some(a) = &o.ablation {
        t.ablation = a.parse()?;
    }
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = o.$f { t.$f = v; })* };
    }
    set!(steps, rho, k, lr, batch_size, dropout, eval_interval);
    t.validate()?;
    Ok(exp)
}

fn to_json<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(format!("cannot serialize report: {e}")))?;
    v.push(b'\n');
    Ok(v)
}

/// Writes a JSON report to `out`, or to stdout without one.
fn emit_json<T: Serialize>(value: &T, out: Option<&Path>, rec: &mut Recorder) -> CliResult<()> {
    let bytes = to_json(value)?;
    match out {
        Some(p) => {
            write_file(p, &bytes)?;
            rec.output(p);
        }
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}

pub fn build_kb(a: &BuildKbArgs, rec: &mut Recorder) -> CliResult<()> {
    let exp = resolved(&a.config, &TrainOverrides::default(), rec)?;
    rec.config(&exp, Some(exp.train.seed));
    let channels = load_channels(&a.data.data, &a.data.columns, &exp, rec)?;
    let t = &exp.train;
    let windows = match a.split {
        KbSplit::Train => split_windows(&channels, t)?.0,
        KbSplit::All => normalized_windows(&channels, t.context_len, t.horizon_len, t.window_stride),
    };
    if windows.is_empty() {
        return Err(CliError::Usage(format!(
            "no windows: every channel is shorter than T + L = {}",
            t.context_len + t.horizon_len
        )));
    }
    let kb = knowledge_base(&windows, t)?;
    output(save_kb(&kb, &a.out))?;
    rec.output(&a.out);
    rec.output(&sidecar_path(&a.out));
    println!(
        "knowledge base: {} entries from {} channels, context {}, horizon {}, embedding dim {} -> {}",
        kb.len(),
        channels.len(),
        kb.context_len(),
        kb.horizon_len(),
        kb.dim(),
        a.out.display()
    );
    Ok(())
}

/// Lines of an earlier run's log up to `step`, kept verbatim so a resumed
/// log is byte-identical to a straight run's.
fn previous_log(path: &Path, step: u64) -> CliResult<String> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(String::new());
    };
    let mut out = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r: MetricsRecord =
            serde_json::from_str(line).map_err(|e| CliError::Usage(format!("{}: unreadable metrics record: {e}", path.display())))?;
        if r.step <= step {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn train(a: &TrainArgs, parallel: bool, rec: &mut Recorder) -> CliResult<()> {
    let exp = resolved(&a.config, &a.overrides, rec)?;
    rec.config(&exp, Some(exp.train.seed));
    let cfg = &exp.train;
    let channels = load_channels(&a.data.data, &a.data.columns, &exp, rec)?;
    let (train_w, held_out) = split_windows(&channels, cfg)?;
    let kb = required_kb(a.kb.as_deref(), cfg, rec)?;
    if let Some((kb, path)) = &kb {
        if (kb.context_len(), kb.horizon_len(), kb.dim()) != (cfg.context_len, cfg.horizon_len, cfg.d_model) {
            return Err(CliError::Usage(format!(
                "knowledge base {} has (context, horizon, embedding) = {:?} but the config has {:?}",
                path.display(),
                (kb.context_len(), kb.horizon_len(), kb.dim()),
                (cfg.context_len, cfg.horizon_len, cfg.d_model)
            )));
        }
    }
    let kb_ref = kb.as_ref().map(|(k, _)| k);
    let kb_err = |e: ridde_core::Error| match (&e, &kb) {
        (ridde_core::Error::StaleEmbeddings { .. }, Some((_, p))) => CliError::Usage(format!(
            "knowledge base {} was not built for this model (build it with the same seed and dims): {e}",
            p.display()
        )),
        _ => e.into(),
    };

    let opts = TrainOptions { parallel, timing: false };
    let metrics_path = with_suffix(&a.out, ".metrics.jsonl");
    let mut log = String::new();
    let mut trainer = match &a.resume {
        Some(p) => {
            let ck = read_checkpoint(p, rec)?;
            log = previous_log(&metrics_path, ck.step)?;
            Trainer::resume(cfg, &ck, &train_w, kb_ref, &held_out, opts)
        }
        None => Trainer::new(cfg, &train_w, kb_ref, &held_out, opts),
    }
    .map_err(kb_err)?;

    let config_path = checkpoint_config_path(&a.out);
    write_file(&config_path, config_toml(&exp)?.as_bytes())?;
    rec.output(&config_path);

    let run = trainer.run(|t, r| {
        eprintln!("step {:>6}  total {:.6}  pred {:.6}  dis {:.6}  val_mse {}", r.step, r.total, r.pred, r.dis, r.val_mse.map_or("-".into(), |v| format!("{v:.6}")));
        t.checkpoint().save(&a.out)
    });
    log.push_str(&metrics_jsonl(trainer.log()));
    // The metrics log and the last good checkpoint survive a failed run.
    write_file(&metrics_path, log.as_bytes())?;
    rec.output(&metrics_path);
    if a.out.exists() {
        rec.output(&a.out);
    }
    output(run)?;
    output(trainer.checkpoint().save(&a.out))?;
    rec.output(&a.out);

    let last = trainer.log().last();
    println!(
        "trained {} steps ({}), final loss {}, held-out normalized MSE {} -> {}",
        trainer.step(),
        cfg.ablation,
        last.map_or("-".into(), |r| format!("{:.6}", r.total)),
        last.and_then(|r| r.val_mse).map_or("-".into(), |v| format!("{v:.6}")),
        a.out.display()
    );
    Ok(())
}

fn eval_windows(channels: &[SeriesChannel<f64>], cfg: &TrainConfig, split: EvalSplit) -> CliResult<Vec<Window<f64>>> {
    let windows = match split {
        EvalSplit::HeldOut => {
            let (_, tail) = split_channels(channels, cfg.train_fraction);
            normalized_windows(&tail, cfg.context_len, cfg.horizon_len, cfg.eval_stride)
        }
        EvalSplit::All => normalized_windows(channels, cfg.context_len, cfg.horizon_len, cfg.eval_stride),
    };
    if windows.is_empty() {
        return Err(CliError::Usage(format!(
            "evaluation split is empty: no window of T + L = {} samples fits in the {} data",
            cfg.context_len + cfg.horizon_len,
            if split == EvalSplit::HeldOut { "held-out" } else { "input" }
        )));
    }
    Ok(windows)
}

/// Checkpoint, knowledge base and evaluation windows for forecast/eval.
struct Loaded {
    exp: ExperimentConfig,
    params: ridde_core::model::ModelParams<f64>,
    kb: Option<ridde_core::retrieval::KnowledgeBase<f64>>,
    channels: Vec<SeriesChannel<f64>>,
    windows: Vec<Window<f64>>,
}

fn load_model(m: &crate::ModelArgs, d: &crate::DataArgs, split: EvalSplit, period: Option<usize>, rec: &mut Recorder) -> CliResult<Loaded> {
    let mut exp = checkpoint_config(&m.checkpoint, m.config.as_deref(), rec)?;
    if let Some(p) = period {
        resolve_period(Some(p), &d.data, &mut exp.train)?;
    }
    rec.config(&exp, Some(exp.train.seed));
    let ck = read_checkpoint(&m.checkpoint, rec)?;
    let kb = required_kb(m.kb.as_deref(), &exp.train, rec)?;
    let params = model_for(&ck, &m.checkpoint, &exp.train, kb.as_ref().map(|(k, p)| (k, p.as_path())))?;
    let channels = load_channels(&d.data, &d.columns, &exp, rec)?;
    let windows = eval_windows(&channels, &exp.train, split)?;
    Ok(Loaded {
        exp,
        params,
        kb: kb.map(|(k, _)| k),
        channels,
        windows,
    })
}

#[derive(Serialize)]
struct ForecastRow<'a> {
    window: usize,
    channel: usize,
    series: &'a str,
    start: usize,
    step: usize,
    t: usize,
    y: f64,
    y_hat: f64,
    y_inv: f64,
    y_dyn: f64,
    retrieved_ids: String,
    omega: String,
    gamma_mean: f64,
    gamma_min: f64,
    gamma_max: f64,
    lambda_mean: f64,
}

fn joined<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn forecast(a: &ForecastArgs, parallel: bool, rec: &mut Recorder) -> CliResult<()> {
    let l = load_model(&a.model, &a.data, a.split, None, rec)?;
    let model = ModelForecaster {
        params: &l.params,
        kb: l.kb.as_ref(),
        cfg: l.exp.train.forward_config(),
    };
    let outs: Vec<ridde_core::Result<ForecastOutput<f64>>> = if parallel {
        l.windows.par_iter().map(|w| model.run(w)).collect()
    } else {
        l.windows.iter().map(|w| model.run(w)).collect()
    };

    let mut w = csv::Writer::from_path(&a.out).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    let io = |e: csv::Error| CliError::Runtime(format!("{}: {e}", a.out.display()));
    let t_len = l.exp.train.context_len;
    for (i, (win, out)) in l.windows.iter().zip(outs).enumerate() {
        let out = out?;
        let (y_hat, y_inv, y_dyn) = (
            win.denormalize_values(&out.y_hat),
            win.denormalize_values(&out.y_inv),
            win.denormalize_values(&out.y_dyn),
        );
        let (ids, omega) = (joined(&out.retrieved_ids), joined(&out.omega));
        let g = &out.gamma_gate;
        let (g_min, g_max) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let src = win.source_id;
        for (j, y) in win.raw_horizon().into_iter().enumerate() {
            w.serialize(ForecastRow {
                window: i,
                channel: src.channel,
                series: &l.channels[src.channel].name,
                start: src.start,
                step: j,
                t: src.start + t_len + j,
                y,
                y_hat: y_hat[j],
                y_inv: y_inv[j],
                y_dyn: y_dyn[j],
                retrieved_ids: ids.clone(),
                omega: omega.clone(),
                gamma_mean: mean(g),
                gamma_min: g_min,
                gamma_max: g_max,
                lambda_mean: mean(&out.lambda_gate),
            })
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    rec.output(&a.out);
    println!("{} windows x {} steps -> {}", l.windows.len(), l.exp.train.horizon_len, a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs, parallel: bool, rec: &mut Recorder) -> CliResult<()> {
    if a.period.is_none() && crate::data::is_csv(&a.data.data) {
        return Err(CliError::Usage("--period is required for CSV input".into()));
    }
    let l = load_model(&a.model, &a.data, a.split, a.period, rec)?;
    let model = ModelForecaster {
        params: &l.params,
        kb: l.kb.as_ref(),
        cfg: l.exp.train.forward_config(),
    };
    let report = aggregate(&window_errors_all(&model, &l.windows, l.exp.train.period, parallel)?)?;
    emit_json(&report, a.out.as_deref(), rec)
}

pub fn verify_theory(a: &VerifyArgs, rec: &mut Recorder) -> CliResult<()> {
    let omega = match (a.k, a.omega.is_empty()) {
        (Some(k), false) if k != a.omega.len() => {
            return Err(CliError::Usage(format!("--k {k} disagrees with {} --omega weights", a.omega.len())));
        }
        (_, false) => a.omega.clone(),
        (k, true) => {
            let k = k.unwrap_or(5);
            if k == 0 {
                return Err(CliError::Usage("--k must be at least 1".into()));
            }
            uniform_omega(k)
        }
    };
    let noise = match a.noise {
        Noise::Gaussian => NoiseKind::Gaussian,
        Noise::Uniform => NoiseKind::Uniform,
    };
    rec.config(
        &serde_json::json!({
            "omega": omega, "sigma2": a.sigma2, "trials": a.trials, "seed": a.seed, "noise": noise, "dim": a.dim,
        }),
        Some(a.seed),
    );
    let report = verify_variance_bound(&omega, a.sigma2, a.trials, a.seed, noise, a.dim)?;
    if !report.pass {
        eprintln!("warning: empirical variance {} exceeds the bound {} beyond tolerance", report.empirical_var, report.bound);
    }
    emit_json(&report, a.out.as_deref(), rec)
}

pub fn rag_bias(a: &RagBiasArgs, parallel: bool, rec: &mut Recorder) -> CliResult<()> {
    let mut overrides = a.overrides.clone();
    if a.control {
        overrides.ablation = Some(Ablation::NoRetrieval.to_string());
    } else if overrides.ablation.is_none() {
        overrides.ablation = Some(Ablation::NoIdd.to_string());
    }
    let mut exp = resolved(&a.config, &overrides, rec)?;
    resolve_period(a.period, &a.data.data, &mut exp.train)?;
    rec.config(&exp, Some(exp.train.seed));
    let channels = load_channels(&a.data.data, &a.data.columns, &exp, rec)?;
    let data = prepare(channels, &exp.train)?;
    let study = rag_bias_study(&data, &exp.train, exp.train.ablation, TrainOptions { parallel, timing: false })?;

    std::fs::create_dir_all(&a.out_dir).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out_dir.display())))?;
    let report = a.out_dir.join("report.json");
    write_file(&report, &to_json(&study.report)?)?;
    rec.output(&report);
    for (name, rows) in [("baseline_plot.csv", &study.baseline_plot), ("rag_plot.csv", &study.rag_plot)] {
        let p = a.out_dir.join(name);
        output(write_plot_csv(&p, rows))?;
        rec.output(&p);
    }
    let d = &study.report.all.deltas;
    println!(
        "{} vs no_retrieval on {} held-out windows: Δmse {:+.6}, Δseasonal mse {:+.6}, Δtrend mse {:+.6} -> {}",
        exp.train.ablation,
        study.report.all.baseline.n_windows,
        d.mse,
        d.seasonal_mse,
        d.trend_mse,
        a.out_dir.display()
    );
    Ok(())
}

pub fn sweep(a: &SweepArgs, parallel: bool, rec: &mut Recorder) -> CliResult<()> {
    if a.overrides.ablation.is_some() || a.overrides.k.is_some() || a.overrides.rho.is_some() {
        return Err(CliError::Usage("sweep always trains the full model; set the grid with --ks and --rhos".into()));
    }
    if a.ks.is_empty() || a.rhos.is_empty() {
        return Err(CliError::Usage("--ks and --rhos must each name at least one value".into()));
    }
    let mut exp = resolved(&a.config, &a.overrides, rec)?;
    resolve_period(a.period, &a.data.data, &mut exp.train)?;
    for &k in &a.ks {
        TrainConfig { k, ..exp.train.clone() }.validate()?;
    }
    for &rho in &a.rhos {
        TrainConfig { rho, ..exp.train.clone() }.validate()?;
    }
    rec.config(&serde_json::json!({ "experiment": exp, "ks": a.ks, "rhos": a.rhos }), Some(exp.train.seed));
    let channels = load_channels(&a.data.data, &a.data.columns, &exp, rec)?;
    let data = prepare(channels, &exp.train)?;
    let grid = sensitivity_grid(&data, &exp.train, &a.ks, &a.rhos, TrainOptions { parallel, timing: false })?;
    write_file(&a.out, &to_json(&grid)?)?;
    rec.output(&a.out);
    println!("{} cells ({} K x {} rho) -> {}", grid.cells.len(), a.ks.len(), a.rhos.len(), a.out.display());
    Ok(())
}
