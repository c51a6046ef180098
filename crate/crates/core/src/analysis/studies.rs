//! Multi-run experiments: ablation ordering, paired ρ comparison, and the
//! K × ρ sensitivity grid. All runs are f64 and deterministic per seed.

use serde::{Deserialize, Serialize};

use crate::analysis::decompose::high_fluctuation;
use crate::analysis::metrics::{aggregate, window_errors_all, MetricReport, ModelForecaster};
use crate::analysis::probe::disentanglement_probe;
use crate::error::Result;
use crate::model::{Ablation, ModelParams};
use crate::pipeline::{prepare_synthetic, Dataset};
use crate::training::{train, ExperimentConfig, TrainConfig, TrainOptions};

/// `exp` with both the data and the model seeded by `seed`.
pub fn seeded(exp: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut e = exp.clone();
    e.train.seed = seed;
    e.synthetic.seed = seed;
    e
}

pub fn train_on(data: &Dataset<f64>, cfg: &TrainConfig, opts: TrainOptions) -> Result<ModelParams<f64>> {
    let kb = cfg.ablation.uses_retrieval().then_some(&data.kb);
    Ok(train(cfg, &data.train, kb, &[], opts)?.0)
}

/// Held-out report over all windows and over high-fluctuation channels only.
pub fn held_out_reports(
    data: &Dataset<f64>,
    params: &ModelParams<f64>,
    cfg: &TrainConfig,
    fluctuating: &[bool],
) -> Result<(MetricReport, Option<MetricReport>)> {
    let model = ModelForecaster {
        params,
        kb: cfg.ablation.uses_retrieval().then_some(&data.kb),
        cfg: cfg.forward_config(),
    };
    let errs = window_errors_all(&model, &data.held_out, cfg.period, false)?;
    let high: Vec<_> = errs
        .iter()
        .zip(&data.held_out)
        .filter(|(_, w)| fluctuating.get(w.source_id.channel).copied().unwrap_or(false))
        .map(|(e, _)| *e)
        .collect();
    let high = if high.is_empty() { None } else { Some(aggregate(&high)?) };
    Ok((aggregate(&errs)?, high))
}

fn fluctuation_flags(data: &Dataset<f64>, period: usize) -> Result<Vec<bool>> {
    let series: Vec<&[f64]> = data.channels.iter().map(|c| c.values.as_slice()).collect();
    Ok(high_fluctuation(&series, period)?.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub ablation: Ablation,
    pub mse: f64,
    pub mae: f64,
    pub high_fluctuation_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSeed {
    pub seed: u64,
    /// full ≤ no_idd on all held-out windows.
    pub full_beats_no_idd: bool,
    /// no_idd ≤ no_retrieval on high-fluctuation channels.
    pub rag_beats_no_retrieval_on_fluctuating: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationStudy {
    pub runs: Vec<AblationRun>,
    pub seeds: Vec<AblationSeed>,
    pub full_beats_no_idd_count: usize,
    pub rag_beats_no_retrieval_count: usize,
}

/// Trains `full`, `no_idd` and `no_retrieval` per seed on a fresh synthetic
/// dataset and scores them on held-out windows in raw units.
pub fn ablation_study(exp: &ExperimentConfig, seeds: &[u64], opts: TrainOptions) -> Result<AblationStudy> {
    let mut runs = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in seeds {
        let e = seeded(exp, seed);
        let data = prepare_synthetic::<f64>(&e)?;
        let flags = fluctuation_flags(&data, e.train.period)?;
        let mut by = std::collections::HashMap::new();
        for ablation in [Ablation::Full, Ablation::NoIdd, Ablation::NoRetrieval] {
            let cfg = TrainConfig { ablation, ..e.train.clone() };
            let params = train_on(&data, &cfg, opts)?;
            let (all, high) = held_out_reports(&data, &params, &cfg, &flags)?;
            let run = AblationRun {
                seed,
                ablation,
                mse: all.mse,
                mae: all.mae,
                high_fluctuation_mse: high.map(|h| h.mse),
            };
            by.insert(ablation, run.clone());
            runs.push(run);
        }
        let hf = |a| by[&a].high_fluctuation_mse.unwrap_or(f64::INFINITY);
        per_seed.push(AblationSeed {
            seed,
            full_beats_no_idd: by[&Ablation::Full].mse <= by[&Ablation::NoIdd].mse,
            rag_beats_no_retrieval_on_fluctuating: hf(Ablation::NoIdd) <= hf(Ablation::NoRetrieval),
        });
    }
    Ok(AblationStudy {
        full_beats_no_idd_count: per_seed.iter().filter(|s| s.full_beats_no_idd).count(),
        rag_beats_no_retrieval_count: per_seed.iter().filter(|s| s.rag_beats_no_retrieval_on_fluctuating).count(),
        runs,
        seeds: per_seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementPair {
    pub seed: u64,
    pub rho: f64,
    pub baseline_rho: f64,
    pub mean_abs_cos: f64,
    pub baseline_mean_abs_cos: f64,
}

/// Trains the full model at `rho` and at `baseline_rho` per seed and reports
/// the mean held-out |cos(z_inv, z_dyn)| of each.
pub fn disentanglement_study(
    exp: &ExperimentConfig,
    seeds: &[u64],
    rho: f64,
    baseline_rho: f64,
    opts: TrainOptions,
) -> Result<Vec<DisentanglementPair>> {
    seeds
        .iter()
        .map(|&seed| {
            let e = seeded(exp, seed);
            let data = prepare_synthetic::<f64>(&e)?;
            let mut cos = [0.0; 2];
            for (slot, r) in [rho, baseline_rho].into_iter().enumerate() {
                let cfg = TrainConfig {
                    rho: r,
                    ablation: Ablation::Full,
                    ..e.train.clone()
                };
                let params = train_on(&data, &cfg, opts)?;
                cos[slot] = disentanglement_probe(&params, Some(&data.kb), &data.held_out, &cfg.forward_config())?
                    .abs_cos
                    .mean;
            }
            Ok(DisentanglementPair {
                seed,
                rho,
                baseline_rho,
                mean_abs_cos: cos[0],
                baseline_mean_abs_cos: cos[1],
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub rho: f64,
    pub mse: f64,
    pub mae: f64,
    pub final_loss: f64,
    pub mean_abs_cos: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub ks: Vec<usize>,
    pub rhos: Vec<f64>,
    pub seed: u64,
    pub steps: u64,
    /// Row-major over `ks` then `rhos`.
    pub cells: Vec<SweepCell>,
}

pub const SWEEP_KS: [usize; 4] = [1, 3, 5, 7];
pub const SWEEP_RHOS: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];

/// Trains the full model for every (K, ρ) pair on one synthetic dataset.
pub fn sensitivity_sweep(exp: &ExperimentConfig, ks: &[usize], rhos: &[f64], opts: TrainOptions) -> Result<SweepGrid> {
    sensitivity_grid(&prepare_synthetic::<f64>(exp)?, &exp.train, ks, rhos, opts)
}

/// [`sensitivity_sweep`] on a prepared dataset. The knowledge base depends
/// on neither K nor ρ, so it is shared by every cell.
pub fn sensitivity_grid(data: &Dataset<f64>, base: &TrainConfig, ks: &[usize], rhos: &[f64], opts: TrainOptions) -> Result<SweepGrid> {
    let mut cells = Vec::with_capacity(ks.len() * rhos.len());
    for &k in ks {
        for &rho in rhos {
            let cfg = TrainConfig {
                k,
                rho,
                ablation: Ablation::Full,
                ..base.clone()
            };
            let kb = Some(&data.kb);
            let (params, log) = train(&cfg, &data.train, kb, &[], opts)?;
            let (all, _) = held_out_reports(data, &params, &cfg, &[])?;
            let probe = disentanglement_probe(&params, kb, &data.held_out, &cfg.forward_config())?;
            cells.push(SweepCell {
                k,
                rho,
                mse: all.mse,
                mae: all.mae,
                final_loss: log.last().map_or(f64::NAN, |r| r.total),
                mean_abs_cos: probe.abs_cos.mean,
            });
        }
    }
    Ok(SweepGrid {
        ks: ks.to_vec(),
        rhos: rhos.to_vec(),
        seed: base.seed,
        steps: base.steps,
        cells,
    })
}
