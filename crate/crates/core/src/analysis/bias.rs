//! Side-by-side comparison of a retrieval-free model and a naive retrieval
//! model (no decomposition), split into seasonal and trend error.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::decompose::high_fluctuation;
use crate::analysis::metrics::{aggregate, horizon_components, window_errors, MetricReport, ModelForecaster, WindowErrors};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::model::{Ablation, ForwardConfig, ModelParams};
use crate::pipeline::Dataset;
use crate::retrieval::KnowledgeBase;
use crate::scalar::Scalar;
use crate::training::{train, TrainConfig, TrainOptions};

pub const HISTOGRAM_BINS: usize = 50;

/// Column headers of the per-point plot CSV.
pub const PLOT_HEADERS: [&str; 8] = ["step", "series_id", "t", "y", "y_hat", "y_inv", "y_dyn", "component"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Raw,
    Seasonal,
    Trend,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Raw, Component::Seasonal, Component::Trend];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Raw => "raw",
            Component::Seasonal => "seasonal",
            Component::Trend => "trend",
        }
    }
}

/// One horizon point of one window. For the seasonal and trend rows `y` and
/// `y_hat` are that component of the decomposed series and the head outputs
/// are left empty; on raw rows they are the denormalized head forecasts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub step: u64,
    pub series_id: usize,
    pub t: usize,
    pub y: f64,
    pub y_hat: f64,
    pub y_inv: Option<f64>,
    pub y_dyn: Option<f64>,
    pub component: Component,
}

/// Absolute errors of two models binned on a shared grid: 50 equal bins over
/// `[lo, hi]`, the last bin closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub component: Component,
    pub lo: f64,
    pub hi: f64,
    pub baseline_counts: Vec<u64>,
    pub rag_counts: Vec<u64>,
    pub baseline_samples: u64,
    pub rag_samples: u64,
}

fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

pub fn error_histogram(component: Component, baseline: &[f64], rag: &[f64]) -> ErrorHistogram {
    let pooled = baseline.iter().chain(rag);
    let lo = pooled.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = pooled.copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let count = |v: &[f64]| {
        let mut c = vec![0u64; HISTOGRAM_BINS];
        for &e in v {
            c[bin_of(e, lo, hi, HISTOGRAM_BINS)] += 1;
        }
        c
    };
    ErrorHistogram {
        component,
        lo,
        hi,
        baseline_counts: count(baseline),
        rag_counts: count(rag),
        baseline_samples: baseline.len() as u64,
        rag_samples: rag.len() as u64,
    }
}

/// `rag − baseline` for every reported error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub mse: f64,
    pub mae: f64,
    pub seasonal_mse: f64,
    pub seasonal_mae: f64,
    pub trend_mse: f64,
    pub trend_mae: f64,
}

impl MetricDeltas {
    pub fn between(baseline: &MetricReport, rag: &MetricReport) -> Self {
        let (b, r) = (&baseline.per_component, &rag.per_component);
        Self {
            mse: rag.mse - baseline.mse,
            mae: rag.mae - baseline.mae,
            seasonal_mse: r.seasonal.mse - b.seasonal.mse,
            seasonal_mae: r.seasonal.mae - b.seasonal.mae,
            trend_mse: r.trend.mse - b.trend.mse,
            trend_mae: r.trend.mae - b.trend.mae,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub baseline: MetricReport,
    pub rag: MetricReport,
    pub deltas: MetricDeltas,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub baseline_ablation: Ablation,
    pub rag_ablation: Ablation,
    pub period: usize,
    pub all: GroupComparison,
    /// Windows from channels whose seasonal share is at or above the median.
    pub high_fluctuation: Option<GroupComparison>,
    pub low_fluctuation: Option<GroupComparison>,
    pub histograms: Vec<ErrorHistogram>,
    /// Directional observation, not a pass/fail gate: did retrieval lower
    /// the seasonal-component MSE?
    pub rag_lowers_seasonal_mse: bool,
    /// And did it raise the trend-component MSE?
    pub rag_raises_trend_mse: bool,
}

/// The report plus per-point plot data for each model.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasStudy {
    pub report: BiasReport,
    pub baseline_plot: Vec<PlotRow>,
    pub rag_plot: Vec<PlotRow>,
}

/// A trained model with the settings it is run under.
pub struct Evaluated<'a, S> {
    pub params: &'a ModelParams<S>,
    pub kb: Option<&'a KnowledgeBase<S>>,
    pub cfg: ForwardConfig,
    pub step: u64,
}

struct PointErrors {
    windows: Vec<WindowErrors>,
    abs: [Vec<f64>; 3],
    plot: Vec<PlotRow>,
}

fn point_errors<S: Scalar>(m: &Evaluated<'_, S>, windows: &[Window<S>], period: usize) -> Result<PointErrors> {
    let model = ModelForecaster {
        params: m.params,
        kb: m.kb,
        cfg: m.cfg,
    };
    let mut out = PointErrors {
        windows: Vec::with_capacity(windows.len()),
        abs: [Vec::new(), Vec::new(), Vec::new()],
        plot: Vec::new(),
    };
    for w in windows {
        let f = model.run(w)?;
        let y_hat = w.denormalize_values(&f.y_hat);
        let y_inv = w.denormalize_values(&f.y_inv);
        let y_dyn = w.denormalize_values(&f.y_dyn);
        out.windows.push(window_errors(w, &y_hat, period)?);

        let ctx = w.raw_context();
        let truth = w.raw_horizon();
        let (tt, ts) = horizon_components(&ctx, &truth, period)?;
        let (pt, ps) = horizon_components(&ctx, &y_hat, period)?;
        let t0 = w.source_id.start + w.context_len();
        for j in 0..truth.len() {
            let parts = [(truth[j], y_hat[j]), (ts[j], ps[j]), (tt[j], pt[j])];
            for (c, (y, p)) in Component::ALL.into_iter().zip(parts) {
                let (y, p) = (y.widen(), p.widen());
                out.abs[c as usize].push((p - y).abs());
                let raw = c == Component::Raw;
                out.plot.push(PlotRow {
                    step: m.step,
                    series_id: w.source_id.channel,
                    t: t0 + j,
                    y,
                    y_hat: p,
                    y_inv: raw.then(|| y_inv[j].widen()),
                    y_dyn: raw.then(|| y_dyn[j].widen()),
                    component: c,
                });
            }
        }
    }
    Ok(out)
}

fn group(
    baseline: &PointErrors,
    rag: &PointErrors,
    windows: &[Window<f64>],
    keep: impl Fn(&Window<f64>) -> bool,
) -> Result<Option<GroupComparison>> {
    let pick = |e: &PointErrors| -> Vec<WindowErrors> {
        e.windows.iter().zip(windows).filter(|(_, w)| keep(w)).map(|(e, _)| *e).collect()
    };
    let (b, r) = (pick(baseline), pick(rag));
    if b.is_empty() {
        return Ok(None);
    }
    let (b, r) = (aggregate(&b)?, aggregate(&r)?);
    Ok(Some(GroupComparison {
        deltas: MetricDeltas::between(&b, &r),
        baseline: b,
        rag: r,
    }))
}

/// Compares two trained models on `windows`. `fluctuating[c]` marks channel
/// `c` as high-fluctuation for the grouped deltas.
pub fn compare_models(
    baseline: &Evaluated<'_, f64>,
    rag: &Evaluated<'_, f64>,
    windows: &[Window<f64>],
    fluctuating: &[bool],
    period: usize,
) -> Result<BiasStudy> {
    if windows.is_empty() {
        return Err(Error::Domain("evaluation set is empty".into()));
    }
    let b = point_errors(baseline, windows, period)?;
    let r = point_errors(rag, windows, period)?;
    let is_high = |w: &Window<f64>| fluctuating.get(w.source_id.channel).copied().unwrap_or(false);
    let all = group(&b, &r, windows, |_| true)?.expect("windows are non-empty");
    let high_fluctuation = group(&b, &r, windows, is_high)?;
    let low_fluctuation = group(&b, &r, windows, |w| !is_high(w))?;
    let histograms = Component::ALL
        .into_iter()
        .map(|c| error_histogram(c, &b.abs[c as usize], &r.abs[c as usize]))
        .collect();
    let report = BiasReport {
        baseline_ablation: baseline.cfg.ablation,
        rag_ablation: rag.cfg.ablation,
        period,
        rag_lowers_seasonal_mse: all.deltas.seasonal_mse < 0.0,
        rag_raises_trend_mse: all.deltas.trend_mse > 0.0,
        all,
        high_fluctuation,
        low_fluctuation,
        histograms,
    };
    Ok(BiasStudy {
        report,
        baseline_plot: b.plot,
        rag_plot: r.plot,
    })
}

/// Trains a `no_retrieval` baseline and a `rag_ablation` model (normally
/// `no_idd`) from the same seed and data, then compares them on the
/// held-out windows. Passing `no_retrieval` for both is a control whose
/// deltas are exactly zero.
pub fn rag_bias_study(data: &Dataset<f64>, cfg: &TrainConfig, rag_ablation: Ablation, opts: TrainOptions) -> Result<BiasStudy> {
    let series: Vec<&[f64]> = data.channels.iter().map(|c| c.values.as_slice()).collect();
    let (_, fluctuating) = high_fluctuation(&series, cfg.period)?;
    let run = |ablation: Ablation| -> Result<(ModelParams<f64>, TrainConfig)> {
        let c = TrainConfig { ablation, ..cfg.clone() };
        let kb = ablation.uses_retrieval().then_some(&data.kb);
        let (params, _) = train(&c, &data.train, kb, &[], opts)?;
        Ok((params, c))
    };
    let (bp, bc) = run(Ablation::NoRetrieval)?;
    let (rp, rc) = run(rag_ablation)?;
    let kb_for = |c: &TrainConfig| c.ablation.uses_retrieval().then_some(&data.kb);
    compare_models(
        &Evaluated {
            params: &bp,
            kb: kb_for(&bc),
            cfg: bc.forward_config(),
            step: bc.steps,
        },
        &Evaluated {
            params: &rp,
            kb: kb_for(&rc),
            cfg: rc.forward_config(),
            step: rc.steps,
        },
        &data.held_out,
        &fluctuating,
        cfg.period,
    )
}

pub fn write_plot_csv(path: &Path, rows: &[PlotRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(PLOT_HEADERS).map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.series_id.to_string(),
            r.t.to_string(),
            r.y.to_string(),
            r.y_hat.to_string(),
            opt(r.y_inv),
            opt(r.y_dyn),
            r.component.as_str().to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_conserves_counts_and_closes_last_bin() {
        let h = error_histogram(Component::Raw, &[0.0, 0.5, 1.0], &[0.25, 1.0]);
        assert_eq!((h.lo, h.hi), (0.0, 1.0));
        assert_eq!(h.baseline_counts.iter().sum::<u64>(), 3);
        assert_eq!(h.rag_counts.iter().sum::<u64>(), 2);
        assert_eq!(h.baseline_counts[49], 1);
        assert_eq!(h.rag_counts[49], 1);
        assert_eq!(h.baseline_counts[25], 1);
    }

    #[test]
    fn degenerate_histogram() {
        let h = error_histogram(Component::Trend, &[0.3; 4], &[0.3]);
        assert_eq!(h.baseline_counts[0], 4);
        let e = error_histogram(Component::Trend, &[], &[]);
        assert_eq!(e.baseline_counts.iter().sum::<u64>(), 0);
    }
}
