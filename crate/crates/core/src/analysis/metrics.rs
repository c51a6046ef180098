use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::decompose::decompose_series;
use crate::data::Window;
use crate::error::{Error, Result};
use crate::model::{forward, ForecastOutput, ForwardConfig, ModelParams};
use crate::retrieval::KnowledgeBase;
use crate::scalar::Scalar;

/// Anything that maps a normalized window to a normalized-space forecast.
pub trait Forecaster<S: Scalar>: Sync {
    fn forecast(&self, window: &Window<S>) -> Result<Vec<S>>;
}

/// A trained model with its knowledge base. Each window's own entry is
/// excluded from retrieval when its source is in the knowledge base.
pub struct ModelForecaster<'a, S> {
    pub params: &'a ModelParams<S>,
    pub kb: Option<&'a KnowledgeBase<S>>,
    pub cfg: ForwardConfig,
}

impl<S: Scalar> ModelForecaster<'_, S> {
    pub fn run(&self, window: &Window<S>) -> Result<ForecastOutput<S>> {
        let exclude = self.kb.and_then(|kb| kb.id_for_source(&window.source_id));
        forward(window.context.data(), self.kb, self.params, &self.cfg, exclude)
    }
}

impl<S: Scalar> Forecaster<S> for ModelForecaster<'_, S> {
    fn forecast(&self, window: &Window<S>) -> Result<Vec<S>> {
        Ok(self.run(window)?.y_hat)
    }
}

/// Returns the true horizon: the zero-error reference.
pub struct OracleForecaster;

impl<S: Scalar> Forecaster<S> for OracleForecaster {
    fn forecast(&self, window: &Window<S>) -> Result<Vec<S>> {
        Ok(window.horizon.data().to_vec())
    }
}

/// Predicts zero in normalized space, i.e. the context mean.
pub struct ZeroForecaster;

impl<S: Scalar> Forecaster<S> for ZeroForecaster {
    fn forecast(&self, window: &Window<S>) -> Result<Vec<S>> {
        Ok(vec![S::zero(); window.horizon_len()])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub mse: f64,
    pub mae: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentMetrics {
    pub seasonal: ErrorPair,
    pub trend: ErrorPair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    pub per_component: ComponentMetrics,
    pub n_windows: usize,
    pub n_points: usize,
}

/// Squared and absolute error sums of one window, raw and per component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WindowErrors {
    pub points: usize,
    pub se: f64,
    pub ae: f64,
    pub seasonal_se: f64,
    pub seasonal_ae: f64,
    pub trend_se: f64,
    pub trend_ae: f64,
}

/// Splits `[context; horizon]` into trend and seasonal parts and returns
/// the horizon segment of each.
pub fn horizon_components<S: Scalar>(context: &[S], horizon: &[S], period: usize) -> Result<(Vec<S>, Vec<S>)> {
    let full: Vec<S> = context.iter().chain(horizon).copied().collect();
    let (t, s) = decompose_series(&full, period)?;
    let c = context.len();
    Ok((t[c..].to_vec(), s[c..].to_vec()))
}

/// Errors of a raw-space forecast against a window's raw horizon. Both
/// truth and forecast are decomposed together with the raw context.
pub fn window_errors<S: Scalar>(window: &Window<S>, forecast_raw: &[S], period: usize) -> Result<WindowErrors> {
    let ctx = window.raw_context();
    let truth = window.raw_horizon();
    if forecast_raw.len() != truth.len() {
        return Err(Error::dim("forecast", &[truth.len()], &[forecast_raw.len()]));
    }
    let (tt, ts) = horizon_components(&ctx, &truth, period)?;
    let (pt, ps) = horizon_components(&ctx, forecast_raw, period)?;
    let mut e = WindowErrors {
        points: truth.len(),
        ..Default::default()
    };
    for j in 0..truth.len() {
        let d = (forecast_raw[j] - truth[j]).widen();
        let ds = (ps[j] - ts[j]).widen();
        let dt = (pt[j] - tt[j]).widen();
        e.se += d * d;
        e.ae += d.abs();
        e.seasonal_se += ds * ds;
        e.seasonal_ae += ds.abs();
        e.trend_se += dt * dt;
        e.trend_ae += dt.abs();
    }
    Ok(e)
}

/// Sums in a canonical (value-sorted) order so the total does not depend on
/// the order windows were supplied in.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

pub fn aggregate(errors: &[WindowErrors]) -> Result<MetricReport> {
    if errors.is_empty() {
        return Err(Error::Domain("evaluation set is empty".into()));
    }
    let n_points: usize = errors.iter().map(|e| e.points).sum();
    let n = n_points as f64;
    let mean = |f: fn(&WindowErrors) -> f64| ordered_sum(errors.iter().map(f).collect()) / n;
    Ok(MetricReport {
        mse: mean(|e| e.se),
        mae: mean(|e| e.ae),
        per_component: ComponentMetrics {
            seasonal: ErrorPair {
                mse: mean(|e| e.seasonal_se),
                mae: mean(|e| e.seasonal_ae),
            },
            trend: ErrorPair {
                mse: mean(|e| e.trend_se),
                mae: mean(|e| e.trend_ae),
            },
        },
        n_windows: errors.len(),
        n_points,
    })
}

/// Per-window errors of `model` on `windows`, forecasts denormalized with
/// each window's stored statistics.
pub fn window_errors_all<S: Scalar, F: Forecaster<S>>(
    model: &F,
    windows: &[Window<S>],
    period: usize,
    parallel: bool,
) -> Result<Vec<WindowErrors>> {
    let one = |w: &Window<S>| -> Result<WindowErrors> {
        let pred = model.forecast(w)?;
        window_errors(w, &w.denormalize_values(&pred), period)
    };
    if parallel {
        windows.par_iter().map(one).collect()
    } else {
        windows.iter().map(one).collect()
    }
}

/// MSE/MAE over every horizon point of every window in raw units, plus the
/// same on the trend and seasonal parts.
pub fn evaluate<S: Scalar, F: Forecaster<S>>(model: &F, windows: &[Window<S>], period: usize) -> Result<MetricReport> {
    if windows.is_empty() {
        return Err(Error::Domain("evaluation set is empty".into()));
    }
    aggregate(&window_errors_all(model, windows, period, false)?)
}

/// [`evaluate`] for a trained model.
pub fn evaluate_model<S: Scalar>(
    params: &ModelParams<S>,
    kb: Option<&KnowledgeBase<S>>,
    windows: &[Window<S>],
    cfg: &ForwardConfig,
    period: usize,
) -> Result<MetricReport> {
    if let Some(kb) = kb {
        if cfg.ablation.uses_retrieval() {
            crate::model::check_kb(params, kb)?;
        }
    }
    let kb = kb.filter(|_| cfg.ablation.uses_retrieval());
    evaluate(&ModelForecaster { params, kb, cfg: *cfg }, windows, period)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{normalize_window, SourceId};

    fn window(ctx: Vec<f64>, hor: Vec<f64>) -> Window<f64> {
        Window::new(ctx, hor, SourceId { channel: 0, start: 0 })
    }

    struct Fixed(Vec<f64>);

    impl Forecaster<f64> for Fixed {
        fn forecast(&self, _: &Window<f64>) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn hand_case() {
        let w = window(vec![0.0; 4], vec![0.0, 2.0]);
        let r = evaluate(&Fixed(vec![1.0, 2.0]), &[w], 2).unwrap();
        assert_eq!((r.mse, r.mae), (0.5, 0.5));
        assert_eq!((r.n_windows, r.n_points), (1, 2));
    }

    #[test]
    fn oracle_is_perfect_and_empty_is_an_error() {
        let w = normalize_window(&window((0..8).map(|i| i as f64).collect(), vec![3.0, -1.0]));
        let r = evaluate(&OracleForecaster, &[w], 4).unwrap();
        assert!(r.mse < 1e-24 && r.mae < 1e-12);
        assert!(matches!(evaluate::<f64, _>(&OracleForecaster, &[], 4), Err(Error::Domain(_))));
    }
}
