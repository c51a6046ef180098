//! Central finite-difference validation of hand-written adjoints.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::tensor::ParamSet;
use crate::scalar::Scalar;

/// Finite-difference formula.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum Stencil {
    /// `(f(p+h) − f(p−h)) / 2h`, truncation error O(h²).
    #[default]
    Central,
    /// `(−f(p+2h) + 8f(p+h) − 8f(p−h) + f(p−2h)) / 12h`, O(h⁴); allows a
    /// larger `h` and so much less round-off.
    FivePoint,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Perturbation `h`.
    pub step: f64,
    pub stencil: Stencil,
    /// Denominator floor for the relative error, so entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            stencil: Stencil::Central,
            abs_floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradCheckReport {
    pub entries: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Entries with |analytic| and |numeric| both below the floor, which are
    /// judged on absolute error.
    pub floored: usize,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Analytic and finite-difference values at the worst entry.
    pub worst_values: Option<(f64, f64)>,
    pub per_param: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the adjoints already accumulated in `params` against central
/// finite differences of `f`. Values are restored after every probe.
pub fn grad_check<S, P, F>(params: &mut P, mut f: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    S: Scalar,
    P: ParamSet<S>,
    F: FnMut(&P) -> S,
{
    if cfg.step <= 0.0 {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {}", cfg.step)));
    }
    let mut report = GradCheckReport::default();
    if params.params().is_empty() {
        return Ok(report);
    }

    let first = f(params).widen();
    let second = f(params).widen();
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    for i in 0..params.params().len() {
        let name = params.param_name(i);
        let n = params.params()[i].value.len();
        let mut check = ParamCheck {
            name: name.clone(),
            entries: n,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for j in 0..n {
            let original = params.params()[i].value.data()[j];
            let mut at = |offset: f64| {
                params.params_mut()[i].value.data_mut()[j] = original + S::of(offset);
                f(params).widen()
            };
            let h = cfg.step;
            let numeric = match cfg.stencil {
                Stencil::Central => (at(h) - at(-h)) / (2.0 * h),
                Stencil::FivePoint => {
                    let near = at(h) - at(-h);
                    let far = at(2.0 * h) - at(-2.0 * h);
                    (8.0 * near - far) / (12.0 * h)
                }
            };
            params.params_mut()[i].value.data_mut()[j] = original;

            let analytic = params.params()[i].grad.data()[j].widen();
            let rel = relative_error(analytic, numeric, cfg.abs_floor);
            if analytic.abs().max(numeric.abs()) < cfg.abs_floor {
                report.floored += 1;
            }
            let abs = (analytic - numeric).abs();
            check.max_abs_err = check.max_abs_err.max(abs);
            if rel > check.max_rel_err || !rel.is_finite() {
                check.max_rel_err = rel;
            }
            if rel > report.max_rel_err || !rel.is_finite() {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), j));
                report.worst_values = Some((analytic, numeric));
            }
            report.max_abs_err = report.max_abs_err.max(abs);
        }
        report.entries += n;
        report.per_param.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops::{linear, linear_backward};
    use crate::numerics::tensor::{DualTensor, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    fn linear_loss(p: &Vec<DualTensor<f64>>, x: &Tensor<f64>, c: &[f64]) -> f64 {
        let y = linear(x, &p[0].value, &p[1].value).unwrap();
        y.data().iter().zip(c).map(|(a, b)| 0.5 * (a - b).powi(2)).sum()
    }

    #[test]
    fn single_linear_layer_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let w = Tensor::matrix(4, 3, r(12)).unwrap();
        let b = Tensor::vector(r(4));
        let x = Tensor::vector(r(3));
        let c = r(4);
        let mut params = vec![DualTensor::new(w), DualTensor::new(b)];
        let y = linear(&x, &params[0].value, &params[1].value).unwrap();
        let up: Vec<f64> = y.data().iter().zip(&c).map(|(a, b)| a - b).collect();
        let g = linear_backward(&x, &params[0].value, &params[1].value, &Tensor::vector(up)).unwrap();
        params[0].grad = g.dw;
        params[1].grad = g.db;
        let report = grad_check(&mut params, |p| linear_loss(p, &x, &c), GradCheckConfig::default()).unwrap();
        assert_eq!(report.entries, 16);
        assert!(report.passes(1e-6), "{report:?}");
    }

    #[test]
    fn wrong_adjoint_is_caught() {
        let mut params = vec![DualTensor::new(Tensor::vector(vec![2.0f64]))];
        params[0].grad.data_mut()[0] = 1.0; // true gradient of x² at 2 is 4
        let report = grad_check(&mut params, |p| p[0].value.data()[0].powi(2), GradCheckConfig::default()).unwrap();
        assert!(!report.passes(1e-2));
        assert_eq!(report.worst, Some(("param0".to_string(), 0)));
    }

    #[test]
    fn zero_parameter_graph_is_vacuous() {
        let mut params: Vec<DualTensor<f64>> = vec![];
        let report = grad_check(&mut params, |_| 1.0, GradCheckConfig::default()).unwrap();
        assert_eq!(report.entries, 0);
        assert!(report.passes(0.0));
    }

    #[test]
    fn nondeterministic_graph_aborts() {
        let mut params = vec![DualTensor::new(Tensor::vector(vec![1.0f64]))];
        let calls = Cell::new(0.0);
        let err = grad_check(
            &mut params,
            |_| {
                calls.set(calls.get() + 1.0);
                calls.get()
            },
            GradCheckConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic { .. }));
    }
}
