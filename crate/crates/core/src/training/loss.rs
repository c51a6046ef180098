use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::OutputGrads;
use crate::numerics::ops::dot;
use crate::scalar::Scalar;

/// Batch-mean loss terms. `total = pred + ρ·dis`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<S> {
    pub total: S,
    pub pred: S,
    pub dis: S,
}

impl<S: Scalar> LossBreakdown<S> {
    pub fn zero() -> Self {
        Self {
            total: S::zero(),
            pred: S::zero(),
            dis: S::zero(),
        }
    }

    pub fn add(&mut self, other: &Self) {
        self.total += other.total;
        self.pred += other.pred;
        self.dis += other.dis;
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.pred.is_finite() && self.dis.is_finite()
    }
}

/// One sample's share of a batch of `batch` samples, plus the adjoints of
/// that share at `ŷ`, `z_inv` and `z_dyn`.
pub fn sample_loss<S: Scalar>(
    y_hat: &[S],
    y: &[S],
    z_inv: &[S],
    z_dyn: &[S],
    rho: S,
    batch: usize,
) -> (LossBreakdown<S>, OutputGrads<S>) {
    let b = S::of_usize(batch);
    let two = S::of(2.0);
    let resid: Vec<S> = y_hat.iter().zip(y).map(|(&a, &t)| a - t).collect();
    let pred = dot(&resid, &resid) / b;
    let s = dot(z_inv, z_dyn);
    let dis = s * s / b;
    let coef = rho * two * s / b;
    let grads = OutputGrads {
        y_hat: resid.iter().map(|&r| two * r / b).collect(),
        z_inv: z_dyn.iter().map(|&v| coef * v).collect(),
        z_dyn: z_inv.iter().map(|&v| coef * v).collect(),
    };
    let lb = LossBreakdown {
        total: pred + rho * dis,
        pred,
        dis,
    };
    (lb, grads)
}

/// Composite loss over a batch: squared error summed over the horizon and
/// squared inner product of the two parts, each averaged over samples.
pub fn loss<S: Scalar>(
    y_hat: &[Vec<S>],
    y: &[Vec<S>],
    z_inv: &[Vec<S>],
    z_dyn: &[Vec<S>],
    rho: S,
) -> Result<LossBreakdown<S>> {
    let n = y_hat.len();
    if n == 0 || y.len() != n || z_inv.len() != n || z_dyn.len() != n {
        return Err(Error::dim("loss batch", &[n, y.len()], &[z_inv.len(), z_dyn.len()]));
    }
    if !(rho >= S::zero()) {
        return Err(Error::Domain(format!("rho must be ≥ 0, got {rho}")));
    }
    let mut pred = S::zero();
    let mut dis = S::zero();
    for i in 0..n {
        if y_hat[i].len() != y[i].len() || z_inv[i].len() != z_dyn[i].len() {
            return Err(Error::dim("loss sample", &[y_hat[i].len(), z_inv[i].len()], &[y[i].len(), z_dyn[i].len()]));
        }
        let (lb, _) = sample_loss(&y_hat[i], &y[i], &z_inv[i], &z_dyn[i], rho, n);
        pred += lb.pred;
        dis += lb.dis;
    }
    Ok(LossBreakdown {
        total: pred + rho * dis,
        pred,
        dis,
    })
}
