use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam with per-tensor first/second moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub lr: f64,
    pub t: u64,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new<P: ParamSet<S>>(params: &P, lr: f64) -> Self {
        let zeros = || params.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            lr,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// A non-finite gradient aborts before anything is modified.
    pub fn step<P: ParamSet<S>>(&mut self, params: &mut P) -> Result<()> {
        if self.m.len() != params.params().len() {
            return Err(Error::dim("adam state", &[self.m.len()], &[params.params().len()]));
        }
        for (i, p) in params.params().iter().enumerate() {
            if let Some(index) = p.grad.data().iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    name: params.param_name(i),
                    index,
                });
            }
        }
        self.t += 1;
        let (b1, b2) = (S::of(BETA1), S::of(BETA2));
        let one = S::one();
        let c1 = one - b1.powi(self.t as i32);
        let c2 = one - b2.powi(self.t as i32);
        let (lr, eps) = (S::of(self.lr), S::of(EPSILON));
        for ((p, m), v) in params.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (((x, &g), m), v) in values.iter_mut().zip(grads).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        params.zero_grads();
        Ok(())
    }
}
