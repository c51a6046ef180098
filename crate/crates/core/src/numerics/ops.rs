//! Forward kernels and their hand-derived adjoints.
//!
//! The slice-level kernels (`matvec_into`, `linear_backward_into`, ...) are
//! what the model's hot path calls; the `Tensor` wrappers check shapes and
//! are the public surface for everything else.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Norms below this are treated as zero by [`cosine_sim`].
pub const ZERO_NORM_GUARD: f64 = 1e-12;

#[inline]
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + *x * *y)
}

#[inline]
pub fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// `out = W x + b` for a row-major `rows × cols` matrix.
pub fn matvec_into<S: Scalar>(w: &[S], rows: usize, cols: usize, x: &[S], b: &[S], out: &mut [S]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (j, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&w[j * cols..(j + 1) * cols], x) + b[j];
    }
}

/// Accumulates the adjoints of `y = W x + b` given `dy`.
///
/// `dw += dy ⊗ x`, `db += dy`, and `dx += Wᵀ dy` when `dx` is given.
pub fn linear_backward_into<S: Scalar>(
    x: &[S],
    w: &[S],
    rows: usize,
    cols: usize,
    dy: &[S],
    dw: &mut [S],
    db: &mut [S],
    dx: Option<&mut [S]>,
) {
    for j in 0..rows {
        let g = dy[j];
        db[j] += g;
        if g == S::zero() {
            continue;
        }
        let row = &mut dw[j * cols..(j + 1) * cols];
        for (r, xi) in row.iter_mut().zip(x) {
            *r += g * *xi;
        }
    }
    if let Some(dx) = dx {
        for j in 0..rows {
            let g = dy[j];
            if g == S::zero() {
                continue;
            }
            for (d, wv) in dx.iter_mut().zip(&w[j * cols..(j + 1) * cols]) {
                *d += g * *wv;
            }
        }
    }
}

fn check_linear<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<(usize, usize)> {
    if w.shape().len() != 2 {
        return Err(Error::dim("linear", w.shape(), x.shape()));
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    if x.len() != n || x.shape().len() != 1 {
        return Err(Error::dim("linear", w.shape(), x.shape()));
    }
    if b.len() != m || b.shape().len() != 1 {
        return Err(Error::dim("linear", w.shape(), b.shape()));
    }
    Ok((m, n))
}

/// `out[j] = Σ_k W[j,k]·x[k] + b[j]`.
pub fn linear<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, n) = check_linear(x, w, b)?;
    let mut out = vec![S::zero(); m];
    matvec_into(w.data(), m, n, x.data(), b.data(), &mut out);
    Ok(Tensor::vector(out))
}

/// Adjoints of [`linear`].
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrads<S> {
    pub dx: Tensor<S>,
    pub dw: Tensor<S>,
    pub db: Tensor<S>,
}

pub fn linear_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    upstream: &Tensor<S>,
) -> Result<LinearGrads<S>> {
    let (m, n) = check_linear(x, w, b)?;
    if upstream.len() != m {
        return Err(Error::dim("linear_backward", &[m], upstream.shape()));
    }
    let mut dx = vec![S::zero(); n];
    let mut dw = vec![S::zero(); m * n];
    let mut db = vec![S::zero(); m];
    linear_backward_into(x.data(), w.data(), m, n, upstream.data(), &mut dw, &mut db, Some(&mut dx));
    Ok(LinearGrads {
        dx: Tensor::vector(dx),
        dw: Tensor::matrix(m, n, dw)?,
        db: Tensor::vector(db),
    })
}

/// Branch-stable logistic function.
#[inline]
pub fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn sigmoid<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let data = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::new(x.shape().to_vec(), data).unwrap_or_else(|_| Tensor::vector(vec![]))
}

/// Adjoint of [`sigmoid`] given its output `s`: `s·(1−s)·upstream`.
pub fn sigmoid_backward<S: Scalar>(s: &Tensor<S>, upstream: &Tensor<S>) -> Result<Tensor<S>> {
    if s.shape() != upstream.shape() {
        return Err(Error::dim("sigmoid_backward", s.shape(), upstream.shape()));
    }
    let data = s
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&s, &g)| s * (S::one() - s) * g)
        .collect();
    Tensor::new(s.shape().to_vec(), data)
}

/// Max-subtracted softmax over a slice.
pub fn softmax_slice<S: Scalar>(x: &[S]) -> Result<Vec<S>> {
    if x.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub fn softmax<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    Ok(Tensor::vector(softmax_slice(x.data())?))
}

/// Adjoint of softmax given its output `p`: `p ⊙ (g − ⟨p, g⟩)`.
pub fn softmax_backward_slice<S: Scalar>(p: &[S], upstream: &[S]) -> Vec<S> {
    let inner = dot(p, upstream);
    p.iter().zip(upstream).map(|(&p, &g)| p * (g - inner)).collect()
}

pub fn softmax_backward<S: Scalar>(p: &Tensor<S>, upstream: &Tensor<S>) -> Result<Tensor<S>> {
    if p.shape() != upstream.shape() {
        return Err(Error::dim("softmax_backward", p.shape(), upstream.shape()));
    }
    Ok(Tensor::vector(softmax_backward_slice(p.data(), upstream.data())))
}

/// Cosine similarity with a zero-norm guard, clamped to `[-1, 1]`.
pub fn cosine_sim<S: Scalar>(a: &[S], b: &[S]) -> S {
    cosine_with_norms(a, b, norm(a), norm(b))
}

/// Same as [`cosine_sim`] with precomputed norms; bit-identical to it when
/// the norms were computed with [`norm`].
#[inline]
pub fn cosine_with_norms<S: Scalar>(a: &[S], b: &[S], na: S, nb: S) -> S {
    let guard = S::of(ZERO_NORM_GUARD);
    if na < guard || nb < guard {
        return S::zero();
    }
    let c = dot(a, b) / (na * nb);
    c.max(-S::one()).min(S::one())
}

pub fn cosine_sim_tensor<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<S> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dim("cosine_sim", a.shape(), b.shape()));
    }
    Ok(cosine_sim(a.data(), b.data()))
}

/// Accumulates `upstream · ∂cos(a,b)/∂a` into `da` and likewise for `db`.
pub fn cosine_sim_backward_into<S: Scalar>(a: &[S], b: &[S], upstream: S, da: &mut [S], db: &mut [S]) {
    let (na, nb) = (norm(a), norm(b));
    let guard = S::of(ZERO_NORM_GUARD);
    if na < guard || nb < guard {
        return;
    }
    let inv = S::one() / (na * nb);
    let c = dot(a, b) * inv;
    let ca = c / (na * na);
    let cb = c / (nb * nb);
    for i in 0..a.len() {
        da[i] += upstream * (b[i] * inv - ca * a[i]);
        db[i] += upstream * (a[i] * inv - cb * b[i]);
    }
}

pub fn cosine_sim_backward<S: Scalar>(a: &[S], b: &[S], upstream: S) -> (Vec<S>, Vec<S>) {
    let mut da = vec![S::zero(); a.len()];
    let mut db = vec![S::zero(); b.len()];
    cosine_sim_backward_into(a, b, upstream, &mut da, &mut db);
    (da, db)
}
