use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::hex;
use crate::error::{Error, Result};
use crate::model::params::{ModelParams, ParamId};
use crate::numerics::ops::{
    cosine_sim, cosine_sim_backward_into, dot, linear_backward_into, matvec_into, sigmoid_scalar, softmax_backward_slice,
    softmax_slice,
};
use crate::numerics::ParamSet;
use crate::retrieval::KnowledgeBase;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Disentanglement weight forced to zero.
    NoDis,
    /// No decomposition: a single predictor reads `h`.
    NoIdd,
    /// No knowledge base: `h = q`.
    NoRetrieval,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoDis, Ablation::NoIdd, Ablation::NoRetrieval];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoDis => "no_dis",
            Ablation::NoIdd => "no_idd",
            Ablation::NoRetrieval => "no_retrieval",
        }
    }

    pub fn uses_retrieval(self) -> bool {
        self != Ablation::NoRetrieval
    }

    pub fn uses_decomposition(self) -> bool {
        self != Ablation::NoIdd
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| {
            let valid: Vec<_> = Ablation::ALL.iter().map(|a| a.as_str()).collect();
            Error::Config(format!("unknown ablation '{s}'; valid options: {}", valid.join(", ")))
        })
    }
}

/// Per-call settings that are not parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardConfig {
    pub k: usize,
    /// Divides the attention logits; 1.0 leaves them as raw cosines.
    pub temperature: f64,
    pub ablation: Ablation,
    /// Knowledge-base scan shards; 1 scans sequentially.
    pub shards: usize,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            k: 5,
            temperature: 1.0,
            ablation: Ablation::Full,
            shards: 1,
        }
    }
}

/// Prediction plus every intermediate, all in normalized space.
///
/// Under `NoRetrieval`, `lambda_gate` is all ones and `omega`/`retrieved_ids`
/// are empty; under `NoIdd`, `gamma_gate` is all ones and `z_dyn`, `y_dyn`
/// are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastOutput<S> {
    pub y_hat: Vec<S>,
    pub y_inv: Vec<S>,
    pub y_dyn: Vec<S>,
    pub h: Vec<S>,
    pub h_ret: Vec<S>,
    pub q: Vec<S>,
    pub z_inv: Vec<S>,
    pub z_dyn: Vec<S>,
    pub lambda_gate: Vec<S>,
    pub gamma_gate: Vec<S>,
    pub omega: Vec<S>,
    pub retrieved_ids: Vec<u64>,
    /// Cosine similarity of each retrieved entry to the search query.
    pub retrieval_similarities: Vec<S>,
}

/// Adjoint buffers aligned with the parameter registry.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S> {
    pub tensors: Vec<Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(params: &ModelParams<S>) -> Self {
        Self {
            tensors: params.params().iter().map(|p| vec![S::zero(); p.value.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    /// Adds these adjoints into the registry's `grad` slots.
    pub fn accumulate_into(&self, params: &mut ModelParams<S>) {
        for (p, g) in params.params_mut().iter_mut().zip(&self.tensors) {
            for (x, y) in p.grad.data_mut().iter_mut().zip(g) {
                *x += *y;
            }
        }
    }
}

/// Upstream adjoints arriving at the model outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrads<S> {
    pub y_hat: Vec<S>,
    pub z_inv: Vec<S>,
    pub z_dyn: Vec<S>,
}

/// Everything the backward pass needs beyond [`ForecastOutput`].
#[derive(Clone, Debug)]
pub struct Tape<S> {
    x: Vec<S>,
    ablation: Ablation,
    temperature: S,
    /// Per-patch tanh activations, `P × d_hidden`.
    enc_act: Vec<S>,
    enc_mask: Option<Vec<S>>,
    /// Retrieved horizons `K × L` and their projections `K × d`.
    horizons: Vec<S>,
    t: Vec<S>,
    h_mask: Option<Vec<S>>,
}

/// Checks that `kb` was built for this model's shapes and frozen encoder.
pub fn check_kb<S: Scalar>(params: &ModelParams<S>, kb: &KnowledgeBase<S>) -> Result<()> {
    let d = &params.dims;
    if kb.context_len() != d.context_len || kb.horizon_len() != d.horizon_len || kb.dim() != d.d_model {
        return Err(Error::dim(
            "knowledge base vs model",
            &[kb.context_len(), kb.horizon_len(), kb.dim()],
            &[d.context_len, d.horizon_len, d.d_model],
        ));
    }
    let model = params.retrieval_encoder().hash();
    if kb.encoder_hash() != &model {
        return Err(Error::StaleEmbeddings {
            kb: hex(kb.encoder_hash()),
            model: hex(&model),
        });
    }
    Ok(())
}

fn dropout_mask<S: Scalar, R: Rng>(rng: &mut R, n: usize, rate: f64) -> Vec<S> {
    let keep = S::of(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { S::zero() } else { keep })
        .collect()
}

fn concat<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Per-patch tanh activations and the pooled embedding `q`.
fn encode_inner<S: Scalar>(x: &[S], params: &ModelParams<S>, mask: Option<&[S]>) -> Result<(Vec<S>, Vec<S>)> {
    let dims = &params.dims;
    dims.patch.validate(x.len())?;
    let (lp, stride, dh, dm) = (dims.patch.patch_len, dims.patch.stride, dims.d_hidden, dims.d_model);
    let p = dims.patch.num_patches(x.len());
    let mut act = vec![S::zero(); p * dh];
    let mut used = vec![S::zero(); dh];
    let mut feat = vec![S::zero(); dm];
    let mut q = vec![S::zero(); dm];
    for i in 0..p {
        let a = &mut act[i * dh..(i + 1) * dh];
        matvec_into(params.value(ParamId::EncW1), dh, lp, &x[i * stride..i * stride + lp], params.value(ParamId::EncB1), a);
        a.iter_mut().for_each(|v| *v = v.tanh());
        match mask {
            Some(m) => {
                for ((u, &v), &mk) in used.iter_mut().zip(a.iter()).zip(&m[i * dh..(i + 1) * dh]) {
                    *u = v * mk;
                }
            }
            None => used.copy_from_slice(a),
        }
        matvec_into(params.value(ParamId::EncW2), dm, dh, &used, params.value(ParamId::EncB2), &mut feat);
        for (a, f) in q.iter_mut().zip(&feat) {
            *a += *f;
        }
    }
    let pn = S::of_usize(p);
    q.iter_mut().for_each(|v| *v /= pn);
    Ok((act, q))
}

/// Patches `x`, runs the trainable encoder on each patch, and mean-pools.
pub fn encode<S: Scalar>(x: &[S], params: &ModelParams<S>) -> Result<Vec<S>> {
    Ok(encode_inner(x, params, None)?.1)
}

fn project_horizons<S: Scalar>(horizons: &[S], params: &ModelParams<S>) -> Vec<S> {
    let (l, d) = (params.dims.horizon_len, params.dims.d_model);
    let k = horizons.len() / l;
    let mut t = vec![S::zero(); k * d];
    for i in 0..k {
        matvec_into(
            params.value(ParamId::ProjW),
            d,
            l,
            &horizons[i * l..(i + 1) * l],
            params.value(ParamId::ProjB),
            &mut t[i * d..(i + 1) * d],
        );
    }
    t
}

fn attend<S: Scalar>(q: &[S], t: &[S], temperature: S) -> Result<(Vec<S>, Vec<S>)> {
    let d = q.len();
    let logits: Vec<S> = t.chunks_exact(d).map(|tk| cosine_sim(q, tk) / temperature).collect();
    let omega = softmax_slice(&logits)?;
    let mut h_ret = vec![S::zero(); d];
    for (w, tk) in omega.iter().zip(t.chunks_exact(d)) {
        for (h, v) in h_ret.iter_mut().zip(tk) {
            *h += *w * *v;
        }
    }
    Ok((h_ret, omega))
}

/// Projects each retrieved horizon and attends over them with cosine logits
/// divided by `temperature`. Returns `(h_ret, ω)`.
pub fn aggregate_retrieval<S: Scalar>(
    q: &[S],
    horizons: &[S],
    params: &ModelParams<S>,
    temperature: f64,
) -> Result<(Vec<S>, Vec<S>)> {
    let l = params.dims.horizon_len;
    if horizons.is_empty() {
        return Err(Error::Domain("aggregate_retrieval needs K ≥ 1 horizons".into()));
    }
    if horizons.len() % l != 0 || q.len() != params.dims.d_model {
        return Err(Error::dim("aggregate_retrieval", &[q.len(), horizons.len()], &[params.dims.d_model, l]));
    }
    attend(q, &project_horizons(horizons, params), S::of(temperature))
}

fn gate<S: Scalar>(w: &[S], b: &[S], input: &[S], d: usize) -> Vec<S> {
    let mut g = vec![S::zero(); d];
    matvec_into(w, d, 2 * d, input, b, &mut g);
    g.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    g
}

/// `λ = σ(W_λ[q; h_ret])`, `h = λ⊙q + (1−λ)⊙h_ret`. Returns `(h, λ)`.
pub fn fuse<S: Scalar>(q: &[S], h_ret: &[S], params: &ModelParams<S>) -> (Vec<S>, Vec<S>) {
    let d = params.dims.d_model;
    let lambda = gate(params.value(ParamId::LambdaW), params.value(ParamId::LambdaB), &concat(q, h_ret), d);
    let h = (0..d).map(|j| lambda[j] * q[j] + (S::one() - lambda[j]) * h_ret[j]).collect();
    (h, lambda)
}

/// `γ = σ(W_γ[h; h_ret])`; returns `(z_inv, z_dyn, γ)`. `z_dyn` is computed
/// as `h − z_inv` so the two parts sum back to `h` up to one rounding.
pub fn decompose<S: Scalar>(h: &[S], h_ret: &[S], params: &ModelParams<S>) -> (Vec<S>, Vec<S>, Vec<S>) {
    let d = params.dims.d_model;
    let gamma = gate(params.value(ParamId::GammaW), params.value(ParamId::GammaB), &concat(h, h_ret), d);
    let z_inv: Vec<S> = gamma.iter().zip(h).map(|(&g, &v)| g * v).collect();
    let z_dyn = h.iter().zip(&z_inv).map(|(&v, &zi)| v - zi).collect();
    (z_inv, z_dyn, gamma)
}

fn head<S: Scalar>(params: &ModelParams<S>, w: ParamId, b: ParamId, z: &[S]) -> Vec<S> {
    let (l, d) = (params.dims.horizon_len, params.dims.d_model);
    let mut y = vec![S::zero(); l];
    matvec_into(params.value(w), l, d, z, params.value(b), &mut y);
    y
}

/// Dual predictors and the fusion decoder; returns `(ŷ, ŷ_inv, ŷ_dyn)`.
pub fn predict<S: Scalar>(z_inv: &[S], z_dyn: &[S], params: &ModelParams<S>) -> (Vec<S>, Vec<S>, Vec<S>) {
    let l = params.dims.horizon_len;
    let y_inv = head(params, ParamId::InvW, ParamId::InvB, z_inv);
    let y_dyn = head(params, ParamId::DynW, ParamId::DynB, z_dyn);
    let mut y_hat = vec![S::zero(); l];
    matvec_into(params.value(ParamId::FuseW), l, 2 * l, &concat(&y_inv, &y_dyn), params.value(ParamId::FuseB), &mut y_hat);
    (y_hat, y_inv, y_dyn)
}

/// Inference-mode forward pass: no dropout, deterministic.
pub fn forward<S: Scalar>(
    x: &[S],
    kb: Option<&KnowledgeBase<S>>,
    params: &ModelParams<S>,
    cfg: &ForwardConfig,
    exclude_id: Option<u64>,
) -> Result<ForecastOutput<S>> {
    Ok(forward_tape::<S, rand_chacha::ChaCha8Rng>(x, kb, params, cfg, exclude_id, None)?.0)
}

/// Forward pass that also records a [`Tape`] for [`backward`]. Dropout is
/// applied iff `dropout_rng` is given and the rate is positive.
pub fn forward_tape<S: Scalar, R: Rng>(
    x: &[S],
    kb: Option<&KnowledgeBase<S>>,
    params: &ModelParams<S>,
    cfg: &ForwardConfig,
    exclude_id: Option<u64>,
    mut dropout_rng: Option<&mut R>,
) -> Result<(ForecastOutput<S>, Tape<S>)> {
    let dims = &params.dims;
    let (d, l) = (dims.d_model, dims.horizon_len);
    if x.len() != dims.context_len {
        return Err(Error::dim("forward input", &[dims.context_len], &[x.len()]));
    }
    if !(cfg.temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {}", cfg.temperature)));
    }
    let temperature = S::of(cfg.temperature);
    let rate = params.dropout;
    let training = rate > 0.0 && dropout_rng.is_some();

    let enc_mask = match (&mut dropout_rng, training) {
        (Some(rng), true) => Some(dropout_mask(*rng, dims.num_patches() * dims.d_hidden, rate)),
        _ => None,
    };
    let (enc_act, q) = encode_inner(x, params, enc_mask.as_deref())?;

    let (h_pre, h_ret, lambda, omega, ids, sims, horizons, t) = if cfg.ablation.uses_retrieval() {
        let kb = kb.ok_or_else(|| Error::Config("a knowledge base is required unless ablation is no_retrieval".into()))?;
        if kb.dim() != d || kb.horizon_len() != l {
            return Err(Error::dim("knowledge base vs model", &[kb.dim(), kb.horizon_len()], &[d, l]));
        }
        let search = params.retrieval_encoder().encode(x)?;
        let ret = if cfg.shards > 1 {
            kb.top_k_sharded(&search, cfg.k, exclude_id, cfg.shards)?
        } else {
            kb.top_k(&search, cfg.k, exclude_id)?
        };
        let horizons = ret.horizons.into_data();
        let t = project_horizons(&horizons, params);
        let (h_ret, omega) = attend(&q, &t, temperature)?;
        let (h, lambda) = fuse(&q, &h_ret, params);
        (h, h_ret, lambda, omega, ret.ids, ret.similarities, horizons, t)
    } else {
        (q.clone(), vec![S::zero(); d], vec![S::one(); d], vec![], vec![], vec![], vec![], vec![])
    };

    let h_mask = match (&mut dropout_rng, training) {
        (Some(rng), true) => Some(dropout_mask::<S, R>(*rng, d, rate)),
        _ => None,
    };
    let h: Vec<S> = match &h_mask {
        Some(m) => h_pre.iter().zip(m).map(|(&v, &mk)| v * mk).collect(),
        None => h_pre.clone(),
    };

    let (y_hat, y_inv, y_dyn, z_inv, z_dyn, gamma) = if cfg.ablation.uses_decomposition() {
        let (z_inv, z_dyn, gamma) = decompose(&h, &h_ret, params);
        let (y_hat, y_inv, y_dyn) = predict(&z_inv, &z_dyn, params);
        (y_hat, y_inv, y_dyn, z_inv, z_dyn, gamma)
    } else {
        let y = head(params, ParamId::InvW, ParamId::InvB, &h);
        (y.clone(), y, vec![S::zero(); l], h.clone(), vec![S::zero(); d], vec![S::one(); d])
    };

    let out = ForecastOutput {
        y_hat,
        y_inv,
        y_dyn,
        h,
        h_ret,
        q,
        z_inv,
        z_dyn,
        lambda_gate: lambda,
        gamma_gate: gamma,
        omega,
        retrieved_ids: ids,
        retrieval_similarities: sims,
    };
    let tape = Tape {
        x: x.to_vec(),
        ablation: cfg.ablation,
        temperature,
        enc_act,
        enc_mask,
        horizons,
        t,
        h_mask,
    };
    Ok((out, tape))
}

/// Reverse pass: accumulates parameter adjoints of a scalar objective whose
/// gradients at the outputs are `up`.
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    out: &ForecastOutput<S>,
    tape: &Tape<S>,
    up: &OutputGrads<S>,
    grads: &mut Gradients<S>,
) {
    let dims = &params.dims;
    let (d, l, hid, lp) = (dims.d_model, dims.horizon_len, dims.d_hidden, dims.patch.patch_len);
    let zero = S::zero();
    let one = S::one();

    // Heads and routing → dh (post-dropout) and dh_ret.
    let mut dh = vec![zero; d];
    let mut dh_ret = vec![zero; d];
    if tape.ablation.uses_decomposition() {
        let c = concat(&out.y_inv, &out.y_dyn);
        let mut dc = vec![zero; 2 * l];
        linear_backward_pair(grads, params, ParamId::FuseW, &c, &up.y_hat, l, 2 * l, Some(&mut dc));
        let mut dz_inv = up.z_inv.clone();
        let mut dz_dyn = up.z_dyn.clone();
        linear_backward_pair(grads, params, ParamId::InvW, &out.z_inv, &dc[..l], l, d, Some(&mut dz_inv));
        linear_backward_pair(grads, params, ParamId::DynW, &out.z_dyn, &dc[l..], l, d, Some(&mut dz_dyn));

        let gamma = &out.gamma_gate;
        let mut dpre = vec![zero; d];
        for j in 0..d {
            dh[j] = gamma[j] * dz_inv[j] + (one - gamma[j]) * dz_dyn[j];
            let dgamma = (dz_inv[j] - dz_dyn[j]) * out.h[j];
            dpre[j] = dgamma * gamma[j] * (one - gamma[j]);
        }
        let mut dcat = vec![zero; 2 * d];
        linear_backward_pair(grads, params, ParamId::GammaW, &concat(&out.h, &out.h_ret), &dpre, d, 2 * d, Some(&mut dcat));
        for j in 0..d {
            dh[j] += dcat[j];
            dh_ret[j] += dcat[d + j];
        }
    } else {
        let mut dz = up.z_inv.clone();
        linear_backward_pair(grads, params, ParamId::InvW, &out.h, &up.y_hat, l, d, Some(&mut dz));
        dh = dz;
    }

    if let Some(m) = &tape.h_mask {
        for (g, &mk) in dh.iter_mut().zip(m) {
            *g *= mk;
        }
    }

    // Fusion and attention → dq.
    let mut dq = vec![zero; d];
    if tape.ablation.uses_retrieval() {
        let lambda = &out.lambda_gate;
        let mut dpre = vec![zero; d];
        for j in 0..d {
            dq[j] += lambda[j] * dh[j];
            dh_ret[j] += (one - lambda[j]) * dh[j];
            let dl = dh[j] * (out.q[j] - out.h_ret[j]);
            dpre[j] = dl * lambda[j] * (one - lambda[j]);
        }
        let mut dcat = vec![zero; 2 * d];
        linear_backward_pair(grads, params, ParamId::LambdaW, &concat(&out.q, &out.h_ret), &dpre, d, 2 * d, Some(&mut dcat));
        for j in 0..d {
            dq[j] += dcat[j];
            dh_ret[j] += dcat[d + j];
        }

        let k = out.omega.len();
        let mut dt = vec![zero; k * d];
        let domega: Vec<S> = tape.t.chunks_exact(d).map(|tk| dot(&dh_ret, tk)).collect();
        for (i, &w) in out.omega.iter().enumerate() {
            for j in 0..d {
                dt[i * d + j] = w * dh_ret[j];
            }
        }
        let dlogit = softmax_backward_slice(&out.omega, &domega);
        for i in 0..k {
            let tk = &tape.t[i * d..(i + 1) * d];
            cosine_sim_backward_into(&out.q, tk, dlogit[i] / tape.temperature, &mut dq, &mut dt[i * d..(i + 1) * d]);
        }
        for i in 0..k {
            let (y, g) = (&tape.horizons[i * l..(i + 1) * l], &dt[i * d..(i + 1) * d]);
            linear_backward_pair(grads, params, ParamId::ProjW, y, g, d, l, None);
        }
    } else {
        dq.copy_from_slice(&dh);
    }

    // Encoder: every patch feature receives dq / P.
    let p = dims.num_patches();
    let pn = S::of_usize(p);
    let dfeat: Vec<S> = dq.iter().map(|&g| g / pn).collect();
    let w2 = params.value(ParamId::EncW2);
    let mut dused = vec![zero; hid];
    for (j, &g) in dfeat.iter().enumerate() {
        for (u, &w) in dused.iter_mut().zip(&w2[j * hid..(j + 1) * hid]) {
            *u += g * w;
        }
    }
    let stride = dims.patch.stride;
    let mut used = vec![zero; hid];
    let mut dpre = vec![zero; hid];
    for i in 0..p {
        let act = &tape.enc_act[i * hid..(i + 1) * hid];
        let mask = tape.enc_mask.as_ref().map(|m| &m[i * hid..(i + 1) * hid]);
        for j in 0..hid {
            let mk = mask.map_or(one, |m| m[j]);
            used[j] = act[j] * mk;
            dpre[j] = dused[j] * mk * (one - act[j] * act[j]);
        }
        linear_backward_pair(grads, params, ParamId::EncW2, &used, &dfeat, d, hid, None);
        let patch = &tape.x[i * stride..i * stride + lp];
        linear_backward_pair(grads, params, ParamId::EncW1, patch, &dpre, hid, lp, None);
    }
}

/// `linear_backward_into` for a weight at `w` whose bias sits at `w + 1`.
#[allow(clippy::too_many_arguments)]
fn linear_backward_pair<S: Scalar>(
    grads: &mut Gradients<S>,
    params: &ModelParams<S>,
    w: ParamId,
    x: &[S],
    dy: &[S],
    rows: usize,
    cols: usize,
    dx: Option<&mut [S]>,
) {
    let wi = w as usize;
    let (lo, hi) = grads.tensors.split_at_mut(wi + 1);
    linear_backward_into(x, params.value(w), rows, cols, dy, &mut lo[wi], &mut hi[0], dx);
}
