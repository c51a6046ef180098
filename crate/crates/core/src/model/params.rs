use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::PatchConfig;
use crate::error::{Error, Result};
use crate::numerics::ops::matvec_into;
use crate::numerics::{DualTensor, ParamSet, Tensor};
use crate::retrieval::Embedder;
use crate::scalar::Scalar;

/// Every size the parameter shapes depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub context_len: usize,
    pub horizon_len: usize,
    pub patch: PatchConfig,
    pub d_model: usize,
    pub d_hidden: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate(self.context_len)?;
        if self.horizon_len == 0 || self.d_model == 0 || self.d_hidden == 0 {
            return Err(Error::Config(format!("all model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        self.patch.num_patches(self.context_len)
    }
}

/// Index of each trainable tensor in the registry, in declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(usize)]
pub enum ParamId {
    EncW1,
    EncB1,
    EncW2,
    EncB2,
    ProjW,
    ProjB,
    LambdaW,
    LambdaB,
    GammaW,
    GammaB,
    InvW,
    InvB,
    DynW,
    DynB,
    FuseW,
    FuseB,
}

pub const PARAM_NAMES: [&str; 16] = [
    "encoder.w1",
    "encoder.b1",
    "encoder.w2",
    "encoder.b2",
    "proj.w",
    "proj.b",
    "gate_lambda.w",
    "gate_lambda.b",
    "gate_gamma.w",
    "gate_gamma.b",
    "pred_inv.w",
    "pred_inv.b",
    "pred_dyn.w",
    "pred_dyn.b",
    "fuse.w",
    "fuse.b",
];

pub const ENCODER_NAMES: [&str; 4] = [
    "retrieval_encoder.w1",
    "retrieval_encoder.b1",
    "retrieval_encoder.w2",
    "retrieval_encoder.b2",
];

fn param_shapes(d: &ModelDims) -> [Vec<usize>; 16] {
    let (l, lp, dm, dh) = (d.horizon_len, d.patch.patch_len, d.d_model, d.d_hidden);
    [
        vec![dh, lp],
        vec![dh],
        vec![dm, dh],
        vec![dm],
        vec![dm, l],
        vec![dm],
        vec![dm, 2 * dm],
        vec![dm],
        vec![dm, 2 * dm],
        vec![dm],
        vec![l, dm],
        vec![l],
        vec![l, dm],
        vec![l],
        vec![l, 2 * l],
        vec![l],
    ]
}

/// Patch encoder `f_φ`: two linear layers with a tanh between, applied to
/// each patch and mean-pooled over patches.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<S> {
    pub patch: PatchConfig,
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

impl<S: Scalar> Encoder<S> {
    pub fn d_hidden(&self) -> usize {
        self.b1.len()
    }

    pub fn d_model(&self) -> usize {
        self.b2.len()
    }

    /// Deterministic inference-mode embedding.
    pub fn encode(&self, context: &[S]) -> Result<Vec<S>> {
        self.patch.validate(context.len())?;
        let (lp, dh, dm) = (self.patch.patch_len, self.d_hidden(), self.d_model());
        if self.w1.shape() != [dh, lp] {
            return Err(Error::dim("encoder", self.w1.shape(), &[dh, lp]));
        }
        let p = self.patch.num_patches(context.len());
        let mut hidden = vec![S::zero(); dh];
        let mut feat = vec![S::zero(); dm];
        let mut q = vec![S::zero(); dm];
        for i in 0..p {
            let x = &context[i * self.patch.stride..i * self.patch.stride + lp];
            matvec_into(self.w1.data(), dh, lp, x, self.b1.data(), &mut hidden);
            hidden.iter_mut().for_each(|v| *v = v.tanh());
            matvec_into(self.w2.data(), dm, dh, &hidden, self.b2.data(), &mut feat);
            for (a, f) in q.iter_mut().zip(&feat) {
                *a += *f;
            }
        }
        let pn = S::of_usize(p);
        q.iter_mut().for_each(|v| *v /= pn);
        Ok(q)
    }

    /// SHA-256 over the geometry and the weights as little-endian f64.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"ridde-encoder");
        for v in [self.patch.patch_len, self.patch.stride, self.d_hidden(), self.d_model()] {
            h.update((v as u64).to_le_bytes());
        }
        for t in [&self.w1, &self.b1, &self.w2, &self.b2] {
            for v in t.data() {
                h.update(v.widen().to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

impl<S: Scalar> Embedder<S> for Encoder<S> {
    fn embedding_dim(&self) -> usize {
        self.d_model()
    }

    fn embed(&self, context: &[S]) -> Result<Vec<S>> {
        self.encode(context)
    }

    fn fingerprint(&self) -> [u8; 32] {
        self.hash()
    }
}

/// Registry of every trainable tensor plus the frozen encoder snapshot used
/// to query the knowledge base.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub dims: ModelDims,
    pub dropout: f64,
    tensors: Vec<DualTensor<S>>,
    retrieval_encoder: Encoder<S>,
}

impl<S: Scalar> ModelParams<S> {
    /// Symmetric uniform `±1/√fan_in` weights, zero biases, and a fusion
    /// decoder that starts as the average `[½I | ½I]` of its inputs.
    pub fn init(dims: ModelDims, dropout: f64, seed: u64) -> Result<Self> {
        dims.validate()?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {dropout}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = param_shapes(&dims);
        let mut tensors: Vec<DualTensor<S>> = shapes
            .iter()
            .map(|shape| {
                let n: usize = shape.iter().product();
                let data = if shape.len() == 2 {
                    let bound = 1.0 / (shape[1] as f64).sqrt();
                    (0..n).map(|_| S::of(rng.random_range(-bound..bound))).collect()
                } else {
                    vec![S::zero(); n]
                };
                DualTensor::new(Tensor::new(shape.clone(), data).expect("shape matches"))
            })
            .collect();

        let l = dims.horizon_len;
        let fuse = tensors[ParamId::FuseW as usize].value.data_mut();
        fuse.iter_mut().for_each(|v| *v = S::zero());
        for j in 0..l {
            fuse[j * 2 * l + j] = S::of(0.5);
            fuse[j * 2 * l + l + j] = S::of(0.5);
        }

        let mut params = Self {
            dims,
            dropout,
            retrieval_encoder: Encoder {
                patch: dims.patch,
                w1: tensors[0].value.clone(),
                b1: tensors[1].value.clone(),
                w2: tensors[2].value.clone(),
                b2: tensors[3].value.clone(),
            },
            tensors: std::mem::take(&mut tensors),
        };
        params.snapshot_encoder();
        Ok(params)
    }

    /// Rebuilds a registry from named tensors in declaration order.
    pub fn from_named(dims: ModelDims, dropout: f64, named: &[(String, Tensor<S>)]) -> Result<Self> {
        dims.validate()?;
        let shapes = param_shapes(&dims);
        let expected = PARAM_NAMES.iter().chain(ENCODER_NAMES.iter());
        if named.len() < PARAM_NAMES.len() + ENCODER_NAMES.len() {
            return Err(Error::Corrupt(format!(
                "expected {} model tensors, found {}",
                PARAM_NAMES.len() + ENCODER_NAMES.len(),
                named.len()
            )));
        }
        let enc_shapes = &shapes[0..4];
        for (i, (name, (got, t))) in expected.zip(named).enumerate() {
            if name != got {
                return Err(Error::Corrupt(format!("tensor {i} is '{got}', expected '{name}'")));
            }
            let want = if i < 16 { &shapes[i] } else { &enc_shapes[i - 16] };
            if t.shape() != want.as_slice() {
                return Err(Error::dim("checkpoint tensor", want, t.shape()));
            }
        }
        let tensors = named[..16].iter().map(|(_, t)| DualTensor::new(t.clone())).collect();
        let e = &named[16..20];
        Ok(Self {
            dims,
            dropout,
            tensors,
            retrieval_encoder: Encoder {
                patch: dims.patch,
                w1: e[0].1.clone(),
                b1: e[1].1.clone(),
                w2: e[2].1.clone(),
                b2: e[3].1.clone(),
            },
        })
    }

    /// Model tensors then the retrieval encoder, each with its name.
    pub fn to_named(&self) -> Vec<(String, Tensor<S>)> {
        let e = &self.retrieval_encoder;
        PARAM_NAMES
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| (n.to_string(), t.value.clone()))
            .chain(
                ENCODER_NAMES
                    .iter()
                    .zip([&e.w1, &e.b1, &e.w2, &e.b2])
                    .map(|(n, t)| (n.to_string(), t.clone())),
            )
            .collect()
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &[S] {
        self.tensors[id as usize].value.data()
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [S] {
        self.tensors[id as usize].value.data_mut()
    }

    /// Current trainable encoder as a standalone value.
    pub fn encoder(&self) -> Encoder<S> {
        Encoder {
            patch: self.dims.patch,
            w1: self.tensors[0].value.clone(),
            b1: self.tensors[1].value.clone(),
            w2: self.tensors[2].value.clone(),
            b2: self.tensors[3].value.clone(),
        }
    }

    /// Frozen encoder whose embeddings the knowledge base was built with.
    pub fn retrieval_encoder(&self) -> &Encoder<S> {
        &self.retrieval_encoder
    }

    /// Freezes the current trainable encoder as the retrieval encoder.
    pub fn snapshot_encoder(&mut self) {
        self.retrieval_encoder = self.encoder();
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.value.is_finite())
    }
}

impl<S: Scalar> ParamSet<S> for ModelParams<S> {
    fn params(&self) -> &[DualTensor<S>] {
        &self.tensors
    }

    fn params_mut(&mut self) -> &mut [DualTensor<S>] {
        &mut self.tensors
    }

    fn param_name(&self, index: usize) -> String {
        PARAM_NAMES[index].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn desk_dims() -> ModelDims {
        ModelDims {
            context_len: 64,
            horizon_len: 16,
            patch: PatchConfig::new(16, 16),
            d_model: 32,
            d_hidden: 64,
        }
    }

    #[test]
    fn init_shapes_and_fusion_average() {
        let p = ModelParams::<f64>::init(desk_dims(), 0.3, 0).unwrap();
        assert_eq!(p.params().len(), 16);
        assert_eq!(p.params()[ParamId::LambdaW as usize].value.shape(), &[32, 64]);
        assert!(p.value(ParamId::GammaB).iter().all(|&v| v == 0.0));
        let fw = p.value(ParamId::FuseW);
        assert_eq!(fw[0], 0.5);
        assert_eq!(fw[16], 0.5);
        assert_eq!(fw[1], 0.0);
        assert_eq!(p.encoder(), *p.retrieval_encoder());
        let expected = 64 * 16 + 64 + 32 * 64 + 32 + 32 * 16 + 32 + 2 * (32 * 64 + 32) + 2 * (16 * 32 + 16) + 16 * 32 + 16;
        assert_eq!(p.parameter_count(), expected);
    }

    #[test]
    fn init_is_seeded() {
        let a = ModelParams::<f64>::init(desk_dims(), 0.3, 1).unwrap();
        let b = ModelParams::<f64>::init(desk_dims(), 0.3, 1).unwrap();
        let c = ModelParams::<f64>::init(desk_dims(), 0.3, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.encoder().hash(), b.encoder().hash());
        assert_ne!(a.encoder().hash(), c.encoder().hash());
    }

    #[test]
    fn named_round_trip() {
        let p = ModelParams::<f64>::init(desk_dims(), 0.3, 3).unwrap();
        let back = ModelParams::from_named(p.dims, 0.3, &p.to_named()).unwrap();
        assert_eq!(back, p);
        let mut named = p.to_named();
        named.swap(0, 1);
        assert!(ModelParams::from_named(p.dims, 0.3, &named).is_err());
    }
}
