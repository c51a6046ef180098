//! Checkpoint file format.
//!
//! ```text
//! "RIDDECK1"  u32 version
//! u32 T  u32 L  u32 patch_len  u32 patch_stride  u32 d  u32 d_hidden
//! f64 dropout  u64 step  u64 seed  u32 tensor_count
//! tensor_count × (u32 name_len, name bytes, u32 rank, rank × u32 dim, f64 data)
//! u64 CRC-64/XZ of everything above
//! ```
//!
//! Tensors appear in declaration order: the 16 trainable tensors, the frozen
//! retrieval encoder, then any optimizer state the trainer adds.

use std::path::Path;

use crate::codec::{expect_magic, ByteReader, ByteWriter};
use crate::data::PatchConfig;
use crate::error::{Error, Result};
use crate::model::params::{ModelDims, ModelParams};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

pub const CKPT_MAGIC: &[u8; 8] = b"RIDDECK1";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    pub dims: ModelDims,
    pub dropout: f64,
    pub step: u64,
    pub seed: u64,
    pub tensors: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn from_params(params: &ModelParams<S>, step: u64, seed: u64) -> Self {
        Self {
            dims: params.dims,
            dropout: params.dropout,
            step,
            seed,
            tensors: params.to_named(),
        }
    }

    pub fn params(&self) -> Result<ModelParams<S>> {
        ModelParams::from_named(self.dims, self.dropout, &self.tensors)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let u32_of = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit the checkpoint format")))
        };
        let mut w = ByteWriter::new();
        w.bytes(CKPT_MAGIC);
        w.u32(CKPT_VERSION);
        let d = &self.dims;
        for (v, what) in [
            (d.context_len, "context length"),
            (d.horizon_len, "horizon length"),
            (d.patch.patch_len, "patch length"),
            (d.patch.stride, "patch stride"),
            (d.d_model, "d_model"),
            (d.d_hidden, "d_hidden"),
        ] {
            w.u32(u32_of(v, what)?);
        }
        w.f64(self.dropout);
        w.u64(self.step);
        w.u64(self.seed);
        w.u32(u32_of(self.tensors.len(), "tensor count")?);
        for (name, t) in &self.tensors {
            w.u32(u32_of(name.len(), "name length")?);
            w.bytes(name.as_bytes());
            w.u32(u32_of(t.shape().len(), "rank")?);
            for &s in t.shape() {
                w.u32(u32_of(s, "dimension")?);
            }
            w.f64s(t.data().iter().map(|v| v.widen()));
        }
        Ok(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        expect_magic(&mut r, CKPT_MAGIC)?;
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::VersionMismatch {
                expected: CKPT_VERSION,
                found: version,
            });
        }
        let mut u = || r.u32().map(|v| v as usize);
        let (t, l, plen, pstride, dm, dh) = (u()?, u()?, u()?, u()?, u()?, u()?);
        let dims = ModelDims {
            context_len: t,
            horizon_len: l,
            patch: PatchConfig::new(plen, pstride),
            d_model: dm,
            d_hidden: dh,
        };
        let dropout = r.f64()?;
        let step = r.u64()?;
        let seed = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &s| a.checked_mul(s))
                .ok_or_else(|| Error::Corrupt(format!("tensor '{name}' size overflows")))?;
            let data = r.f64s(n)?.into_iter().map(S::of).collect();
            let tensor = Tensor::new(shape, data).map_err(|e| Error::Corrupt(format!("tensor '{name}': {e}")))?;
            tensors.push((name, tensor));
        }
        r.verify_trailer()?;
        Ok(Self {
            dims,
            dropout,
            step,
            seed,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        // Write-then-rename so a crash never leaves a half-written checkpoint.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
