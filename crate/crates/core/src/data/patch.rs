use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Patch geometry: `patch_len` samples per patch, consecutive patches
/// `stride` apart. `stride < patch_len` overlaps, `stride == patch_len`
/// tiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub patch_len: usize,
    pub stride: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_len: 32,
            stride: 32,
        }
    }
}

impl PatchConfig {
    pub fn new(patch_len: usize, stride: usize) -> Self {
        Self { patch_len, stride }
    }

    pub fn validate(&self, context_len: usize) -> Result<()> {
        if self.patch_len == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "patch_len and stride must be positive (got {} and {})",
                self.patch_len, self.stride
            )));
        }
        if self.patch_len > context_len {
            return Err(Error::Config(format!(
                "patch_len {} exceeds context length {context_len}",
                self.patch_len
            )));
        }
        if self.stride > self.patch_len {
            return Err(Error::Config(format!(
                "stride {} exceeds patch_len {}; patches would skip samples",
                self.stride, self.patch_len
            )));
        }
        Ok(())
    }

    /// `P = ⌊(T − patch_len)/stride⌋ + 1`.
    pub fn num_patches(&self, context_len: usize) -> usize {
        (context_len - self.patch_len) / self.stride + 1
    }
}

/// Splits `x` into `P` rows of `patch_len`; a trailing remainder shorter
/// than one patch is dropped.
pub fn patch<S: Scalar>(x: &Tensor<S>, cfg: PatchConfig) -> Result<Tensor<S>> {
    cfg.validate(x.len())?;
    let p = cfg.num_patches(x.len());
    let mut data = Vec::with_capacity(p * cfg.patch_len);
    for i in 0..p {
        let start = i * cfg.stride;
        data.extend_from_slice(&x.data()[start..start + cfg.patch_len]);
    }
    Tensor::matrix(p, cfg.patch_len, data)
}
