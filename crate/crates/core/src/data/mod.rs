//! RAW/sRGB pairs: packing, normalization, patches, augmentation, the
//! dataset split, on-disk pair IO and a synthetic pair generator.

mod augment;
mod bayer;
mod io;
mod loader;
mod split;
mod synth;

pub use augment::Augment;
pub use bayer::{normalize_raw, pack_rggb, unpack_rggb, BayerPattern};
pub use io::{list_pair_ids, load_pair, load_pairs, load_png, load_raw, write_pair, write_png16, RawMeta};
pub use loader::{extract_patch_pair, worker_rng, Batch, PatchPair, PatchSampler};
pub use split::{make_split, DatasetSplit};
pub use synth::{synthetic_pair, synthetic_pairs, toy_isp, SyntheticPair};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Smallest accepted mosaic side.
pub const MIN_MOSAIC_DIM: usize = 64;

/// Packed RAW `[4, H/2, W/2]`, normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage<T> {
    pub data: Tensor<T>,
    pub black_level: u32,
    pub white_level: u32,
    pub pattern: BayerPattern,
    pub source_id: String,
}

/// sRGB `[3, H, W]` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SrgbImage<T> {
    pub data: Tensor<T>,
    pub source_id: String,
}

impl<T: Scalar> RawImage<T> {
    /// Normalizes and packs a 16-bit mosaic of `height × width`.
    pub fn from_mosaic(values: &[u16], meta: &RawMeta, source_id: impl Into<String>) -> Result<Self> {
        let (h, w) = (meta.height, meta.width);
        if values.len() != h * w {
            return Err(Error::InvalidShape(format!("mosaic has {} values, metadata says {h}x{w}", values.len())));
        }
        if h < MIN_MOSAIC_DIM || w < MIN_MOSAIC_DIM || h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidShape(format!("mosaic {h}x{w} must be even and at least {MIN_MOSAIC_DIM} per side")));
        }
        let norm = normalize_raw(values, meta.black_level, meta.white_level)?;
        let mosaic = Tensor::from_vec(&[1, h, w], norm.into_iter().map(T::of).collect())?;
        Ok(RawImage {
            data: pack_rggb(&mosaic, meta.pattern)?,
            black_level: meta.black_level,
            white_level: meta.white_level,
            pattern: meta.pattern,
            source_id: source_id.into(),
        })
    }

    /// `(h, w)` of the packed planes.
    pub fn packed_dims(&self) -> (usize, usize) {
        (self.data.shape()[1], self.data.shape()[2])
    }
}

impl<T: Scalar> SrgbImage<T> {
    pub fn new(data: Tensor<T>, source_id: impl Into<String>) -> Result<Self> {
        if data.ndim() != 3 || data.shape()[0] != 3 {
            return Err(Error::InvalidShape(format!("sRGB image must be [3, H, W], got {:?}", data.shape())));
        }
        Ok(SrgbImage { data: data.map(|v| v.max(T::zero()).min(T::one())), source_id: source_id.into() })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.data.shape()[1], self.data.shape()[2])
    }
}

/// Checks that an sRGB image is exactly twice the packed RAW size.
pub fn check_pair<T: Scalar>(raw: &RawImage<T>, srgb: &SrgbImage<T>) -> Result<()> {
    let (h, w) = raw.packed_dims();
    if srgb.dims() != (2 * h, 2 * w) {
        return Err(Error::InvalidShape(format!("sRGB {:?} does not pair with packed RAW {h}x{w}", srgb.dims())));
    }
    Ok(())
}
