use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean absolute error that renders as full white. The scale is fixed so
/// maps from different methods are directly comparable.
pub const ERROR_FULL_SCALE: f64 = 0.25;

/// Per-pixel mean absolute error across channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Error map of two `[C, H, W]` (or `[1, C, H, W]`) images.
pub fn error_map<T: Scalar>(gt: &Tensor<T>, recon: &Tensor<T>) -> Result<ErrorMap> {
    if gt.shape() != recon.shape() {
        return Err(Error::InvalidShape(format!("error map of {:?} vs {:?}", gt.shape(), recon.shape())));
    }
    let (c, h, w) = match *gt.shape() {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        ref s => return Err(Error::InvalidShape(format!("error map needs one image, got {s:?}"))),
    };
    let plane = h * w;
    let mut values = vec![0.0; plane];
    for ch in 0..c {
        let (a, b) = (&gt.data()[ch * plane..(ch + 1) * plane], &recon.data()[ch * plane..(ch + 1) * plane]);
        for ((v, x), y) in values.iter_mut().zip(a).zip(b) {
            *v += (x.as_f64() - y.as_f64()).abs() / c as f64;
        }
    }
    Ok(ErrorMap { height: h, width: w, values })
}

impl ErrorMap {
    /// 8-bit intensities on the fixed scale.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.values.iter().map(|v| ((v / ERROR_FULL_SCALE).clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let px = self.to_gray8();
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| Luma([px[y as usize * self.width + x as usize]]));
        img.save(path).map_err(|e| Error::parse(path, e))
    }
}
