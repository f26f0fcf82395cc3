//! Rate-distortion objective `L_R + λ·L_D + L_AT`.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Distortion is MSE on `[0, 1]` data rescaled to the 8-bit range.
pub const DISTORTION_SCALE: f64 = 255.0 * 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdLossBreakdown {
    /// Bits per target pixel.
    pub l_r: f64,
    /// `255²·MSE`.
    pub l_d: f64,
    /// Weighted attention loss.
    pub l_at: f64,
    pub lambda: f64,
    pub l_total: f64,
}

impl RdLossBreakdown {
    pub fn new(l_r: f64, l_d: f64, l_at: f64, lambda: f64) -> Self {
        RdLossBreakdown { l_r, l_d, l_at, lambda, l_total: l_r + lambda * l_d + l_at }
    }
}

/// Loss on plain tensors. `num_pixels` counts pixels of the target image
/// (height × width, times the batch), not channels.
pub fn rd_loss<T: Scalar>(
    decoded: &Tensor<T>,
    ground_truth: &Tensor<T>,
    rate_bits: f64,
    num_pixels: usize,
    lambda: f64,
    l_at: f64,
) -> Result<RdLossBreakdown> {
    if decoded.shape() != ground_truth.shape() {
        return Err(Error::InvalidShape(format!("decoded {:?} vs ground truth {:?}", decoded.shape(), ground_truth.shape())));
    }
    if num_pixels == 0 {
        return Err(Error::InvalidShape("rate needs a nonempty target".into()));
    }
    let sse: f64 = decoded.data().iter().zip(ground_truth.data()).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
    let mse = sse / decoded.len() as f64;
    Ok(RdLossBreakdown::new(rate_bits / num_pixels as f64, DISTORTION_SCALE * mse, l_at, lambda))
}

/// The same objective built on a tape.
#[derive(Clone, Copy, Debug)]
pub struct RdTerms {
    pub total: Var,
    pub rate: Var,
    pub distortion: Var,
    pub attention: Var,
    pub lambda: f64,
}

impl RdTerms {
    pub fn breakdown<T: Scalar>(&self, tape: &Tape<T>) -> RdLossBreakdown {
        let v = |x: Var| tape.value(x).item().as_f64();
        RdLossBreakdown { l_r: v(self.rate), l_d: v(self.distortion), l_at: v(self.attention), lambda: self.lambda, l_total: v(self.total) }
    }
}

/// `bits / num_pixels + λ·255²·mean((output − target)²) + attention`.
pub fn rd_loss_terms<T: Scalar>(
    tape: &mut Tape<T>,
    output: Var,
    target: Var,
    bits: Var,
    num_pixels: usize,
    lambda: f64,
    attention: Var,
) -> Result<RdTerms> {
    if tape.shape(output) != tape.shape(target) {
        return Err(Error::InvalidShape(format!("decoded {:?} vs ground truth {:?}", tape.shape(output), tape.shape(target))));
    }
    if num_pixels == 0 {
        return Err(Error::InvalidShape("rate needs a nonempty target".into()));
    }
    let diff = tape.sub(output, target);
    let sq = tape.square(diff);
    let mse = tape.mean(sq);
    let distortion = tape.mul_scalar(mse, DISTORTION_SCALE);
    let rate = tape.mul_scalar(bits, 1.0 / num_pixels as f64);
    let weighted = tape.mul_scalar(distortion, lambda);
    let rd = tape.add(rate, weighted);
    let total = tape.add(rd, attention);
    Ok(RdTerms { total, rate, distortion, attention, lambda })
}
