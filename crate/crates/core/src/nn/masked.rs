//! Causally masked convolution for the autoregressive context model.

use rand::Rng;

use crate::autograd::{ConvGeom, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskType {
    /// Hides the center tap and everything after it in raster order.
    A,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskedConvSpec {
    pub mask_type: MaskType,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl MaskedConvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::InvalidSpec(format!("masked conv kernel must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    /// Whether tap `(ki, kj)` sees already-decoded positions only.
    pub fn tap_visible(&self, ki: usize, kj: usize) -> bool {
        let c = self.kernel / 2;
        match self.mask_type {
            MaskType::A => ki < c || (ki == c && kj < c),
        }
    }

    /// Unmasked `(ki, kj)` taps in raster order.
    pub fn visible_taps(&self) -> Vec<(usize, usize)> {
        let k = self.kernel;
        (0..k * k).map(|t| (t / k, t % k)).filter(|&(i, j)| self.tap_visible(i, j)).collect()
    }

    pub fn mask<T: Scalar>(&self) -> Tensor<T> {
        let k = self.kernel;
        Tensor::from_fn(&[self.out_channels, self.in_channels, k, k], |idx| {
            let t = idx % (k * k);
            if self.tap_visible(t / k, t % k) {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct MaskedConv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: MaskedConvSpec,
}

impl MaskedConv2d {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, spec: MaskedConvSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let k = spec.kernel;
        let bound = 1.0 / ((spec.in_channels * k * k) as f64).sqrt();
        let weight = ps.add_uniform(format!("{name}.weight"), &[spec.out_channels, spec.in_channels, k, k], bound, rng);
        let bias = ps.add_uniform(format!("{name}.bias"), &[spec.out_channels], bound, rng);
        Ok(MaskedConv2d { weight, bias, spec })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> Var {
        let w = tape.param(ps, self.weight);
        let mask = tape.constant(self.spec.mask());
        let wm = tape.mul(w, mask);
        let b = tape.param(ps, self.bias);
        let k = self.spec.kernel;
        tape.conv2d(x, wm, Some(b), ConvGeom { kernel: k, stride: 1, pad: k / 2 })
    }

    /// Output at one position of a single `[c, h, w]` map, reading only the
    /// visible taps. Used by sequential decoding, where later positions are
    /// not yet known.
    pub fn forward_at<T: Scalar>(&self, ps: &ParamStore<T>, x: &[T], h: usize, w: usize, i: usize, j: usize, out: &mut [T]) {
        let s = &self.spec;
        let (k, cin) = (s.kernel, s.in_channels);
        let half = (k / 2) as isize;
        let weight = ps.get(self.weight).data();
        out.copy_from_slice(ps.get(self.bias).data());
        for (ki, kj) in s.visible_taps() {
            let y = i as isize + ki as isize - half;
            let xx = j as isize + kj as isize - half;
            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                continue;
            }
            let pos = y as usize * w + xx as usize;
            for (o, acc) in out.iter_mut().enumerate() {
                let wrow = &weight[o * cin * k * k..];
                let mut sum = T::zero();
                for c in 0..cin {
                    sum += wrow[(c * k + ki) * k + kj] * x[c * h * w + pos];
                }
                *acc += sum;
            }
        }
    }
}
