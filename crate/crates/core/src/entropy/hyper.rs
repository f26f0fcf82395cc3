//! Hyperprior plus autoregressive context model.
//!
//! ```text
//! y ─ h_a ─ z ─ Q ─ ẑ ─ h_s ─ hyper (2M) ─┐
//! ŷ ─ masked 5×5 conv ─ context (2M) ─────┴─ concat ─ 1×1 ─ LReLU ─ 1×1 ─ (μ ‖ σ)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tape, Var};
use crate::entropy::{gaussian_bits, quantize, FactorizedPrior, QuantMode, LEAKY_SLOPE, SIGMA_MIN};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvTranspose2d, MaskType, MaskedConv2d, MaskedConvSpec};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntropyConfig {
    /// Channels of `y` (M).
    pub latent_channels: usize,
    /// Channels of `z` (N).
    pub hyper_channels: usize,
}

impl EntropyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.hyper_channels == 0 || self.latent_channels % 2 != 0 {
            return Err(Error::InvalidSpec(format!("bad entropy model widths {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ContextHyperprior {
    pub cfg: EntropyConfig,
    h_a: [Conv2d; 3],
    h_s1: ConvTranspose2d,
    h_s2: ConvTranspose2d,
    h_s3: Conv2d,
    pub context: MaskedConv2d,
    ep1: Conv2d,
    ep2: Conv2d,
    pub prior: FactorizedPrior,
}

/// Everything the rate path produces for one batch.
#[derive(Clone, Copy, Debug)]
pub struct RateOutput {
    pub y_hat: Var,
    pub z_hat: Var,
    /// Per-element bits of `y_hat`.
    pub y_bits: Var,
    /// Per-element bits of `z_hat`.
    pub z_bits: Var,
    pub mu: Var,
    pub sigma: Var,
}

impl RateOutput {
    pub fn total_bits<T: Scalar>(&self, tape: &mut Tape<T>) -> Var {
        let y = tape.sum(self.y_bits);
        let z = tape.sum(self.z_bits);
        tape.add(y, z)
    }
}

impl ContextHyperprior {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, cfg: EntropyConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (m, n) = (cfg.latent_channels, cfg.hyper_channels);
        let h_a = [
            Conv2d::new(ps, &format!("{name}.h_a0"), m, n, 3, 1, rng),
            Conv2d::new(ps, &format!("{name}.h_a1"), n, n, 5, 2, rng),
            Conv2d::new(ps, &format!("{name}.h_a2"), n, n, 5, 2, rng),
        ];
        let h_s1 = ConvTranspose2d::new(ps, &format!("{name}.h_s0"), n, m, 5, 2, rng);
        let h_s2 = ConvTranspose2d::new(ps, &format!("{name}.h_s1"), m, 3 * m / 2, 5, 2, rng);
        let h_s3 = Conv2d::new(ps, &format!("{name}.h_s2"), 3 * m / 2, 2 * m, 3, 1, rng);
        let spec = MaskedConvSpec { mask_type: MaskType::A, kernel: 5, in_channels: m, out_channels: 2 * m };
        let context = MaskedConv2d::new(ps, &format!("{name}.context"), spec, rng)?;
        let ep1 = Conv2d::new(ps, &format!("{name}.ep0"), 4 * m, 3 * m, 1, 1, rng);
        let ep2 = Conv2d::new(ps, &format!("{name}.ep1"), 3 * m, 2 * m, 1, 1, rng);
        let prior = FactorizedPrior::new(ps, &format!("{name}.prior"), n, rng);
        Ok(ContextHyperprior { cfg, h_a, h_s1, h_s2, h_s3, context, ep1, ep2, prior })
    }

    pub fn hyper_analyze<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, y: Var) -> Var {
        let mut h = self.h_a[0].forward(tape, ps, y);
        for conv in &self.h_a[1..] {
            h = tape.leaky_relu(h, LEAKY_SLOPE);
            h = conv.forward(tape, ps, h);
        }
        h
    }

    /// Hyper features cropped to the latent's spatial size `(h, w)`.
    pub fn hyper_synthesize<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, z_hat: Var, h: usize, w: usize) -> Var {
        let x = self.h_s1.forward(tape, ps, z_hat);
        let x = tape.leaky_relu(x, LEAKY_SLOPE);
        let x = self.h_s2.forward(tape, ps, x);
        let x = tape.leaky_relu(x, LEAKY_SLOPE);
        let x = self.h_s3.forward(tape, ps, x);
        tape.crop(x, h, w)
    }

    pub fn context_features<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, y_hat: Var) -> Var {
        self.context.forward(tape, ps, y_hat)
    }

    /// `(mu, sigma)` from hyper and context features with matching shapes.
    pub fn entropy_parameters<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, hyper: Var, ctx: Var) -> Result<(Var, Var)> {
        let m = self.cfg.latent_channels;
        let (hs, cs) = (tape.shape(hyper).to_vec(), tape.shape(ctx).to_vec());
        if hs != cs || hs.len() != 4 || hs[1] != 2 * m {
            return Err(Error::InvalidShape(format!("entropy parameters: hyper {hs:?} vs context {cs:?}")));
        }
        let x = tape.concat_channels(&[hyper, ctx]);
        let x = self.ep1.forward(tape, ps, x);
        let x = tape.leaky_relu(x, LEAKY_SLOPE);
        let x = self.ep2.forward(tape, ps, x);
        let mu = tape.slice_channels(x, 0, m);
        let s = tape.slice_channels(x, m, m);
        let sigma = tape.lower_bound(s, SIGMA_MIN);
        Ok((mu, sigma))
    }

    /// Full rate path. `Noise` mode is the training proxy; `Round` gives the
    /// estimate that the coded bitstream should match.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, y: Var, mode: QuantMode, rng: &mut impl Rng) -> Result<RateOutput> {
        let shape = tape.shape(y).to_vec();
        if shape.len() != 4 || shape[1] != self.cfg.latent_channels {
            return Err(Error::InvalidShape(format!("latent {shape:?} vs {} channels", self.cfg.latent_channels)));
        }
        let (h, w) = (shape[2], shape[3]);
        let z = self.hyper_analyze(tape, ps, y);
        let z_hat = quantize(tape, z, mode, rng);
        let z_bits = self.prior.bits(tape, ps, z_hat);
        let hyper = self.hyper_synthesize(tape, ps, z_hat, h, w);
        let y_hat = quantize(tape, y, mode, rng);
        let ctx = self.context_features(tape, ps, y_hat);
        let (mu, sigma) = self.entropy_parameters(tape, ps, hyper, ctx)?;
        let y_bits = gaussian_bits(tape, y_hat, mu, sigma);
        Ok(RateOutput { y_hat, z_hat, y_bits, z_bits, mu, sigma })
    }

    /// Position-wise evaluator used by sequential coding.
    pub fn pointwise<'a, T: Scalar>(&'a self, ps: &'a ParamStore<T>) -> PointwiseParams<'a, T> {
        let m = self.cfg.latent_channels;
        PointwiseParams { model: self, ps, ctx: vec![T::zero(); 2 * m], hidden: vec![T::zero(); 3 * m], out: vec![T::zero(); 2 * m] }
    }
}

/// Computes `(mu, sigma)` at one latent position from the hyper features and
/// the already-decoded part of `ŷ`. Encoder and decoder run this same code,
/// so both sides derive bit-identical parameters.
pub struct PointwiseParams<'a, T> {
    model: &'a ContextHyperprior,
    ps: &'a ParamStore<T>,
    ctx: Vec<T>,
    hidden: Vec<T>,
    out: Vec<T>,
}

impl<T: Scalar> PointwiseParams<'_, T> {
    /// `hyper`: one sample `[2M, h, w]`; `y_hat`: one sample `[M, h, w]`,
    /// valid at every position before `(i, j)` in raster order.
    #[allow(clippy::too_many_arguments)]
    pub fn at(&mut self, hyper: &[T], y_hat: &[T], h: usize, w: usize, i: usize, j: usize, mu: &mut [T], sigma: &mut [T]) {
        let m = self.model.cfg.latent_channels;
        let plane = h * w;
        let pos = i * w + j;
        self.model.context.forward_at(self.ps, y_hat, h, w, i, j, &mut self.ctx);

        let w1 = self.ps.get(self.model.ep1.weight).data();
        let b1 = self.ps.get(self.model.ep1.bias).data();
        let cin = 4 * m;
        for (o, acc) in self.hidden.iter_mut().enumerate() {
            let row = &w1[o * cin..(o + 1) * cin];
            let mut s = T::zero();
            for c in 0..2 * m {
                s += row[c] * hyper[c * plane + pos];
            }
            for c in 0..2 * m {
                s += row[2 * m + c] * self.ctx[c];
            }
            let v = s + b1[o];
            *acc = if v >= T::zero() { v } else { T::of(LEAKY_SLOPE) * v };
        }

        let w2 = self.ps.get(self.model.ep2.weight).data();
        let b2 = self.ps.get(self.model.ep2.bias).data();
        let hid = 3 * m;
        for (o, acc) in self.out.iter_mut().enumerate() {
            let row = &w2[o * hid..(o + 1) * hid];
            let mut s = T::zero();
            for (wv, hv) in row.iter().zip(&self.hidden) {
                s += *wv * *hv;
            }
            *acc = s + b2[o];
        }
        mu.copy_from_slice(&self.out[..m]);
        for (dst, &v) in sigma.iter_mut().zip(&self.out[m..]) {
            *dst = v.max(T::of(SIGMA_MIN));
        }
    }
}
