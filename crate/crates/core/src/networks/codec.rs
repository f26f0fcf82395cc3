//! Shared forward, compress and decompress paths.

use rand::Rng;

use crate::autograd::{crop, ParamStore, Tape, Var};
use crate::bitcodec::{decode_latents, encode_latents, Bitstream, Header, ModelKind};
use crate::entropy::{ContextHyperprior, QuantMode, RateOutput};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Packed-RAW (or model input) dims must be multiples of this.
pub const PAD_MULTIPLE: usize = 16;

/// An analysis/synthesis pair with a learned rate model.
pub trait Codec<T: Scalar> {
    fn kind(&self) -> ModelKind;
    fn store(&self) -> &ParamStore<T>;
    fn store_mut(&mut self) -> &mut ParamStore<T>;
    /// `None` when the system has no rate path.
    fn entropy(&self) -> Option<&ContextHyperprior>;
    fn input_channels(&self) -> usize;
    /// Output pixels per input pixel along each axis.
    fn output_scale(&self) -> usize;
    /// Input pixels per latent position along each axis.
    fn latent_stride(&self) -> usize;

    /// Stage run before the analysis transform.
    fn preprocess(&self, _tape: &mut Tape<T>, x: Var) -> Result<Var> {
        Ok(x)
    }

    /// Latent and the encoder attention sites.
    fn analyze(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Vec<Var>)>;

    /// Reconstruction and the decoder attention sites. Sees only `y_hat`.
    fn synthesize(&self, tape: &mut Tape<T>, y_hat: Var) -> Result<(Var, Vec<Var>)>;
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub output: Var,
    /// Output of [`Codec::preprocess`]; the input itself for most systems.
    pub intermediate: Var,
    pub latent: Var,
    pub rate: Option<RateOutput>,
    /// Total estimated bits over the batch (a scalar).
    pub bits: Var,
    pub encoder_sites: Vec<Var>,
    pub decoder_sites: Vec<Var>,
}

fn check_input(shape: &[usize], channels: usize) -> Result<()> {
    if shape.len() != 4 || shape[1] != channels {
        return Err(Error::InvalidShape(format!("expected [n, {channels}, h, w] input, got {shape:?}")));
    }
    let (h, w) = (shape[2], shape[3]);
    if h == 0 || w == 0 || h % PAD_MULTIPLE != 0 || w % PAD_MULTIPLE != 0 {
        return Err(Error::PadRequired { height: h, width: w, multiple: PAD_MULTIPLE });
    }
    Ok(())
}

/// Full training/evaluation pass. `Noise` mode uses the additive-noise
/// proxy; `Round` matches what the bitstream carries.
pub fn forward<T: Scalar, C: Codec<T> + ?Sized>(
    model: &C,
    tape: &mut Tape<T>,
    x: Var,
    mode: QuantMode,
    rng: &mut impl Rng,
) -> Result<ForwardOutput> {
    check_input(tape.shape(x), model.input_channels())?;
    let intermediate = model.preprocess(tape, x)?;
    let (latent, encoder_sites) = model.analyze(tape, intermediate)?;
    let (y_hat, rate, bits) = match model.entropy() {
        Some(em) => {
            let r = em.forward(tape, model.store(), latent, mode, rng)?;
            let bits = r.total_bits(tape);
            (r.y_hat, Some(r), bits)
        }
        None => (latent, None, tape.constant(Tensor::scalar(T::zero()))),
    };
    let (output, decoder_sites) = model.synthesize(tape, y_hat)?;
    Ok(ForwardOutput { output, intermediate, latent, rate, bits, encoder_sites, decoder_sites })
}

/// Round-mode reconstruction clamped to `[0, 1]`.
pub fn infer<T: Scalar, C: Codec<T> + ?Sized>(model: &C, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::inference();
    let xv = tape.constant(x.clone());
    let out = forward(model, &mut tape, xv, QuantMode::Round, &mut rand::rngs::mock::StepRng::new(0, 0))?;
    Ok(clamp_unit(tape.value(out.output)))
}

fn clamp_unit<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| v.max(T::zero()).min(T::one()))
}

fn fold(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let r = i.rem_euclid(period);
    (if r < n as isize { r } else { period - r }) as usize
}

/// Reflect-pads `[n, c, h, w]` at the bottom and right up to the next
/// multiple of `multiple`.
pub fn pad_reflect<T: Scalar>(x: &Tensor<T>, multiple: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    if (ph, pw) == (h, w) {
        return x.clone();
    }
    let src = x.data();
    let mut out = Tensor::zeros(&[n, c, ph, pw]);
    for (p, plane) in out.data_mut().chunks_mut(ph * pw).enumerate() {
        let base = p * h * w;
        for i in 0..ph {
            let si = fold(i as isize, h);
            for j in 0..pw {
                plane[i * pw + j] = src[base + si * w + fold(j as isize, w)];
            }
        }
    }
    out
}

fn entropy_of<T: Scalar, C: Codec<T> + ?Sized>(model: &C) -> Result<&ContextHyperprior> {
    model.entropy().ok_or_else(|| Error::InvalidSpec(format!("{:?} has no entropy model to code with", model.kind())))
}

/// Codes one image `[1, C, H, W]`. Dims that are not multiples of
/// [`PAD_MULTIPLE`] are reflect-padded; the header keeps the unpadded
/// output size so [`decompress`] can crop.
pub fn compress<T: Scalar, C: Codec<T> + ?Sized>(model: &C, x: &Tensor<T>, quality: u8) -> Result<Bitstream> {
    let em = entropy_of(model)?;
    let shape = x.shape();
    if shape.len() != 4 || shape[0] != 1 {
        return Err(Error::InvalidShape(format!("compress takes one image, got {shape:?}")));
    }
    let (h, w) = (shape[2], shape[3]);
    let padded = pad_reflect(x, PAD_MULTIPLE);
    let mut tape = Tape::inference();
    let xv = tape.constant(padded);
    check_input(tape.shape(xv), model.input_channels())?;
    let pre = model.preprocess(&mut tape, xv)?;
    let (y, _) = model.analyze(&mut tape, pre)?;
    let coded = encode_latents(em, model.store(), tape.value(y))?;
    let s = model.output_scale();
    let header = Header {
        model_kind: model.kind(),
        quality,
        k: em.cfg.latent_channels as u16,
        height: (h * s) as u32,
        width: (w * s) as u32,
    };
    Ok(Bitstream { header, hyper: coded.hyper, latent: coded.latent })
}

/// Decodes a bitstream produced by [`compress`] with the same weights.
pub fn decompress<T: Scalar, C: Codec<T> + ?Sized>(model: &C, bs: &Bitstream) -> Result<Tensor<T>> {
    let em = entropy_of(model)?;
    let hd = &bs.header;
    if hd.model_kind != model.kind() {
        return Err(Error::ModelMismatch(format!("stream is {:?}, model is {:?}", hd.model_kind, model.kind())));
    }
    if hd.k as usize != em.cfg.latent_channels {
        return Err(Error::ModelMismatch(format!("stream has K={}, model has K={}", hd.k, em.cfg.latent_channels)));
    }
    let s = model.output_scale();
    let (oh, ow) = (hd.height as usize, hd.width as usize);
    if oh == 0 || ow == 0 || oh % s != 0 || ow % s != 0 {
        return Err(Error::Format(format!("image size {oh}x{ow} is not a multiple of the output scale {s}")));
    }
    let pad = |d: usize| (d / s).div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE / model.latent_stride();
    let (lh, lw) = (pad(oh), pad(ow));
    let (y_hat, _) = decode_latents(em, model.store(), &bs.hyper, &bs.latent, lh, lw)?;
    let mut tape = Tape::inference();
    let yv = tape.constant(y_hat);
    let (out, _) = model.synthesize(&mut tape, yv)?;
    Ok(clamp_unit(&crop(tape.value(out), oh, ow)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_padding_mirrors_without_repeating_the_edge() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let p = pad_reflect(&x, 8);
        assert_eq!(p.shape(), &[1, 1, 8, 8]);
        assert_eq!(&p.data()[..8], &[1.0, 2.0, 3.0, 2.0, 1.0, 2.0, 3.0, 2.0]);
        assert!(p.data().chunks(8).all(|row| row == &p.data()[..8]));
    }

    #[test]
    fn aligned_input_is_untouched() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 16, 32], |i| i as f32);
        assert_eq!(pad_reflect(&x, 16), x);
    }
}
