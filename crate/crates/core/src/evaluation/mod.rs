//! PSNR and bpp, rate-distortion sweeps, plots and error maps.

mod error_map;
mod plot;
mod sweep;

pub use error_map::{error_map, ErrorMap, ERROR_FULL_SCALE};
pub use plot::{LinePlot, Series};
pub use sweep::{evaluate_model, rd_plot, rd_sweep, write_rd_csv, RdPoint, RdSweep, RD_CSV_HEADER};

use crate::autograd::Tape;
use crate::bitcodec::Bitstream;
use crate::entropy::QuantMode;
use crate::error::{Error, Result};
use crate::networks::{compress, decompress, forward, pad_reflect, Cascaded, Codec, PAD_MULTIPLE};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `−10·log10(MSE)` on `[0, 1]` data after clamping. Identical images give
/// `f64::INFINITY`.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidShape(format!("PSNR of {:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.len() == 0 {
        return Err(Error::InvalidShape("PSNR of empty images".into()));
    }
    let c = |v: T| v.as_f64().clamp(0.0, 1.0);
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (c(x) - c(y)).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Bits per pixel of the sRGB output: `8·bytes / (H·W)`.
pub fn bpp(bytes: usize, height: usize, width: usize) -> f64 {
    8.0 * bytes as f64 / (height * width) as f64
}

/// [`bpp`] of a serialized stream, header included.
pub fn stream_bpp(stream: &Bitstream, height: usize, width: usize) -> f64 {
    bpp(stream.byte_len(), height, width)
}

/// Compresses one `[1, C, H, W]` input and decodes it again.
pub fn round_trip<T: Scalar, C: Codec<T> + ?Sized>(model: &C, x: &Tensor<T>, quality: u8) -> Result<(Bitstream, Tensor<T>)> {
    let bs = compress(model, x, quality)?;
    let out = decompress(model, &Bitstream::deserialize(&bs.serialize())?)?;
    Ok((bs, out))
}

/// The entropy model's round-mode estimate of the bits for `x`, on the same
/// padded input that [`compress`] codes.
pub fn estimate_bits<T: Scalar, C: Codec<T> + ?Sized>(model: &C, x: &Tensor<T>) -> Result<f64> {
    let mut tape = Tape::inference();
    let xv = tape.constant(pad_reflect(x, PAD_MULTIPLE));
    let out = forward(model, &mut tape, xv, QuantMode::Round, &mut rand::rngs::mock::StepRng::new(0, 0))?;
    Ok(tape.value(out.bits).item().as_f64())
}

/// The cascade's ISP stage alone on one packed RAW image, clamped: the
/// ceiling any compression stage can reach.
pub fn isp_stage_output<T: Scalar>(model: &Cascaded<T>, raw: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::inference();
    let x = tape.constant(raw.clone());
    let out = model.isp_forward(&mut tape, x)?;
    Ok(tape.value(out).map(|v| v.max(T::zero()).min(T::one())))
}
