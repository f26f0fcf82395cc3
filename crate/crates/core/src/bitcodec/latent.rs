//! Coding of `(ŷ, ẑ)` under a [`ContextHyperprior`].
//!
//! `ẑ` is coded channel by channel with the learned factorized tables. `ŷ`
//! is coded in raster order over positions, all channels of a position
//! together, with Gaussian tables derived from the hyper features and the
//! already-coded neighbors.

use crate::autograd::{ParamStore, Tape};
use crate::bitcodec::cdf::{gaussian_to_cdf, quantize_pmf, CdfTable, SUPPORT};
use crate::bitcodec::range::{RangeDecoder, RangeEncoder};
use crate::entropy::{ContextHyperprior, QuantMode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct CodedLatents<T> {
    pub hyper: Vec<u8>,
    pub latent: Vec<u8>,
    pub y_hat: Tensor<T>,
    pub z_hat: Tensor<T>,
}

/// One table per hyper-latent channel.
pub fn hyper_tables<T: Scalar>(em: &ContextHyperprior, ps: &ParamStore<T>) -> Vec<CdfTable> {
    let (lo, hi) = SUPPORT;
    em.prior
        .pmf(ps, lo, hi)
        .iter()
        .map(|pmf| CdfTable::from_frequencies(lo, &quantize_pmf(pmf)).expect("valid quantized table"))
        .collect()
}

fn hyper_dims(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(4), w.div_ceil(4))
}

fn to_symbol<T: Scalar>(v: T) -> Result<i32> {
    let r = v.as_f64().round();
    if !r.is_finite() || r.abs() >= i32::MAX as f64 {
        return Err(Error::InvalidShape(format!("latent value {v} cannot be coded")));
    }
    Ok(r as i32)
}

fn hyper_features<T: Scalar>(em: &ContextHyperprior, ps: &ParamStore<T>, z_hat: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let mut tape = Tape::inference();
    let z = tape.constant(z_hat.clone());
    let f = em.hyper_synthesize(&mut tape, ps, z, h, w);
    tape.value(f).clone()
}

/// Visits latent positions in decode order, handing out the Gaussian table
/// for every channel. `code` writes or reads the symbol into `y_hat`.
fn sweep<T: Scalar>(
    em: &ContextHyperprior,
    ps: &ParamStore<T>,
    hyper: &Tensor<T>,
    y_hat: &mut [T],
    h: usize,
    w: usize,
    mut code: impl FnMut(usize, &CdfTable, &mut [T]) -> Result<()>,
) -> Result<()> {
    let m = em.cfg.latent_channels;
    let (lo, hi) = SUPPORT;
    let mut pw = em.pointwise(ps);
    let (mut mu, mut sigma) = (vec![T::zero(); m], vec![T::zero(); m]);
    for i in 0..h {
        for j in 0..w {
            pw.at(hyper.data(), y_hat, h, w, i, j, &mut mu, &mut sigma);
            for c in 0..m {
                let table = gaussian_to_cdf(mu[c].as_f64(), sigma[c].as_f64(), lo, hi);
                code((c * h + i) * w + j, &table, y_hat)?;
            }
        }
    }
    Ok(())
}

/// Quantizes and codes a latent `y` of shape `[1, M, h, w]`.
pub fn encode_latents<T: Scalar>(em: &ContextHyperprior, ps: &ParamStore<T>, y: &Tensor<T>) -> Result<CodedLatents<T>> {
    let shape = y.shape();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != em.cfg.latent_channels {
        return Err(Error::InvalidShape(format!("expected [1, {}, h, w] latent, got {shape:?}", em.cfg.latent_channels)));
    }
    let (h, w) = (shape[2], shape[3]);

    let mut tape = Tape::inference();
    let yv = tape.constant(y.clone());
    let z = em.hyper_analyze(&mut tape, ps, yv);
    let z_hat = tape.value(z).map(|v| v.round());
    let z_syms = z_hat.data().iter().map(|&v| to_symbol(v)).collect::<Result<Vec<_>>>()?;
    let y_syms = y.data().iter().map(|&v| to_symbol(v)).collect::<Result<Vec<_>>>()?;

    let tables = hyper_tables(em, ps);
    let plane = z_hat.len() / em.cfg.hyper_channels;
    let mut enc = RangeEncoder::new();
    for (k, &s) in z_syms.iter().enumerate() {
        enc.encode_symbol(s, &tables[k / plane]);
    }
    let hyper_bytes = enc.finish();

    let feats = hyper_features(em, ps, &z_hat, h, w);
    let mut y_hat = vec![T::zero(); y.len()];
    let mut enc = RangeEncoder::new();
    sweep(em, ps, &feats, &mut y_hat, h, w, |idx, table, y_hat| {
        enc.encode_symbol(y_syms[idx], table);
        y_hat[idx] = T::of(y_syms[idx] as f64);
        Ok(())
    })?;
    let latent = enc.finish();
    Ok(CodedLatents { hyper: hyper_bytes, latent, y_hat: Tensor::from_vec(shape, y_hat)?, z_hat })
}

/// Inverse of [`encode_latents`] for a latent of spatial size `(h, w)`.
pub fn decode_latents<T: Scalar>(
    em: &ContextHyperprior,
    ps: &ParamStore<T>,
    hyper: &[u8],
    latent: &[u8],
    h: usize,
    w: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (m, n) = (em.cfg.latent_channels, em.cfg.hyper_channels);
    let (zh, zw) = hyper_dims(h, w);
    let tables = hyper_tables(em, ps);
    let mut dec = RangeDecoder::new(hyper)?;
    let mut z = Vec::with_capacity(n * zh * zw);
    for k in 0..n * zh * zw {
        z.push(T::of(dec.decode_symbol(&tables[k / (zh * zw)])? as f64));
    }
    let z_hat = Tensor::from_vec(&[1, n, zh, zw], z)?;

    let feats = hyper_features(em, ps, &z_hat, h, w);
    let mut y_hat = vec![T::zero(); m * h * w];
    let mut dec = RangeDecoder::new(latent)?;
    sweep(em, ps, &feats, &mut y_hat, h, w, |idx, table, y_hat| {
        y_hat[idx] = T::of(dec.decode_symbol(table)? as f64);
        Ok(())
    })?;
    Ok((Tensor::from_vec(&[1, m, h, w], y_hat)?, z_hat))
}

/// Rate estimate in bits for the rounded latent, from the batched
/// (non-sequential) forward pass.
pub fn estimated_bits<T: Scalar>(em: &ContextHyperprior, ps: &ParamStore<T>, y: &Tensor<T>) -> Result<f64> {
    let mut tape = Tape::inference();
    let yv = tape.constant(y.clone());
    let out = em.forward(&mut tape, ps, yv, QuantMode::Round, &mut rand::rngs::mock::StepRng::new(0, 0))?;
    let total = out.total_bits(&mut tape);
    Ok(tape.value(total).item().as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::EntropyConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(m: usize, n: usize, seed: u64) -> (ParamStore<f64>, ContextHyperprior) {
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = ContextHyperprior::new(&mut ps, "em", EntropyConfig { latent_channels: m, hyper_channels: n }, &mut rng).unwrap();
        (ps, e)
    }

    #[test]
    fn latents_round_trip_exactly() {
        let (ps, em) = model(4, 4, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (h, w, scale) in [(1, 1, 1.0), (4, 4, 3.0), (5, 7, 20.0), (3, 2, 300.0)] {
            let y = Tensor::from_fn(&[1, 4, h, w], |_| rng.gen_range(-scale..scale));
            let coded = encode_latents(&em, &ps, &y).unwrap();
            assert!(coded.y_hat.max_abs_diff(&y) <= 0.5);
            let (y_hat, z_hat) = decode_latents::<f64>(&em, &ps, &coded.hyper, &coded.latent, h, w).unwrap();
            assert_eq!(y_hat, coded.y_hat);
            assert_eq!(z_hat, coded.z_hat);
        }
    }

    #[test]
    fn coded_size_tracks_estimate() {
        let (ps, em) = model(8, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = Tensor::from_fn(&[1, 8, 8, 8], |_| rng.gen_range(-6.0..6.0));
        let coded = encode_latents(&em, &ps, &y).unwrap();
        let est = estimated_bits(&em, &ps, &y).unwrap();
        let actual = 8.0 * (coded.hyper.len() + coded.latent.len()) as f64;
        assert!((actual - est).abs() <= 0.02 * est + 64.0 * 8.0, "estimate {est} actual {actual}");
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let (ps, em) = model(4, 4, 4);
        let y = Tensor::from_fn(&[1, 4, 4, 4], |i| ((i * 7919) % 13) as f64 - 6.0);
        let coded = encode_latents(&em, &ps, &y).unwrap();
        let cut = &coded.latent[..coded.latent.len() / 2];
        assert!(matches!(decode_latents::<f64>(&em, &ps, &coded.hyper, cut, 4, 4), Err(Error::Decode { .. })));
    }
}
