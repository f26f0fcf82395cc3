use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantMode {
    /// Additive U(−0.5, 0.5) noise; gradient is the identity.
    Noise,
    /// Round to nearest; gradient passes straight through.
    Round,
}

/// Quantization proxy on the tape. Both modes are `y + c` with a constant
/// `c`, so the backward pass sees the identity.
pub fn quantize<T: Scalar>(tape: &mut Tape<T>, y: Var, mode: QuantMode, rng: &mut impl Rng) -> Var {
    let offset = match mode {
        QuantMode::Noise => Tensor::from_fn(tape.shape(y), |_| T::of(rng.gen_range(-0.5..0.5))),
        QuantMode::Round => tape.value(y).map(|v| v.round() - v),
    };
    let c = tape.constant(offset);
    tape.add(y, c)
}

/// Integer symbols of a rounded latent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedLatent {
    pub shape: Vec<usize>,
    pub symbols: Vec<i32>,
}

impl QuantizedLatent {
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(&self.shape, self.symbols.iter().map(|&s| T::of(s as f64)).collect()).expect("shape matches symbols")
    }
}

/// Rounds every element to the nearest integer. Fails on non-finite input.
pub fn round_latent<T: Scalar>(y: &Tensor<T>) -> Result<QuantizedLatent> {
    let symbols = y
        .data()
        .iter()
        .map(|v| {
            let r = v.as_f64().round();
            if r.is_finite() && r.abs() < i32::MAX as f64 {
                Ok(r as i32)
            } else {
                Err(Error::InvalidShape(format!("cannot quantize latent value {v}")))
            }
        })
        .collect::<Result<_>>()?;
    Ok(QuantizedLatent { shape: y.shape().to_vec(), symbols })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::symbol_bits;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rounding_boundaries() {
        let q = round_latent(&Tensor::from_vec(&[4], vec![0.49f64, 0.51, -0.49, -0.51]).unwrap()).unwrap();
        assert_eq!(q.symbols, vec![0, 1, 0, -1]);
        assert_eq!(q.to_tensor::<f32>().data(), &[0.0, 1.0, 0.0, -1.0]);
        assert!(round_latent(&Tensor::from_vec(&[1], vec![f64::NAN]).unwrap()).is_err());
    }

    #[test]
    fn both_modes_stay_within_half_and_pass_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = Tensor::from_fn(&[1, 3, 8, 8], |i| (i as f64 * 0.77).sin() * 4.0);
        for mode in [QuantMode::Noise, QuantMode::Round] {
            let mut t = Tape::new();
            let v = t.variable(y.clone());
            let q = quantize(&mut t, v, mode, &mut rng);
            assert!(t.value(q).max_abs_diff(&y) <= 0.5);
            let s = t.sum(q);
            let g = t.backward(s);
            assert!(g.wrt(v).unwrap().data().iter().all(|&d| d == 1.0));
        }
    }

    #[test]
    fn noisy_rate_tracks_rounded_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let (mut noisy, mut rounded) = (0.0, 0.0);
        for _ in 0..n {
            let y: f64 = StandardNormal.sample(&mut rng);
            let u: f64 = rng.gen_range(-0.5..0.5);
            noisy += symbol_bits(y + u, 0.0, 1.0);
            rounded += symbol_bits(y.round(), 0.0, 1.0);
        }
        let rel = (noisy - rounded).abs() / rounded;
        assert!(rel < 0.05, "noisy {noisy} rounded {rounded}");
    }
}
