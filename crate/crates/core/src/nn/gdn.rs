//! Generalized divisive normalization and its inverse.
//!
//!   GDN:   y_i = x_i / sqrt(beta_i + sum_j gamma_ij * x_j^2)
//!   IGDN:  y_i = x_i * sqrt(beta_i + sum_j gamma_ij * x_j^2)
//!
//! Trainable values are stored reparameterized so that `beta >= BETA_MIN`
//! and `gamma >= 0` hold for any raw parameter value:
//!
//!   beta  = max(beta_raw,  sqrt(BETA_MIN + PEDESTAL))^2 - PEDESTAL
//!   gamma = max(gamma_raw, sqrt(PEDESTAL))^2           - PEDESTAL

use crate::autograd::{ConvGeom, ParamId, ParamStore, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BETA_MIN: f64 = 1e-6;
const PEDESTAL: f64 = 1.0 / 68_719_476_736.0; // 2^-36
const GAMMA_INIT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GdnMode {
    Forward,
    Inverse,
}

/// Effective (already reparameterized) normalization parameters.
#[derive(Clone, Debug)]
pub struct GdnParams<T> {
    pub beta: Vec<T>,
    /// Row-major `C × C`; `gamma[i * C + j]` couples input `j` into output `i`.
    pub gamma: Vec<T>,
    pub mode: GdnMode,
}

impl<T: Scalar> GdnParams<T> {
    pub fn channels(&self) -> usize {
        self.beta.len()
    }
}

/// Reference evaluation on an `[n, c, h, w]` tensor. Beta is floored at
/// [`BETA_MIN`] and gamma at zero.
pub fn gdn_forward<T: Scalar>(x: &Tensor<T>, p: &GdnParams<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert_eq!(c, p.channels(), "gdn channel mismatch");
    assert_eq!(p.gamma.len(), c * c);
    let plane = h * w;
    let mut out = Tensor::zeros(x.shape());
    for s in 0..n {
        for pos in 0..plane {
            for i in 0..c {
                let mut norm = p.beta[i].max(T::of(BETA_MIN));
                for j in 0..c {
                    let xj = x.data()[(s * c + j) * plane + pos];
                    norm += p.gamma[i * c + j].max(T::zero()) * xj * xj;
                }
                let xi = x.data()[(s * c + i) * plane + pos];
                out.data_mut()[(s * c + i) * plane + pos] = match p.mode {
                    GdnMode::Forward => xi / norm.sqrt(),
                    GdnMode::Inverse => xi * norm.sqrt(),
                };
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Gdn {
    beta: ParamId,
    gamma: ParamId,
    pub mode: GdnMode,
    pub channels: usize,
}

impl Gdn {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, channels: usize, mode: GdnMode) -> Self {
        let beta = ps.add(format!("{name}.beta"), Tensor::full(&[channels], T::of((1.0 + PEDESTAL).sqrt())));
        let off = T::of(PEDESTAL.sqrt());
        let diag = T::of((GAMMA_INIT + PEDESTAL).sqrt());
        let gamma =
            ps.add(format!("{name}.gamma"), Tensor::from_fn(&[channels, channels], |k| if k % (channels + 1) == 0 { diag } else { off }));
        Gdn { beta, gamma, mode, channels }
    }

    fn effective_vars<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>) -> (Var, Var) {
        let c = self.channels;
        let b = tape.param(ps, self.beta);
        let b = tape.lower_bound(b, (BETA_MIN + PEDESTAL).sqrt());
        let b = tape.square(b);
        let beta = tape.add_scalar(b, -PEDESTAL);
        let g = tape.param(ps, self.gamma);
        let g = tape.lower_bound(g, PEDESTAL.sqrt());
        let g = tape.square(g);
        let g = tape.add_scalar(g, -PEDESTAL);
        let gamma = tape.reshape(g, &[c, c, 1, 1]);
        (beta, gamma)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> Var {
        let (beta, gamma) = self.effective_vars(tape, ps);
        let sq = tape.square(x);
        let norm = tape.conv2d(sq, gamma, Some(beta), ConvGeom { kernel: 1, stride: 1, pad: 0 });
        let norm = tape.sqrt(norm);
        match self.mode {
            GdnMode::Forward => tape.div(x, norm),
            GdnMode::Inverse => tape.mul(x, norm),
        }
    }

    /// The effective parameters currently stored in `ps`.
    pub fn params<T: Scalar>(&self, ps: &ParamStore<T>) -> GdnParams<T> {
        let mut tape = Tape::inference();
        let (beta, gamma) = self.effective_vars(&mut tape, ps);
        GdnParams { beta: tape.value(beta).data().to_vec(), gamma: tape.value(gamma).data().to_vec(), mode: self.mode }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_reference(x: &[f64], beta: &[f64], gamma: &[f64], inverse: bool) -> Vec<f64> {
        let c = beta.len();
        (0..c)
            .map(|i| {
                let mut norm = beta[i];
                for j in 0..c {
                    norm += gamma[i * c + j] * x[j] * x[j];
                }
                if inverse {
                    x[i] * norm.sqrt()
                } else {
                    x[i] / norm.sqrt()
                }
            })
            .collect()
    }

    #[test]
    fn identity_parameters_pass_input_through() {
        let x = Tensor::from_fn(&[1, 3, 2, 2], |i| i as f64 - 5.0);
        let p = GdnParams { beta: vec![1.0; 3], gamma: vec![0.0; 9], mode: GdnMode::Forward };
        assert_eq!(gdn_forward(&x, &p), x);
    }

    #[test]
    fn scalar_closed_form() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0f64]).unwrap();
        let p = GdnParams { beta: vec![0.0f64], gamma: vec![1.0], mode: GdnMode::Forward };
        let y = gdn_forward(&x, &p).item();
        // 2 / sqrt(4 + 1e-6)
        assert!((y - 1.0).abs() < 1e-6, "{y}");
    }

    #[test]
    fn inverse_mode_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = 4;
        let beta: Vec<f64> = (0..c).map(|_| rng.gen_range(0.2..1.5)).collect();
        let gamma: Vec<f64> = (0..c * c).map(|_| rng.gen_range(0.0..0.5)).collect();
        let x = Tensor::from_fn(&[2, c, 3, 3], |_| rng.gen_range(-2.0..2.0));
        let p = GdnParams { beta: beta.clone(), gamma: gamma.clone(), mode: GdnMode::Inverse };
        let y = gdn_forward(&x, &p);
        for s in 0..2 {
            for pos in 0..9 {
                let xv: Vec<f64> = (0..c).map(|ch| x.data()[(s * c + ch) * 9 + pos]).collect();
                let want = scalar_reference(&xv, &beta, &gamma, true);
                for ch in 0..c {
                    assert!((y.data()[(s * c + ch) * 9 + pos] - want[ch]).abs() < 1e-12);
                }
            }
        }
        // Forward followed by inverse is not the identity in general.
        let fwd = gdn_forward(&x, &GdnParams { mode: GdnMode::Forward, ..p.clone() });
        let back = gdn_forward(&fwd, &p);
        assert!(back.max_abs_diff(&x) > 1e-3);
    }

    #[test]
    fn layer_matches_reference_and_initial_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamStore::<f64>::new();
        let gdn = Gdn::new(&mut ps, "gdn", 3, GdnMode::Forward);
        let p = gdn.params(&ps);
        assert!(p.beta.iter().all(|&b| (b - 1.0).abs() < 1e-9));
        assert!((p.gamma[0] - 0.1).abs() < 1e-9 && p.gamma[1].abs() < 1e-9);
        let x = Tensor::from_fn(&[2, 3, 4, 4], |_| rng.gen_range(-3.0..3.0));
        let mut t = Tape::inference();
        let xv = t.constant(x.clone());
        let y = gdn.forward(&mut t, &ps, xv);
        assert!(t.value(y).max_abs_diff(&gdn_forward(&x, &p)) < 1e-12);
    }

    #[test]
    fn reparameterization_enforces_floors() {
        let mut ps = ParamStore::<f64>::new();
        let gdn = Gdn::new(&mut ps, "g", 2, GdnMode::Inverse);
        for t in [gdn.beta, gdn.gamma] {
            ps.get_mut(t).data_mut().iter_mut().for_each(|v| *v = -4.0);
        }
        let p = gdn.params(&ps);
        assert!(p.beta.iter().all(|&b| b >= BETA_MIN * 0.999));
        assert!(p.gamma.iter().all(|&g| g >= 0.0));
    }

    #[test]
    fn output_magnitude_bounded_by_beta_min() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let c = 3;
            let p = GdnParams::<f64> {
                beta: (0..c).map(|_| rng.gen_range(0.0..1.0)).collect(),
                gamma: (0..c * c).map(|_| rng.gen_range(0.0..1.0)).collect(),
                mode: GdnMode::Forward,
            };
            let x = Tensor::from_fn(&[1, c, 2, 2], |_| rng.gen_range(-10.0..10.0));
            let y = gdn_forward(&x, &p);
            for (a, b) in y.data().iter().zip(x.data()) {
                assert!(a.abs() <= b.abs() / BETA_MIN.sqrt() + 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mode in [GdnMode::Forward, GdnMode::Inverse] {
            let mut ps = ParamStore::<f64>::new();
            let gdn = Gdn::new(&mut ps, "g", 2, mode);
            // Move raw values off the reparameterization kinks.
            ps.get_mut(gdn.beta).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
            ps.get_mut(gdn.gamma).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.1..0.8));
            let x = Tensor::from_fn(&[2, 2, 8, 8], |_| rng.gen_range(-1.0..1.0));
            let err = gradcheck::check_with_params(&ps, &[x], |t, ps, v| {
                let y = gdn.forward(t, ps, v[0]);
                let q = t.square(y);
                t.sum(q)
            });
            assert!(err < 1e-3, "{mode:?}: {err}");
        }
    }
}
