//! Per-channel learned density for the hyper-latent.
//!
//! Each channel owns a small monotone network `f: R → R` whose sigmoid is a
//! CDF. Monotonicity comes from softplus-positive matrices and `tanh`
//! factors bounded below by −1.

use std::f64::consts::LN_2;

use rand::Rng;

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::entropy::LIKELIHOOD_MIN;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const FILTERS: [usize; 4] = [3, 3, 3, 3];
const INIT_SCALE: f64 = 10.0;

#[derive(Clone, Debug)]
struct Layer {
    matrix: ParamId,
    bias: ParamId,
    factor: Option<ParamId>,
}

#[derive(Clone, Debug)]
pub struct FactorizedPrior {
    pub channels: usize,
    layers: Vec<Layer>,
}

impl FactorizedPrior {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let dims: Vec<usize> = std::iter::once(1).chain(FILTERS).chain(std::iter::once(1)).collect();
        let scale = INIT_SCALE.powf(1.0 / (dims.len() - 1) as f64);
        let last = dims.len() - 2;
        let layers = (0..dims.len() - 1)
            .map(|i| {
                let (fin, fout) = (dims[i], dims[i + 1]);
                let init = (1.0 / scale / fout as f64).exp_m1().ln();
                let matrix = ps.add(format!("{name}.matrix{i}"), Tensor::full(&[channels, fout, fin], T::of(init)));
                let bias = ps.add_uniform(format!("{name}.bias{i}"), &[channels, fout, 1], 0.5, rng);
                let factor = (i < last).then(|| ps.add(format!("{name}.factor{i}"), Tensor::zeros(&[channels, fout, 1])));
                Layer { matrix, bias, factor }
            })
            .collect();
        FactorizedPrior { channels, layers }
    }

    /// CDF logits for `x: [C, 1, L]`.
    fn logits<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> Var {
        let mut h = x;
        for layer in &self.layers {
            let m = tape.param(ps, layer.matrix);
            let m = tape.softplus(m);
            h = tape.batch_matmul(m, h);
            let b = tape.param(ps, layer.bias);
            h = tape.add(h, b);
            if let Some(f) = layer.factor {
                let f = tape.param(ps, f);
                let f = tape.tanh(f);
                let th = tape.tanh(h);
                let ft = tape.mul(th, f);
                h = tape.add(h, ft);
            }
        }
        h
    }

    /// Per-element bits of `z: [n, C, h, w]`, same shape as `z`.
    pub fn bits<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, z: Var) -> Var {
        let shape = tape.shape(z).to_vec();
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        assert_eq!(c, self.channels, "factorized prior channel mismatch");
        let zc = tape.swap_leading(z);
        let x = tape.reshape(zc, &[c, 1, n * h * w]);
        let lo = tape.add_scalar(x, -0.5);
        let hi = tape.add_scalar(x, 0.5);
        let lower = self.logits(tape, ps, lo);
        let upper = self.logits(tape, ps, hi);
        // Evaluate on the side of the sigmoid where it is least saturated.
        let sign = tape.value(lower).zip_map(tape.value(upper), |a, b| {
            let s = a + b;
            if s > T::zero() {
                -T::one()
            } else if s < T::zero() {
                T::one()
            } else {
                T::zero()
            }
        });
        let sign = tape.constant(sign);
        let su = tape.mul(upper, sign);
        let sl = tape.mul(lower, sign);
        let pu = tape.sigmoid(su);
        let pl = tape.sigmoid(sl);
        let p = tape.sub(pu, pl);
        let p = tape.abs(p);
        let p = tape.lower_bound(p, LIKELIHOOD_MIN);
        let lp = tape.log(p);
        let bits = tape.mul_scalar(lp, -1.0 / LN_2);
        let bits = tape.reshape(bits, &[c, n, h, w]);
        tape.swap_leading(bits)
    }

    /// Learned CDF of every channel evaluated at `points`: `[C][points.len()]`.
    pub fn cdf<T: Scalar>(&self, ps: &ParamStore<T>, points: &[f64]) -> Vec<Vec<f64>> {
        let (c, l) = (self.channels, points.len());
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::from_fn(&[c, 1, l], |i| T::of(points[i % l])));
        let logits = self.logits(&mut tape, ps, x);
        let v = tape.value(logits).data();
        (0..c).map(|ch| v[ch * l..(ch + 1) * l].iter().map(|&t| sigmoid(t.as_f64())).collect()).collect()
    }

    /// Probability of every integer in `[lo, hi]` per channel; mass outside
    /// the range is folded into the two edge bins.
    pub fn pmf<T: Scalar>(&self, ps: &ParamStore<T>, lo: i32, hi: i32) -> Vec<Vec<f64>> {
        let edges: Vec<f64> = (lo..hi).map(|k| k as f64 + 0.5).collect();
        self.cdf(ps, &edges)
            .into_iter()
            .map(|cdf| {
                let mut prev = 0.0;
                let mut out: Vec<f64> = cdf
                    .iter()
                    .map(|&c| {
                        let p = (c - prev).max(0.0);
                        prev = prev.max(c);
                        p
                    })
                    .collect();
                out.push((1.0 - prev).max(0.0));
                out
            })
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
