//! Discretized Gaussian likelihoods and their bit cost.

use std::f64::consts::{LN_2, SQRT_2};

use crate::autograd::{CustomOp, Tape, Var};
use crate::entropy::{LIKELIHOOD_MIN, SIGMA_MIN};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Per-element mean and scale of the conditional Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams<T> {
    pub mu: Tensor<T>,
    pub sigma: Tensor<T>,
}

impl<T: Scalar> GaussianParams<T> {
    /// Builds parameters, flooring every scale at [`SIGMA_MIN`].
    pub fn new(mu: Tensor<T>, sigma: Tensor<T>) -> Result<Self> {
        if mu.shape() != sigma.shape() {
            return Err(Error::InvalidShape(format!("mu {:?} vs sigma {:?}", mu.shape(), sigma.shape())));
        }
        let floor = T::of(SIGMA_MIN);
        let sigma = sigma.map(|s| if s.is_nan() { floor } else { s.max(floor) });
        Ok(GaussianParams { mu, sigma })
    }
}

/// Probability mass of the unit interval around `y` under N(mu, sigma²).
pub fn interval_likelihood(y: f64, mu: f64, sigma: f64) -> f64 {
    let v = (y - mu).abs();
    std_normal_cdf((0.5 - v) / sigma) - std_normal_cdf((-0.5 - v) / sigma)
}

/// Bits for one symbol, with the likelihood floored at [`LIKELIHOOD_MIN`].
pub fn symbol_bits(y: f64, mu: f64, sigma: f64) -> f64 {
    -interval_likelihood(y, mu, sigma).max(LIKELIHOOD_MIN).log2()
}

/// Total estimated bits of `y_hat` under the conditional Gaussian.
pub fn gaussian_rate<T: Scalar>(y_hat: &Tensor<T>, params: &GaussianParams<T>) -> f64 {
    assert_eq!(y_hat.shape(), params.mu.shape(), "rate: shape mismatch");
    y_hat
        .data()
        .iter()
        .zip(params.mu.data())
        .zip(params.sigma.data())
        .map(|((&y, &m), &s)| symbol_bits(y.as_f64(), m.as_f64(), s.as_f64()))
        .sum()
}

/// Fused per-element bit cost `−log2 max(p, LIKELIHOOD_MIN)` with the
/// analytic adjoint w.r.t. `y`, `mu` and `sigma`. Below the floor the
/// gradient still flows, since it always points toward a larger `p`.
struct GaussianBitsOp;

impl<T: Scalar> CustomOp<T> for GaussianBitsOp {
    fn name(&self) -> &'static str {
        "gaussian_bits"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (y, mu, sigma) = (inputs[0], inputs[1], inputs[2]);
        let n = y.len();
        let mut gy = Vec::with_capacity(n);
        let mut gmu = Vec::with_capacity(n);
        let mut gsig = Vec::with_capacity(n);
        for k in 0..n {
            let d = y.data()[k].as_f64() - mu.data()[k].as_f64();
            let s = sigma.data()[k].as_f64();
            let v = d.abs();
            let a = (0.5 - v) / s;
            let b = (-0.5 - v) / s;
            let p = std_normal_cdf(a) - std_normal_cdf(b);
            let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
            let dbits_dp = -1.0 / (p.max(LIKELIHOOD_MIN) * LN_2);
            let dp_dv = (pb - pa) / s;
            let dp_ds = (b * pb - a * pa) / s;
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            let g = grad.data()[k].as_f64() * dbits_dp;
            gy.push(T::of(g * dp_dv * sign));
            gmu.push(T::of(-g * dp_dv * sign));
            gsig.push(T::of(g * dp_ds));
        }
        let shape = y.shape();
        vec![
            Some(Tensor::from_vec(shape, gy).unwrap()),
            Some(Tensor::from_vec(shape, gmu).unwrap()),
            Some(Tensor::from_vec(shape, gsig).unwrap()),
        ]
    }
}

/// Per-element bits of `y` under N(`mu`, `sigma`²) as a differentiable node.
pub fn gaussian_bits<T: Scalar>(tape: &mut Tape<T>, y: Var, mu: Var, sigma: Var) -> Var {
    let (yv, mv, sv) = (tape.value(y), tape.value(mu), tape.value(sigma));
    assert_eq!(yv.shape(), mv.shape());
    assert_eq!(yv.shape(), sv.shape());
    let data = yv
        .data()
        .iter()
        .zip(mv.data())
        .zip(sv.data())
        .map(|((&y, &m), &s)| T::of(symbol_bits(y.as_f64(), m.as_f64(), s.as_f64())))
        .collect();
    let out = Tensor::from_vec(yv.shape(), data).unwrap();
    tape.custom(Box::new(GaussianBitsOp), &[y, mu, sigma], out)
}
