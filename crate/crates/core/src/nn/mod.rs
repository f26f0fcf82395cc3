//! Differentiable building blocks shared by every network.

mod gdn;
mod masked;
mod rcab;

pub use gdn::{gdn_forward, Gdn, GdnMode, GdnParams, BETA_MIN};
pub use masked::{MaskType, MaskedConv2d, MaskedConvSpec};
pub use rcab::{Rcab, Rcag, RcagConfig};

use rand::Rng;

use crate::autograd::{ConvGeom, ParamId, ParamStore, Tape, Var};
use crate::scalar::Scalar;

/// Same-padded convolution layer with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        let weight = ps.add_uniform(format!("{name}.weight"), &[out_channels, in_channels, kernel, kernel], bound, rng);
        let bias = ps.add_uniform(format!("{name}.bias"), &[out_channels], bound, rng);
        Conv2d { weight, bias, geom: ConvGeom { kernel, stride, pad: kernel / 2 }, in_channels, out_channels }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> Var {
        let w = tape.param(ps, self.weight);
        let b = tape.param(ps, self.bias);
        tape.conv2d(x, w, Some(b), self.geom)
    }
}

/// Transposed convolution; with stride `s` it upsamples exactly `s`×.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub output_padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvTranspose2d {
    pub fn new<T: Scalar>(
        ps: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((out_channels * kernel * kernel) as f64).sqrt();
        let weight = ps.add_uniform(format!("{name}.weight"), &[in_channels, out_channels, kernel, kernel], bound, rng);
        let bias = ps.add_uniform(format!("{name}.bias"), &[out_channels], bound, rng);
        ConvTranspose2d {
            weight,
            bias,
            geom: ConvGeom { kernel, stride, pad: kernel / 2 },
            output_padding: stride - 1,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> Var {
        let w = tape.param(ps, self.weight);
        let b = tape.param(ps, self.bias);
        tape.conv_transpose2d(x, w, Some(b), self.geom, self.output_padding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stride_two_layers_halve_and_double() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamStore::<f32>::new();
        let down = Conv2d::new(&mut ps, "d", 3, 4, 3, 2, &mut rng);
        let up = ConvTranspose2d::new(&mut ps, "u", 4, 2, 5, 2, &mut rng);
        let mut t = Tape::inference();
        let x = t.constant(Tensor::zeros(&[1, 3, 12, 10]));
        let y = down.forward(&mut t, &ps, x);
        assert_eq!(t.shape(y), &[1, 4, 6, 5]);
        let z = up.forward(&mut t, &ps, y);
        assert_eq!(t.shape(z), &[1, 2, 12, 10]);
    }
}
