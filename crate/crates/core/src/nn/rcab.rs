//! Residual channel attention blocks and groups.
//!
//! RCAB: `x + CA(conv(relu(conv(x))))`, where CA gates each channel with
//! `sigmoid(W2 relu(W1 avgpool(·)))`. RCAG: `x + conv(RCAB_n(...RCAB_1(x)))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Conv2d;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RcagConfig {
    pub num_blocks: usize,
    pub channels: usize,
    pub reduction: usize,
}

impl RcagConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::InvalidSpec("RCAG needs at least one block".into()));
        }
        if self.reduction == 0 || self.channels % self.reduction != 0 {
            return Err(Error::InvalidSpec(format!(
                "channels {} not divisible by reduction {}",
                self.channels, self.reduction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Rcab {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub squeeze: Conv2d,
    pub excite: Conv2d,
}

impl Rcab {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, channels: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        Rcab {
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), channels, channels, 3, 1, rng),
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), channels, channels, 3, 1, rng),
            squeeze: Conv2d::new(ps, &format!("{name}.ca.squeeze"), channels, channels / reduction, 1, 1, rng),
            excite: Conv2d::new(ps, &format!("{name}.ca.excite"), channels / reduction, channels, 1, 1, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> Var {
        let h = self.conv1.forward(tape, ps, x);
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, ps, h);
        let pooled = tape.global_avg_pool(h);
        let s = self.squeeze.forward(tape, ps, pooled);
        let s = tape.relu(s);
        let s = self.excite.forward(tape, ps, s);
        let gate = tape.sigmoid(s);
        let h = tape.mul(h, gate);
        tape.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct Rcag {
    pub cfg: RcagConfig,
    pub blocks: Vec<Rcab>,
    pub tail: Conv2d,
}

impl Rcag {
    pub fn new<T: Scalar>(ps: &mut ParamStore<T>, name: &str, cfg: RcagConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.num_blocks).map(|i| Rcab::new(ps, &format!("{name}.rcab{i}"), cfg.channels, cfg.reduction, rng)).collect();
        let tail = Conv2d::new(ps, &format!("{name}.tail"), cfg.channels, cfg.channels, 3, 1, rng);
        Ok(Rcag { cfg, blocks, tail })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, ps: &ParamStore<T>, x: Var) -> Result<Var> {
        let c = tape.shape(x)[1];
        if c != self.cfg.channels {
            return Err(Error::InvalidShape(format!("RCAG expects {} channels, got {c}", self.cfg.channels)));
        }
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(tape, ps, h);
        }
        let h = self.tail.forward(tape, ps, h);
        Ok(tape.add(x, h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn group(cfg: RcagConfig, seed: u64) -> (ParamStore<f64>, Rcag) {
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Rcag::new(&mut ps, "g", cfg, &mut rng).unwrap();
        (ps, g)
    }

    fn eval(ps: &ParamStore<f64>, g: &Rcag, x: &Tensor<f64>) -> Tensor<f64> {
        let mut t = Tape::inference();
        let xv = t.constant(x.clone());
        let y = g.forward(&mut t, ps, xv).unwrap();
        t.value(y).clone()
    }

    #[test]
    fn config_validation() {
        assert!(RcagConfig { num_blocks: 0, channels: 16, reduction: 4 }.validate().is_err());
        assert!(RcagConfig { num_blocks: 2, channels: 18, reduction: 4 }.validate().is_err());
        assert!(RcagConfig { num_blocks: 2, channels: 256, reduction: 16 }.validate().is_ok());
    }

    #[test]
    fn zero_branch_weights_leave_only_residual() {
        let cfg = RcagConfig { num_blocks: 2, channels: 4, reduction: 2 };
        let (mut ps, g) = group(cfg, 1);
        let convs = g.blocks.iter().flat_map(|b| [&b.conv1, &b.conv2]).chain([&g.tail]);
        for conv in convs {
            ps.get_mut(conv.weight).data_mut().fill(0.0);
            ps.get_mut(conv.bias).data_mut().fill(0.0);
        }
        let x = Tensor::from_fn(&[1, 4, 5, 3], |i| (i as f64).sin());
        let y = eval(&ps, &g, &x);
        assert!(y.max_abs_diff(&x) < 1e-12);
    }

    fn delta_chain(num_blocks: usize) -> Tensor<f64> {
        let cfg = RcagConfig { num_blocks, channels: 2, reduction: 1 };
        let (mut ps, g) = group(cfg, 2);
        for b in &g.blocks {
            ps.get_mut(b.excite.weight).data_mut().fill(0.0);
            ps.get_mut(b.excite.bias).data_mut().fill(100.0);
        }
        let convs = g.blocks.iter().flat_map(|b| [&b.conv1, &b.conv2]).chain([&g.tail]);
        for conv in convs {
            let w = ps.get_mut(conv.weight);
            w.data_mut().fill(0.0);
            // delta kernel: out channel c reads input channel c at the center tap
            for c in 0..2 {
                w.data_mut()[(c * 2 + c) * 9 + 4] = 1.0;
            }
            ps.get_mut(conv.bias).data_mut().fill(0.0);
        }
        let x = Tensor::from_vec(&[1, 2, 1, 1], vec![0.75, 2.0]).unwrap();
        eval(&ps, &g, &x)
    }

    #[test]
    fn delta_kernels_with_open_gate_compose_by_hand() {
        // One block: x + relu(x) = 2x for x > 0; delta tail keeps 2x; group adds x: 3x.
        assert_eq!(delta_chain(1).data(), &[2.25, 6.0]);
        // Two blocks: 2x -> 4x; group adds x: 5x.
        assert_eq!(delta_chain(2).data(), &[3.75, 10.0]);
    }

    #[test]
    fn shape_preserved_and_channel_mismatch_rejected() {
        let cfg = RcagConfig { num_blocks: 2, channels: 4, reduction: 2 };
        let (ps, g) = group(cfg, 3);
        for (h, w) in [(1, 1), (3, 7), (8, 8)] {
            let y = eval(&ps, &g, &Tensor::zeros(&[2, 4, h, w]));
            assert_eq!(y.shape(), &[2, 4, h, w]);
        }
        let mut t = Tape::inference();
        let x = t.constant(Tensor::zeros(&[1, 3, 2, 2]));
        assert!(matches!(g.forward(&mut t, &ps, x), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = RcagConfig { num_blocks: 2, channels: 2, reduction: 1 };
        let (ps, g) = group(cfg, 4);
        let x = Tensor::from_fn(&[1, 2, 8, 8], |i| ((i as f64) * 0.37).sin());
        let err = gradcheck::check_with_params(&ps, &[x], |t, ps, v| {
            let y = g.forward(t, ps, v[0]).unwrap();
            let q = t.square(y);
            t.sum(q)
        });
        assert!(err < 1e-3, "{err}");
    }
}
