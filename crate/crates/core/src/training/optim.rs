//! Adam with global-norm clipping, and the step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `initial` before iteration `decay_iter` (1-based), `final_` from then on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub initial: f64,
    pub final_: f64,
    pub decay_iter: u64,
}

impl StepSchedule {
    pub fn lr(&self, iter: u64) -> f64 {
        if iter < self.decay_iter {
            self.initial
        } else {
            self.final_
        }
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    step: u64,
    state: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(clip_norm: Option<f64>) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm, step: 0, state: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update and returns the gradient norm before clipping.
    /// Frozen parameters are skipped.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) -> f64 {
        let norm = grads.iter().flat_map(|(_, g)| g.data()).map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        for (id, g) in grads {
            if store.is_frozen(*id) {
                continue;
            }
            let i = id.index();
            if self.state.len() <= i {
                self.state.resize_with(i + 1, || None);
            }
            let st = self.state[i].get_or_insert_with(|| Moments { m: vec![0.0; g.len()], v: vec![0.0; g.len()] });
            let p = store.get_mut(*id);
            for (k, (w, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gk = gv.as_f64() * scale;
                st.m[k] = self.beta1 * st.m[k] + (1.0 - self.beta1) * gk;
                st.v[k] = self.beta2 * st.v[k] + (1.0 - self.beta2) * gk * gk;
                let update = lr * (st.m[k] / c1) / ((st.v[k] / c2).sqrt() + self.eps);
                *w = T::of(w.as_f64() - update);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_switches_at_the_decay_iteration() {
        let s = StepSchedule { initial: 5e-5, final_: 5e-6, decay_iter: 900 };
        assert_eq!(s.lr(1), 5e-5);
        assert_eq!(s.lr(899), 5e-5);
        assert_eq!(s.lr(900), 5e-6);
        assert_eq!(s.lr(5000), 5e-6);
    }

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.add("w", Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let g = Tensor::from_vec(&[3], vec![0.5, -2.0, 0.0]).unwrap();
        Adam::new(None).step(&mut ps, &[(id, g)], 0.1);
        // bias-corrected first step is lr·sign(g)
        let w = ps.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] - 2.1).abs() < 1e-6 && w[2] == 3.0);
    }

    #[test]
    fn clipping_reports_the_raw_norm_and_respects_frozen() {
        let mut ps = ParamStore::<f64>::new();
        let a = ps.add("a", Tensor::zeros(&[2]));
        let b = ps.add("b", Tensor::zeros(&[1]));
        ps.set_frozen_prefix("b", true);
        let grads = vec![(a, Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap()), (b, Tensor::full(&[1], 1.0))];
        let norm = Adam::new(Some(1.0)).step(&mut ps, &grads, 0.01);
        assert!((norm - 26f64.sqrt()).abs() < 1e-12);
        assert_eq!(ps.get(b).data(), &[0.0]);
        assert!(ps.get(a).data().iter().all(|&v| v < 0.0));
    }
}
