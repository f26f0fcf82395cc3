//! Attention transfer from the two teachers to the student.
//!
//! A site's attention map is the channel sum of its activation. Each pair
//! contributes the mean squared difference of the L2-normalized student and
//! teacher maps, weighted by `α0·γ^(k²)` at epoch `k`.

use serde::{Deserialize, Serialize};

use crate::autograd::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Maps with a smaller L2 norm contribute nothing.
pub const ZERO_NORM: f64 = 1e-12;

/// Channel sum of `[C, H, W]` or `[N, C, H, W]`, giving `[H, W]` or
/// `[N, 1, H, W]`. `abs_mode` sums magnitudes instead.
pub fn attention_map<T: Scalar>(a: &Tensor<T>, abs_mode: bool) -> Tensor<T> {
    let (n, c, h, w) = match *a.shape() {
        [c, h, w] => (1, c, h, w),
        [n, c, h, w] => (n, c, h, w),
        ref s => panic!("attention map of rank-{} tensor", s.len()),
    };
    let plane = h * w;
    let src = a.data();
    let mut m = vec![T::zero(); n * plane];
    for s in 0..n {
        let dst = &mut m[s * plane..(s + 1) * plane];
        for ch in 0..c {
            let base = (s * c + ch) * plane;
            for (d, &v) in dst.iter_mut().zip(&src[base..base + plane]) {
                *d += if abs_mode { v.abs() } else { v };
            }
        }
    }
    let shape: &[usize] = if a.ndim() == 3 { &[h, w] } else { &[n, 1, h, w] };
    Tensor::from_vec(shape, m).expect("map shape")
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `(1/N)·‖ms/‖ms‖ − mt/‖mt‖‖²` for one pair of maps of `N` elements.
pub fn attention_loss_term(ms: &[f64], mt: &[f64]) -> f64 {
    assert_eq!(ms.len(), mt.len(), "attention maps differ in size");
    let (ns, nt) = (norm(ms), norm(mt));
    if ns < ZERO_NORM || nt < ZERO_NORM {
        return 0.0;
    }
    ms.iter().zip(mt).map(|(s, t)| (s / ns - t / nt).powi(2)).sum::<f64>() / ms.len() as f64
}

/// `α0·γ^(k²)`.
pub fn decay_weight(alpha0: f64, gamma: f64, k: u64) -> f64 {
    let k = k as f64;
    alpha0 * gamma.powf(k * k)
}

/// `Σ αj·term(MSj, MTj)` over `(student map, teacher map, αj)` triples.
pub fn total_attention_loss(pairs: &[(&[f64], &[f64], f64)]) -> f64 {
    pairs.iter().map(|&(s, t, a)| a * attention_loss_term(s, t)).sum()
}

fn batch_term<T: Scalar>(ms: &Tensor<T>, mt: &[f64], n: usize) -> f64 {
    let plane = ms.len() / n;
    ms.data()
        .chunks(plane)
        .zip(mt.chunks(plane))
        .map(|(s, t)| attention_loss_term(&s.iter().map(|v| v.as_f64()).collect::<Vec<_>>(), t))
        .sum::<f64>()
        / n as f64
}

/// Value of [`attention_loss`] off the tape, for monitoring pairs that are
/// not being trained.
pub fn attention_loss_value<T: Scalar>(student: &Tensor<T>, teacher: &Tensor<T>, abs_mode: bool) -> Result<f64> {
    let (ss, ts) = (student.shape(), teacher.shape());
    if ss.len() != 4 || ts.len() != 4 || ss[0] != ts[0] || ss[2..] != ts[2..] {
        return Err(Error::InvalidShape(format!("attention pair {ss:?} vs {ts:?}")));
    }
    let mt: Vec<f64> = attention_map(teacher, abs_mode).data().iter().map(|v| v.as_f64()).collect();
    Ok(batch_term(&attention_map(student, abs_mode), &mt, ss[0]))
}

/// Batch-mean attention term with the teacher maps held constant.
struct AttentionTermOp {
    teacher: Vec<f64>,
    samples: usize,
}

impl<T: Scalar> CustomOp<T> for AttentionTermOp {
    fn name(&self) -> &'static str {
        "attention_term"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let student = inputs[0];
        let plane = student.len() / self.samples;
        let g = grad.item().as_f64();
        let mut out = Vec::with_capacity(student.len());
        for (s, t) in student.data().chunks(plane).zip(self.teacher.chunks(plane)) {
            let s: Vec<f64> = s.iter().map(|v| v.as_f64()).collect();
            let (ns, nt) = (norm(&s), norm(t));
            if ns < ZERO_NORM || nt < ZERO_NORM {
                out.extend(std::iter::repeat(T::zero()).take(plane));
                continue;
            }
            // d/ds of |u - v|²/N with u = s/|s| is 2/(N|s|)·(d - u·<u, d>), d = u - v.
            let u: Vec<f64> = s.iter().map(|x| x / ns).collect();
            let d: Vec<f64> = u.iter().zip(t).map(|(a, b)| a - b / nt).collect();
            let ud: f64 = u.iter().zip(&d).map(|(a, b)| a * b).sum();
            let scale = g * 2.0 / (plane as f64 * ns * self.samples as f64);
            out.extend(u.iter().zip(&d).map(|(a, b)| T::of(scale * (b - a * ud))));
        }
        vec![Some(Tensor::from_vec(student.shape(), out).expect("grad shape"))]
    }
}

/// Attention loss between a student activation `[n, C, H, W]` on the tape and
/// a teacher activation with matching `n, H, W`, averaged over the batch.
/// Only the student receives gradient.
pub fn attention_loss<T: Scalar>(tape: &mut Tape<T>, student: Var, teacher: &Tensor<T>, abs_mode: bool) -> Result<Var> {
    let ss = tape.shape(student).to_vec();
    let ts = teacher.shape();
    if ss.len() != 4 || ts.len() != 4 || ss[0] != ts[0] || ss[2..] != ts[2..] {
        return Err(Error::InvalidShape(format!("attention pair {ss:?} vs {ts:?}")));
    }
    let a = if abs_mode { tape.abs(student) } else { student };
    let ms = tape.sum_channels(a);
    let mt: Vec<f64> = attention_map(teacher, abs_mode).data().iter().map(|v| v.as_f64()).collect();
    let n = ss[0];
    let value = batch_term(tape.value(ms), &mt, n);
    Ok(tape.custom(Box::new(AttentionTermOp { teacher: mt, samples: n }), &[ms], Tensor::scalar(T::of(value))))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherKind {
    Compression,
    Isp,
}

/// Weight schedule and switches for one teacher's pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdGroup {
    pub alpha0: f64,
    pub gamma: f64,
    #[serde(default)]
    pub abs_mode: bool,
    #[serde(default = "enabled")]
    pub enabled: bool,
}

fn enabled() -> bool {
    true
}

impl KdGroup {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) || !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("KD group needs alpha0 > 0 and 0 < gamma < 1, got {self:?}")));
        }
        Ok(())
    }
}

/// Encoder pairs learn from the compression teacher, decoder pairs from the
/// ISP teacher.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub encoder: KdGroup,
    pub decoder: KdGroup,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            encoder: KdGroup { alpha0: 1e6, gamma: 0.99999, abs_mode: false, enabled: true },
            decoder: KdGroup { alpha0: 1e5, gamma: 0.99999, abs_mode: false, enabled: true },
        }
    }
}

impl KdConfig {
    pub fn disabled() -> Self {
        let mut c = Self::default();
        c.encoder.enabled = false;
        c.decoder.enabled = false;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()
    }

    pub fn group(&self, teacher: TeacherKind) -> &KdGroup {
        match teacher {
            TeacherKind::Compression => &self.encoder,
            TeacherKind::Isp => &self.decoder,
        }
    }

    /// Enabled pairs for `encoder_sites` student/compression-teacher sites and
    /// `decoder_sites` student/ISP-teacher sites, paired by index.
    pub fn pairs(&self, encoder_sites: usize, decoder_sites: usize) -> Vec<AttentionPairSpec> {
        let mut out = Vec::new();
        for (teacher, count) in [(TeacherKind::Compression, encoder_sites), (TeacherKind::Isp, decoder_sites)] {
            let g = self.group(teacher);
            if g.enabled {
                out.extend((0..count).map(|j| AttentionPairSpec {
                    student_site: j,
                    teacher_site: j,
                    teacher,
                    alpha0: g.alpha0,
                    gamma: g.gamma,
                    abs_mode: g.abs_mode,
                }));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionPairSpec {
    pub student_site: usize,
    pub teacher_site: usize,
    pub teacher: TeacherKind,
    pub alpha0: f64,
    pub gamma: f64,
    pub abs_mode: bool,
}

impl AttentionPairSpec {
    pub fn weight(&self, epoch: u64) -> f64 {
        decay_weight(self.alpha0, self.gamma, epoch)
    }
}

/// Student activations on the tape and the matching teacher activations.
pub struct SiteSet<'a, T> {
    pub student_encoder: &'a [Var],
    pub student_decoder: &'a [Var],
    pub teacher_encoder: &'a [Tensor<T>],
    pub teacher_decoder: &'a [Tensor<T>],
}

/// `Σ αj(k)·L_j` over every enabled pair; a constant zero when none is.
pub fn kd_loss<T: Scalar>(tape: &mut Tape<T>, cfg: &KdConfig, sites: &SiteSet<'_, T>, epoch: u64) -> Result<Var> {
    if sites.student_encoder.len() != sites.teacher_encoder.len() || sites.student_decoder.len() != sites.teacher_decoder.len() {
        return Err(Error::InvalidShape(format!(
            "site counts differ: encoder {}/{}, decoder {}/{}",
            sites.student_encoder.len(),
            sites.teacher_encoder.len(),
            sites.student_decoder.len(),
            sites.teacher_decoder.len()
        )));
    }
    let mut total = tape.constant(Tensor::scalar(T::zero()));
    for p in cfg.pairs(sites.student_encoder.len(), sites.student_decoder.len()) {
        let (s, t) = match p.teacher {
            TeacherKind::Compression => (sites.student_encoder[p.student_site], &sites.teacher_encoder[p.teacher_site]),
            TeacherKind::Isp => (sites.student_decoder[p.student_site], &sites.teacher_decoder[p.teacher_site]),
        };
        let term = attention_loss(tape, s, t, p.abs_mode)?;
        let weighted = tape.mul_scalar(term, p.weight(epoch));
        total = tape.add(total, weighted);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_activation_gives_zero_map() {
        let m = attention_map(&Tensor::<f64>::zeros(&[3, 4, 5]), false);
        assert_eq!(m.shape(), &[4, 5]);
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn signed_and_abs_maps_differ_on_cancelling_channels() {
        let c1 = random(&[1, 6, 7], 1);
        let mut data = c1.data().to_vec();
        data.extend(c1.data().iter().map(|v| -v));
        let a = Tensor::from_vec(&[2, 6, 7], data).unwrap();
        assert!(attention_map(&a, false).data().iter().all(|&v| v == 0.0));
        for (m, c) in attention_map(&a, true).data().iter().zip(c1.data()) {
            assert_eq!(*m, 2.0 * c.abs());
        }
    }

    #[test]
    fn map_matches_explicit_loop() {
        let a = random(&[64, 16, 16], 2);
        let m = attention_map(&a, false);
        for i in 0..16 {
            for j in 0..16 {
                let mut s = 0.0;
                for c in 0..64 {
                    s += a.data()[(c * 16 + i) * 16 + j];
                }
                assert!((m.data()[i * 16 + j] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn opposite_maps_cost_four_over_n() {
        let m = random(&[5, 9], 3);
        let neg: Vec<f64> = m.data().iter().map(|v| -v).collect();
        let l = attention_loss_term(m.data(), &neg);
        assert!((l - 4.0 / 45.0).abs() < 1e-14);
        assert_eq!(attention_loss_term(m.data(), m.data()), 0.0);
    }

    #[test]
    fn dead_maps_contribute_nothing() {
        assert_eq!(attention_loss_term(&[0.0; 4], &[1.0, 2.0, 3.0, 4.0]), 0.0);
        assert_eq!(attention_loss_term(&[1.0, 2.0], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn decay_matches_high_precision_value() {
        assert_eq!(decay_weight(1e6, 0.99999, 0), 1e6);
        assert_eq!(decay_weight(1e5, 0.99999, 0), 1e5);
        // exp(10000·ln 0.99999) by series: ln(1-x) = -(x + x²/2 + x³/3 + ...)
        let x: f64 = 1e-5;
        let ln = -(1..8).map(|n| x.powi(n) / n as f64).sum::<f64>();
        let oracle = 1e6 * (1e4 * ln).exp();
        let w = decay_weight(1e6, 0.99999, 100);
        assert!((w - 904837.0).abs() <= 0.5, "{w}");
        assert!((w - oracle).abs() < 1e-6 * oracle);
        assert_eq!(w.to_bits(), decay_weight(1e6, 0.99999, 100).to_bits());
    }

    #[test]
    fn weighted_sum() {
        assert_eq!(total_attention_loss(&[]), 0.0);
        let s = [1.0, 0.0];
        let t = [0.0, 1.0];
        // unit vectors at distance sqrt 2: term = 2 / 2 = 1
        assert_eq!(total_attention_loss(&[(&s, &t, 2.0)]), 2.0);
        let u = [1.0, -1.0];
        let v = [-1.0, 1.0];
        // term = 4/2 = 2, times 0.5
        assert!((total_attention_loss(&[(&u, &v, 0.5)]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn default_pairing_and_ablations() {
        let cfg = KdConfig::default();
        let pairs = cfg.pairs(4, 5);
        assert_eq!(pairs.len(), 9);
        assert_eq!(pairs.iter().filter(|p| p.teacher == TeacherKind::Compression).count(), 4);
        assert!(pairs.iter().all(|p| p.alpha0 == if p.teacher == TeacherKind::Compression { 1e6 } else { 1e5 }));
        assert!(pairs.iter().all(|p| p.gamma == 0.99999 && !p.abs_mode));

        let mut enc_only = cfg;
        enc_only.decoder.enabled = false;
        assert!(enc_only.pairs(4, 5).iter().all(|p| p.teacher == TeacherKind::Compression));
        let mut dec_only = cfg;
        dec_only.encoder.enabled = false;
        assert_eq!(dec_only.pairs(4, 5).len(), 5);
        assert!(KdConfig::disabled().pairs(4, 5).is_empty());
    }

    #[test]
    fn tape_loss_matches_pure_function() {
        let s = random(&[2, 3, 4, 5], 4);
        let t = random(&[2, 6, 4, 5], 5);
        for abs_mode in [false, true] {
            let mut tape = Tape::new();
            let sv = tape.variable(s.clone());
            let l = attention_loss(&mut tape, sv, &t, abs_mode).unwrap();
            let ms = attention_map(&s, abs_mode);
            let mt = attention_map(&t, abs_mode);
            let want = (attention_loss_term(&ms.data()[..20], &mt.data()[..20])
                + attention_loss_term(&ms.data()[20..], &mt.data()[20..]))
                / 2.0;
            assert!((tape.value(l).item() - want).abs() < 1e-14);
        }
    }

    #[test]
    fn student_gradient_matches_finite_differences() {
        let t = random(&[2, 4, 3, 3], 6);
        for abs_mode in [false, true] {
            let err = gradcheck::check(&[random(&[2, 3, 3, 3], 7)], |tape, v| attention_loss(tape, v[0], &t, abs_mode).unwrap());
            assert!(err < 1e-3, "abs {abs_mode}: {err}");
        }
    }

    #[test]
    fn teacher_gets_no_gradient() {
        let mut tape = Tape::new();
        let s = tape.variable(random(&[1, 2, 3, 3], 8));
        let t = tape.variable(random(&[1, 2, 3, 3], 9));
        let tv = tape.value(t).clone();
        let l = attention_loss(&mut tape, s, &tv, false).unwrap();
        let g = tape.backward(l);
        assert!(g.wrt(s).is_some());
        assert!(g.wrt(t).is_none());
    }

    #[test]
    fn off_tape_value_matches_the_op() {
        let s = random(&[3, 4, 5, 5], 14);
        let t = random(&[3, 2, 5, 5], 15);
        for abs in [false, true] {
            let mut tape = Tape::new();
            let sv = tape.variable(s.clone());
            let l = attention_loss(&mut tape, sv, &t, abs).unwrap();
            assert_eq!(tape.value(l).item(), attention_loss_value(&s, &t, abs).unwrap());
        }
        assert!(attention_loss_value(&s, &random(&[2, 2, 5, 5], 16), false).is_err());
    }

    #[test]
    fn kd_loss_weights_each_pair() {
        let enc_s = random(&[1, 3, 4, 4], 10);
        let enc_t = random(&[1, 5, 4, 4], 11);
        let dec_s = random(&[1, 3, 8, 8], 12);
        let dec_t = random(&[1, 3, 8, 8], 13);
        let cfg = KdConfig::default();
        let mut tape = Tape::new();
        let es = tape.variable(enc_s.clone());
        let ds = tape.variable(dec_s.clone());
        let sites = SiteSet {
            student_encoder: &[es],
            student_decoder: &[ds],
            teacher_encoder: &[enc_t.clone()],
            teacher_decoder: &[dec_t.clone()],
        };
        let l = kd_loss(&mut tape, &cfg, &sites, 3).unwrap();
        let term = |a: &Tensor<f64>, b: &Tensor<f64>| attention_loss_term(attention_map(a, false).data(), attention_map(b, false).data());
        let want = decay_weight(1e6, 0.99999, 3) * term(&enc_s, &enc_t) + decay_weight(1e5, 0.99999, 3) * term(&dec_s, &dec_t);
        assert!((tape.value(l).item() - want).abs() < 1e-9 * want);
        let l0 = kd_loss(&mut tape, &KdConfig::disabled(), &sites, 3).unwrap();
        assert_eq!(tape.value(l0).item(), 0.0);
    }

    proptest! {
        #[test]
        fn positive_scale_is_free(m in proptest::collection::vec(-10.0f64..10.0, 1..64), c in 1e-3f64..1e3) {
            prop_assume!(norm(&m) > 1e-6);
            let scaled: Vec<f64> = m.iter().map(|v| v * c).collect();
            prop_assert!(attention_loss_term(&m, &scaled) < 1e-12);
        }

        #[test]
        fn term_is_bounded(pair in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..64)) {
            let (s, t): (Vec<f64>, Vec<f64>) = pair.into_iter().unzip();
            let l = attention_loss_term(&s, &t);
            prop_assert!(l >= 0.0 && l <= 4.0 / s.len() as f64 + 1e-12);
        }

        #[test]
        fn decay_is_strictly_decreasing(alpha0 in 1.0f64..1e6, gamma in 0.5f64..0.99999, k in 0u64..200) {
            // past the smallest positive double both sides are zero
            prop_assume!(decay_weight(alpha0, gamma, k + 1) > f64::MIN_POSITIVE);
            prop_assert!(decay_weight(alpha0, gamma, k + 1) < decay_weight(alpha0, gamma, k));
        }
    }
}
