//! Optimization loops for the five systems.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamId, Tape, Var};
use crate::data::{Batch, PatchSampler, RawImage, SrgbImage};
use crate::distillation::{attention_loss_value, kd_loss, SiteSet};
use crate::entropy::QuantMode;
use crate::error::{Error, Result};
use crate::networks::{
    forward, load_checkpoint, save_checkpoint, AnyModel, Codec, CompStage, CompTeacher, IspTeacher, ModelSpec, System,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::{rd_loss_terms, Adam, LogRow, LossLog, RdLossBreakdown, RdTerms, StepSchedule, TrainConfig};

/// Frozen teachers guiding the RBN.
#[derive(Clone, Copy)]
pub struct Teachers<'a, T> {
    pub comp: &'a CompTeacher<T>,
    pub isp: &'a IspTeacher<T>,
}

pub struct TrainContext<'a, T> {
    pub data: &'a [(RawImage<T>, SrgbImage<T>)],
    /// Required for RBN training with KD; without KD they are only used to
    /// log the attention terms.
    pub teachers: Option<Teachers<'a, T>>,
    /// Loss logs, checkpoints and failure snapshots go here when set.
    pub out_dir: Option<&'a Path>,
}

#[derive(Clone, Debug)]
pub struct PhaseLog {
    pub name: &'static str,
    pub log: LossLog,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub phases: Vec<PhaseLog>,
}

impl TrainReport {
    /// Log of the last phase run.
    pub fn last(&self) -> &LossLog {
        &self.phases.last().expect("at least one phase").log
    }

    pub fn phase(&self, name: &str) -> Option<&LossLog> {
        self.phases.iter().find(|p| p.name == name).map(|p| &p.log)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PhaseKind {
    /// The system's own objective; the compression stage for the cascade.
    Main,
    CascadeIsp,
    CascadeFinetune,
}

struct PhasePlan {
    name: &'static str,
    kind: PhaseKind,
    iters: u64,
    batch: usize,
    schedule: StepSchedule,
}

struct StepOut {
    terms: RdTerms,
    enc_monitor: f64,
    dec_monitor: f64,
}

/// Loads the compression and ISP teachers named in the config.
pub fn load_teachers<T: Scalar>(cfg: &TrainConfig) -> Result<Option<(CompTeacher<T>, IspTeacher<T>)>> {
    let (Some(cp), Some(ip)) = (&cfg.teachers.comp, &cfg.teachers.isp) else {
        return Ok(None);
    };
    let comp = match load_checkpoint::<T>(cp)?.1 {
        AnyModel::CompTeacher(m) => m,
        _ => return Err(Error::ModelMismatch(format!("{} is not a compression teacher", cp.display()))),
    };
    let isp = match load_checkpoint::<T>(ip)?.1 {
        AnyModel::IspTeacher(m) => m,
        _ => return Err(Error::ModelMismatch(format!("{} is not an ISP teacher", ip.display()))),
    };
    Ok(Some((comp, isp)))
}

fn zero<T: Scalar>(tape: &mut Tape<T>) -> Var {
    tape.constant(Tensor::scalar(T::zero()))
}

/// sRGB pixels in a batch.
fn srgb_pixels<T: Scalar>(b: &Batch<T>) -> usize {
    let (n, _, h, w) = b.srgb.dims4();
    n * h * w
}

/// Plain `λ = 1` L2 objective with no rate or attention term.
fn distortion_only<T: Scalar>(tape: &mut Tape<T>, output: Var, target: Var) -> Result<RdTerms> {
    let (bits, at) = (zero(tape), zero(tape));
    rd_loss_terms(tape, output, target, bits, 1, 1.0, at)
}

fn rbn_attention<T: Scalar>(
    cfg: &TrainConfig,
    tape: &mut Tape<T>,
    student_enc: &[Var],
    student_dec: &[Var],
    teachers: Option<Teachers<'_, T>>,
    batch: &Batch<T>,
    epoch: u64,
) -> Result<(Var, f64, f64)> {
    let Some(t) = teachers else {
        if cfg.kd_active() {
            return Err(Error::Config("RBN training with KD needs both teachers".into()));
        }
        return Ok((zero(tape), 0.0, 0.0));
    };
    let mut tt = Tape::inference();
    let raw = tt.constant(batch.raw.clone());
    let (_, enc) = t.comp.analyze(&mut tt, raw)?;
    let isp_in = if t.isp.input_channels() == 3 { tt.constant(batch.srgb.clone()) } else { raw };
    let isp = t.isp.forward(&mut tt, isp_in)?;
    let teacher_enc: Vec<Tensor<T>> = enc.iter().map(|&v| tt.value(v).clone()).collect();
    let teacher_dec: Vec<Tensor<T>> = isp.decoder_sites.iter().map(|&v| tt.value(v).clone()).collect();

    let monitor = |students: &[Var], teachers: &[Tensor<T>], abs: bool| -> Result<f64> {
        students.iter().zip(teachers).map(|(&s, t)| attention_loss_value(tape.value(s), t, abs)).sum()
    };
    let enc_monitor = monitor(student_enc, &teacher_enc, cfg.kd.encoder.abs_mode)?;
    let dec_monitor = monitor(student_dec, &teacher_dec, cfg.kd.decoder.abs_mode)?;
    let at = if cfg.kd_active() {
        let sites = SiteSet {
            student_encoder: student_enc,
            student_decoder: student_dec,
            teacher_encoder: &teacher_enc,
            teacher_decoder: &teacher_dec,
        };
        kd_loss(tape, &cfg.kd, &sites, epoch)?
    } else {
        zero(tape)
    };
    Ok((at, enc_monitor, dec_monitor))
}

#[allow(clippy::too_many_arguments)]
fn step<T: Scalar>(
    cfg: &TrainConfig,
    kind: PhaseKind,
    model: &mut AnyModel<T>,
    teachers: Option<Teachers<'_, T>>,
    tape: &mut Tape<T>,
    batch: &Batch<T>,
    epoch: u64,
    rng: &mut ChaCha8Rng,
) -> Result<StepOut> {
    let raw = tape.constant(batch.raw.clone());
    let srgb = tape.constant(batch.srgb.clone());
    let plain = |terms| Ok(StepOut { terms, enc_monitor: 0.0, dec_monitor: 0.0 });
    match (model, kind) {
        (AnyModel::Rbn(m), PhaseKind::Main) => {
            let out = forward(m, tape, raw, QuantMode::Noise, rng)?;
            let (at, enc_monitor, dec_monitor) =
                rbn_attention(cfg, tape, &out.encoder_sites, &out.decoder_sites, teachers, batch, epoch)?;
            let terms = rd_loss_terms(tape, out.output, srgb, out.bits, srgb_pixels(batch), cfg.lambda, at)?;
            Ok(StepOut { terms, enc_monitor, dec_monitor })
        }
        (AnyModel::Unified(m), PhaseKind::Main) => {
            let out = forward(m, tape, raw, QuantMode::Noise, rng)?;
            let at = zero(tape);
            plain(rd_loss_terms(tape, out.output, srgb, out.bits, srgb_pixels(batch), cfg.lambda, at)?)
        }
        (AnyModel::CompTeacher(m), PhaseKind::Main) => {
            // RAW target; rate is still per sRGB-resolution pixel
            let out = forward(m, tape, raw, QuantMode::Noise, rng)?;
            let at = zero(tape);
            plain(rd_loss_terms(tape, out.output, raw, out.bits, srgb_pixels(batch), cfg.lambda, at)?)
        }
        (AnyModel::IspTeacher(m), PhaseKind::Main) => {
            let input = if m.input_channels() == 3 { srgb } else { raw };
            let out = m.forward(tape, input)?;
            plain(distortion_only(tape, out.output, srgb)?)
        }
        (AnyModel::Cascaded(m), PhaseKind::CascadeIsp) => {
            let out = m.isp_forward(tape, raw)?;
            plain(distortion_only(tape, out, srgb)?)
        }
        (AnyModel::Cascaded(m), PhaseKind::Main) => {
            let view = m.comp_stage();
            let out = forward(&view, tape, srgb, QuantMode::Noise, rng)?;
            let at = zero(tape);
            plain(rd_loss_terms(tape, out.output, srgb, out.bits, srgb_pixels(batch), cfg.lambda, at)?)
        }
        (AnyModel::Cascaded(m), PhaseKind::CascadeFinetune) => {
            let out = forward(&*m, tape, raw, QuantMode::Round, rng)?;
            plain(distortion_only(tape, out.output, srgb)?)
        }
        (m, k) => Err(Error::Config(format!("phase {k:?} does not apply to {}", system_of(m).name()))),
    }
}

fn system_of<T>(m: &AnyModel<T>) -> System {
    match m {
        AnyModel::Rbn(_) => System::Rbn,
        AnyModel::Unified(_) => System::Unified,
        AnyModel::CompTeacher(_) => System::CompTeacher,
        AnyModel::IspTeacher(_) => System::IspTeacher,
        AnyModel::Cascaded(_) => System::Cascaded,
    }
}

fn plans(cfg: &TrainConfig, model: &AnyModel<impl Scalar>) -> Vec<PhasePlan> {
    let main = PhasePlan { name: "main", kind: PhaseKind::Main, iters: cfg.total_iters, batch: cfg.batch_size, schedule: cfg.schedule() };
    let AnyModel::Cascaded(c) = model else {
        return vec![main];
    };
    let c_cfg = cfg.cascade;
    let mut out = vec![PhasePlan {
        name: "isp",
        kind: PhaseKind::CascadeIsp,
        iters: c_cfg.isp_iters,
        batch: c_cfg.isp_batch,
        schedule: StepSchedule { initial: cfg.lr_initial, final_: cfg.lr_final, decay_iter: c_cfg.isp_decay_iter },
    }];
    if matches!(c.comp, CompStage::Learned { .. }) {
        out.push(PhasePlan { name: "comp", ..main });
        if c_cfg.finetune_iters > 0 {
            out.push(PhasePlan {
                name: "finetune",
                kind: PhaseKind::CascadeFinetune,
                iters: c_cfg.finetune_iters,
                batch: c_cfg.isp_batch,
                schedule: StepSchedule { initial: cfg.lr_final, final_: cfg.lr_final, decay_iter: 0 },
            });
        }
    }
    out
}

fn phase_rng(seed: u64, phase: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 32 | phase as u64);
    rng
}

#[allow(clippy::too_many_arguments)]
fn run_phase<T: Scalar>(
    cfg: &TrainConfig,
    spec: &ModelSpec,
    plan: &PhasePlan,
    index: usize,
    model: &mut AnyModel<T>,
    ctx: &TrainContext<'_, T>,
) -> Result<LossLog> {
    let mut sampler = PatchSampler::new(cfg.patch, cfg.seed, index as u64);
    let mut rng = phase_rng(cfg.seed, index);
    let mut adam = Adam::new(Some(cfg.clip_norm));
    let per_epoch = cfg.iters_per_epoch.unwrap_or_else(|| ctx.data.len().div_ceil(plan.batch) as u64);
    let mut log = LossLog::default();
    for iter in 1..=plan.iters {
        let batch = sampler.next_batch(ctx.data, plan.batch)?;
        let lr = plan.schedule.lr(iter);
        let epoch = (iter - 1) / per_epoch;
        let mut tape = Tape::new();
        let out = step(cfg, plan.kind, model, ctx.teachers, &mut tape, &batch, epoch, &mut rng)?;
        let b = out.terms.breakdown(&tape);
        let grads = tape.backward(out.terms.total);
        let grads: Vec<(ParamId, Tensor<T>)> = grads.for_store(model.store()).map(|(id, g)| (id, g.clone())).collect();
        let finite = b.l_total.is_finite() && grads.iter().all(|(_, g)| g.all_finite());
        if !finite {
            return Err(snapshot(ctx, spec, model, plan.name, iter, &b));
        }
        adam.step(model.store_mut(), &grads, lr);
        log.push(LogRow {
            iter,
            l_r: b.l_r,
            l_d: b.l_d,
            l_at: b.l_at,
            l_total: b.l_total,
            lr,
            l_at_enc: out.enc_monitor,
            l_at_dec: out.dec_monitor,
        });
        if iter == 1 || iter % 100 == 0 || iter == plan.iters {
            log::info!("{} {}/{}: L_total {:.5} (L_R {:.4}, L_D {:.3}, L_AT {:.4}) lr {lr:e}", plan.name, iter, plan.iters, b.l_total, b.l_r, b.l_d, b.l_at);
        }
        if let (Some(dir), Some(every)) = (ctx.out_dir, cfg.checkpoint_every) {
            if iter % every == 0 {
                save_checkpoint(&dir.join(format!("{}_{}_{iter:08}.rbck", spec.system.name(), plan.name)), spec, model.store())?;
            }
        }
    }
    Ok(log)
}

fn snapshot<T: Scalar>(ctx: &TrainContext<'_, T>, spec: &ModelSpec, model: &AnyModel<T>, phase: &str, iter: u64, b: &RdLossBreakdown) -> Error {
    let mut detail = format!("phase {phase}: L_R={} L_D={} L_AT={} L_total={}", b.l_r, b.l_d, b.l_at, b.l_total);
    if let Some(dir) = ctx.out_dir {
        let path = dir.join("nonfinite_snapshot.rbck");
        match save_checkpoint(&path, spec, model.store()) {
            Ok(()) => detail.push_str(&format!("; weights before the step saved to {}", path.display())),
            Err(e) => detail.push_str(&format!("; snapshot failed: {e}")),
        }
    }
    Error::NonFiniteLoss { iter: iter as usize, detail }
}

/// Trains `model` per `cfg`. The cascade runs its ISP pretraining, the
/// compression stage and the joint fine-tuning in turn; every other system
/// has a single phase. With an output directory, each phase writes
/// `loss_<phase>.csv` and the final weights go to `<system>.rbck`.
pub fn train<T: Scalar>(cfg: &TrainConfig, model: &mut AnyModel<T>, ctx: &TrainContext<'_, T>) -> Result<TrainReport> {
    cfg.validate()?;
    if system_of(model) != cfg.system {
        return Err(Error::ModelMismatch(format!("config trains {}, model is {}", cfg.system.name(), system_of(model).name())));
    }
    if ctx.data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.kd_active() && ctx.teachers.is_none() {
        return Err(Error::Config("RBN training with KD needs both teachers".into()));
    }
    if let Some(dir) = ctx.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let spec = cfg.model_spec()?;
    let mut phases = Vec::new();
    for (i, plan) in plans(cfg, model).iter().enumerate() {
        if let AnyModel::Cascaded(c) = model {
            c.freeze_comp(plan.kind == PhaseKind::CascadeFinetune);
        }
        let log = run_phase(cfg, &spec, plan, i, model, ctx);
        if let AnyModel::Cascaded(c) = model {
            c.freeze_comp(false);
        }
        let log = log?;
        if let Some(dir) = ctx.out_dir {
            log.write_csv(&dir.join(format!("loss_{}.csv", plan.name)))?;
        }
        phases.push(PhaseLog { name: plan.name, log });
    }
    if let Some(dir) = ctx.out_dir {
        save_checkpoint(&dir.join(format!("{}.rbck", cfg.system.name())), &spec, model.store())?;
    }
    Ok(TrainReport { phases })
}

/// Loss of the main objective on one batch, with the noise drawn from
/// `seed`. Does not update the model.
pub fn batch_loss<T: Scalar>(
    cfg: &TrainConfig,
    model: &mut AnyModel<T>,
    teachers: Option<Teachers<'_, T>>,
    batch: &Batch<T>,
    seed: u64,
) -> Result<RdLossBreakdown> {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = step(cfg, PhaseKind::Main, model, teachers, &mut tape, batch, 0, &mut rng)?;
    Ok(out.terms.breakdown(&tape))
}

/// Gradient of the main objective on one batch: `(parameter name, grad)`
/// for every parameter that received one.
pub fn batch_gradients<T: Scalar>(
    cfg: &TrainConfig,
    model: &mut AnyModel<T>,
    batch: &Batch<T>,
    seed: u64,
) -> Result<Vec<(String, Tensor<T>)>> {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = step(cfg, PhaseKind::Main, model, None, &mut tape, batch, 0, &mut rng)?;
    let grads = tape.backward(out.terms.total);
    let store = model.store();
    Ok(grads.for_store(store).map(|(id, g)| (store.name(id).to_string(), g.clone())).collect())
}

