//! Training configuration (TOML) and the per-system presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distillation::KdConfig;
use crate::error::{Error, Result};
use crate::networks::{ArchConfig, ModelSpec, System};
use crate::training::StepSchedule;

/// Trade-offs of the RBN, both teachers and the cascaded baseline.
pub const RBN_LAMBDAS: [f64; 7] = [0.0035, 0.0067, 0.013, 0.0483, 0.0932, 0.18, 0.36];
/// Trade-offs of the unified baseline.
pub const UNIFIED_LAMBDAS: [f64; 7] = [0.0035, 0.0067, 0.013, 0.025, 0.0483, 0.0932, 0.18];

/// Compression-teacher latent width for a preset trade-off: 192 for the
/// three lowest rates, 320 above.
pub fn k_for_lambda(lambda: f64) -> Result<usize> {
    match RBN_LAMBDAS.iter().position(|&l| l == lambda) {
        Some(i) if i < 3 => Ok(192),
        Some(_) => Ok(320),
        None => Err(Error::MissingK(lambda)),
    }
}

/// Budgets of the three cascaded phases. The compression-stage budget is
/// the config's `total_iters` / `lr_decay_iter`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeBudget {
    pub isp_iters: u64,
    pub isp_decay_iter: u64,
    pub isp_batch: usize,
    /// Joint fine-tuning of the ISP stage through the frozen compression
    /// stage, at `lr_final`. Zero skips it.
    pub finetune_iters: u64,
}

impl Default for CascadeBudget {
    fn default() -> Self {
        CascadeBudget { isp_iters: 26_400, isp_decay_iter: 24_000, isp_batch: 16, finetune_iters: 2_400 }
    }
}

/// Checkpoints of the frozen teachers used for RBN distillation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TeacherPaths {
    pub comp: Option<PathBuf>,
    pub isp: Option<PathBuf>,
}

fn default_lr_initial() -> f64 {
    5e-5
}
fn default_lr_final() -> f64 {
    5e-6
}
fn default_clip() -> f64 {
    1.0
}
fn default_patch() -> usize {
    128
}
fn default_beta() -> f64 {
    0.9
}
fn default_arch() -> ArchConfig {
    ArchConfig::full()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub system: System,
    pub lambda: f64,
    pub batch_size: usize,
    pub total_iters: u64,
    pub lr_decay_iter: u64,
    #[serde(default = "default_lr_initial")]
    pub lr_initial: f64,
    #[serde(default = "default_lr_final")]
    pub lr_final: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kd: KdConfig,
    /// Compression-teacher latent width; derived from `lambda` when absent.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_arch")]
    pub arch: ArchConfig,
    /// Side of the packed-RAW training patch; sRGB patches are twice this.
    #[serde(default = "default_patch")]
    pub patch: usize,
    /// Iterations per distillation epoch; one pass over the training images
    /// when absent.
    #[serde(default)]
    pub iters_per_epoch: Option<u64>,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    /// EMA coefficient for the smoothed loss curve.
    #[serde(default = "default_beta")]
    pub smoothing: f64,
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    #[serde(default)]
    pub cascade: CascadeBudget,
    #[serde(default)]
    pub teachers: TeacherPaths,
    #[serde(default)]
    pub quality: u8,
}

impl TrainConfig {
    /// The full-budget preset of `system` at `lambda`.
    pub fn preset(system: System, lambda: f64) -> Result<Self> {
        let (batch_size, total_iters, lr_decay_iter) = match system {
            System::Rbn => (8, 1_000_000, 900_000),
            System::Unified => (8, 1_600_000, 1_500_000),
            System::CompTeacher => (8, 2_000_000, 1_500_000),
            System::IspTeacher => (8, 580_000, 480_000),
            // the compression stage; the ISP phases live in `cascade`
            System::Cascaded => (8, 2_000_000, 1_500_000),
        };
        let kd = if system == System::Rbn { KdConfig::default() } else { KdConfig::disabled() };
        let k = match system {
            System::Rbn | System::CompTeacher => Some(k_for_lambda(lambda)?),
            _ => None,
        };
        let quality = match system {
            System::Unified => UNIFIED_LAMBDAS.iter().position(|&l| l == lambda),
            _ => RBN_LAMBDAS.iter().position(|&l| l == lambda),
        }
        .unwrap_or(0) as u8;
        let cfg = TrainConfig {
            system,
            lambda,
            batch_size,
            total_iters,
            lr_decay_iter,
            lr_initial: default_lr_initial(),
            lr_final: default_lr_final(),
            seed: 0,
            kd,
            k,
            arch: ArchConfig::full(),
            patch: default_patch(),
            iters_per_epoch: None,
            clip_norm: default_clip(),
            smoothing: default_beta(),
            checkpoint_every: None,
            cascade: CascadeBudget::default(),
            teachers: TeacherPaths::default(),
            quality,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Multiplies every iteration count by `factor` (at least one iteration
    /// each), keeping decay points at the same fraction of their budgets.
    pub fn scaled(mut self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {factor}")));
        }
        let s = |n: u64| ((n as f64 * factor).round() as u64).max(1);
        self.total_iters = s(self.total_iters);
        self.lr_decay_iter = s(self.lr_decay_iter);
        self.cascade.isp_iters = s(self.cascade.isp_iters);
        self.cascade.isp_decay_iter = s(self.cascade.isp_decay_iter);
        if self.cascade.finetune_iters > 0 {
            self.cascade.finetune_iters = s(self.cascade.finetune_iters);
        }
        self.checkpoint_every = self.checkpoint_every.map(s);
        self.iters_per_epoch = self.iters_per_epoch.map(s);
        Ok(self)
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule { initial: self.lr_initial, final_: self.lr_final, decay_iter: self.lr_decay_iter }
    }

    /// Compression-teacher width: explicit `k`, else the preset rule.
    pub fn resolve_k(&self) -> Result<usize> {
        self.k.map_or_else(|| k_for_lambda(self.lambda), Ok)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(self.system, self.arch);
        if self.system == System::CompTeacher {
            spec.k = Some(self.resolve_k()?);
        }
        if self.system != System::IspTeacher {
            spec.lambda = Some(self.lambda);
        }
        spec.quality = self.quality;
        Ok(spec)
    }

    pub fn kd_active(&self) -> bool {
        self.system == System::Rbn && (self.kd.encoder.enabled || self.kd.decoder.enabled)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.batch_size == 0 || self.total_iters == 0 {
            return bad("batch_size and total_iters must be positive".into());
        }
        for (name, v) in [("lr_initial", self.lr_initial), ("lr_final", self.lr_final), ("clip_norm", self.clip_norm)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return bad(format!("smoothing must lie in [0, 1), got {}", self.smoothing));
        }
        if self.patch == 0 || self.patch % 16 != 0 {
            return bad(format!("patch must be a positive multiple of 16, got {}", self.patch));
        }
        if self.iters_per_epoch == Some(0) || self.checkpoint_every == Some(0) {
            return bad("iters_per_epoch and checkpoint_every must be positive".into());
        }
        if self.system == System::Cascaded && (self.cascade.isp_iters == 0 || self.cascade.isp_batch == 0) {
            return bad("cascaded ISP phase needs iterations and a batch size".into());
        }
        if self.system == System::CompTeacher {
            self.resolve_k()?;
        }
        if self.kd_active() {
            self.kd.validate()?;
        }
        self.arch.validate()
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::parse(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// The seven RBN presets followed by the seven unified presets.
pub fn train_schedule_presets() -> Vec<TrainConfig> {
    RBN_LAMBDAS
        .iter()
        .map(|&l| (System::Rbn, l))
        .chain(UNIFIED_LAMBDAS.iter().map(|&l| (System::Unified, l)))
        .map(|(s, l)| TrainConfig::preset(s, l).expect("preset lambdas are valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_rule() {
        assert_eq!(k_for_lambda(0.013).unwrap(), 192);
        assert_eq!(k_for_lambda(0.0035).unwrap(), 192);
        assert_eq!(k_for_lambda(0.0483).unwrap(), 320);
        assert_eq!(k_for_lambda(0.36).unwrap(), 320);
        assert!(matches!(k_for_lambda(0.025), Err(Error::MissingK(l)) if l == 0.025));
        assert!(matches!(TrainConfig::preset(System::Rbn, 0.5), Err(Error::MissingK(_))));
        // an explicit K lifts the restriction
        let mut c = TrainConfig::preset(System::Rbn, 0.36).unwrap();
        c.lambda = 0.5;
        c.k = Some(256);
        assert_eq!(c.resolve_k().unwrap(), 256);
    }

    #[test]
    fn presets() {
        let all = train_schedule_presets();
        assert_eq!(all.len(), 14);
        let rbn: Vec<_> = all.iter().filter(|c| c.system == System::Rbn).collect();
        assert_eq!(rbn.iter().map(|c| c.k.unwrap()).collect::<Vec<_>>(), [192, 192, 192, 320, 320, 320, 320]);
        assert!(rbn.iter().all(|c| c.total_iters == 1_000_000 && c.lr_decay_iter == 900_000 && c.batch_size == 8));
        let uni: Vec<f64> = all.iter().filter(|c| c.system == System::Unified).map(|c| c.lambda).collect();
        assert_eq!(uni, UNIFIED_LAMBDAS);
        assert_eq!(TrainConfig::preset(System::Unified, 0.18).unwrap().quality, 6);
    }

    #[test]
    fn scaling_keeps_the_decay_ratio() {
        let c = TrainConfig::preset(System::Rbn, 0.013).unwrap().scaled(0.001).unwrap();
        assert_eq!((c.total_iters, c.lr_decay_iter), (1000, 900));
        let c = TrainConfig::preset(System::Cascaded, 0.013).unwrap().scaled(0.01).unwrap();
        assert_eq!((c.cascade.isp_iters, c.cascade.isp_decay_iter, c.cascade.finetune_iters), (264, 240, 24));
        assert!(TrainConfig::preset(System::Rbn, 0.013).unwrap().scaled(0.0).is_err());
    }

    #[test]
    fn schedule_boundary() {
        let c = TrainConfig::preset(System::Rbn, 0.013).unwrap();
        let s = c.schedule();
        assert_eq!(s.lr(c.lr_decay_iter - 1), 5e-5);
        assert_eq!(s.lr(c.lr_decay_iter), 5e-6);
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let c = TrainConfig::preset(System::Rbn, 0.0932).unwrap();
        let text = c.to_toml().unwrap();
        assert_eq!(TrainConfig::from_toml(&text, Path::new("c.toml")).unwrap(), c);
        let minimal = "system = \"unified\"\nlambda = 0.025\nbatch_size = 8\ntotal_iters = 100\nlr_decay_iter = 90\n";
        let m = TrainConfig::from_toml(minimal, Path::new("m.toml")).unwrap();
        assert_eq!((m.lr_initial, m.lr_final, m.clip_norm, m.patch), (5e-5, 5e-6, 1.0, 128));
        assert!(TrainConfig::from_toml("system = \"rbn\"\nlambda = -1\nbatch_size = 8\ntotal_iters = 1\nlr_decay_iter = 1\n", Path::new("x")).is_err());
        assert!(TrainConfig::from_toml(&format!("{minimal}bogus = 1\n"), Path::new("x")).is_err());
    }
}
