use anyhow::{bail, Context};
use rawtobit::networks::{ArchConfig, System};
use rawtobit::training::{TrainConfig, RBN_LAMBDAS, UNIFIED_LAMBDAS};

use crate::{ArchArg, TrainOpts};

/// λ used when neither the flag nor a config file sets one. It is in both
/// preset lists.
pub const DEFAULT_LAMBDA: f64 = 0.0483;

/// Preset quality index of `lambda`, if it is one of the presets.
pub fn quality_of(system: System, lambda: f64) -> Option<u8> {
    let list: &[f64] = if system == System::Unified { &UNIFIED_LAMBDAS } else { &RBN_LAMBDAS };
    list.iter().position(|&l| l == lambda).map(|i| i as u8)
}

/// Builds the training config: flags over the config file over the preset.
/// `--scale` applies to the base budgets before `--iters` replaces them.
pub fn resolve(system: System, opts: &TrainOpts, seed: Option<u64>, scale: Option<f64>) -> anyhow::Result<TrainConfig> {
    let mut cfg = match &opts.config {
        Some(path) => {
            let cfg = TrainConfig::load(path)?;
            if cfg.system != system {
                bail!("{} configures {}, not {}", path.display(), cfg.system.name(), system.name());
            }
            cfg
        }
        None => TrainConfig::preset(system, opts.lambda.unwrap_or(DEFAULT_LAMBDA))
            .with_context(|| format!("no {} preset", system.name()))?,
    };
    let factor = scale.unwrap_or(1.0);
    if factor == 1.0 && opts.iters.is_none() {
        log::warn!(
            "running the full iteration budget ({} iterations for {}); this takes days to weeks on a CPU. \
             Pass --scale (e.g. 0.001) or --iters for a desk-scale run",
            cfg.total_iters,
            system.name()
        );
    }
    cfg = cfg.scaled(factor)?;

    if let Some(lambda) = opts.lambda {
        cfg.lambda = lambda;
        if let Some(q) = quality_of(system, lambda) {
            cfg.quality = q;
        }
    }
    if let Some(n) = opts.iters {
        let frac = cfg.lr_decay_iter as f64 / cfg.total_iters as f64;
        cfg.total_iters = n;
        cfg.lr_decay_iter = ((n as f64 * frac).round() as u64).max(1);
        if system == System::Cascaded {
            let isp_frac = cfg.cascade.isp_decay_iter as f64 / cfg.cascade.isp_iters as f64;
            cfg.cascade.isp_iters = n;
            cfg.cascade.isp_decay_iter = ((n as f64 * isp_frac).round() as u64).max(1);
            if cfg.cascade.finetune_iters > 0 {
                cfg.cascade.finetune_iters = n;
            }
        }
    }
    if let Some(b) = opts.batch_size {
        cfg.batch_size = b;
        cfg.cascade.isp_batch = b;
    }
    if let Some(p) = opts.patch {
        cfg.patch = p;
    }
    if let Some(lr) = opts.lr {
        cfg.lr_initial = lr;
        cfg.lr_final = lr / 10.0;
    }
    if let Some(a) = opts.arch {
        let kept = cfg.arch;
        cfg.arch = match a {
            ArchArg::Full => ArchConfig::full(),
            ArchArg::Tiny => ArchConfig::tiny(),
        };
        cfg.arch.isp_input = kept.isp_input;
        cfg.arch.cascaded_comp = kept.cascaded_comp;
    }
    if opts.checkpoint_every.is_some() {
        cfg.checkpoint_every = opts.checkpoint_every;
    }
    if opts.teacher_comp.is_some() {
        cfg.teachers.comp = opts.teacher_comp.clone();
    }
    if opts.teacher_isp.is_some() {
        cfg.teachers.isp = opts.teacher_isp.clone();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_preset() {
        let dir = tempfile::tempdir().unwrap();
        let mut file_cfg = TrainConfig::preset(System::Unified, 0.013).unwrap();
        file_cfg.batch_size = 4;
        file_cfg.patch = 64;
        file_cfg.seed = 9;
        let path = dir.path().join("c.toml");
        std::fs::write(&path, file_cfg.to_toml().unwrap()).unwrap();

        let opts = TrainOpts { config: Some(path), patch: Some(32), ..Default::default() };
        let cfg = resolve(System::Unified, &opts, None, Some(0.001)).unwrap();
        assert_eq!(cfg.patch, 32, "flag wins");
        assert_eq!(cfg.batch_size, 4, "file wins over preset");
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lambda, 0.013);
        assert_eq!(cfg.total_iters, 1600);

        let preset = resolve(System::Unified, &TrainOpts::default(), Some(3), Some(0.001)).unwrap();
        assert_eq!((preset.batch_size, preset.patch, preset.seed, preset.lambda), (8, 128, 3, DEFAULT_LAMBDA));
        assert_eq!(preset.quality, 4);
    }

    #[test]
    fn system_mismatch_with_the_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, TrainConfig::preset(System::Unified, 0.013).unwrap().to_toml().unwrap()).unwrap();
        let opts = TrainOpts { config: Some(path), ..Default::default() };
        assert!(resolve(System::Rbn, &opts, None, Some(0.001)).is_err());
    }

    #[test]
    fn iters_keep_the_decay_fraction() {
        let opts = TrainOpts { iters: Some(100), ..Default::default() };
        let cfg = resolve(System::Rbn, &opts, None, None).unwrap();
        assert_eq!((cfg.total_iters, cfg.lr_decay_iter), (100, 90));
        let cas = resolve(System::Cascaded, &opts, None, None).unwrap();
        assert_eq!((cas.cascade.isp_iters, cas.cascade.isp_decay_iter), (100, 91));
    }
}
