use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rawtobit::bitcodec::Bitstream;
use rawtobit::data::{
    list_pair_ids, load_pair, load_pairs, load_png, load_raw, make_split as split_ids, synthetic_pairs, write_pair, write_png16,
    DatasetSplit, RawImage, SrgbImage,
};
use rawtobit::distillation::TeacherKind;
use rawtobit::evaluation::{bpp, error_map, psnr, rd_plot, rd_sweep, round_trip, write_rd_csv, LinePlot, Series};
use rawtobit::networks::{compress, decompress, load_checkpoint, AnyModel, System, DECODER_STAGES, ENCODER_STAGES};
use rawtobit::training::{ema, load_teachers, LogRow, LossLog, Teachers, TrainConfig, TrainContext, TrainReport};
use rawtobit::Tensor;

use crate::config::resolve;
use crate::{CodecArgs, EvalArgs, Global, PlotCommand, PrepareArgs, TrainOpts, Variant};

type Pairs = Vec<(RawImage<f64>, SrgbImage<f64>)>;

fn data_dir(g: &Global) -> anyhow::Result<&Path> {
    g.data_dir.as_deref().context("no dataset: pass --data-dir or set RAWTOBIT_DATA_DIR")
}

/// Relative output paths land under `--out-dir`.
fn output_path(g: &Global, path: &Path) -> anyhow::Result<PathBuf> {
    let p = if path.is_absolute() { path.to_path_buf() } else { g.out_dir.join(path) };
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(p)
}

fn ensure_out_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn prepare_data(g: &Global, a: &PrepareArgs) -> anyhow::Result<()> {
    let dir = data_dir(g)?;
    if let Some(n) = a.synthetic {
        let mut rng = ChaCha8Rng::seed_from_u64(g.seed.unwrap_or(0));
        for p in synthetic_pairs::<f64>(n, a.height, a.width, &mut rng)? {
            write_pair(dir, &p.raw.source_id, &p.mosaic, &p.meta, &p.srgb.data)?;
        }
        log::info!("wrote {n} synthetic pairs to {}", dir.display());
    }
    let ids = list_pair_ids(dir)?;
    if ids.is_empty() {
        bail!("{} holds no RAW/sRGB pairs", dir.display());
    }
    for id in &ids {
        load_pair::<f64>(dir, id)?;
    }
    println!("{} pairs checked in {}", ids.len(), dir.display());
    Ok(())
}

pub fn make_split(g: &Global) -> anyhow::Result<()> {
    let ids = list_pair_ids(data_dir(g)?)?;
    if ids.is_empty() {
        bail!("nothing to split");
    }
    let split = split_ids(&ids, g.seed.unwrap_or(0));
    ensure_out_dir(&g.out_dir)?;
    let path = g.out_dir.join("split.txt");
    split.save(&path)?;
    println!("train {} / val {} / test {} -> {}", split.train.len(), split.val.len(), split.test.len(), path.display());
    Ok(())
}

/// Ids of one part of the split, or every pair when no split is given.
fn load_ids(g: &Global, split: Option<&Path>, part: fn(&DatasetSplit) -> &Vec<String>) -> anyhow::Result<Pairs> {
    let dir = data_dir(g)?;
    let ids = match split {
        Some(p) => part(&DatasetSplit::load(p)?).clone(),
        None => {
            log::warn!("no --split given; using every pair in {}", dir.display());
            list_pair_ids(dir)?
        }
    };
    Ok(load_pairs(dir, &ids)?)
}

/// Trains with `cfg`, writing logs, the checkpoint and the resolved config
/// under `out`.
pub fn run_training(g: &Global, cfg: &TrainConfig, split: Option<&Path>, out: &Path) -> anyhow::Result<TrainReport> {
    let data = load_ids(g, split, |s| &s.train)?;
    let loaded = load_teachers::<f64>(cfg)?;
    if cfg.kd_active() && loaded.is_none() {
        bail!("RBN distillation needs --teacher-comp and --teacher-isp (or the no-kd ablation)");
    }
    ensure_out_dir(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?).context("writing config.toml")?;
    let mut model = AnyModel::<f64>::build(&cfg.model_spec()?, cfg.seed)?;
    let teachers = loaded.as_ref().map(|(comp, isp)| Teachers { comp, isp });
    let report = rawtobit::training::train(cfg, &mut model, &TrainContext { data: &data, teachers, out_dir: Some(out) })?;
    if let Some(row) = report.last().rows.last() {
        log::info!("iter {}: L_total {:.6} (L_R {:.6}, L_D {:.6}, L_AT {:.6})", row.iter, row.l_total, row.l_r, row.l_d, row.l_at);
    }
    println!("{}", out.join(format!("{}.rbck", cfg.system.name())).display());
    Ok(report)
}

pub fn train(g: &Global, system: System, opts: &TrainOpts) -> anyhow::Result<TrainReport> {
    let cfg = resolve(system, opts, g.seed, g.scale)?;
    run_training(g, &cfg, opts.split.as_deref(), &g.out_dir)
}

fn load_codec(path: &Path) -> anyhow::Result<(rawtobit::networks::ModelSpec, AnyModel<f64>)> {
    let (spec, model) = load_checkpoint::<f64>(path)?;
    if model.codec().is_none() {
        bail!("{} holds a {} model, which has no bitstream", path.display(), spec.system.name());
    }
    Ok((spec, model))
}

fn print_report(bytes: usize, decoded: &Tensor<f64>, ground_truth: Option<&Path>) -> anyhow::Result<()> {
    let (_, _, h, w) = decoded.dims4();
    println!("bpp {}", bpp(bytes, h, w));
    if let Some(gt) = ground_truth {
        let gt = load_png::<f64>(gt)?.unsqueeze0();
        println!("psnr_db {}", psnr(decoded, &gt)?);
    }
    Ok(())
}

pub fn encode(g: &Global, a: &CodecArgs) -> anyhow::Result<()> {
    let (spec, model) = load_codec(&a.checkpoint)?;
    let codec = model.codec().expect("checked by load_codec");
    let raw = load_raw::<f64>(&a.input)?;
    let stream = compress(codec, &raw.data.unsqueeze0(), spec.quality)?;
    let bytes = stream.serialize();
    let out = output_path(g, &a.output)?;
    fs::write(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    if a.report {
        let decoded = decompress(codec, &Bitstream::deserialize(&bytes)?)?;
        print_report(bytes.len(), &decoded, a.ground_truth.as_deref())?;
    }
    Ok(())
}

pub fn decode(g: &Global, a: &CodecArgs) -> anyhow::Result<()> {
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let stream = Bitstream::deserialize(&bytes)?;
    let (spec, model) = load_codec(&a.checkpoint)?;
    spec.check_stream(&stream.header)?;
    let decoded = decompress(model.codec().expect("checked by load_codec"), &stream)?;
    let out = output_path(g, &a.output)?;
    write_png16(&out, &decoded.clone().squeeze0())?;
    if a.report {
        print_report(bytes.len(), &decoded, a.ground_truth.as_deref())?;
    }
    Ok(())
}

pub fn eval_rd(g: &Global, a: &EvalArgs) -> anyhow::Result<()> {
    let test = load_ids(g, a.split.as_deref(), |s| &s.test)?;
    let sweep = rd_sweep(&a.checkpoints, &test)?;
    if sweep.points.is_empty() {
        bail!("none of the {} checkpoints could be evaluated", a.checkpoints.len());
    }
    ensure_out_dir(&g.out_dir)?;
    let csv = g.out_dir.join("rd.csv");
    write_rd_csv(&sweep.points, &csv)?;
    rd_plot(&sweep.points).save(&g.out_dir.join("rd.svg"))?;
    for p in &sweep.points {
        let ceiling = p.isp_ceiling_db.map(|c| format!(" (ISP ceiling {c:.3} dB)")).unwrap_or_default();
        println!("{:<12} λ={:<8} {:.4} bpp  {:.3} dB{ceiling}", p.system.name(), p.lambda, p.bpp, p.psnr_db);
    }
    if a.error_maps {
        let dir = g.out_dir.join("error_maps");
        ensure_out_dir(&dir)?;
        for path in &a.checkpoints {
            let Ok((spec, model)) = load_codec(path) else { continue };
            if spec.system == System::CompTeacher {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
            for (raw, srgb) in &test {
                let (_, out) = round_trip(model.codec().expect("checked"), &raw.data.clone().unsqueeze0(), spec.quality)?;
                error_map(&srgb.data, &out.squeeze0())?.save_png(&dir.join(format!("{stem}_{}.png", srgb.source_id)))?;
            }
        }
    }
    println!("{}", csv.display());
    Ok(())
}

fn column_of(name: &str) -> anyhow::Result<fn(&LogRow) -> f64> {
    Ok(match name {
        "L_R" => |r| r.l_r,
        "L_D" => |r| r.l_d,
        "L_AT" => |r| r.l_at,
        "L_total" => |r| r.l_total,
        "lr" => |r| r.lr,
        "L_AT_enc" => |r| r.l_at_enc,
        "L_AT_dec" => |r| r.l_at_dec,
        other => bail!("unknown loss column {other}"),
    })
}

/// One curve per log: `(iter, value)`, EMA-smoothed when `beta > 0`.
pub fn loss_series(name: &str, log: &LossLog, column: fn(&LogRow) -> f64, beta: f64) -> Series {
    let values = log.column(column);
    let values = if beta > 0.0 { ema(&values, beta) } else { values };
    Series::line(name, log.rows.iter().map(|r| r.iter as f64).zip(values).collect())
}

pub fn plot(g: &Global, p: &PlotCommand) -> anyhow::Result<()> {
    match p {
        PlotCommand::Loss { logs, column, smoothing, output } => {
            let col = column_of(column)?;
            let mut series = Vec::new();
            for path in logs {
                let log = LossLog::read_csv(path)?;
                let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("log");
                series.push(loss_series(name, &log, col, *smoothing));
            }
            let plot = LinePlot { title: column.clone(), x_label: "iteration".into(), y_label: column.clone(), series };
            let out = output_path(g, output)?;
            plot.save(&out)?;
            println!("{}", out.display());
        }
        PlotCommand::ErrorMap { ground_truth, recon, output } => {
            let map = error_map(&load_png::<f64>(ground_truth)?, &load_png::<f64>(recon)?)?;
            let out = output_path(g, output)?;
            map.save_png(&out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

pub fn ablate(g: &Global, variant: Variant, opts: &TrainOpts) -> anyhow::Result<()> {
    let mut cfg = resolve(System::Rbn, opts, g.seed, g.scale)?;
    variant.apply(&mut cfg.kd);
    let out = g.out_dir.join(format!("ablate-{}", variant.name()));
    let report = run_training(g, &cfg, opts.split.as_deref(), &out)?;
    let log = report.last();

    let beta = cfg.smoothing;
    let curves = LinePlot {
        title: format!("Attention loss ({})", variant.name()),
        x_label: "iteration".into(),
        y_label: "attention loss".into(),
        series: vec![
            loss_series("encoder (compression teacher)", log, |r| r.l_at_enc, beta),
            loss_series("decoder (ISP teacher)", log, |r| r.l_at_dec, beta),
        ],
    };
    curves.save(&out.join("attention.svg"))?;

    let pairs = cfg.kd.pairs(ENCODER_STAGES, DECODER_STAGES);
    let mut md = format!("# Ablation: {}\n\n", variant.name());
    let count = |t: TeacherKind| pairs.iter().filter(|p| p.teacher == t).count();
    let _ = writeln!(md, "- attention pairs: {} (encoder {}, decoder {})", pairs.len(), count(TeacherKind::Compression), count(TeacherKind::Isp));
    let _ = writeln!(md, "- absolute-value maps: {}", pairs.iter().any(|p| p.abs_mode));
    let _ = writeln!(md, "- iterations: {}, lambda: {}", cfg.total_iters, cfg.lambda);
    if let (Some(first), Some(last)) = (log.rows.first(), log.rows.last()) {
        let smooth = log.smoothed_total(beta);
        let _ = writeln!(md, "- smoothed L_total: {:.6} -> {:.6}", smooth[0], smooth[smooth.len() - 1]);
        let _ = writeln!(md, "- L_AT_enc: {:.6} -> {:.6}", first.l_at_enc, last.l_at_enc);
        let _ = writeln!(md, "- L_AT_dec: {:.6} -> {:.6}", first.l_at_dec, last.l_at_dec);
    }
    let _ = writeln!(md, "\nCurves: `attention.svg`. Per-iteration values: `loss_main.csv` (columns L_AT_enc, L_AT_dec).");
    fs::write(out.join("report.md"), &md).context("writing report.md")?;
    print!("{md}");
    Ok(())
}
