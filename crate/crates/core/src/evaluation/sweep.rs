use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{RawImage, SrgbImage};
use crate::error::{Error, Result};
use crate::evaluation::{bpp, isp_stage_output, psnr, round_trip, LinePlot, Series};
use crate::networks::{load_checkpoint, AnyModel, ModelSpec, System};
use crate::scalar::Scalar;

pub const RD_CSV_HEADER: &str = "system,lambda,bpp,psnr_db,n_images";

#[derive(Clone, Debug, PartialEq)]
pub struct RdPoint {
    pub system: System,
    pub lambda: f64,
    /// Mean bits per sRGB pixel.
    pub bpp: f64,
    /// Mean of the finite per-image PSNRs.
    pub psnr_db: f64,
    pub image_count: usize,
    /// Uncompressed ISP-stage PSNR, for the cascade only.
    pub isp_ceiling_db: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct RdSweep {
    pub points: Vec<RdPoint>,
    /// Checkpoints that could not be evaluated, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn mean_finite(values: &[f64], what: &str) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < values.len() {
        log::warn!("{} lossless image(s) excluded from the {what} average", values.len() - finite.len());
    }
    if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// Codes every test image with `model` and averages PSNR and bpp.
pub fn evaluate_model<T: Scalar>(model: &AnyModel<T>, spec: &ModelSpec, test: &[(RawImage<T>, SrgbImage<T>)]) -> Result<RdPoint> {
    let codec = model.codec().ok_or_else(|| Error::InvalidSpec(format!("{} is not a codec", spec.system.name())))?;
    if test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let (mut psnrs, mut rates, mut ceilings) = (Vec::new(), Vec::new(), Vec::new());
    for (raw, srgb) in test {
        let (bs, out) = round_trip(codec, &raw.data.clone().unsqueeze0(), spec.quality)?;
        let gt = srgb.data.clone().unsqueeze0();
        psnrs.push(psnr(&out, &gt)?);
        let (h, w) = srgb.dims();
        rates.push(bpp(bs.byte_len(), h, w));
        if let AnyModel::Cascaded(c) = model {
            ceilings.push(psnr(&isp_stage_output(c, &raw.data.clone().unsqueeze0())?, &gt)?);
        }
    }
    Ok(RdPoint {
        system: spec.system,
        lambda: spec.lambda.unwrap_or(0.0),
        bpp: rates.iter().sum::<f64>() / rates.len() as f64,
        psnr_db: mean_finite(&psnrs, "PSNR"),
        image_count: test.len(),
        isp_ceiling_db: (!ceilings.is_empty()).then(|| mean_finite(&ceilings, "ISP ceiling")),
    })
}

/// One point per loadable checkpoint, sorted by system then bpp.
/// Checkpoints that are missing, unreadable or do not code to sRGB are
/// skipped with a warning.
pub fn rd_sweep<T: Scalar>(checkpoints: &[PathBuf], test: &[(RawImage<T>, SrgbImage<T>)]) -> Result<RdSweep> {
    if checkpoints.is_empty() {
        return Err(Error::Config("rd sweep needs at least one checkpoint".into()));
    }
    let mut sweep = RdSweep::default();
    for path in checkpoints {
        let loaded = load_checkpoint::<T>(path).and_then(|(spec, model)| {
            if model.codec().is_none() {
                return Err(Error::InvalidSpec(format!("{} has no bitstream", spec.system.name())));
            }
            if spec.system == System::CompTeacher {
                return Err(Error::InvalidSpec("the compression teacher reconstructs RAW, not sRGB".into()));
            }
            Ok((spec, model))
        });
        match loaded {
            Ok((spec, model)) => sweep.points.push(evaluate_model(&model, &spec, test)?),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                sweep.skipped.push((path.clone(), e.to_string()));
            }
        }
    }
    sweep.points.sort_by(|a, b| a.system.name().cmp(b.system.name()).then(a.bpp.total_cmp(&b.bpp)));
    Ok(sweep)
}

pub fn rd_csv(points: &[RdPoint]) -> String {
    let mut s = format!("{RD_CSV_HEADER}\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{},{}", p.system.name(), p.lambda, p.bpp, p.psnr_db, p.image_count);
    }
    s
}

pub fn write_rd_csv(points: &[RdPoint], path: &Path) -> Result<()> {
    std::fs::write(path, rd_csv(points)).map_err(|e| Error::io(path, e))
}

/// PSNR against bpp, one curve per system. Cascaded points are clipped to
/// their ISP-stage ceiling, which is drawn dashed.
pub fn rd_plot(points: &[RdPoint]) -> LinePlot {
    let mut by_system: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut ceiling: Option<f64> = None;
    for p in points {
        let y = match p.isp_ceiling_db {
            Some(c) => {
                ceiling = Some(ceiling.map_or(c, |m: f64| m.max(c)));
                p.psnr_db.min(c)
            }
            None => p.psnr_db,
        };
        by_system.entry(p.system.name()).or_default().push((p.bpp, y));
    }
    let mut series: Vec<Series> = by_system
        .into_iter()
        .map(|(name, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { markers: true, ..Series::line(name, pts) }
        })
        .collect();
    if let Some(c) = ceiling.filter(|c| c.is_finite()) {
        let xs = points.iter().map(|p| p.bpp).filter(|b| b.is_finite());
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        series.push(Series { dashed: true, ..Series::line("cascaded ISP ceiling", vec![(lo, c), (hi, c)]) });
    }
    LinePlot { title: "Rate-distortion".into(), x_label: "bits per sRGB pixel".into(), y_label: "PSNR (dB)".into(), series }
}
