//! On-disk pair format: `<id>.raw16` (little-endian u16 mosaic, row-major),
//! `<id>.meta.json` and `<id>.srgb.png` (8- or 16-bit RGB).

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};

use crate::data::{check_pair, BayerPattern, RawImage, SrgbImage};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMeta {
    pub width: usize,
    pub height: usize,
    pub black_level: u32,
    pub white_level: u32,
    #[serde(default)]
    pub pattern: BayerPattern,
}

fn paths(dir: &Path, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join(format!("{id}.raw16")), dir.join(format!("{id}.meta.json")), dir.join(format!("{id}.srgb.png")))
}

/// Ids of every `<id>.meta.json` in `dir`, sorted.
pub fn list_pair_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".meta.json")).map(str::to_string))
        .collect();
    ids.sort();
    Ok(ids)
}

/// Loads `<id>.raw16` and its `<id>.meta.json` sibling.
pub fn load_raw<T: Scalar>(raw_path: &Path) -> Result<RawImage<T>> {
    let name = raw_path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let id = name.strip_suffix(".raw16").ok_or_else(|| Error::parse(raw_path, "expected a .raw16 file"))?;
    let meta_path = raw_path.with_file_name(format!("{id}.meta.json"));
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: RawMeta = serde_json::from_str(&meta_text).map_err(|e| Error::parse(&meta_path, e))?;
    let bytes = fs::read(raw_path).map_err(|e| Error::io(raw_path, e))?;
    if bytes.len() % 2 != 0 {
        return Err(Error::parse(raw_path, "odd byte count in a u16 mosaic"));
    }
    let values: Vec<u16> = bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    RawImage::from_mosaic(&values, &meta, id)
}

/// Reads an 8- or 16-bit RGB PNG into `[3, H, W]` on `[0, 1]`.
pub fn load_png<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|e| Error::parse(path, e))?.to_rgb16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![T::zero(); 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = T::of(px[c] as f64 / 65535.0);
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

pub fn load_pair<T: Scalar>(dir: &Path, id: &str) -> Result<(RawImage<T>, SrgbImage<T>)> {
    let (raw_path, _, png_path) = paths(dir, id);
    let raw = load_raw(&raw_path)?;
    let srgb = SrgbImage::new(load_png(&png_path)?, id)?;
    check_pair(&raw, &srgb)?;
    Ok((raw, srgb))
}

pub fn load_pairs<T: Scalar>(dir: &Path, ids: &[String]) -> Result<Vec<(RawImage<T>, SrgbImage<T>)>> {
    ids.iter().map(|id| load_pair(dir, id)).collect()
}

/// Writes `[3, H, W]` in `[0, 1]` as a 16-bit PNG.
pub fn write_png16<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    let [3, h, w] = *img.shape() else {
        return Err(Error::InvalidShape(format!("PNG export needs [3, H, W], got {:?}", img.shape())));
    };
    let d = img.data();
    let buf = ImageBuffer::<Rgb<u16>, _>::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| (d[(c * h + y as usize) * w + x as usize].as_f64().clamp(0.0, 1.0) * 65535.0).round() as u16;
        Rgb([at(0), at(1), at(2)])
    });
    buf.save(path).map_err(|e| Error::parse(path, e))
}

pub fn write_pair<T: Scalar>(dir: &Path, id: &str, mosaic: &[u16], meta: &RawMeta, srgb: &Tensor<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (raw_path, meta_path, png_path) = paths(dir, id);
    let bytes: Vec<u8> = mosaic.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
    let json = serde_json::to_string_pretty(meta).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    write_png16(&png_path, srgb)
}
