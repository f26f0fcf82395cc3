//! Synthetic pairs: a smooth random linear scene sampled through an RGGB
//! mosaic, rendered by a fixed toy ISP (bilinear demosaic, color matrix,
//! gamma 1/2.2).

use rand::Rng;

use crate::data::{pack_rggb, BayerPattern, RawImage, RawMeta, SrgbImage};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SYNTH_BLACK: u32 = 512;
pub const SYNTH_WHITE: u32 = 16383;

const COLOR_MATRIX: [[f64; 3]; 3] = [[1.60, -0.45, -0.15], [-0.25, 1.45, -0.20], [0.05, -0.50, 1.45]];

pub struct SyntheticPair<T> {
    pub mosaic: Vec<u16>,
    pub meta: RawMeta,
    pub raw: RawImage<T>,
    pub srgb: SrgbImage<T>,
}

/// Phase (0..4 in R, G1, G2, B order) of mosaic pixel `(y, x)`.
fn phase(y: usize, x: usize) -> usize {
    2 * (y % 2) + x % 2
}

fn color_of_phase(p: usize) -> usize {
    [0, 1, 1, 2][p]
}

/// Bilinear demosaic by normalized 3×3 convolution, then the color matrix,
/// clamp and gamma. `mosaic` is `h × w` in `[0, 1]`.
pub fn toy_isp(mosaic: &[f64], h: usize, w: usize) -> Vec<f64> {
    const K: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]];
    let mut lin = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut num, mut den) = ([0.0; 3], [0.0; 3]);
            for (dy, row) in K.iter().enumerate() {
                for (dx, &k) in row.iter().enumerate() {
                    let (yy, xx) = (y as isize + dy as isize - 1, x as isize + dx as isize - 1);
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                        continue;
                    }
                    let (yy, xx) = (yy as usize, xx as usize);
                    let c = color_of_phase(phase(yy, xx));
                    num[c] += k * mosaic[yy * w + xx];
                    den[c] += k;
                }
            }
            for c in 0..3 {
                lin[(c * h + y) * w + x] = num[c] / den[c];
            }
        }
    }
    let plane = h * w;
    let mut out = vec![0.0; 3 * plane];
    for p in 0..plane {
        for (c, row) in COLOR_MATRIX.iter().enumerate() {
            let v: f64 = (0..3).map(|k| row[k] * lin[k * plane + p]).sum();
            out[c * plane + p] = v.clamp(0.0, 1.0).powf(1.0 / 2.2);
        }
    }
    out
}

/// Smooth scene radiance per channel: gradients, blobs and a few waves.
fn scene(h: usize, w: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; 3 * h * w];
    let (fh, fw) = (h as f64, w as f64);
    for c in 0..3 {
        let base = rng.gen_range(0.1..0.4);
        let (gy, gx) = (rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
        let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| (rng.gen_range(0.0..fh), rng.gen_range(0.0..fw), rng.gen_range(0.05..0.25) * fh.max(fw), rng.gen_range(-0.3..0.4)))
            .collect();
        let waves: Vec<(f64, f64, f64, f64)> = (0..2)
            .map(|_| (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(0.0..6.3), rng.gen_range(0.0..0.08)))
            .collect();
        for y in 0..h {
            for x in 0..w {
                let (fy, fx) = (y as f64, x as f64);
                let mut v = base + gy * fy / fh + gx * fx / fw;
                for &(cy, cx, r, a) in &blobs {
                    let d2 = ((fy - cy).powi(2) + (fx - cx).powi(2)) / (r * r);
                    v += a * (-d2).exp();
                }
                for &(ky, kx, ph, a) in &waves {
                    v += a * (ky * fy + kx * fx + ph).sin();
                }
                out[(c * h + y) * w + x] = v.clamp(0.02, 0.95);
            }
        }
    }
    out
}

/// One synthetic pair with a mosaic of `height × width` (both even, ≥ 64).
pub fn synthetic_pair<T: Scalar>(id: &str, height: usize, width: usize, rng: &mut impl Rng) -> Result<SyntheticPair<T>> {
    let radiance = scene(height, width, rng);
    let range = (SYNTH_WHITE - SYNTH_BLACK) as f64;
    let mut mosaic = vec![0u16; height * width];
    for y in 0..height {
        for x in 0..width {
            let c = color_of_phase(phase(y, x));
            let v = radiance[(c * height + y) * width + x];
            mosaic[y * width + x] = (SYNTH_BLACK as f64 + v * range).round() as u16;
        }
    }
    let meta = RawMeta { width, height, black_level: SYNTH_BLACK, white_level: SYNTH_WHITE, pattern: BayerPattern::Rggb };
    let raw = RawImage::<T>::from_mosaic(&mosaic, &meta, id)?;
    // render from the quantized sensor values, as a real pipeline would
    let norm: Vec<f64> = mosaic.iter().map(|&v| (v as f64 - SYNTH_BLACK as f64) / range).collect();
    let rgb = toy_isp(&norm, height, width);
    let srgb = SrgbImage::new(Tensor::from_vec(&[3, height, width], rgb.into_iter().map(T::of).collect())?, id)?;
    debug_assert_eq!(pack_rggb(&Tensor::<f64>::from_vec(&[1, height, width], norm)?, BayerPattern::Rggb)?.len(), raw.data.len());
    Ok(SyntheticPair { mosaic, meta, raw, srgb })
}

/// `count` pairs named `synth0000`, `synth0001`, ….
pub fn synthetic_pairs<T: Scalar>(count: usize, height: usize, width: usize, rng: &mut impl Rng) -> Result<Vec<SyntheticPair<T>>> {
    (0..count).map(|i| synthetic_pair(&format!("synth{i:04}"), height, width, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_gray_mosaic_renders_flat() {
        let (h, w) = (8, 10);
        let out = toy_isp(&vec![0.25; h * w], h, w);
        let plane = h * w;
        for c in 0..3 {
            let want = (COLOR_MATRIX[c].iter().sum::<f64>() * 0.25).clamp(0.0, 1.0).powf(1.0 / 2.2);
            assert!(out[c * plane..(c + 1) * plane].iter().all(|v| (v - want).abs() < 1e-12));
        }
    }

    #[test]
    fn pairs_are_valid_and_seeded() {
        let a = synthetic_pair::<f32>("x", 64, 64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = synthetic_pair::<f32>("x", 64, 64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.mosaic, b.mosaic);
        assert_eq!(a.raw.data.shape(), &[4, 32, 32]);
        assert_eq!(a.srgb.data.shape(), &[3, 64, 64]);
        assert!(a.raw.data.data().iter().chain(a.srgb.data.data()).all(|v| (0.0..=1.0).contains(v)));
    }
}
