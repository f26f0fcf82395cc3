use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Color filter layout of the mosaic. Only RGGB is accepted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BayerPattern {
    #[default]
    #[serde(rename = "RGGB")]
    Rggb,
}

impl BayerPattern {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(BayerPattern::Rggb),
            _ => Err(Error::UnsupportedPattern(s.to_string())),
        }
    }
}

fn plane_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [h, w] | [1, h, w] => Ok((h, w)),
        _ => Err(Error::InvalidShape(format!("expected an [H, W] or [1, H, W] mosaic, got {shape:?}"))),
    }
}

/// `[1, H, W]` mosaic → `[4, H/2, W/2]` with channels (R, G1, G2, B):
/// channel `c` at `(i, j)` is the mosaic at `(2i + c/2, 2j + c%2)`.
pub fn pack_rggb<T: Scalar>(mosaic: &Tensor<T>, pattern: BayerPattern) -> Result<Tensor<T>> {
    let BayerPattern::Rggb = pattern;
    let (h, w) = plane_dims(mosaic.shape())?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidShape(format!("mosaic {h}x{w} has an odd dimension")));
    }
    let (hh, hw) = (h / 2, w / 2);
    let src = mosaic.data();
    let mut out = Tensor::zeros(&[4, hh, hw]);
    let dst = out.data_mut();
    for c in 0..4 {
        let (dy, dx) = (c / 2, c % 2);
        for i in 0..hh {
            for j in 0..hw {
                dst[(c * hh + i) * hw + j] = src[(2 * i + dy) * w + 2 * j + dx];
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pack_rggb`]: `[4, h, w]` → `[1, 2h, 2w]`.
pub fn unpack_rggb<T: Scalar>(packed: &Tensor<T>) -> Result<Tensor<T>> {
    let [4, hh, hw] = *packed.shape() else {
        return Err(Error::InvalidShape(format!("expected [4, h, w], got {:?}", packed.shape())));
    };
    let (h, w) = (2 * hh, 2 * hw);
    let src = packed.data();
    let mut out = Tensor::zeros(&[1, h, w]);
    let dst = out.data_mut();
    for c in 0..4 {
        let (dy, dx) = (c / 2, c % 2);
        for i in 0..hh {
            for j in 0..hw {
                dst[(2 * i + dy) * w + 2 * j + dx] = src[(c * hh + i) * hw + j];
            }
        }
    }
    Ok(out)
}

/// `clamp((v − black)/(white − black), 0, 1)`.
pub fn normalize_raw(values: &[u16], black_level: u32, white_level: u32) -> Result<Vec<f64>> {
    if white_level <= black_level {
        return Err(Error::InvalidMetadata(format!("white level {white_level} must exceed black level {black_level}")));
    }
    let (b, range) = (black_level as f64, (white_level - black_level) as f64);
    Ok(values.iter().map(|&v| ((v as f64 - b) / range).clamp(0.0, 1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_mosaic_packs_to_one_pixel_per_phase() {
        let m = Tensor::<f64>::from_vec(&[1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let p = pack_rggb(&m, BayerPattern::Rggb).unwrap();
        assert_eq!(p.shape(), &[4, 1, 1]);
        assert_eq!(p.data(), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn constant_mosaic_stays_constant() {
        let p = pack_rggb(&Tensor::<f32>::full(&[8, 6], 0.7), BayerPattern::Rggb).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn packing_matches_index_loop() {
        let m = Tensor::<f64>::from_fn(&[1, 6, 8], |i| (i as f64 * 0.61).sin());
        let p = pack_rggb(&m, BayerPattern::Rggb).unwrap();
        assert_eq!(p.shape(), &[4, 3, 4]);
        let at = |y: usize, x: usize| m.data()[y * 8 + x];
        for (c, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            for i in 0..3 {
                for j in 0..4 {
                    assert_eq!(p.data()[(c * 3 + i) * 4 + j], at(2 * i + dy, 2 * j + dx));
                }
            }
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(pack_rggb(&Tensor::<f64>::zeros(&[1, 3, 4]), BayerPattern::Rggb), Err(Error::InvalidShape(_))));
        assert!(matches!(BayerPattern::parse("BGGR"), Err(Error::UnsupportedPattern(_))));
        assert_eq!(BayerPattern::parse("rggb").unwrap(), BayerPattern::Rggb);
        assert!(matches!(normalize_raw(&[1], 100, 100), Err(Error::InvalidMetadata(_))));
    }

    #[test]
    fn normalization_endpoints_and_midpoint() {
        let v = normalize_raw(&[512, 16383, 8447, 0, 65535], 512, 16383).unwrap();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 1.0);
        assert!((v[2] - 7935.0 / 15871.0).abs() < 1e-15);
        assert!((v[2] - 0.499968).abs() < 1e-6);
        assert_eq!((v[3], v[4]), (0.0, 1.0));
    }

    proptest! {
        #[test]
        fn unpack_inverts_pack(h in 1usize..8, w in 1usize..8, seed: u64) {
            let m = Tensor::<f64>::from_fn(&[1, 2 * h, 2 * w], |i| ((i as u64 ^ seed) % 1000) as f64);
            let p = pack_rggb(&m, BayerPattern::Rggb).unwrap();
            prop_assert_eq!(unpack_rggb(&p).unwrap(), m);
        }
    }
}
