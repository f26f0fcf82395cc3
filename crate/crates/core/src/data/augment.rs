//! The eight flips and rotations of the square, applied to sRGB planes and,
//! through the mosaic, to packed RAW.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::bayer::{pack_rggb, unpack_rggb, BayerPattern};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Augment {
    Identity,
    HFlip,
    VFlip,
    Rot90,
    Rot180,
    Rot270,
    /// Horizontal flip, then 90° rotation.
    FlipRot90,
    /// Horizontal flip, then 270° rotation.
    FlipRot270,
}

impl Augment {
    pub const ALL: [Augment; 8] = [
        Augment::Identity,
        Augment::HFlip,
        Augment::VFlip,
        Augment::Rot90,
        Augment::Rot180,
        Augment::Rot270,
        Augment::FlipRot90,
        Augment::FlipRot270,
    ];

    pub fn sample(rng: &mut impl Rng) -> Self {
        Self::ALL[rng.gen_range(0..Self::ALL.len())]
    }

    fn swaps_axes(self) -> bool {
        matches!(self, Augment::Rot90 | Augment::Rot270 | Augment::FlipRot90 | Augment::FlipRot270)
    }

    /// Source pixel of output pixel `(i, j)` for an `h×w` input.
    fn source(self, i: usize, j: usize, h: usize, w: usize) -> (usize, usize) {
        // rotations are counter-clockwise
        match self {
            Augment::Identity => (i, j),
            Augment::HFlip => (i, w - 1 - j),
            Augment::VFlip => (h - 1 - i, j),
            Augment::Rot180 => (h - 1 - i, w - 1 - j),
            Augment::Rot90 => (j, w - 1 - i),
            Augment::Rot270 => (h - 1 - j, i),
            Augment::FlipRot90 => (j, i),
            Augment::FlipRot270 => (h - 1 - j, w - 1 - i),
        }
    }

    /// Applies the transform to every plane of `[C, H, W]`.
    pub fn apply_planes<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        let [c, h, w] = *x.shape() else { panic!("augment expects [C, H, W], got {:?}", x.shape()) };
        let (oh, ow) = if self.swaps_axes() { (w, h) } else { (h, w) };
        let src = x.data();
        let mut out = Tensor::zeros(&[c, oh, ow]);
        for (p, plane) in out.data_mut().chunks_mut(oh * ow).enumerate() {
            for i in 0..oh {
                for j in 0..ow {
                    let (si, sj) = self.source(i, j, h, w);
                    plane[i * ow + j] = src[(p * h + si) * w + sj];
                }
            }
        }
        out
    }

    /// Applies the transform to the mosaic behind a packed `[4, h, w]` RAW
    /// and repacks, so every output channel still holds a single phase.
    pub fn apply_packed<T: Scalar>(self, raw: &Tensor<T>) -> Result<Tensor<T>> {
        let mosaic = unpack_rggb(raw)?;
        pack_rggb(&self.apply_planes(&mosaic), BayerPattern::Rggb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| i as f64)
    }

    #[test]
    fn hflip_swaps_phases_within_rows() {
        let raw = ramp(&[4, 3, 5]);
        let out = Augment::HFlip.apply_packed(&raw).unwrap();
        // (R, G1, G2, B) → (G1, R, B, G2), columns reversed
        for (dst, src) in [(0, 1), (1, 0), (2, 3), (3, 2)] {
            for i in 0..3 {
                for j in 0..5 {
                    assert_eq!(out.data()[(dst * 3 + i) * 5 + j], raw.data()[(src * 3 + i) * 5 + 4 - j]);
                }
            }
        }
    }

    #[test]
    fn group_structure() {
        let x = ramp(&[2, 4, 6]);
        let twice = |a: Augment| a.apply_planes(&a.apply_planes(&x));
        assert_eq!(twice(Augment::HFlip), x);
        assert_eq!(twice(Augment::VFlip), x);
        assert_eq!(twice(Augment::Rot90), Augment::Rot180.apply_planes(&x));
        assert_eq!(Augment::Rot90.apply_planes(&Augment::Rot270.apply_planes(&x)), x);
        assert_eq!(twice(Augment::FlipRot90), x);
        assert_eq!(Augment::Rot90.apply_planes(&Augment::HFlip.apply_planes(&x)), Augment::FlipRot90.apply_planes(&x));
        assert_eq!(Augment::Rot270.apply_planes(&Augment::HFlip.apply_planes(&x)), Augment::FlipRot270.apply_planes(&x));
        let outs: std::collections::HashSet<Vec<u64>> =
            Augment::ALL.iter().map(|a| a.apply_planes(&ramp(&[1, 4, 4])).data().iter().map(|v| v.to_bits()).collect()).collect();
        assert_eq!(outs.len(), 8);
    }

    #[test]
    fn rotation_is_counter_clockwise() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = Augment::Rot90.apply_planes(&x);
        assert_eq!(r.shape(), &[1, 3, 2]);
        assert_eq!(r.data(), &[3.0, 6.0, 2.0, 5.0, 1.0, 4.0]);
    }

    #[test]
    fn packed_transform_commutes_with_mosaic_transform() {
        let mosaic = Tensor::<f64>::from_fn(&[1, 8, 12], |i| (i as f64 * 0.37).cos());
        let raw = pack_rggb(&mosaic, BayerPattern::Rggb).unwrap();
        for a in Augment::ALL {
            let via_raw = unpack_rggb(&a.apply_packed(&raw).unwrap()).unwrap();
            assert_eq!(via_raw, a.apply_planes(&mosaic), "{a:?}");
        }
    }
}
