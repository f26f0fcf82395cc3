//! Aligned random patches and a seeded epoch sampler.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{check_pair, Augment, RawImage, SrgbImage};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// An aligned crop: RAW `[4, p, p]` and sRGB `[3, 2p, 2p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair<T> {
    pub raw: Tensor<T>,
    pub srgb: Tensor<T>,
    /// Top-left corner in packed coordinates.
    pub offset: (usize, usize),
    pub augment: Augment,
}

/// A stacked minibatch: RAW `[B, 4, p, p]`, sRGB `[B, 3, 2p, 2p]`.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub raw: Tensor<T>,
    pub srgb: Tensor<T>,
}

/// Per-worker generator. Worker streams are independent, and a given
/// `(seed, worker)` always produces the same sequence.
pub fn worker_rng(seed: u64, worker: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker);
    rng
}

fn crop<T: Scalar>(x: &Tensor<T>, top: usize, left: usize, size: usize) -> Tensor<T> {
    let [c, h, w] = *x.shape() else { unreachable!() };
    debug_assert!(top + size <= h && left + size <= w);
    let src = x.data();
    let mut out = Vec::with_capacity(c * size * size);
    for p in 0..c {
        for i in 0..size {
            let row = (p * h + top + i) * w + left;
            out.extend_from_slice(&src[row..row + size]);
        }
    }
    Tensor::from_vec(&[c, size, size], out).expect("crop size matches")
}

/// Crops a random `patch × patch` RAW window and the matching `2·patch`
/// sRGB window, then applies one random flip/rotation to both.
pub fn extract_patch_pair<T: Scalar>(raw: &RawImage<T>, srgb: &SrgbImage<T>, patch: usize, rng: &mut impl Rng) -> Result<PatchPair<T>> {
    check_pair(raw, srgb)?;
    let (h, w) = raw.packed_dims();
    if patch == 0 || patch > h || patch > w {
        return Err(Error::PatchTooLarge { patch, height: h, width: w });
    }
    let (top, left) = (rng.gen_range(0..=h - patch), rng.gen_range(0..=w - patch));
    let augment = Augment::sample(rng);
    let r = crop(&raw.data, top, left, patch);
    let s = crop(&srgb.data, 2 * top, 2 * left, 2 * patch);
    Ok(PatchPair { raw: augment.apply_packed(&r)?, srgb: augment.apply_planes(&s), offset: (top, left), augment })
}

/// Draws images without replacement within an epoch, reshuffling after
/// every pass, and cuts one patch per drawn image.
pub struct PatchSampler {
    patch: usize,
    rng: ChaCha8Rng,
    queue: Vec<usize>,
    epochs: u64,
}

impl PatchSampler {
    pub fn new(patch: usize, seed: u64, worker: u64) -> Self {
        PatchSampler { patch, rng: worker_rng(seed, worker), queue: Vec::new(), epochs: 0 }
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    /// Completed passes over the image list.
    pub fn epochs(&self) -> u64 {
        self.epochs
    }

    fn next_index(&mut self, n: usize) -> usize {
        if self.queue.is_empty() {
            self.queue = (0..n).collect();
            self.queue.shuffle(&mut self.rng);
            self.queue.reverse();
            self.epochs += 1;
        }
        self.queue.pop().expect("queue refilled")
    }

    pub fn next_batch<T: Scalar>(&mut self, pairs: &[(RawImage<T>, SrgbImage<T>)], batch: usize) -> Result<Batch<T>> {
        if pairs.is_empty() || batch == 0 {
            return Err(Error::Config("a batch needs at least one image and a positive batch size".into()));
        }
        let mut raws = Vec::with_capacity(batch);
        let mut srgbs = Vec::with_capacity(batch);
        for _ in 0..batch {
            let (raw, srgb) = &pairs[self.next_index(pairs.len())];
            let p = extract_patch_pair(raw, srgb, self.patch, &mut self.rng)?;
            raws.push(p.raw);
            srgbs.push(p.srgb);
        }
        Ok(Batch { raw: Tensor::stack(&raws)?, srgb: Tensor::stack(&srgbs)? })
    }
}
