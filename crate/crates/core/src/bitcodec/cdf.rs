//! Quantized cumulative frequency tables.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::entropy::{interval_likelihood, std_normal_cdf};
use crate::error::{Error, Result};

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;

/// Default symbol support for coded latents.
pub const SUPPORT: (i32, i32) = (-127, 128);

/// `cdf[i]` is the cumulative frequency below symbol `offset + i`;
/// `cdf[0] = 0`, `cdf[n] = TOTAL`, and every bin holds at least one unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    pub offset: i32,
    pub cdf: Vec<u32>,
}

impl CdfTable {
    pub fn from_frequencies(offset: i32, freqs: &[u32]) -> Result<Self> {
        if freqs.len() < 2 {
            return Err(Error::InvalidSpec("a CDF table needs at least two symbols".into()));
        }
        if freqs.iter().any(|&f| f == 0) {
            return Err(Error::InvalidSpec("zero-frequency bin".into()));
        }
        let mut cdf = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cdf.push(0);
        for &f in freqs {
            acc = acc.checked_add(f).ok_or_else(|| Error::InvalidSpec("frequency overflow".into()))?;
            cdf.push(acc);
        }
        if acc != TOTAL {
            return Err(Error::InvalidSpec(format!("frequencies sum to {acc}, expected {TOTAL}")));
        }
        Ok(CdfTable { offset, cdf })
    }

    pub fn min_symbol(&self) -> i32 {
        self.offset
    }

    pub fn max_symbol(&self) -> i32 {
        self.offset + self.cdf.len() as i32 - 2
    }

    pub fn freq(&self, symbol: i32) -> u32 {
        let i = (symbol.clamp(self.min_symbol(), self.max_symbol()) - self.offset) as usize;
        self.cdf[i + 1] - self.cdf[i]
    }

    /// Probability model of a symbol under the table.
    pub fn probability(&self, symbol: i32) -> f64 {
        self.freq(symbol) as f64 / TOTAL as f64
    }
}

/// Rounds a probability vector to integer frequencies summing to exactly
/// `TOTAL`, each at least 1. The cumulative distribution is rounded, then
/// every empty bin takes one unit from whichever bin gives it up most
/// cheaply. Moderately likely tail bins are never drained to a single unit,
/// so a symbol the model underrates still costs only a few bits.
pub fn quantize_pmf(pmf: &[f64]) -> Vec<u32> {
    let n = pmf.len();
    assert!(n >= 2 && n <= TOTAL as usize, "pmf of {n} bins");
    let clean = |v: f64| if v.is_finite() { v.max(0.0) } else { 0.0 };
    let mass: f64 = pmf.iter().map(|&v| clean(v)).sum();
    let p: Vec<f64> = if mass > 0.0 && mass.is_finite() {
        pmf.iter().map(|&v| clean(v) / mass).collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    let mut f = Vec::with_capacity(n);
    let (mut acc, mut prev) = (0.0, 0u32);
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        let c = if i + 1 == n { TOTAL } else { ((acc * TOTAL as f64).round() as u32).min(TOTAL) };
        f.push(c.saturating_sub(prev));
        prev = prev.max(c);
    }
    // Each empty bin gets one unit from the bin whose loss of a unit raises
    // the expected code length least, `p·log(f/(f−1))`.
    let cost = |j: usize, f: u32| p[j] * (f as f64 / (f - 1) as f64).ln();
    let mut donors: BinaryHeap<Reverse<(u64, usize)>> =
        (0..n).filter(|&i| f[i] > 1).map(|i| Reverse((cost(i, f[i]).to_bits(), i))).collect();
    for i in 0..n {
        if f[i] == 0 {
            let Reverse((_, j)) = donors.pop().expect("TOTAL exceeds the bin count");
            f[j] -= 1;
            f[i] = 1;
            if f[j] > 1 {
                donors.push(Reverse((cost(j, f[j]).to_bits(), j)));
            }
        }
    }
    f
}

/// Interval probabilities of every integer in `[lo, hi]` under N(mu, sigma²),
/// with the mass beyond each end folded into the edge bins.
pub fn gaussian_pmf(mu: f64, sigma: f64, lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi)
        .map(|k| {
            let k = k as f64;
            if k == lo as f64 {
                std_normal_cdf((k + 0.5 - mu) / sigma)
            } else if k == hi as f64 {
                std_normal_cdf((mu - (k - 0.5)) / sigma)
            } else {
                interval_likelihood(k, mu, sigma)
            }
        })
        .collect()
}

/// 16-bit table for a discretized Gaussian over `[lo, hi]`.
pub fn gaussian_to_cdf(mu: f64, sigma: f64, lo: i32, hi: i32) -> CdfTable {
    let f = quantize_pmf(&gaussian_pmf(mu, sigma, lo, hi));
    CdfTable::from_frequencies(lo, &f).expect("quantized pmf is a valid table")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::SIGMA_MIN;
    use proptest::prelude::*;

    #[test]
    fn unit_gaussian_center_bin() {
        let t = gaussian_to_cdf(0.0, 1.0, -16, 16);
        let f = t.freq(0) as i64;
        // Rounding alone gives 0.382925 * 65536 = 25095.4. The 24 bins with
        // |k| >= 5 hold under half a unit together and need one each; losing a
        // unit costs about 1/TOTAL bits from any well-populated bin, so the
        // units come from them in proportion to mass: 24 * 0.3829 = 9.2.
        assert!((f - 25086).abs() <= 1, "{f}");
        assert_eq!(*t.cdf.last().unwrap(), TOTAL);
    }

    #[test]
    fn narrow_gaussian_keeps_every_bin() {
        let (lo, hi) = SUPPORT;
        for mu in [-127.0, -3.3, 0.0, 0.49, 128.0, 400.0] {
            let t = gaussian_to_cdf(mu, SIGMA_MIN, lo, hi);
            assert_eq!(t.cdf.len(), 257);
            assert!(t.cdf.windows(2).all(|w| w[1] > w[0]));
            assert_eq!(t.cdf[256], TOTAL);
        }
    }

    #[test]
    fn tail_bins_survive_a_narrow_table() {
        // About 250 empty bins; none of the units may come from the
        // populated tail.
        let (lo, hi) = SUPPORT;
        let pmf = gaussian_pmf(0.2, 0.63, lo, hi);
        let f = quantize_pmf(&pmf);
        for k in -3i32..=3 {
            let i = (k - lo) as usize;
            let want = pmf[i] * TOTAL as f64;
            if want >= 1.0 {
                assert!(f[i] as f64 >= want * 0.99 - 1.0, "symbol {k}: {} vs {want}", f[i]);
            }
        }
    }

    #[test]
    fn degenerate_pmfs_fall_back_to_uniform() {
        assert_eq!(quantize_pmf(&[0.0, 0.0, 0.0, 0.0]), vec![TOTAL / 4; 4]);
        assert_eq!(quantize_pmf(&[f64::NAN, f64::NAN]), vec![TOTAL / 2; 2]);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(CdfTable::from_frequencies(0, &[TOTAL]).is_err());
        assert!(CdfTable::from_frequencies(0, &[0, TOTAL]).is_err());
        assert!(CdfTable::from_frequencies(0, &[5, 6]).is_err());
    }

    proptest! {
        #[test]
        fn quantized_tables_are_valid(mu in -200.0f64..200.0, sigma in SIGMA_MIN..80.0, lo in -130i32..0, width in 1i32..300) {
            let t = gaussian_to_cdf(mu, sigma, lo, lo + width);
            prop_assert_eq!(t.cdf[0], 0);
            prop_assert_eq!(*t.cdf.last().unwrap(), TOTAL);
            prop_assert!(t.cdf.windows(2).all(|w| w[1] > w[0]));
        }

        #[test]
        fn quantization_tracks_probabilities(ps in proptest::collection::vec(0.0f64..1.0, 2..64)) {
            let f = quantize_pmf(&ps);
            prop_assert_eq!(f.iter().sum::<u32>(), TOTAL);
            let mass: f64 = ps.iter().sum();
            if mass > 0.0 {
                for (p, &q) in ps.iter().zip(&f) {
                    let want = p / mass * TOTAL as f64;
                    prop_assert!((q as f64 - want).abs() <= ps.len() as f64 + 1.0);
                    // Filling empty bins takes at most a proportional share.
                    prop_assert!(q as f64 >= want * (1.0 - ps.len() as f64 / TOTAL as f64) - 2.0, "{} < {}", q, want);
                }
            }
        }
    }
}
