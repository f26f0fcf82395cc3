//! Carry-propagating range coder over 16-bit frequency tables.
//!
//! The encoder keeps a 64-bit `low` so a carry out of bit 32 can ripple into
//! bytes already produced; pending `0xFF` bytes are held back in
//! `cache`/`cache_size` until the carry is resolved.

use crate::bitcodec::cdf::{CdfTable, PRECISION, TOTAL};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;
/// Bytes produced by [`RangeEncoder::finish`] for an empty stream.
pub const FLUSH_BYTES: usize = 5;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    /// Codes the interval `[start, start + freq)` of a `TOTAL`-sized range.
    pub fn encode(&mut self, start: u32, freq: u32) {
        debug_assert!(freq > 0 && start + freq <= TOTAL);
        let r = self.range >> PRECISION;
        self.low += r as u64 * start as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode_bit(&mut self, bit: bool) {
        let half = TOTAL / 2;
        self.encode(if bit { half } else { 0 }, half);
    }

    /// Equiprobable bits, most significant first.
    pub fn encode_bits(&mut self, value: u32, count: u32) {
        for i in (0..count).rev() {
            self.encode_bit((value >> i) & 1 == 1);
        }
    }

    /// Order-0 exponential Golomb code of `n`.
    pub fn encode_exp_golomb(&mut self, n: u32) {
        let v = n as u64 + 1;
        let len = 64 - v.leading_zeros();
        for _ in 1..len {
            self.encode_bit(false);
        }
        for i in (0..len).rev() {
            self.encode_bit((v >> i) & 1 == 1);
        }
    }

    /// Codes `symbol` with `table`. Values beyond the support land in the
    /// edge bins followed by an exp-Golomb escape of the overshoot.
    pub fn encode_symbol(&mut self, symbol: i32, table: &CdfTable) {
        let (lo, hi) = (table.min_symbol(), table.max_symbol());
        let clamped = symbol.clamp(lo, hi);
        let idx = (clamped - lo) as usize;
        self.encode(table.cdf[idx], table.cdf[idx + 1] - table.cdf[idx]);
        if clamped == lo {
            self.encode_exp_golomb((lo as i64 - symbol as i64) as u32);
        } else if clamped == hi {
            self.encode_exp_golomb((symbol as i64 - hi as i64) as u32);
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..FLUSH_BYTES {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder { data, pos: 0, code: 0, range: u32::MAX };
        if d.next_byte()? != 0 {
            return Err(Error::Decode { offset: 0, reason: "stream must start with a zero byte".into() });
        }
        for _ in 1..FLUSH_BYTES {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = self
            .data
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::Decode { offset: self.pos, reason: "unexpected end of stream".into() })?;
        self.pos += 1;
        Ok(b)
    }

    /// Position of the next symbol inside `[0, TOTAL)`; follow with [`Self::consume`].
    fn peek(&self) -> Result<(u32, u32)> {
        let r = self.range >> PRECISION;
        let v = self.code / r;
        if v >= TOTAL {
            return Err(Error::Decode { offset: self.pos, reason: "code value outside the coding range".into() });
        }
        Ok((v, r))
    }

    fn consume(&mut self, r: u32, start: u32, freq: u32) -> Result<()> {
        self.code -= r * start;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(())
    }

    pub fn decode_bit(&mut self) -> Result<bool> {
        let (v, r) = self.peek()?;
        let half = TOTAL / 2;
        let bit = v >= half;
        self.consume(r, if bit { half } else { 0 }, half)?;
        Ok(bit)
    }

    pub fn decode_bits(&mut self, count: u32) -> Result<u32> {
        let mut v = 0;
        for _ in 0..count {
            v = (v << 1) | self.decode_bit()? as u32;
        }
        Ok(v)
    }

    pub fn decode_exp_golomb(&mut self) -> Result<u32> {
        let mut zeros = 0;
        while !self.decode_bit()? {
            zeros += 1;
            if zeros > 32 {
                return Err(Error::Decode { offset: self.pos, reason: "escape code too long".into() });
            }
        }
        let mut v: u64 = 1;
        for _ in 0..zeros {
            v = (v << 1) | self.decode_bit()? as u64;
        }
        u32::try_from(v - 1).map_err(|_| Error::Decode { offset: self.pos, reason: "escape value overflows".into() })
    }

    pub fn decode_symbol(&mut self, table: &CdfTable) -> Result<i32> {
        let (v, r) = self.peek()?;
        // Largest index with cdf[idx] <= v.
        let idx = table.cdf.partition_point(|&c| c <= v) - 1;
        self.consume(r, table.cdf[idx], table.cdf[idx + 1] - table.cdf[idx])?;
        let (lo, hi) = (table.min_symbol(), table.max_symbol());
        let s = lo + idx as i32;
        let escaped = if s == lo {
            lo as i64 - self.decode_exp_golomb()? as i64
        } else if s == hi {
            hi as i64 + self.decode_exp_golomb()? as i64
        } else {
            return Ok(s);
        };
        i32::try_from(escaped).map_err(|_| Error::Decode { offset: self.pos, reason: "symbol overflows i32".into() })
    }
}
