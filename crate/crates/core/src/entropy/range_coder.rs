//! Byte-oriented range coder with a 56-bit window and carry propagation.
//!
//! The encoder keeps `low` in a 56-bit window plus one carry bit. Pending
//! `0xFF` bytes are held back until a carry either resolves them or not.
//! The first emitted byte is always zero and is dropped; the decoder
//! restores it implicitly. Trailing zero bytes are trimmed because the
//! decoder reads zeros past the end.

use alloc::vec::Vec;

use crate::error::{Error, Result};

const WINDOW: u32 = 56;
const TOP: u64 = 1 << WINDOW;
const BOTTOM: u64 = 1 << (WINDOW - 8);
const MASK: u64 = TOP - 1;
/// Largest admissible frequency total.
pub const MAX_TOTAL_BITS: u32 = 24;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u64,
    cache: u8,
    pending: u64,
    first: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: MASK,
            cache: 0,
            pending: 0,
            first: true,
            out: Vec::new(),
        }
    }

    /// Encode the interval `[start, start + freq)` out of `total`.
    pub fn encode(&mut self, start: u32, freq: u32, total: u32) {
        debug_assert!(freq > 0 && start + freq <= total && total <= 1 << MAX_TOTAL_BITS);
        let r = self.range / total as u64;
        self.low += r * start as u64;
        self.range = r * freq as u64;
        while self.range < BOTTOM {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// One equiprobable bit.
    pub fn encode_bit(&mut self, bit: bool) {
        self.encode(bit as u32, 1, 2);
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF << (WINDOW - 8) || self.low >= TOP {
            let carry = (self.low >> WINDOW) as u8;
            if self.first {
                self.first = false;
            } else {
                self.out.push(self.cache.wrapping_add(carry));
            }
            for _ in 0..self.pending {
                self.out.push(0xFFu8.wrapping_add(carry));
            }
            self.pending = 0;
            self.cache = ((self.low >> (WINDOW - 8)) & 0xFF) as u8;
        } else {
            self.pending += 1;
        }
        self.low = (self.low << 8) & MASK;
    }

    pub fn finish(mut self) -> Vec<u8> {
        // Pick the value in [low, low + range) with the most trailing zeros.
        let hi = self.low + self.range;
        for k in (0..=WINDOW).rev() {
            let m = (1u64 << k) - 1;
            let v = (self.low + m) & !m;
            if v >= self.low && v < hi {
                self.low = v;
                break;
            }
        }
        for _ in 0..=WINDOW / 8 {
            self.shift_low();
        }
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u64,
    range: u64,
    r: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut d = Self {
            data,
            pos: 0,
            code: 0,
            range: MASK,
            r: 0,
        };
        for _ in 0..WINDOW / 8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Bytes consumed beyond the end of the input.
    pub fn overrun(&self) -> usize {
        self.pos.saturating_sub(self.data.len())
    }

    /// Cumulative frequency of the next symbol; must be followed by
    /// [`RangeDecoder::consume`].
    pub fn peek(&mut self, total: u32) -> Result<u32> {
        self.r = self.range / total as u64;
        let v = self.code / self.r;
        if v >= total as u64 {
            return Err(Error::Coding(alloc::format!(
                "range decoder state out of bounds ({v} >= {total})"
            )));
        }
        Ok(v as u32)
    }

    pub fn consume(&mut self, start: u32, freq: u32) {
        self.code -= self.r * start as u64;
        self.range = self.r * freq as u64;
        while self.range < BOTTOM {
            self.range <<= 8;
            self.code = ((self.code << 8) | self.next_byte() as u64) & MASK;
        }
    }

    pub fn decode_bit(&mut self) -> Result<bool> {
        let v = self.peek(2)?;
        self.consume(v, 1);
        Ok(v == 1)
    }
}

/// Quantized cumulative frequency table over symbols `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    cum: Vec<u32>,
}

impl FrequencyTable {
    /// Quantize probabilities to integer frequencies summing to
    /// `1 << precision`. Every entry keeps at least frequency 1; the rounding
    /// remainder goes to the largest entry.
    pub fn from_probabilities(probs: &[f64], precision: u32) -> Result<Self> {
        let total = 1u64 << precision;
        if probs.is_empty() || precision > MAX_TOTAL_BITS || probs.len() as u64 > total / 2 {
            return Err(Error::Coding(alloc::format!(
                "cannot build a {}-bit table over {} symbols",
                precision,
                probs.len()
            )));
        }
        let sum: f64 = probs.iter().map(|p| p.max(0.0)).sum();
        let norm = if sum > 0.0 { sum } else { 1.0 };
        let mut freq: Vec<u64> = probs
            .iter()
            .map(|&p| ((p.max(0.0) / norm * total as f64) as u64).max(1))
            .collect();
        let mut largest = 0;
        for i in 1..freq.len() {
            if freq[i] > freq[largest] {
                largest = i;
            }
        }
        let used: u64 = freq.iter().sum();
        if used > total {
            let excess = used - total;
            if freq[largest] <= excess {
                // Spread the excess over every entry able to give some up.
                let mut left = excess;
                for f in freq.iter_mut() {
                    let give = (*f - 1).min(left);
                    *f -= give;
                    left -= give;
                }
            } else {
                freq[largest] -= excess;
            }
        } else {
            freq[largest] += total - used;
        }
        let mut cum = Vec::with_capacity(freq.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in freq {
            acc += f as u32;
            cum.push(acc);
        }
        Ok(Self { cum })
    }

    pub fn from_frequencies(freq: &[u32]) -> Result<Self> {
        let mut cum = Vec::with_capacity(freq.len() + 1);
        cum.push(0u32);
        let mut acc = 0u64;
        for &f in freq {
            if f == 0 {
                return Err(Error::Coding("zero frequency in table".into()));
            }
            acc += f as u64;
            cum.push(acc as u32);
        }
        if freq.is_empty() || acc > 1 << MAX_TOTAL_BITS {
            return Err(Error::Coding(alloc::format!("frequency total {acc} out of range")));
        }
        Ok(Self { cum })
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> u32 {
        *self.cum.last().expect("non-empty")
    }

    pub fn freq(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    /// Model probability of `symbol`.
    pub fn probability(&self, symbol: usize) -> f64 {
        self.freq(symbol) as f64 / self.total() as f64
    }

    pub fn encode(&self, enc: &mut RangeEncoder, symbol: usize) -> Result<()> {
        if symbol >= self.len() {
            return Err(Error::Coding(alloc::format!(
                "symbol {symbol} outside table of {} entries",
                self.len()
            )));
        }
        enc.encode(self.cum[symbol], self.freq(symbol), self.total());
        Ok(())
    }

    pub fn decode(&self, dec: &mut RangeDecoder<'_>) -> Result<usize> {
        let v = dec.peek(self.total())?;
        let s = self.cum.partition_point(|&c| c <= v) - 1;
        dec.consume(self.cum[s], self.freq(s));
        Ok(s)
    }
}

/// Elias-gamma code of `value >= 1` with equiprobable bits.
pub fn encode_elias_gamma(enc: &mut RangeEncoder, value: u64) {
    debug_assert!(value >= 1);
    let n = 63 - value.leading_zeros();
    for _ in 0..n {
        enc.encode_bit(false);
    }
    for i in (0..=n).rev() {
        enc.encode_bit((value >> i) & 1 == 1);
    }
}

pub fn decode_elias_gamma(dec: &mut RangeDecoder<'_>) -> Result<u64> {
    let mut n = 0;
    while !dec.decode_bit()? {
        n += 1;
        if n > 62 {
            return Err(Error::Coding("Elias-gamma prefix too long".into()));
        }
    }
    let mut v = 1u64;
    for _ in 0..n {
        v = (v << 1) | dec.decode_bit()? as u64;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_stream_is_empty() {
        let bytes = RangeEncoder::new().finish();
        assert!(bytes.is_empty());
    }

    #[test]
    fn uniform_four_symbols_costs_two_bits_each() {
        let t = FrequencyTable::from_frequencies(&[1, 1, 1, 1]).unwrap();
        let syms = [0usize, 3, 2, 1, 1, 2, 3, 0];
        let mut enc = RangeEncoder::new();
        for &s in &syms {
            t.encode(&mut enc, s).unwrap();
        }
        let bytes = enc.finish();
        assert!(bytes.len() <= 2 + 8, "{} bytes", bytes.len());
        let mut dec = RangeDecoder::new(&bytes);
        let back: Vec<usize> = syms.iter().map(|_| t.decode(&mut dec).unwrap()).collect();
        assert_eq!(back, syms);
    }

    #[test]
    fn carries_propagate_through_pending_bytes() {
        // A near-certain symbol repeated drives low towards the top of the
        // window and forces long runs of 0xFF followed by carries.
        let t = FrequencyTable::from_frequencies(&[1, (1 << 24) - 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let syms: Vec<usize> = (0..20_000).map(|_| if rng.gen_bool(0.001) { 0 } else { 1 }).collect();
        let mut enc = RangeEncoder::new();
        for &s in &syms {
            t.encode(&mut enc, s).unwrap();
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        for &s in &syms {
            assert_eq!(t.decode(&mut dec).unwrap(), s);
        }
    }

    #[test]
    fn elias_gamma_round_trip() {
        let values = [1u64, 2, 3, 4, 7, 8, 1000, u32::MAX as u64, 1 << 40];
        let mut enc = RangeEncoder::new();
        for &v in &values {
            encode_elias_gamma(&mut enc, v);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        for &v in &values {
            assert_eq!(decode_elias_gamma(&mut dec).unwrap(), v);
        }
    }

    #[test]
    fn table_quantization_keeps_every_symbol() {
        let t = FrequencyTable::from_probabilities(&[0.999_999_9, 1e-12, 0.0, 1e-7], 16).unwrap();
        assert_eq!(t.total(), 1 << 16);
        assert!((0..4).all(|s| t.freq(s) >= 1));
        let flat = FrequencyTable::from_probabilities(&[1.0; 5], 12).unwrap();
        assert_eq!(flat.total(), 4096);
        assert!(FrequencyTable::from_probabilities(&[], 12).is_err());
        let t2 = FrequencyTable::from_frequencies(&[2, 3]).unwrap();
        let mut enc = RangeEncoder::new();
        assert!(t2.encode(&mut enc, 2).is_err());
    }
}
