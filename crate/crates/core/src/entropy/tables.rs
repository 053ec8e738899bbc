//! Windowed symbol tables with an escape entry.
//!
//! A table covers the integers `lo..=hi`; entry `hi - lo + 1` is the escape.
//! Escaped values are sent as a sign bit followed by the Elias-gamma code of
//! the distance past the window edge.

use alloc::vec::Vec;

use super::likelihood::gaussian_bin_mass;
use super::range_coder::{decode_elias_gamma, encode_elias_gamma, FrequencyTable, RangeDecoder, RangeEncoder};
use super::spike_slab::SpikeSlabParams;
use crate::error::{Error, Result};

/// Frequency precision of every table.
pub const PRECISION: u32 = 24;
/// Largest window half-width of a Gaussian table.
pub const MAX_RADIUS: i64 = 64;
/// Half-width of the weight table.
pub const WEIGHT_RADIUS: i64 = 64;

#[derive(Debug, Clone)]
pub struct WindowTable {
    lo: i64,
    hi: i64,
    table: FrequencyTable,
}

impl WindowTable {
    /// `mass(v)` gives the model probability of each in-window integer; the
    /// escape takes whatever mass is left.
    pub fn new(lo: i64, hi: i64, mass: impl Fn(i64) -> f64) -> Result<Self> {
        let mut probs: Vec<f64> = (lo..=hi).map(&mass).collect();
        let inside: f64 = probs.iter().sum();
        probs.push((1.0 - inside).max(0.0));
        Ok(Self {
            lo,
            hi,
            table: FrequencyTable::from_probabilities(&probs, PRECISION)?,
        })
    }

    /// Table for a value quantized from `N(mean, sigma^2)`.
    pub fn gaussian(mean: f64, sigma: f64) -> Result<Self> {
        if !mean.is_finite() || !sigma.is_finite() {
            return Err(Error::Coding(alloc::format!("non-finite model ({mean}, {sigma})")));
        }
        let centre = libm::round(mean.clamp(-1e9, 1e9)) as i64;
        let radius = (libm::ceil(10.0 * sigma) as i64 + 1).clamp(2, MAX_RADIUS);
        Self::new(centre - radius, centre + radius, |v| {
            gaussian_bin_mass(v as f64, mean, sigma)
        })
    }

    /// Table over quantized weight indices `k` (grid point `k * step`).
    pub fn weights(params: &SpikeSlabParams) -> Result<Self> {
        Self::new(-WEIGHT_RADIUS, WEIGHT_RADIUS, |k| {
            params.bin_mass(k as f64 * params.step)
        })
    }

    fn escape(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    /// Model probability of an in-window value, or of the escape entry.
    pub fn probability(&self, v: i64) -> f64 {
        if (self.lo..=self.hi).contains(&v) {
            self.table.probability((v - self.lo) as usize)
        } else {
            self.table.probability(self.escape())
        }
    }

    /// Bits the coder spends on `v`, escape payload included.
    pub fn cost_bits(&self, v: i64) -> f64 {
        let p = -libm::log2(self.probability(v));
        if (self.lo..=self.hi).contains(&v) {
            p
        } else {
            let d = if v > self.hi { v - self.hi } else { self.lo - v } as u64;
            p + 1.0 + (2 * (63 - d.leading_zeros()) + 1) as f64
        }
    }

    pub fn encode(&self, enc: &mut RangeEncoder, v: i64) -> Result<()> {
        if (self.lo..=self.hi).contains(&v) {
            return self.table.encode(enc, (v - self.lo) as usize);
        }
        self.table.encode(enc, self.escape())?;
        let above = v > self.hi;
        enc.encode_bit(above);
        let d = if above { v - self.hi } else { self.lo - v };
        encode_elias_gamma(enc, d as u64);
        Ok(())
    }

    pub fn decode(&self, dec: &mut RangeDecoder<'_>) -> Result<i64> {
        let s = self.table.decode(dec)?;
        if s < self.escape() {
            return Ok(self.lo + s as i64);
        }
        let above = dec.decode_bit()?;
        let d = decode_elias_gamma(dec)?;
        if d > i32::MAX as u64 {
            return Err(Error::Coding("escaped value out of range".into()));
        }
        Ok(if above { self.hi + d as i64 } else { self.lo - d as i64 })
    }
}
