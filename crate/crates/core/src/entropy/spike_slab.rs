//! Spike-and-slab prior over quantized weight updates.
//!
//! `p(w) = [N(w | 0, slab^2) + alpha * N(w | 0, spike^2)] / (1 + alpha)`.
//! Training charges the mass of the quantization bin centred on the
//! continuous weight; the coder uses the same masses at grid points.

use libm::log;
use serde::{Deserialize, Serialize};

use super::likelihood::{normal_cdf, normal_pdf};
use crate::error::{Error, Result};

const LN_2: f64 = core::f64::consts::LN_2;
/// Smallest bin mass the surrogate charges.
const MASS_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeSlabParams {
    pub slab_std: f64,
    pub spike_std: f64,
    pub alpha: f64,
    /// Quantization bin width.
    pub step: f64,
}

impl Default for SpikeSlabParams {
    fn default() -> Self {
        let step = 0.005;
        Self {
            slab_std: 0.05,
            spike_std: step / 6.0,
            alpha: 1000.0,
            step,
        }
    }
}

impl SpikeSlabParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.slab_std.is_finite()
            && self.spike_std > 0.0
            && self.spike_std < self.slab_std
            && self.alpha > 0.0
            && self.step > 0.0
            && self.step.is_finite()
            && self.alpha.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!(
                "invalid spike-and-slab parameters {self:?}"
            )))
        }
    }

    /// Unnormalized density (without the `1 / (1 + alpha)` factor cancelled).
    pub fn density(&self, w: f64) -> f64 {
        (normal_pdf(w / self.slab_std) / self.slab_std + self.alpha * normal_pdf(w / self.spike_std) / self.spike_std)
            / (1.0 + self.alpha)
    }

    fn component_mass(w: f64, half: f64, std: f64) -> f64 {
        let (u, l) = ((w + half) / std, (w - half) / std);
        if w > 0.0 {
            normal_cdf(-l) - normal_cdf(-u)
        } else {
            normal_cdf(u) - normal_cdf(l)
        }
    }

    /// Prior mass of the bin of width `step` centred on `w`.
    pub fn bin_mass(&self, w: f64) -> f64 {
        let half = 0.5 * self.step;
        (Self::component_mass(w, half, self.slab_std) + self.alpha * Self::component_mass(w, half, self.spike_std))
            / (1.0 + self.alpha)
    }

    /// Bits charged for one weight in continuous (training) mode.
    pub fn bits(&self, w: f64) -> f64 {
        -log(self.bin_mass(w).max(MASS_FLOOR)) / LN_2
    }

    /// Bits and their derivative with respect to `w`.
    pub fn bits_and_grad(&self, w: f64) -> (f64, f64) {
        let p = self.bin_mass(w);
        if p <= MASS_FLOOR {
            return (-log(MASS_FLOOR) / LN_2, 0.0);
        }
        let half = 0.5 * self.step;
        let dp = (self.density(w + half) - self.density(w - half)) * 1.0;
        (-log(p) / LN_2, -dp / (p * LN_2))
    }

    /// Bits of a quantized value `q` (grid point `q * step`).
    pub fn grid_bits(&self, q: i64) -> f64 {
        self.bits(q as f64 * self.step)
    }

    /// Total bits of a weight vector, continuous mode.
    pub fn total_bits(&self, w: &[f64]) -> f64 {
        w.iter().map(|&v| self.bits(v)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson integration of the density over one bin.
    fn simpson_bin(p: &SpikeSlabParams, centre: f64) -> f64 {
        let (a, b) = (centre - p.step / 2.0, centre + p.step / 2.0);
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut acc = p.density(a) + p.density(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * p.density(x);
        }
        acc * h / 3.0
    }

    #[test]
    fn zero_bin_is_cheap() {
        let p = SpikeSlabParams::default();
        let oracle = -libm::log2(simpson_bin(&p, 0.0));
        let bits = p.bits(0.0);
        assert!((bits - oracle).abs() < 1e-9, "{bits} vs {oracle}");
        assert!(bits < 0.2);
    }

    #[test]
    fn bin_mass_matches_quadrature_off_centre() {
        let p = SpikeSlabParams::default();
        for w in [0.001, 0.004, 0.01, 0.05, -0.02] {
            let m = p.bin_mass(w);
            let o = simpson_bin(&p, w);
            assert!((m - o).abs() < 1e-9 * o.max(1e-12) + 1e-15, "{w}: {m} vs {o}");
        }
    }

    #[test]
    fn vanishing_spike_weight_is_pure_slab() {
        let p = SpikeSlabParams {
            alpha: 1e-12,
            ..SpikeSlabParams::default()
        };
        let slab = normal_cdf(0.0025 / 0.05) - normal_cdf(-0.0025 / 0.05);
        assert!((p.bin_mass(0.0) - slab).abs() < 1e-12);
    }

    #[test]
    fn bits_are_additive() {
        let p = SpikeSlabParams::default();
        let zeros = [0.0; 37];
        assert!((p.total_bits(&zeros) - 37.0 * p.bits(0.0)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let p = SpikeSlabParams::default();
        for w in [0.0007, 0.003, 0.011, -0.02] {
            let (_, g) = p.bits_and_grad(w);
            let h = 1e-7;
            let fd = (p.bits(w + h) - p.bits(w - h)) / (2.0 * h);
            assert!((g - fd).abs() < 1e-4 * (1.0 + fd.abs()), "{w}: {g} vs {fd}");
        }
    }

    #[test]
    fn validation() {
        assert!(SpikeSlabParams::default().validate().is_ok());
        let bad = SpikeSlabParams {
            spike_std: 0.1,
            ..SpikeSlabParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
