//! Quantized latent tensors and the models used to code them.

use alloc::vec::Vec;

use super::likelihood::{gaussian_bin_mass, LIKELIHOOD_FLOOR, SIGMA_MIN};
use super::range_coder::{RangeDecoder, RangeEncoder};
use super::tables::WindowTable;
use crate::error::{Error, Result};
use crate::Shape;

#[derive(Debug, Clone, PartialEq)]
pub enum LatentModel {
    /// Zero-mean Gaussian with one scale per channel.
    FactorizedHyper { scales: Vec<f64> },
    /// One mean and scale per symbol.
    ConditionalGaussian { means: Vec<f64>, scales: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub shape: Shape,
    pub symbols: Vec<i32>,
    pub model: LatentModel,
}

impl LatentCode {
    pub fn new(shape: Shape, symbols: Vec<i32>, model: LatentModel) -> Result<Self> {
        let code = Self {
            shape,
            symbols,
            model: Self::clamp(model),
        };
        code.check()?;
        Ok(code)
    }

    fn clamp(model: LatentModel) -> LatentModel {
        let fix = |s: Vec<f64>| s.into_iter().map(|v| v.max(SIGMA_MIN)).collect();
        match model {
            LatentModel::FactorizedHyper { scales } => LatentModel::FactorizedHyper { scales: fix(scales) },
            LatentModel::ConditionalGaussian { means, scales } => LatentModel::ConditionalGaussian {
                means,
                scales: fix(scales),
            },
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.shape.numel();
        let ok = self.symbols.len() == n
            && match &self.model {
                LatentModel::FactorizedHyper { scales } => scales.len() == self.shape.c,
                LatentModel::ConditionalGaussian { means, scales } => means.len() == n && scales.len() == n,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Coding(alloc::format!(
                "latent model does not match shape {}",
                self.shape
            )))
        }
    }

    fn params(&self, i: usize) -> (f64, f64) {
        match &self.model {
            LatentModel::FactorizedHyper { scales } => (0.0, scales[(i / self.shape.plane()) % self.shape.c]),
            LatentModel::ConditionalGaussian { means, scales } => (means[i], scales[i]),
        }
    }

    /// Per-symbol `-log2` bin probability, floored as in training.
    pub fn symbol_bits(&self, i: usize) -> f64 {
        let (m, s) = self.params(i);
        -libm::log2(gaussian_bin_mass(self.symbols[i] as f64, m, s).max(LIKELIHOOD_FLOOR))
    }

    /// Rate estimate in bits.
    pub fn latent_bits(&self) -> f64 {
        (0..self.symbols.len()).map(|i| self.symbol_bits(i)).sum()
    }

    pub fn encode(&self, enc: &mut RangeEncoder) -> Result<()> {
        for (i, &s) in self.symbols.iter().enumerate() {
            let (m, sd) = self.params(i);
            WindowTable::gaussian(m, sd)?.encode(enc, s as i64)?;
        }
        Ok(())
    }

    /// Decode `shape.numel()` symbols under `model`.
    pub fn decode(dec: &mut RangeDecoder<'_>, shape: Shape, model: LatentModel) -> Result<Self> {
        let mut code = Self {
            shape,
            symbols: alloc::vec![0; shape.numel()],
            model: Self::clamp(model),
        };
        code.check()?;
        for i in 0..code.symbols.len() {
            let (m, sd) = code.params(i);
            let v = WindowTable::gaussian(m, sd)?.decode(dec)?;
            code.symbols[i] = i32::try_from(v).map_err(|_| Error::Coding("latent symbol overflow".into()))?;
        }
        Ok(code)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn standard_normal_zero_bin() {
        let code = LatentCode::new(
            Shape::new(1, 1, 1, 1),
            vec![0],
            LatentModel::ConditionalGaussian {
                means: vec![0.0],
                scales: vec![1.0],
            },
        )
        .unwrap();
        assert!((code.latent_bits() - 1.384_866_534_291).abs() < 1e-9);
    }

    #[test]
    fn concentrated_scale_costs_nothing() {
        let code = LatentCode::new(
            Shape::new(1, 1, 1, 2),
            vec![4, -2],
            LatentModel::ConditionalGaussian {
                means: vec![4.0, -2.0],
                scales: vec![0.0, 1e-9],
            },
        )
        .unwrap();
        assert!(code.latent_bits() < 1e-9);
        let total: f64 = (0..2).map(|i| code.symbol_bits(i)).sum();
        assert_eq!(total, code.latent_bits());
    }

    #[test]
    fn factorized_round_trip() {
        let shape = Shape::new(1, 2, 2, 2);
        let code = LatentCode::new(
            shape,
            vec![0, 1, -1, 0, 5, -3, 0, 2],
            LatentModel::FactorizedHyper { scales: vec![0.5, 2.0] },
        )
        .unwrap();
        let mut enc = RangeEncoder::new();
        code.encode(&mut enc).unwrap();
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        let back = LatentCode::decode(&mut dec, shape, code.model.clone()).unwrap();
        assert_eq!(back, code);
    }
}
