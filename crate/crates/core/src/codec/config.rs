use alloc::format;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::ConvSpec;

/// Spatial downsampling of the main latents.
pub const DOWNSAMPLE: usize = 16;
/// Number of rungs on the lambda ladder.
pub const LADDER_LEN: usize = 9;
pub const LEAKY_SLOPE: f64 = 0.1;

/// `0.01 * 2^(index - 3)` for ladder index `0..9`.
pub fn lambda_for_index(index: u8) -> Result<f64> {
    if (index as usize) < LADDER_LEN {
        Ok(0.01 * libm::pow(2.0, index as f64 - 3.0))
    } else {
        Err(Error::Config(format!("lambda index {index} outside 0..{LADDER_LEN}")))
    }
}

/// Ladder index of a lambda, if it sits on the ladder.
pub fn index_for_lambda(lambda: f64) -> Option<u8> {
    (0..LADDER_LEN as u8).find(|&i| (lambda_for_index(i).unwrap() - lambda).abs() <= 1e-12 * lambda.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Branch {
    Intra,
    Motion,
    Residual,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Intra, Branch::Motion, Branch::Residual];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Intra => "intra",
            Branch::Motion => "motion",
            Branch::Residual => "residual",
        }
    }

    fn in_channels(self) -> usize {
        match self {
            Branch::Motion => 6,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Part {
    Encoder,
    Decoder,
    HyperEncoder,
    HyperDecoder,
}

impl Part {
    pub const ALL: [Part; 4] = [Part::Encoder, Part::Decoder, Part::HyperEncoder, Part::HyperDecoder];

    pub fn name(self) -> &'static str {
        match self {
            Part::Encoder => "enc",
            Part::Decoder => "dec",
            Part::HyperEncoder => "henc",
            Part::HyperDecoder => "hdec",
        }
    }

    pub fn depth(self) -> usize {
        match self {
            Part::Encoder | Part::Decoder => 4,
            Part::HyperEncoder | Part::HyperDecoder => 2,
        }
    }
}

/// One convolution of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LayerId {
    pub branch: Branch,
    pub part: Part,
    pub index: usize,
}

impl LayerId {
    pub fn code(&self) -> u32 {
        (self.branch.index() * 16 + (self.part as usize) * 4 + self.index) as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        let c = code as usize;
        let branch = *Branch::ALL.get(c / 16)?;
        let part = *Part::ALL.get((c % 16) / 4)?;
        let index = c % 4;
        (index < part.depth()).then_some(Self { branch, part, index })
    }
}

impl core::fmt::Display for LayerId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}.{}.{}", self.branch.name(), self.part.name(), self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub channels: usize,
    pub latent_channels: usize,
    pub hyper_channels: usize,
    pub kernel: usize,
    pub hyper_kernel: usize,
    pub gop_train: usize,
    pub gop_test: usize,
    pub blur_levels: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            latent_channels: 48,
            hyper_channels: 32,
            kernel: 5,
            hyper_kernel: 3,
            gop_train: 4,
            gop_test: 12,
            blur_levels: 3,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.channels,
            self.latent_channels,
            self.hyper_channels,
            self.kernel,
            self.hyper_kernel,
            self.gop_train,
            self.gop_test,
            self.blur_levels,
        ];
        if fields.contains(&0) {
            return Err(Error::Config(format!("codec config fields must be positive: {self:?}")));
        }
        if self.kernel % 2 == 0 || self.hyper_kernel % 2 == 0 {
            return Err(Error::Config("kernel sizes must be odd".into()));
        }
        Ok(())
    }

    pub fn check_frame(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(Error::Config(format!(
                "frame {w}x{h} is not a positive multiple of {DOWNSAMPLE}"
            )));
        }
        Ok(())
    }

    pub fn spec(&self, id: LayerId) -> ConvSpec {
        let (c, m, h) = (self.channels, self.latent_channels, self.hyper_channels);
        let (k, hk) = (self.kernel, self.hyper_kernel);
        let i = id.index;
        match id.part {
            Part::Encoder => {
                let cin = if i == 0 { id.branch.in_channels() } else { c };
                let cout = if i == 3 { m } else { c };
                ConvSpec::conv(cin, cout, k, 2, k / 2)
            }
            Part::Decoder => {
                let cin = if i == 0 { m } else { c };
                let cout = if i == 3 { 3 } else { c };
                ConvSpec::transposed(cin, cout, k, 2, k / 2, 1)
            }
            Part::HyperEncoder => ConvSpec::conv(if i == 0 { m } else { h }, h, hk, 1, hk / 2),
            Part::HyperDecoder => ConvSpec::conv(h, if i == 1 { 2 * m } else { h }, hk, 1, hk / 2),
        }
    }

    /// Every layer of the model in storage order.
    pub fn layers(&self) -> alloc::vec::Vec<LayerId> {
        let mut out = alloc::vec::Vec::new();
        for branch in Branch::ALL {
            for part in Part::ALL {
                for index in 0..part.depth() {
                    out.push(LayerId { branch, part, index });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder() {
        assert_eq!(lambda_for_index(3).unwrap(), 0.01);
        assert_eq!(lambda_for_index(0).unwrap(), 0.00125);
        assert_eq!(lambda_for_index(8).unwrap(), 0.32);
        assert!(lambda_for_index(9).is_err());
        assert_eq!(index_for_lambda(0.04), Some(5));
        assert_eq!(index_for_lambda(0.03), None);
    }

    #[test]
    fn layer_codes_round_trip() {
        let cfg = CodecConfig::default();
        for id in cfg.layers() {
            assert_eq!(LayerId::from_code(id.code()), Some(id));
        }
        assert_eq!(cfg.layers().len(), 36);
    }

    #[test]
    fn decoders_upsample_by_sixteen() {
        let cfg = CodecConfig::default();
        let mut size = 4;
        for index in 0..4 {
            let spec = cfg.spec(LayerId {
                branch: Branch::Intra,
                part: Part::Decoder,
                index,
            });
            size = spec.output_size(size).unwrap();
        }
        assert_eq!(size, 64);
    }
}
