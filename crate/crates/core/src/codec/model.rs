use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{Branch, CodecConfig, LayerId, Part};
use crate::adapter::{AdapterSet, FactorizedAdapter, Variant};
use crate::error::{Error, Result};
use crate::ops::ConvSpec;
use crate::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub id: LayerId,
    pub spec: ConvSpec,
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
}

/// Which parameters an adaptation run may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    DecoderOnly,
    EncoderAndDecoder,
    FullFineTune,
}

impl Scope {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "decoder" | "decoder-only" => Ok(Scope::DecoderOnly),
            "encdec" | "encoder-decoder" => Ok(Scope::EncoderAndDecoder),
            "full" => Ok(Scope::FullFineTune),
            other => Err(Error::Config(format!("unknown scope {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scope::DecoderOnly => "decoder",
            Scope::EncoderAndDecoder => "encdec",
            Scope::FullFineTune => "full",
        }
    }
}

/// Mixes a run seed with a layer code into an independent stream seed.
pub fn layer_seed(seed: u64, code: u32) -> u64 {
    seed ^ (code as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    pub config: CodecConfig,
    pub layers: Vec<Layer>,
    /// Raw per-channel scale of each branch's hyper-latent prior, `(1, H, 1, 1)`.
    pub priors: Vec<Tensor<f32>>,
}

impl CodecModel {
    /// Seeded random initialization.
    pub fn new(config: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for id in config.layers() {
            let spec = config.spec(id);
            let fan_in = if spec.transposed {
                spec.c_in * spec.kernel * spec.kernel / (spec.stride * spec.stride)
            } else {
                spec.c_in * spec.kernel * spec.kernel
            };
            let last = id.index + 1 == id.part.depth();
            let mut gain = if last { 1.0 } else { 2.0 };
            if last && id.part == Part::Decoder && id.branch == Branch::Motion {
                gain *= 0.01;
            }
            if last && id.part == Part::HyperDecoder {
                gain *= 0.1;
            }
            let std = libm::sqrt(gain / fan_in.max(1) as f64);
            let normal = Normal::new(0.0, std).expect("finite std");
            let ws = spec.weight_shape();
            let data = (0..ws.numel()).map(|_| normal.sample(&mut rng) as f32).collect();
            let mut bias = Tensor::zeros(Shape::new(1, spec.c_out, 1, 1));
            if last && id.part == Part::Decoder && id.branch == Branch::Intra {
                bias = Tensor::full(bias.shape(), 0.5);
            }
            layers.push(Layer {
                id,
                spec,
                weight: Tensor::from_vec(ws, data)?,
                bias,
            });
        }
        let priors = Branch::ALL
            .iter()
            .map(|_| Tensor::zeros(Shape::new(1, config.hyper_channels, 1, 1)))
            .collect();
        Ok(Self { config, layers, priors })
    }

    /// Position of a layer in [`CodecModel::layers`].
    pub fn layer_index(id: LayerId) -> usize {
        let part_offset = match id.part {
            Part::Encoder => 0,
            Part::Decoder => 4,
            Part::HyperEncoder => 8,
            Part::HyperDecoder => 10,
        };
        id.branch.index() * 12 + part_offset + id.index
    }

    pub fn layer(&self, id: LayerId) -> &Layer {
        &self.layers[Self::layer_index(id)]
    }

    pub fn layer_mut(&mut self, id: LayerId) -> &mut Layer {
        &mut self.layers[Self::layer_index(id)]
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.shape().numel() + l.bias.shape().numel())
            .sum::<usize>()
            + self.priors.iter().map(|p| p.shape().numel()).sum::<usize>()
    }

    /// Weights and biases of the three main decoders.
    pub fn decoder_param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.id.part == Part::Decoder)
            .map(|l| l.weight.shape().numel() + l.bias.shape().numel())
            .sum()
    }

    /// Named parameter tensors in storage order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((format!("{}.weight", l.id), &l.weight));
            out.push((format!("{}.bias", l.id), &l.bias));
        }
        for (b, p) in Branch::ALL.iter().zip(&self.priors) {
            out.push((format!("{}.prior", b.name()), p));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<f32>)> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            let id = l.id;
            out.push((format!("{id}.weight"), &mut l.weight));
            out.push((format!("{id}.bias"), &mut l.bias));
        }
        for (b, p) in Branch::ALL.iter().zip(&mut self.priors) {
            out.push((format!("{}.prior", b.name()), p));
        }
        out
    }

    /// Layers an adapter scope attaches to, with their ranks. `ranks` runs
    /// from the deepest decoder layer outward; encoders mirror it.
    pub fn adapter_targets(&self, scope: Scope, ranks: &[usize]) -> Result<Vec<(LayerId, usize)>> {
        if ranks.len() != Part::Decoder.depth() {
            return Err(Error::Config(format!(
                "expected {} ranks, got {}",
                Part::Decoder.depth(),
                ranks.len()
            )));
        }
        let mut out = Vec::new();
        for l in &self.layers {
            let rank = match (scope, l.id.part) {
                (Scope::FullFineTune, _) => continue,
                (_, Part::Decoder) => ranks[l.id.index],
                (Scope::EncoderAndDecoder, Part::Encoder) => ranks[Part::Encoder.depth() - 1 - l.id.index],
                _ => continue,
            };
            out.push((l.id, rank));
        }
        Ok(out)
    }

    /// Zero-initialized adapters for every layer of `scope`.
    pub fn init_adapters(&self, scope: Scope, variant: Variant, ranks: &[usize], seed: u64) -> Result<AdapterSet> {
        if scope == Scope::FullFineTune {
            return Err(Error::Config("full fine-tuning uses no adapters".into()));
        }
        let mut set = AdapterSet {
            variant: Some(variant),
            ranks: ranks.to_vec(),
            ..Default::default()
        };
        for (id, rank) in self.adapter_targets(scope, ranks)? {
            let ad = FactorizedAdapter::init_zero(self.layer(id).spec, rank, variant, layer_seed(seed, id.code()))?;
            set.adapters.insert(id.code(), ad);
        }
        Ok(set)
    }

    /// A copy with every adapter merged into its layer's weight.
    pub fn with_adapters(&self, set: &AdapterSet) -> Result<Self> {
        let mut out = self.clone();
        for (&code, ad) in &set.adapters {
            let id = LayerId::from_code(code).ok_or_else(|| Error::Protocol(format!("unknown layer code {code}")))?;
            if ad.spec != self.layer(id).spec {
                return Err(Error::Protocol(format!("adapter geometry does not match layer {id}")));
            }
            let merged = ad.merged_weight(&self.layer(id).weight)?;
            out.layer_mut(id).weight = merged;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_reproducible() {
        let cfg = CodecConfig::default();
        let a = CodecModel::new(cfg, 5).unwrap();
        assert_eq!(a, CodecModel::new(cfg, 5).unwrap());
        assert_ne!(a, CodecModel::new(cfg, 6).unwrap());
        for l in &a.layers {
            assert_eq!(
                CodecModel::layer_index(l.id),
                a.layers.iter().position(|x| x.id == l.id).unwrap()
            );
        }
    }

    #[test]
    fn decoder_only_repeat_count() {
        let cfg = CodecConfig::default();
        let m = CodecModel::new(cfg, 0).unwrap();
        let set = m
            .init_adapters(Scope::DecoderOnly, Variant::Repeat, &[16, 8, 8, 2], 0)
            .unwrap();
        let expected: usize = Branch::ALL.len() * (16 * (48 + 32) + 8 * 64 + 8 * 64 + 2 * (32 + 3));
        assert_eq!(set.param_count(), expected);
        assert_eq!(set.adapters.len(), 12);
        let encdec = m
            .init_adapters(Scope::EncoderAndDecoder, Variant::Repeat, &[16, 8, 8, 2], 0)
            .unwrap();
        assert_eq!(encdec.adapters.len(), 24);
        assert_eq!(m.with_adapters(&set).unwrap(), m);
    }
}
