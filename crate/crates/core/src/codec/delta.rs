//! Quantized decoder updates: building a payload from trained adapters (or
//! fine-tuned weights) and patching a base model with one.
//!
//! Adapter payloads carry `round((A - A0) / step)` and `round(B / step)`,
//! where `A0` is the seeded initial value of `A` that the receiver
//! regenerates from the adapter seed. Full fine-tuning payloads carry
//! `round((W - W0) / step)` for every decoder weight and bias.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use super::config::{LayerId, Part};
use super::model::{layer_seed, CodecModel, Scope};
use crate::adapter::{initial_a, AdapterGeometry, AdapterSet, FactorizedAdapter, Variant};
use crate::container::wire_params;
use crate::entropy::payload::RESHAPE_BLOCK;
use crate::entropy::{QuantizedTensor, SpikeSlabParams, WeightPayloadBody};
use crate::error::{Error, Result};
use crate::Tensor;

pub const DELTA_NONE: u8 = 0;
pub const DELTA_FULL: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightDeltaPayload {
    /// `None` for full fine-tuning deltas.
    pub variant: Option<Variant>,
    pub ranks: Vec<u8>,
    pub adapter_seed: u64,
    pub params: SpikeSlabParams,
    pub body: WeightPayloadBody,
}

impl WeightDeltaPayload {
    pub fn kind_code(&self) -> u8 {
        self.variant.map_or(DELTA_FULL, Variant::code)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.body.to_bytes(&self.params)
    }

    pub fn from_bytes(
        bytes: &[u8],
        kind: u8,
        ranks: Vec<u8>,
        adapter_seed: u64,
        params: SpikeSlabParams,
    ) -> Result<Self> {
        let variant = match kind {
            1 => Some(Variant::Repeat),
            2 => Some(Variant::Extended),
            DELTA_FULL => None,
            k => return Err(Error::Protocol(format!("unknown delta kind {k}"))),
        };
        params.validate()?;
        Ok(Self {
            variant,
            ranks,
            adapter_seed,
            params,
            body: WeightPayloadBody::from_bytes(bytes, &params)?,
        })
    }

    /// Number of transmitted values.
    pub fn value_count(&self) -> usize {
        self.body.tensors.iter().map(|t| t.values.len()).sum()
    }
}

fn quantize(values: impl Iterator<Item = f64>, step: f64) -> Vec<i32> {
    values.map(|v| quantize_value(v, step)).collect()
}

/// Nearest grid index of `v` on a grid of spacing `step`.
pub fn quantize_value(v: f64, step: f64) -> i32 {
    libm::round(v / step) as i32
}

pub fn dequantize(q: i32, step: f64) -> f32 {
    (q as f64 * step) as f32
}

/// Quantize trained adapters. The returned set holds exactly the factors
/// the receiver will reconstruct.
pub fn quantize_adapters(
    set: &AdapterSet,
    adapter_seed: u64,
    params: &SpikeSlabParams,
) -> Result<(WeightDeltaPayload, AdapterSet)> {
    let params = wire_params(params);
    params.validate()?;
    let variant = set
        .variant
        .ok_or_else(|| Error::Config("adapter set has no variant".into()))?;
    let mut tensors = Vec::new();
    for (&code, ad) in &set.adapters {
        let a0 = initial_a(&ad.geometry, layer_seed(adapter_seed, code));
        let qa = quantize(
            ad.a.data().iter().zip(a0.data()).map(|(&a, &z)| a as f64 - z as f64),
            params.step,
        );
        let qb = quantize(ad.b.data().iter().map(|&b| b as f64), params.step);
        tensors.push(QuantizedTensor {
            id: 2 * code,
            values: qa,
        });
        tensors.push(QuantizedTensor {
            id: 2 * code + 1,
            values: qb,
        });
    }
    let ranks = set
        .ranks
        .iter()
        .map(|&r| u8::try_from(r).map_err(|_| Error::Config(format!("rank {r} does not fit a byte"))))
        .collect::<Result<Vec<_>>>()?;
    let payload = WeightDeltaPayload {
        variant: Some(variant),
        ranks,
        adapter_seed,
        params,
        body: WeightPayloadBody {
            convention: RESHAPE_BLOCK,
            tensors,
        },
    };
    let dequantized = dequantize_adapters(&payload, set)?;
    Ok((payload, dequantized))
}

fn dequantize_adapters(payload: &WeightDeltaPayload, like: &AdapterSet) -> Result<AdapterSet> {
    let mut out = like.clone();
    let by_id: BTreeMap<u32, &QuantizedTensor> = payload.body.tensors.iter().map(|t| (t.id, t)).collect();
    for (&code, ad) in out.adapters.iter_mut() {
        let (qa, qb) = match (by_id.get(&(2 * code)), by_id.get(&(2 * code + 1))) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Protocol(format!("payload lacks factors for layer code {code}"))),
        };
        *ad = rebuild(
            ad.spec,
            ad.geometry,
            qa,
            qb,
            payload.adapter_seed,
            code,
            payload.params.step,
        )?;
    }
    Ok(out)
}

fn rebuild(
    spec: crate::ops::ConvSpec,
    geometry: AdapterGeometry,
    qa: &QuantizedTensor,
    qb: &QuantizedTensor,
    seed: u64,
    code: u32,
    step: f64,
) -> Result<FactorizedAdapter> {
    let (as_, bs) = (geometry.a_shape(), geometry.b_shape());
    if qa.values.len() != as_.numel() || qb.values.len() != bs.numel() {
        return Err(Error::Protocol(format!(
            "adapter geometry mismatch for layer code {code}: got {}+{} values, expected {}+{}",
            qa.values.len(),
            qb.values.len(),
            as_.numel(),
            bs.numel()
        )));
    }
    let a0 = initial_a(&geometry, layer_seed(seed, code));
    let a = a0
        .data()
        .iter()
        .zip(&qa.values)
        .map(|(&z, &q)| z + dequantize(q, step))
        .collect();
    let b = qb.values.iter().map(|&q| dequantize(q, step)).collect();
    Ok(FactorizedAdapter {
        spec,
        geometry,
        a: Tensor::from_vec(as_, a)?,
        b: Tensor::from_vec(bs, b)?,
    })
}

/// Quantize the difference between fine-tuned and base decoder parameters.
/// Returns the payload and the model the receiver will reconstruct.
pub fn quantize_full(
    base: &CodecModel,
    tuned: &CodecModel,
    params: &SpikeSlabParams,
) -> Result<(WeightDeltaPayload, CodecModel)> {
    let params = wire_params(params);
    params.validate()?;
    let mut tensors = Vec::new();
    for (lb, lt) in base.layers.iter().zip(&tuned.layers) {
        if lb.id.part != Part::Decoder {
            continue;
        }
        let code = lb.id.code();
        for (slot, (b, t)) in [(&lb.weight, &lt.weight), (&lb.bias, &lt.bias)].into_iter().enumerate() {
            let q = quantize(
                t.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 - y as f64),
                params.step,
            );
            tensors.push(QuantizedTensor {
                id: 2 * code + slot as u32,
                values: q,
            });
        }
    }
    let payload = WeightDeltaPayload {
        variant: None,
        ranks: Vec::new(),
        adapter_seed: 0,
        params,
        body: WeightPayloadBody {
            convention: RESHAPE_BLOCK,
            tensors,
        },
    };
    let model = apply_payload(base, &payload)?;
    Ok((payload, model))
}

/// Patch `base` with a received payload.
pub fn apply_payload(base: &CodecModel, payload: &WeightDeltaPayload) -> Result<CodecModel> {
    if payload.body.convention != RESHAPE_BLOCK {
        return Err(Error::Protocol(format!(
            "unsupported reshape convention {}",
            payload.body.convention
        )));
    }
    let step = payload.params.step;
    match payload.variant {
        None => {
            let mut model = base.clone();
            for t in &payload.body.tensors {
                let id = LayerId::from_code(t.id / 2)
                    .filter(|id| id.part == Part::Decoder)
                    .ok_or_else(|| Error::Protocol(format!("tensor id {} is not a decoder parameter", t.id)))?;
                let layer = model.layer_mut(id);
                let target = if t.id % 2 == 0 {
                    &mut layer.weight
                } else {
                    &mut layer.bias
                };
                if target.shape().numel() != t.values.len() {
                    return Err(Error::Protocol(format!("parameter size mismatch for {id}")));
                }
                for (w, &q) in target.data_mut().iter_mut().zip(&t.values) {
                    *w += dequantize(q, step);
                }
            }
            Ok(model)
        }
        Some(variant) => {
            let set = adapters_from_payload(base, payload, variant)?;
            base.with_adapters(&set)
        }
    }
}

/// Reconstruct the adapter set a payload describes against `base`.
pub fn adapters_from_payload(base: &CodecModel, payload: &WeightDeltaPayload, variant: Variant) -> Result<AdapterSet> {
    let ranks: Vec<usize> = payload.ranks.iter().map(|&r| r as usize).collect();
    let codes: Vec<u32> = payload.body.tensors.iter().map(|t| t.id / 2).collect();
    let uses_encoder = codes
        .iter()
        .any(|&c| LayerId::from_code(c).is_some_and(|id| id.part == Part::Encoder));
    let scope = if uses_encoder {
        Scope::EncoderAndDecoder
    } else {
        Scope::DecoderOnly
    };
    let targets = base
        .adapter_targets(scope, &ranks)
        .map_err(|e| Error::Protocol(format!("{e}")))?;
    let by_id: BTreeMap<u32, &QuantizedTensor> = payload.body.tensors.iter().map(|t| (t.id, t)).collect();
    if by_id.len() != 2 * targets.len() || by_id.len() != payload.body.tensors.len() {
        return Err(Error::Protocol(format!(
            "payload carries {} tensors, geometry expects {}",
            payload.body.tensors.len(),
            2 * targets.len()
        )));
    }
    let mut set = AdapterSet {
        variant: Some(variant),
        ranks,
        ..Default::default()
    };
    for (id, rank) in targets {
        let code = id.code();
        let spec = base.layer(id).spec;
        let geometry = AdapterGeometry::for_spec(&spec, rank, variant);
        let (qa, qb) = match (by_id.get(&(2 * code)), by_id.get(&(2 * code + 1))) {
            (Some(a), Some(b)) => (*a, *b),
            _ => return Err(Error::Protocol(format!("payload lacks factors for {id}"))),
        };
        let ad = rebuild(spec, geometry, qa, qb, payload.adapter_seed, code, payload.params.step)?;
        set.adapters.insert(code, ad);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::config::CodecConfig;

    fn small() -> CodecModel {
        let cfg = CodecConfig {
            channels: 8,
            latent_channels: 8,
            hyper_channels: 4,
            ..Default::default()
        };
        CodecModel::new(cfg, 1).unwrap()
    }

    #[test]
    fn zero_adapters_quantize_to_zero() {
        let m = small();
        let set = m
            .init_adapters(Scope::DecoderOnly, Variant::Extended, &[4, 2, 2, 2], 11)
            .unwrap();
        let (payload, deq) = quantize_adapters(&set, 11, &SpikeSlabParams::default()).unwrap();
        assert!(payload.body.tensors.iter().all(|t| t.values.iter().all(|&v| v == 0)));
        assert_eq!(deq, set);
        assert_eq!(apply_payload(&m, &payload).unwrap(), m);
    }

    #[test]
    fn receiver_matches_sender() {
        let m = small();
        let mut set = m
            .init_adapters(Scope::DecoderOnly, Variant::Repeat, &[4, 2, 2, 2], 3)
            .unwrap();
        for ad in set.adapters.values_mut() {
            ad.b = Tensor::from_fn(ad.b.shape(), |_, _, y, x| ((y * 7 + x * 3) % 5) as f32 * 0.004 - 0.008);
            ad.a = ad.a.map(|v| v + 0.011);
        }
        let p = SpikeSlabParams::default();
        let (payload, deq) = quantize_adapters(&set, 3, &p).unwrap();
        let sender = m.with_adapters(&deq).unwrap();
        let bytes = payload.to_bytes().unwrap();
        let back = WeightDeltaPayload::from_bytes(&bytes, 1, payload.ranks.clone(), 3, payload.params).unwrap();
        assert_eq!(back, payload);
        assert_eq!(apply_payload(&m, &back).unwrap(), sender);

        let mut wrong = back.clone();
        wrong.ranks = alloc::vec![4, 2, 2, 1];
        assert!(matches!(apply_payload(&m, &wrong), Err(Error::Protocol(_))));
        wrong.ranks = back.ranks.clone();
        wrong.body.convention = 9;
        assert!(matches!(apply_payload(&m, &wrong), Err(Error::Protocol(_))));
    }

    #[test]
    fn small_updates_fall_into_zero_bin() {
        let m = small();
        let mut set = m
            .init_adapters(Scope::DecoderOnly, Variant::Repeat, &[4, 2, 2, 2], 3)
            .unwrap();
        let step = wire_params(&SpikeSlabParams::default()).step as f32;
        for ad in set.adapters.values_mut() {
            ad.b = ad.b.map(|_| 0.49 * step);
        }
        let (payload, _) = quantize_adapters(&set, 3, &SpikeSlabParams::default()).unwrap();
        assert!(payload.body.tensors.iter().all(|t| t.values.iter().all(|&v| v == 0)));
    }

    #[test]
    fn full_delta_round_trip() {
        let base = small();
        let mut tuned = base.clone();
        for l in tuned.layers.iter_mut().filter(|l| l.id.part == Part::Decoder) {
            l.weight = l.weight.map(|w| w * 1.05);
        }
        let (payload, model) = quantize_full(&base, &tuned, &SpikeSlabParams::default()).unwrap();
        assert_eq!(payload.value_count(), base.decoder_param_count());
        let bytes = payload.to_bytes().unwrap();
        let back = WeightDeltaPayload::from_bytes(&bytes, DELTA_FULL, alloc::vec![], 0, payload.params).unwrap();
        assert_eq!(apply_payload(&base, &back).unwrap(), model);
    }
}
