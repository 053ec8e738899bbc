use pevc_core::codec::delta::{dequantize, quantize_value};
use pevc_core::entropy::likelihood::normal_cdf;
use pevc_core::entropy::payload::RESHAPE_BLOCK;
use pevc_core::entropy::{
    FrequencyTable, LatentCode, LatentModel, QuantizedTensor, RangeDecoder, RangeEncoder, SpikeSlabParams,
    WeightPayloadBody,
};
use pevc_core::Shape;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Allowed gap between estimated and coded size.
fn slack(estimated_bits: f64) -> f64 {
    estimated_bits / 8.0 * 1e-3 + 16.0
}

fn sample(cdf: &[f64], u: f64) -> usize {
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn range_coder_is_lossless_and_tight(
        weights in prop::collection::vec(0.0f64..1.0, 2..40),
        skew in 0.5f64..6.0,
        seed in any::<u64>(),
    ) {
        // Sharpen or flatten a random distribution; every symbol keeps some mass.
        let raw: Vec<f64> = weights.iter().map(|w| 1e-4 + w.powf(skew)).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let table = FrequencyTable::from_probabilities(&probs, 24).unwrap();
        let cdf: Vec<f64> = probs.iter().scan(0.0, |acc, p| { *acc += p; Some(*acc) }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let symbols: Vec<usize> = (0..10_000).map(|_| sample(&cdf, rng.gen())).collect();

        let mut enc = RangeEncoder::new();
        for &s in &symbols {
            table.encode(&mut enc, s).unwrap();
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        for &s in &symbols {
            prop_assert_eq!(table.decode(&mut dec).unwrap(), s);
        }
        let ideal: f64 = symbols.iter().map(|&s| -table.probability(s).log2()).sum();
        prop_assert!((bytes.len() as f64 * 8.0 - ideal).abs() <= slack(ideal) * 8.0,
            "{} bytes vs {:.1} ideal", bytes.len(), ideal / 8.0);
    }

    #[test]
    fn raw_bits_round_trip(bits in prop::collection::vec(any::<bool>(), 0..2000)) {
        let mut enc = RangeEncoder::new();
        for &b in &bits {
            enc.encode_bit(b);
        }
        let bytes = enc.finish();
        prop_assert!(bytes.len() <= bits.len() / 8 + 2);
        let mut dec = RangeDecoder::new(&bytes);
        for &b in &bits {
            prop_assert_eq!(dec.decode_bit().unwrap(), b);
        }
    }

    #[test]
    fn latent_surrogate_matches_coded_size(seed in any::<u64>(), conditional in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(1, 8, 16, 16);
        let n = shape.numel();
        let (model, means, scales) = if conditional {
            let means: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let scales: Vec<f64> = (0..n).map(|_| rng.gen_range(0.11..6.0)).collect();
            (LatentModel::ConditionalGaussian { means: means.clone(), scales: scales.clone() }, means, scales)
        } else {
            let per: Vec<f64> = (0..shape.c).map(|_| rng.gen_range(0.11..6.0)).collect();
            let scales: Vec<f64> = (0..n).map(|i| per[(i / shape.plane()) % shape.c]).collect();
            (LatentModel::FactorizedHyper { scales: per }, vec![0.0; n], scales)
        };
        let symbols: Vec<i32> = (0..n)
            .map(|i| Normal::new(means[i], scales[i]).unwrap().sample(&mut rng).round() as i32)
            .collect();
        let code = LatentCode::new(shape, symbols, model.clone()).unwrap();
        let mut enc = RangeEncoder::new();
        code.encode(&mut enc).unwrap();
        let bytes = enc.finish();
        let est = code.latent_bits();
        prop_assert!((bytes.len() as f64 - est / 8.0).abs() <= slack(est), "{} bytes vs {:.1}", bytes.len(), est / 8.0);
        let back = LatentCode::decode(&mut RangeDecoder::new(&bytes), shape, model).unwrap();
        prop_assert_eq!(back.symbols, code.symbols);
    }

    #[test]
    fn weight_surrogate_matches_coded_size(seed in any::<u64>(), density in 0.0f64..0.6) {
        let params = SpikeSlabParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slab = Normal::new(0.0, params.slab_std).unwrap();
        let tensors = (0..4)
            .map(|id| QuantizedTensor {
                id,
                values: (0..2500)
                    .map(|_| if rng.gen_bool(density) { quantize_value(slab.sample(&mut rng), params.step) } else { 0 })
                    .collect(),
            })
            .collect();
        let body = WeightPayloadBody { convention: RESHAPE_BLOCK, tensors };
        let bytes = body.to_bytes(&params).unwrap();
        let est = body.estimated_bits(&params).unwrap();
        // The body also carries a small id/length index.
        let index = 3 + 8 * body.tensors.len();
        let coded = (bytes.len() - index) as f64;
        prop_assert!((coded - est / 8.0).abs() <= slack(est), "{coded} bytes vs {:.1}", est / 8.0);
        prop_assert_eq!(WeightPayloadBody::from_bytes(&bytes, &params).unwrap(), body);
    }

    #[test]
    fn quantization_is_idempotent(q in -1_000_000i32..1_000_000, step in prop::sample::select(vec![0.005, 0.01, 0.125, 1.0])) {
        prop_assert_eq!(quantize_value(dequantize(q, step) as f64, step), q);
    }

    #[test]
    fn weight_bits_grow_with_magnitude(q in 0i64..200) {
        let p = SpikeSlabParams::default();
        prop_assert!(p.grid_bits(q + 1) >= p.grid_bits(q));
        prop_assert!(p.grid_bits(-q - 1) >= p.grid_bits(-q));
        prop_assert!((p.grid_bits(q) - p.grid_bits(-q)).abs() < 1e-12);
    }
}

#[test]
fn standard_normal_zero_bin_cost() {
    // Independent oracle: Simpson integration of the unit Gaussian density.
    let n = 2000;
    let h = 1.0 / n as f64;
    let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = f(-0.5) + f(0.5);
    for i in 1..n {
        let x = -0.5 + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    let mass = acc * h / 3.0;
    let via_cdf = normal_cdf(0.5) - normal_cdf(-0.5);
    assert!((mass - via_cdf).abs() < 1e-12);
    let bits = -mass.log2();
    assert!((bits - 1.384_867).abs() < 1e-6, "{bits}");
    let code = LatentCode::new(
        Shape::new(1, 1, 1, 1),
        vec![0],
        LatentModel::FactorizedHyper { scales: vec![1.0] },
    )
    .unwrap();
    assert!((code.latent_bits() - bits).abs() < 1e-9);
}
