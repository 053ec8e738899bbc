use pevc_core::adapter::{delta_from_factors, param_count, AdapterGeometry, FactorizedAdapter, Variant};
use pevc_core::ops::conv::ConvSpec;
use pevc_core::{Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
        }
    }
    out
}

/// Kronecker product `x (m x n)` with `y (p x q)`.
fn kron(x: &[f64], m: usize, n: usize, y: &[f64], p: usize, q: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p * n * q];
    for i in 0..m {
        for j in 0..n {
            for a in 0..p {
                for b in 0..q {
                    out[(i * p + a) * (n * q) + j * q + b] = x[i * n + j] * y[a * q + b];
                }
            }
        }
    }
    out
}

/// Reads a `(c_out*K) x (c_in*K)` block matrix as a `(c_out, c_in, K, K)` kernel.
fn blocks_to_kernel(m: &[f64], c_out: usize, c_in: usize, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for o in 0..c_out {
        for c in 0..c_in {
            for i in 0..k {
                for j in 0..k {
                    out.push(m[(o * k + i) * (c_in * k) + c * k + j]);
                }
            }
        }
    }
    out
}

#[test]
fn repeat_delta_is_scaled_kronecker_of_the_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let c_in = rng.gen_range(2..=12);
        let c_out = rng.gen_range(2..=12);
        let k = [1, 3, 5, 7][rng.gen_range(0..4)];
        let r = rng.gen_range(1..c_in.min(c_out));
        let spec = ConvSpec::conv(c_in, c_out, k, 1, k / 2);
        let g = AdapterGeometry::for_spec(&spec, r, Variant::Repeat);
        let a = dense(r, c_in, &mut rng);
        let b = dense(c_out, r, &mut rng);
        let delta = delta_from_factors(
            &Tensor::from_vec(g.a_shape(), a.clone()).unwrap(),
            &Tensor::from_vec(g.b_shape(), b.clone()).unwrap(),
            &g,
        )
        .unwrap();
        let ba = matmul(&b, &a, c_out, r, c_in);
        let ones = vec![k as f64; k * k];
        let oracle = blocks_to_kernel(&kron(&ba, c_out, c_in, &ones, k, k), c_out, c_in, k);
        assert_eq!(delta.shape(), Shape::new(c_out, c_in, k, k));
        for (x, y) in delta.data().iter().zip(&oracle) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst < 1e-12, "max abs diff {worst:e}");
}

#[test]
fn extended_delta_is_the_product_read_as_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let c_in = rng.gen_range(2..=8);
        let c_out = rng.gen_range(2..=8);
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let r = rng.gen_range(1..c_in.min(c_out));
        let g = AdapterGeometry::for_spec(&ConvSpec::conv(c_in, c_out, k, 2, k / 2), r, Variant::Extended);
        let a = dense(r * k, c_in * k, &mut rng);
        let b = dense(c_out * k, r * k, &mut rng);
        let delta = delta_from_factors(
            &Tensor::from_vec(g.a_shape(), a.clone()).unwrap(),
            &Tensor::from_vec(g.b_shape(), b.clone()).unwrap(),
            &g,
        )
        .unwrap();
        let oracle = blocks_to_kernel(&matmul(&b, &a, c_out * k, r * k, c_in * k), c_out, c_in, k);
        let worst = delta
            .data()
            .iter()
            .zip(&oracle)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "max abs diff {worst:e}");
    }
}

#[test]
fn transposed_layers_adapt_their_stored_layout() {
    // Transposed kernels are stored (c_in, c_out, K, K); the delta must match.
    let spec = ConvSpec::transposed(12, 6, 5, 2, 2, 1);
    let ad = FactorizedAdapter::init_zero(spec, 2, Variant::Repeat, 9).unwrap();
    assert_eq!(ad.delta_weight().shape(), spec.weight_shape());
    assert_eq!(ad.param_count(), 2 * (12 + 6));
}

#[test]
fn parameter_counts() {
    let repeat = param_count(Variant::Repeat, 128, 128, 5, 8);
    assert_eq!(repeat, 2048);
    let base = 128 * 128 * 5 * 5;
    assert_eq!(base, 409_600);
    assert_eq!(repeat * 10_000 / base, 50, "0.5000% of the kernel");
    assert_eq!(repeat as f64 / base as f64, 0.005);
    assert_eq!(param_count(Variant::Extended, 128, 128, 5, 8), 51_200);
    assert_eq!(param_count(Variant::Repeat, 1, 1, 3, 1), 2);
}

#[test]
fn init_rejects_full_rank() {
    let spec = ConvSpec::conv(8, 4, 3, 1, 1);
    assert!(FactorizedAdapter::init_zero(spec, 4, Variant::Repeat, 0).is_err());
    assert!(FactorizedAdapter::init_zero(spec, 0, Variant::Repeat, 0).is_err());
    assert!(FactorizedAdapter::init_zero(spec, 3, Variant::Extended, 0).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_init_leaves_weights_unchanged(
        c_in in 2usize..10, c_out in 2usize..10, k in prop::sample::select(vec![1usize, 3, 5]),
        extended in any::<bool>(), seed in any::<u64>(),
    ) {
        let r = 1 + (seed as usize) % (c_in.min(c_out) - 1);
        let variant = if extended { Variant::Extended } else { Variant::Repeat };
        let spec = ConvSpec::conv(c_in, c_out, k, 1, k / 2);
        let ad = FactorizedAdapter::init_zero(spec, r, variant, seed).unwrap();
        prop_assert!(ad.delta_weight().data().iter().all(|&v| v == 0.0));
        let base = Tensor::from_fn(spec.weight_shape(), |n, c, i, j| (n * 7 + c * 3 + i + j) as f32 * 0.01);
        let merged = ad.merged_weight(&base).unwrap();
        prop_assert_eq!(merged.data(), base.data());
        prop_assert_eq!(ad.param_count(), param_count(variant, c_in, c_out, k, r));
    }

    #[test]
    fn delta_is_bilinear(seed in any::<u64>(), s in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = AdapterGeometry::for_spec(&ConvSpec::conv(6, 5, 3, 1, 1), 2, Variant::Repeat);
        let a = Tensor::from_vec(g.a_shape(), dense(2, 6, &mut rng)).unwrap();
        let b = Tensor::from_vec(g.b_shape(), dense(5, 2, &mut rng)).unwrap();
        let d = delta_from_factors(&a, &b, &g).unwrap();
        let scaled = Tensor::from_vec(g.a_shape(), a.data().iter().map(|v| v * s).collect()).unwrap();
        let ds = delta_from_factors(&scaled, &b, &g).unwrap();
        for (x, y) in d.data().iter().zip(ds.data()) {
            prop_assert!((x * s - y).abs() < 1e-12);
        }
        let b2 = Tensor::from_vec(g.b_shape(), dense(5, 2, &mut rng)).unwrap();
        let sum = delta_from_factors(&a, &b.add(&b2).unwrap(), &g).unwrap();
        let parts = d.add(&delta_from_factors(&a, &b2, &g).unwrap()).unwrap();
        prop_assert!(sum.max_abs_diff(&parts) < 1e-12);
    }
}
