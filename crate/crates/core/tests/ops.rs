use pevc_core::ops::conv::{conv2d, conv_transpose2d, flip_for_duality, ConvSpec};
use pevc_core::ops::warp::{flow_shape, warp_scale_space};
use pevc_core::{Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Direct loops over the definition of a strided, zero-padded correlation.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, bias: &[f64], spec: &ConvSpec) -> Tensor<f64> {
    let xs = x.shape();
    let k = spec.kernel;
    let oh = (xs.h + 2 * spec.padding - k) / spec.stride + 1;
    let ow = (xs.w + 2 * spec.padding - k) / spec.stride + 1;
    Tensor::from_fn(Shape::new(xs.n, spec.c_out, oh, ow), |n, o, y, xx| {
        let mut acc = bias[o];
        for c in 0..spec.c_in {
            for i in 0..k {
                for j in 0..k {
                    let iy = (y * spec.stride + i) as isize - spec.padding as isize;
                    let ix = (xx * spec.stride + j) as isize - spec.padding as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                        acc += w.at(o, c, i, j) * x.at(n, c, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc
    })
}

#[test]
fn conv_matches_direct_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let (c_in, c_out, stride, pad) = (
            rng.gen_range(1..5),
            rng.gen_range(1..5),
            rng.gen_range(1..3),
            rng.gen_range(0..=k / 2),
        );
        let spec = ConvSpec::conv(c_in, c_out, k, stride, pad);
        let (h, w) = (rng.gen_range(k..12), rng.gen_range(k..12));
        let x = random(&mut rng, Shape::new(2, spec.c_in, h, w));
        let w = random(&mut rng, spec.weight_shape());
        let b = random(&mut rng, Shape::new(1, spec.c_out, 1, 1));
        let got = conv2d(&x, &w, Some(&b), &spec).unwrap();
        let want = naive_conv(&x, &w, b.data(), &spec);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want) < 1e-12);
    }
}

#[test]
fn stride_one_transpose_is_flipped_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let (c_in, c_out) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let p = rng.gen_range(0..=(k - 1) / 2);
        let t = ConvSpec::transposed(c_in, c_out, k, 1, p, 0);
        let plain = ConvSpec::conv(c_in, c_out, k, 1, k - 1 - p);
        let (h, w) = (rng.gen_range(3..10), rng.gen_range(3..10));
        let x = random(&mut rng, Shape::new(1, c_in, h, w));
        let w = random(&mut rng, t.weight_shape());
        let a = conv_transpose2d(&x, &w, None, &t).unwrap();
        let b = conv2d(&x, &flip_for_duality(&w), None, &plain).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-10);
    }
}

#[test]
fn transpose_is_the_adjoint_of_strided_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let (c_in, c_out) = (rng.gen_range(1..5), rng.gen_range(1..5));
        // conv maps c_in -> c_out; its adjoint maps c_out -> c_in with the same weights.
        let fwd = ConvSpec::conv(c_in, c_out, 5, 2, 2);
        let adj = ConvSpec::transposed(c_out, c_in, 5, 2, 2, 1);
        let x = random(&mut rng, Shape::new(1, c_in, 16, 12));
        let y = random(&mut rng, Shape::new(1, c_out, 8, 6));
        let w = random(&mut rng, fwd.weight_shape());
        let lhs = dot(&conv2d(&x, &w, None, &fwd).unwrap(), &y);
        let rhs = dot(&x, &conv_transpose2d(&y, &w, None, &adj).unwrap());
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}

#[test]
fn codec_upsampling_layer_doubles_size() {
    let spec = ConvSpec::transposed(8, 4, 5, 2, 2, 1);
    let y = conv_transpose2d(
        &Tensor::<f32>::zeros(Shape::new(1, 8, 4, 6)),
        &Tensor::zeros(spec.weight_shape()),
        None,
        &spec,
    )
    .unwrap();
    assert_eq!(y.shape(), Shape::new(1, 4, 8, 12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_is_linear_in_input(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ConvSpec::conv(3, 2, 3, 2, 1);
        let w = random(&mut rng, spec.weight_shape());
        let x1 = random(&mut rng, Shape::new(1, 3, 8, 8));
        let x2 = random(&mut rng, Shape::new(1, 3, 8, 8));
        let mix = x1.zip_map(&x2, |p, q| a * p + b * q).unwrap();
        let lhs = conv2d(&mix, &w, None, &spec).unwrap();
        let y1 = conv2d(&x1, &w, None, &spec).unwrap();
        let y2 = conv2d(&x2, &w, None, &spec).unwrap();
        let rhs = y1.zip_map(&y2, |p, q| a * p + b * q).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn zero_warp_is_identity(seed in any::<u64>(), levels in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = Tensor::<f32>::from_fn(Shape::new(1, 3, 9, 7), |_, _, _, _| rng.gen_range(0.0..1.0));
        let flow = Tensor::zeros(flow_shape(reference.shape()));
        let scale = Tensor::zeros(Shape::new(1, 1, 9, 7));
        let out = warp_scale_space(&reference, &flow, &scale, levels).unwrap();
        prop_assert_eq!(out.data(), reference.data());
    }
}
