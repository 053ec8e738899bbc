//! Central finite differences against reverse-mode gradients, in f64.

use pevc_core::adapter::{AdapterGeometry, Variant};
use pevc_core::entropy::SpikeSlabParams;
use pevc_core::gradcheck::relative_error;
use pevc_core::ops::conv::ConvSpec;
use pevc_core::{Graph, Result, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 20;
const EPS: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

fn normal(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    random(rng, shape, -1.0, 1.0)
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn run(name: &str, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>, build: &Build) {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + name.len() as u64);
        let inputs = make(&mut rng);
        let err = relative_error(&inputs, seed + 1000, EPS, build).expect("op builds");
        assert!(err < TOL, "{name}: instance {seed} relative error {err:e}");
    }
}

fn s(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, c, h, w)
}

#[test]
fn conv_strided_with_bias() {
    let spec = ConvSpec::conv(2, 3, 3, 2, 1);
    run(
        "conv",
        |r| {
            vec![
                normal(r, s(2, 2, 5, 6)),
                normal(r, spec.weight_shape()),
                normal(r, s(1, 3, 1, 1)),
            ]
        },
        &move |g, v| g.conv2d(v[0], v[1], Some(v[2]), spec),
    );
}

#[test]
fn conv_transposed_output_padding() {
    let spec = ConvSpec::transposed(3, 2, 5, 2, 2, 1);
    run(
        "conv_t",
        |r| {
            vec![
                normal(r, s(1, 3, 3, 4)),
                normal(r, spec.weight_shape()),
                normal(r, s(1, 2, 1, 1)),
            ]
        },
        &move |g, v| g.conv2d(v[0], v[1], Some(v[2]), spec),
    );
}

fn warp_inputs(r: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize, levels: usize) -> Vec<Tensor<f64>> {
    vec![
        normal(r, s(n, c, h, w)),
        random(r, s(n, 2, h, w), -2.5, 2.5),
        random(r, s(n, 1, h, w), 0.05, levels as f64 - 1.05),
    ]
}

#[test]
fn warp_scale_space() {
    run("warp", |r| warp_inputs(r, 2, 2, 6, 7, 3), &|g, v| {
        g.warp_scale_space(v[0], v[1], v[2], 3)
    });
}

#[test]
fn elementwise_and_broadcast() {
    let mk = |r: &mut ChaCha8Rng| vec![normal(r, s(3, 2, 2, 3)), normal(r, s(1, 2, 2, 3))];
    run("add", mk, &|g, v| g.add(v[0], v[1]));
    run("sub", mk, &|g, v| g.sub(v[0], v[1]));
    run("mul", mk, &|g, v| g.mul(v[0], v[1]));
    let same = |r: &mut ChaCha8Rng| vec![normal(r, s(2, 2, 3, 3)), normal(r, s(2, 2, 3, 3))];
    run("mul_same", same, &|g, v| g.mul(v[0], v[1]));
    run("mse", same, &|g, v| g.mse(v[0], v[1]));
}

#[test]
fn unary_ops() {
    let mk = |r: &mut ChaCha8Rng| vec![normal(r, s(2, 3, 3, 2))];
    run("leaky", mk, &|g, v| Ok(g.leaky_relu(v[0], 0.1)));
    run("mul_scalar", mk, &|g, v| Ok(g.mul_scalar(v[0], -1.7)));
    run("sum", mk, &|g, v| Ok(g.sum(v[0])));
}

#[test]
fn channel_plumbing() {
    let mk = |r: &mut ChaCha8Rng| vec![normal(r, s(2, 2, 2, 3)), normal(r, s(2, 3, 2, 3))];
    run("concat", mk, &|g, v| g.concat_channels(&[v[0], v[1], v[0]]));
    run("narrow", mk, &|g, v| g.narrow_channels(v[1], 1, 2));
    run("combine", mk, &|g, v| {
        let n = g.narrow_channels(v[1], 0, 2)?;
        g.combine(&[(v[0], 0.3), (n, -2.0), (v[0], 1.1)])
    });
}

#[test]
fn rate_terms() {
    run(
        "gaussian_bits",
        |r| {
            vec![
                random(r, s(2, 3, 2, 2), -4.0, 4.0),
                random(r, s(2, 3, 2, 2), -3.0, 3.0),
                random(r, s(2, 3, 2, 2), -2.0, 2.0),
            ]
        },
        &|g, v| g.gaussian_bits(v[0], v[1], v[2]),
    );
    run(
        "factorized_bits",
        |r| vec![random(r, s(2, 3, 2, 2), -3.0, 3.0), random(r, s(1, 3, 1, 1), -1.0, 2.0)],
        &|g, v| g.factorized_bits(v[0], v[1]),
    );
    let p = SpikeSlabParams::default();
    run(
        "spike_slab_bits",
        |r| vec![random(r, s(1, 1, 4, 5), -0.1, 0.1)],
        &move |g, v| Ok(g.spike_slab_bits(v[0], p)),
    );
}

#[test]
fn adapter_deltas() {
    for variant in [Variant::Repeat, Variant::Extended] {
        for transposed in [false, true] {
            let spec = if transposed {
                ConvSpec::transposed(4, 3, 3, 2, 1, 1)
            } else {
                ConvSpec::conv(4, 3, 3, 1, 1)
            };
            let geom = AdapterGeometry::for_spec(&spec, 2, variant);
            run(
                "adapter",
                |r| vec![normal(r, geom.a_shape()), normal(r, geom.b_shape())],
                &move |g, v| g.adapter_delta(v[0], v[1], geom),
            );
        }
    }
}

#[test]
fn conv_warp_conv_chain() {
    let c1 = ConvSpec::conv(2, 3, 3, 1, 1);
    let c2 = ConvSpec::conv(3, 2, 3, 1, 1);
    run(
        "chain",
        |r| {
            let mut v = warp_inputs(r, 1, 2, 5, 5, 3);
            v.push(normal(r, c1.weight_shape()));
            v.push(normal(r, c2.weight_shape()));
            v
        },
        &move |g, v| {
            let h = g.conv2d(v[0], v[3], None, c1)?;
            let h = g.leaky_relu(h, 0.1);
            let w = g.warp_scale_space(h, v[1], v[2], 3)?;
            g.conv2d(w, v[4], None, c2)
        },
    );
}

#[test]
fn parameter_used_twice() {
    let spec = ConvSpec::conv(2, 2, 3, 1, 1);
    run(
        "reuse",
        |r| vec![normal(r, s(1, 2, 4, 4)), normal(r, spec.weight_shape())],
        &move |g, v| {
            let h = g.conv2d(v[0], v[1], None, spec)?;
            let h = g.leaky_relu(h, 0.1);
            let o = g.conv2d(h, v[1], None, spec)?;
            g.mul(o, v[0])
        },
    );
}

#[test]
fn adapted_conv_weight() {
    let spec = ConvSpec::conv(3, 4, 3, 1, 1);
    let geom = AdapterGeometry::for_spec(&spec, 2, Variant::Extended);
    run(
        "adapted_conv",
        |r| {
            vec![
                normal(r, s(1, 3, 4, 4)),
                normal(r, spec.weight_shape()),
                normal(r, geom.a_shape()),
                normal(r, geom.b_shape()),
            ]
        },
        &move |g, v| {
            let d = g.adapter_delta(v[2], v[3], geom)?;
            let w = g.add(v[1], d)?;
            g.conv2d(v[0], w, None, spec)
        },
    );
}
