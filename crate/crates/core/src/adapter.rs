//! Factorized convolution-kernel adapters.
//!
//! A kernel is viewed as a block matrix: for stored layout `(d0, d1, K, K)`
//! entry `(o, c, i, j)` sits at row `o*K + i`, column `c*K + j`. For a plain
//! convolution `d0 = c_out, d1 = c_in`; for a transposed one the stored
//! `(c_in, c_out)` order is used as is.
//!
//! * Repeat: `A` is `r x d1`, `B` is `d0 x r`. Expanding both with an
//!   all-ones `K x K` block and multiplying collapses to `K * (BA)` spread
//!   over every spatial tap.
//! * Extended: `A` is `rK x d1K`, `B` is `d0K x rK` and the delta is the
//!   block reshape of `BA`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::ops::ConvSpec;
use crate::{Real, Shape, Tensor};

/// Standard deviation of the random `A` initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Repeat,
    Extended,
}

impl Variant {
    pub fn code(self) -> u8 {
        match self {
            Variant::Repeat => 1,
            Variant::Extended => 2,
        }
    }
}

/// Everything needed to turn factors into a kernel delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterGeometry {
    pub variant: Variant,
    /// Leading stored kernel dimension.
    pub rows: usize,
    /// Second stored kernel dimension.
    pub cols: usize,
    pub kernel: usize,
    pub rank: usize,
}

impl AdapterGeometry {
    pub fn for_spec(spec: &ConvSpec, rank: usize, variant: Variant) -> Self {
        let s = spec.weight_shape();
        Self {
            variant,
            rows: s.n,
            cols: s.c,
            kernel: spec.kernel,
            rank,
        }
    }

    fn expand(&self) -> usize {
        match self.variant {
            Variant::Repeat => 1,
            Variant::Extended => self.kernel,
        }
    }

    pub fn a_shape(&self) -> Shape {
        let e = self.expand();
        Shape::matrix(self.rank * e, self.cols * e)
    }

    pub fn b_shape(&self) -> Shape {
        let e = self.expand();
        Shape::matrix(self.rows * e, self.rank * e)
    }

    pub fn delta_shape(&self) -> Shape {
        Shape::new(self.rows, self.cols, self.kernel, self.kernel)
    }

    pub fn param_count(&self) -> usize {
        param_count(self.variant, self.cols, self.rows, self.kernel, self.rank)
    }
}

/// Closed-form trainable parameter count.
pub fn param_count(variant: Variant, c_in: usize, c_out: usize, kernel: usize, rank: usize) -> usize {
    match variant {
        Variant::Repeat => rank * (c_in + c_out),
        Variant::Extended => rank * kernel * kernel * (c_in + c_out),
    }
}

/// Kernel delta from factors.
pub fn delta_from_factors<T: Real>(a: &Tensor<T>, b: &Tensor<T>, g: &AdapterGeometry) -> Result<Tensor<T>> {
    a.shape().expect("adapter A", &g.a_shape())?;
    b.shape().expect("adapter B", &g.b_shape())?;
    let (bs, as_) = (g.b_shape(), g.a_shape());
    let (m, inner, n) = (bs.h, bs.w, as_.w);
    let mut prod = vec![T::zero(); m * n];
    gemm(
        MatRef::new(b.data(), m, inner),
        MatRef::new(a.data(), inner, n),
        &mut prod,
        false,
    );
    let k = g.kernel;
    let out = match g.variant {
        Variant::Repeat => {
            let kk = T::from_f64(k as f64);
            Tensor::from_fn(g.delta_shape(), |o, c, _, _| kk * prod[o * n + c])
        }
        Variant::Extended => Tensor::from_fn(g.delta_shape(), |o, c, i, j| prod[(o * k + i) * n + c * k + j]),
    };
    Ok(out)
}

/// Gradients of a loss with respect to `A` and `B` given its gradient with
/// respect to the delta.
pub fn delta_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &AdapterGeometry,
    gout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (bs, as_) = (g.b_shape(), g.a_shape());
    let (m, inner, n) = (bs.h, bs.w, as_.w);
    let k = g.kernel;
    let mut gp = vec![T::zero(); m * n];
    let d = gout.shape();
    match g.variant {
        Variant::Repeat => {
            let kk = T::from_f64(k as f64);
            for o in 0..d.n {
                for c in 0..d.c {
                    let base = gout.index(o, c, 0, 0);
                    let s: T = gout.data()[base..base + k * k].iter().copied().sum();
                    gp[o * n + c] = kk * s;
                }
            }
        }
        Variant::Extended => {
            for o in 0..d.n {
                for c in 0..d.c {
                    for i in 0..k {
                        for j in 0..k {
                            gp[(o * k + i) * n + c * k + j] = gout.at(o, c, i, j);
                        }
                    }
                }
            }
        }
    }
    let mut ga = vec![T::zero(); inner * n];
    gemm(
        MatRef::new(b.data(), m, inner).t(),
        MatRef::new(&gp, m, n),
        &mut ga,
        false,
    );
    let mut gb = vec![T::zero(); m * inner];
    gemm(
        MatRef::new(&gp, m, n),
        MatRef::new(a.data(), inner, n).t(),
        &mut gb,
        false,
    );
    (
        Tensor::from_vec(as_, ga).expect("A grad"),
        Tensor::from_vec(bs, gb).expect("B grad"),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedAdapter {
    pub spec: ConvSpec,
    pub geometry: AdapterGeometry,
    pub a: Tensor<f32>,
    pub b: Tensor<f32>,
}

impl FactorizedAdapter {
    /// Zero-output adapter: `B = 0`, `A` drawn from `N(0, INIT_STD^2)`.
    pub fn init_zero(spec: ConvSpec, rank: usize, variant: Variant, seed: u64) -> Result<Self> {
        spec.validate()?;
        if rank == 0 || rank >= spec.c_in.min(spec.c_out) {
            return Err(Error::Config(format!(
                "adapter rank {rank} must satisfy 1 <= r < min({}, {})",
                spec.c_in, spec.c_out
            )));
        }
        let geometry = AdapterGeometry::for_spec(&spec, rank, variant);
        Ok(Self {
            spec,
            geometry,
            a: initial_a(&geometry, seed),
            b: Tensor::zeros(geometry.b_shape()),
        })
    }

    pub fn delta_weight(&self) -> Tensor<f32> {
        delta_from_factors(&self.a, &self.b, &self.geometry).expect("well-formed adapter")
    }

    /// `base + delta`; `base` is left untouched.
    pub fn merged_weight(&self, base: &Tensor<f32>) -> Result<Tensor<f32>> {
        base.shape().expect("merged_weight", &self.spec.weight_shape())?;
        base.add(&self.delta_weight())
    }

    pub fn param_count(&self) -> usize {
        self.geometry.param_count()
    }
}

/// The seeded starting value of `A`; the receiver regenerates it.
pub fn initial_a(g: &AdapterGeometry, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let shape = g.a_shape();
    let data = (0..shape.numel()).map(|_| normal.sample(&mut rng) as f32).collect();
    Tensor::from_vec(shape, data).expect("A shape")
}

/// Adapters keyed by the id of the layer they patch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdapterSet {
    pub variant: Option<Variant>,
    pub ranks: alloc::vec::Vec<usize>,
    pub adapters: BTreeMap<u32, FactorizedAdapter>,
}

impl AdapterSet {
    pub fn param_count(&self) -> usize {
        self.adapters.values().map(|a| a.param_count()).sum()
    }

    pub fn get(&self, layer: u32) -> Option<&FactorizedAdapter> {
        self.adapters.get(&layer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_counts() {
        let spec = ConvSpec::conv(128, 128, 5, 1, 2);
        let rep = FactorizedAdapter::init_zero(spec, 8, Variant::Repeat, 0).unwrap();
        assert_eq!(rep.param_count(), 2048);
        assert_eq!(spec.weight_numel(), 409_600);
        let ext = FactorizedAdapter::init_zero(spec, 8, Variant::Extended, 0).unwrap();
        assert_eq!(ext.param_count(), 51_200);
        assert_eq!(param_count(Variant::Repeat, 1, 1, 3, 1), 2);
    }

    #[test]
    fn zero_init_gives_zero_delta() {
        let spec = ConvSpec::transposed(8, 6, 5, 2, 2, 1);
        for v in [Variant::Repeat, Variant::Extended] {
            let ad = FactorizedAdapter::init_zero(spec, 2, v, 7).unwrap();
            assert!(ad.a.data().iter().any(|&x| x != 0.0));
            assert!(ad.delta_weight().data().iter().all(|&x| x == 0.0));
            let base = Tensor::from_fn(spec.weight_shape(), |a, b, c, d| {
                (a + 2 * b + 3 * c + 5 * d) as f32 * 0.01
            });
            assert_eq!(ad.merged_weight(&base).unwrap(), base);
        }
    }

    #[test]
    fn rank_bound() {
        let spec = ConvSpec::conv(3, 32, 5, 2, 2);
        assert!(FactorizedAdapter::init_zero(spec, 3, Variant::Repeat, 0).is_err());
        assert!(FactorizedAdapter::init_zero(spec, 0, Variant::Repeat, 0).is_err());
        assert!(FactorizedAdapter::init_zero(spec, 2, Variant::Repeat, 0).is_ok());
    }

    #[test]
    fn kernel_one_variants_coincide() {
        let spec = ConvSpec::conv(4, 5, 1, 1, 0);
        let mut r = FactorizedAdapter::init_zero(spec, 2, Variant::Repeat, 1).unwrap();
        let mut e = FactorizedAdapter::init_zero(spec, 2, Variant::Extended, 1).unwrap();
        r.b = Tensor::from_fn(r.b.shape(), |_, _, y, x| (y as f32 - x as f32) * 0.3);
        e.b = r.b.clone();
        e.a = r.a.clone();
        assert_eq!(r.delta_weight(), e.delta_weight());
    }
}
