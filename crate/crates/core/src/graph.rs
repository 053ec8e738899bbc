//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order; [`Graph::backward`] walks it in reverse. A leaf used
//! several times receives the sum of every path's contribution.

use alloc::vec;
use alloc::vec::Vec;

use crate::adapter::{self, AdapterGeometry};
use crate::entropy::likelihood::{gaussian_bin_bits, scale_from_raw, scale_from_raw_grad};
use crate::entropy::SpikeSlabParams;
use crate::error::{dim, Axis, Error, Result};
use crate::ops::conv::{self, ConvSpec};
use crate::ops::warp;
use crate::tensor::round_half_away;
use crate::{Real, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Warp {
        reference: Var,
        flow: Var,
        scale: Var,
        levels: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    LeakyRelu {
        x: Var,
        alpha: T,
    },
    MulScalar {
        x: Var,
        s: T,
    },
    Sum {
        x: Var,
    },
    MeanSquaredError {
        a: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Narrow {
        x: Var,
        start: usize,
    },
    RoundSte {
        x: Var,
    },
    GaussianBits {
        y: Var,
        mean: Var,
        scale_raw: Var,
    },
    FactorizedBits {
        z: Var,
        scale_raw: Var,
    },
    SpikeSlabBits {
        w: Var,
        params: SpikeSlabParams,
    },
    AdapterDelta {
        a: Var,
        b: Var,
        geometry: AdapterGeometry,
    },
    Combine {
        terms: Vec<(Var, T)>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = {
            let bias = b.map(|b| self.value(b));
            if spec.transposed {
                conv::conv_transpose2d(self.value(x), self.value(w), bias, &spec)?
            } else {
                conv::conv2d(self.value(x), self.value(w), bias, &spec)?
            }
        };
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv { x, w, b, spec }, rg))
    }

    pub fn warp_scale_space(&mut self, reference: Var, flow: Var, scale: Var, levels: usize) -> Result<Var> {
        let out = warp::warp_scale_space(self.value(reference), self.value(flow), self.value(scale), levels)?;
        let rg = self.rg(reference) || self.rg(flow) || self.rg(scale);
        Ok(self.push(
            out,
            Op::Warp {
                reference,
                flow,
                scale,
                levels,
            },
            rg,
        ))
    }

    /// Elementwise binary op; `b` may broadcast over the batch axis only.
    fn binary(&mut self, a: Var, b: Var, context: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa == sb {
            return av.zip_map(bv, f);
        }
        if sb.n != 1 {
            dim(context, Axis::Batch, sa.n, sb.n)?;
        }
        dim(context, Axis::Channel, sa.c, sb.c)?;
        dim(context, Axis::Height, sa.h, sb.h)?;
        dim(context, Axis::Width, sa.w, sb.w)?;
        let item = sa.item();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv.data()[i % item]))
            .collect();
        Tensor::from_vec(sa, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: T) -> Var {
        let out = self.value(x).map(|v| leaky(v, alpha));
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu { x, alpha }, rg)
    }

    pub fn mul_scalar(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        let rg = self.rg(x);
        self.push(out, Op::MulScalar { x, s }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum { x }, rg)
    }

    /// Mean of `(a - b)^2` over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.shape().expect("mse", &bv.shape())?;
        let n = T::from_f64(av.shape().numel() as f64);
        let total: T = av.data().iter().zip(bv.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(total / n), Op::MeanSquaredError { a, b }, rg))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape();
        let mut c = 0;
        for &p in parts {
            let s = self.value(p).shape();
            dim("concat", Axis::Batch, first.n, s.n)?;
            dim("concat", Axis::Height, first.h, s.h)?;
            dim("concat", Axis::Width, first.w, s.w)?;
            c += s.c;
        }
        let shape = Shape::new(first.n, c, first.h, first.w);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..first.n {
            for &p in parts {
                let v = self.value(p);
                let item = v.shape().item();
                data.extend_from_slice(&v.data()[n * item..(n + 1) * item]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_vec(shape, data)?, Op::Concat { parts: parts.to_vec() }, rg))
    }

    /// Channels `start..start + len`.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.value(x).shape();
        if start + len > s.c || len == 0 {
            return Err(Error::Dimension {
                context: "narrow",
                axis: Axis::Channel,
                expected: s.c,
                actual: start + len,
            });
        }
        let shape = Shape::new(s.n, len, s.h, s.w);
        let mut data = Vec::with_capacity(shape.numel());
        let src = self.value(x).data();
        for n in 0..s.n {
            let off = (n * s.c + start) * s.plane();
            data.extend_from_slice(&src[off..off + len * s.plane()]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_vec(shape, data)?, Op::Narrow { x, start }, rg))
    }

    /// Rounds in the forward pass, passes gradients straight through.
    pub fn round_ste(&mut self, x: Var) -> Var {
        let out = self.value(x).map(round_half_away);
        let rg = self.rg(x);
        self.push(out, Op::RoundSte { x }, rg)
    }

    /// Total bits of `y` under per-element discretized Gaussians with
    /// `scale = softplus(scale_raw) + floor`.
    pub fn gaussian_bits(&mut self, y: Var, mean: Var, scale_raw: Var) -> Result<Var> {
        let sy = self.value(y).shape();
        sy.expect("gaussian_bits mean", &self.value(mean).shape())?;
        sy.expect("gaussian_bits scale", &self.value(scale_raw).shape())?;
        let (yv, mv, rv) = (
            self.value(y).data(),
            self.value(mean).data(),
            self.value(scale_raw).data(),
        );
        let mut total = 0.0f64;
        for i in 0..yv.len() {
            let sigma = scale_from_raw(rv[i].to_f64());
            total += gaussian_bin_bits(yv[i].to_f64(), mv[i].to_f64(), sigma).0;
        }
        let rg = self.rg(y) || self.rg(mean) || self.rg(scale_raw);
        Ok(self.push(
            Tensor::scalar(T::from_f64(total)),
            Op::GaussianBits { y, mean, scale_raw },
            rg,
        ))
    }

    /// Total bits of `z` under zero-mean per-channel Gaussians; `scale_raw`
    /// has shape `(1, C, 1, 1)`.
    pub fn factorized_bits(&mut self, z: Var, scale_raw: Var) -> Result<Var> {
        let sz = self.value(z).shape();
        dim(
            "factorized_bits",
            Axis::Channel,
            sz.c,
            self.value(scale_raw).shape().numel(),
        )?;
        let total = factorized_total(self.value(z), self.value(scale_raw));
        let rg = self.rg(z) || self.rg(scale_raw);
        Ok(self.push(
            Tensor::scalar(T::from_f64(total)),
            Op::FactorizedBits { z, scale_raw },
            rg,
        ))
    }

    /// Continuous-mode spike-and-slab bits of every element of `w`.
    pub fn spike_slab_bits(&mut self, w: Var, params: SpikeSlabParams) -> Var {
        let total: f64 = self.value(w).data().iter().map(|&v| params.bits(v.to_f64())).sum();
        let rg = self.rg(w);
        self.push(Tensor::scalar(T::from_f64(total)), Op::SpikeSlabBits { w, params }, rg)
    }

    /// Kernel-shaped delta of a factorized adapter.
    pub fn adapter_delta(&mut self, a: Var, b: Var, geometry: AdapterGeometry) -> Result<Var> {
        let out = adapter::delta_from_factors(self.value(a), self.value(b), &geometry)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::AdapterDelta { a, b, geometry }, rg))
    }

    /// `sum_i c_i * x_i` over same-shaped inputs.
    pub fn combine(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let shape = self.value(terms[0].0).shape();
        let mut out = Tensor::zeros(shape);
        for &(v, c) in terms {
            let val = self.value(v);
            shape.expect("combine", &val.shape())?;
            for (o, &x) in out.data_mut().iter_mut().zip(val.data()) {
                *o = *o + c * x;
            }
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        Ok(self.push(out, Op::Combine { terms: terms.to_vec() }, rg))
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` as a tensor, zero if no path reached it.
    pub fn grad_tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.value(v).shape();
        match self.grad(v) {
            Some(g) => Tensor::from_vec(shape, g.to_vec()).expect("grad shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn accumulate(grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Accumulate a gradient that may have been computed against a
    /// batch-broadcast operand.
    fn accumulate_broadcast(&self, grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
        let len = self.value(v).shape().numel();
        if len == g.len() {
            Self::accumulate(grads, v, g);
        } else {
            let mut folded = vec![T::zero(); len];
            for (i, &x) in g.iter().enumerate() {
                folded[i % len] = folded[i % len] + x;
            }
            Self::accumulate(grads, v, &folded);
        }
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let numel = self.value(loss).shape().numel();
        if numel != 1 {
            return Err(Error::NonScalarLoss(numel));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, spec } => {
                let gout = Tensor::from_vec(shape, g.to_vec())?;
                let need = [self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b))];
                let cg = conv::conv_backward(self.value(*x), self.value(*w), spec, &gout, need);
                if let Some(gx) = cg.input {
                    Self::accumulate(grads, *x, gx.data());
                }
                if let Some(gw) = cg.weight {
                    Self::accumulate(grads, *w, gw.data());
                }
                if let (Some(gb), Some(b)) = (cg.bias, b) {
                    Self::accumulate(grads, *b, gb.data());
                }
            }
            Op::Warp {
                reference,
                flow,
                scale,
                levels,
            } => {
                let gout = Tensor::from_vec(shape, g.to_vec())?;
                let need = [self.rg(*reference), self.rg(*flow), self.rg(*scale)];
                let wg = warp::warp_backward(
                    self.value(*reference),
                    self.value(*flow),
                    self.value(*scale),
                    *levels,
                    &gout,
                    need,
                );
                if let Some(t) = wg.reference {
                    Self::accumulate(grads, *reference, t.data());
                }
                if let Some(t) = wg.flow {
                    Self::accumulate(grads, *flow, t.data());
                }
                if let Some(t) = wg.scale {
                    Self::accumulate(grads, *scale, t.data());
                }
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    Self::accumulate(grads, *a, g);
                }
                if self.rg(*b) {
                    self.accumulate_broadcast(grads, *b, g);
                }
            }
            Op::Sub { a, b } => {
                if self.rg(*a) {
                    Self::accumulate(grads, *a, g);
                }
                if self.rg(*b) {
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    self.accumulate_broadcast(grads, *b, &neg);
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let (la, lb) = (av.len(), bv.len());
                if self.rg(*a) {
                    let ga: Vec<T> = g.iter().enumerate().map(|(k, &v)| v * bv[k % lb]).collect();
                    Self::accumulate(grads, *a, &ga);
                }
                if self.rg(*b) {
                    let gb: Vec<T> = g.iter().enumerate().map(|(k, &v)| v * av[k % la]).collect();
                    self.accumulate_broadcast(grads, *b, &gb);
                }
            }
            Op::LeakyRelu { x, alpha } => {
                let xv = self.value(*x).data();
                let gx: Vec<T> = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v > T::zero() { gv } else { gv * *alpha })
                    .collect();
                Self::accumulate(grads, *x, &gx);
            }
            Op::MulScalar { x, s } => {
                let gx: Vec<T> = g.iter().map(|&v| v * *s).collect();
                Self::accumulate(grads, *x, &gx);
            }
            Op::Sum { x } => {
                let n = self.value(*x).shape().numel();
                Self::accumulate(grads, *x, &vec![g[0]; n]);
            }
            Op::MeanSquaredError { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let scale = g[0] * T::from_f64(2.0 / av.len() as f64);
                let diff: Vec<T> = av.iter().zip(bv).map(|(&x, &y)| scale * (x - y)).collect();
                if self.rg(*a) {
                    Self::accumulate(grads, *a, &diff);
                }
                if self.rg(*b) {
                    let neg: Vec<T> = diff.iter().map(|&v| -v).collect();
                    Self::accumulate(grads, *b, &neg);
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                let n = shape.n;
                let item = shape.item();
                for &p in parts {
                    let ps = self.value(p).shape();
                    let pitem = ps.item();
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(ps.numel());
                        for b in 0..n {
                            gp.extend_from_slice(&g[b * item + offset..b * item + offset + pitem]);
                        }
                        Self::accumulate(grads, p, &gp);
                    }
                    offset += pitem;
                }
            }
            Op::Narrow { x, start } => {
                let xs = self.value(*x).shape();
                let mut gx = vec![T::zero(); xs.numel()];
                let chunk = shape.c * xs.plane();
                for b in 0..xs.n {
                    let off = (b * xs.c + start) * xs.plane();
                    gx[off..off + chunk].copy_from_slice(&g[b * chunk..(b + 1) * chunk]);
                }
                Self::accumulate(grads, *x, &gx);
            }
            Op::RoundSte { x } => Self::accumulate(grads, *x, g),
            Op::GaussianBits { y, mean, scale_raw } => {
                let (yv, mv, rv) = (
                    self.value(*y).data(),
                    self.value(*mean).data(),
                    self.value(*scale_raw).data(),
                );
                let n = yv.len();
                let (mut gy, mut gm, mut gr) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
                let g0 = g[0].to_f64();
                for k in 0..n {
                    let raw = rv[k].to_f64();
                    let sigma = scale_from_raw(raw);
                    let (_, dv, ds) = gaussian_bin_bits(yv[k].to_f64(), mv[k].to_f64(), sigma);
                    gy[k] = T::from_f64(g0 * dv);
                    gm[k] = T::from_f64(-g0 * dv);
                    gr[k] = T::from_f64(g0 * ds * scale_from_raw_grad(raw));
                }
                if self.rg(*y) {
                    Self::accumulate(grads, *y, &gy);
                }
                if self.rg(*mean) {
                    Self::accumulate(grads, *mean, &gm);
                }
                if self.rg(*scale_raw) {
                    Self::accumulate(grads, *scale_raw, &gr);
                }
            }
            Op::FactorizedBits { z, scale_raw } => {
                let zv = self.value(*z);
                let rv = self.value(*scale_raw).data();
                let zs = zv.shape();
                let g0 = g[0].to_f64();
                let mut gz = vec![T::zero(); zs.numel()];
                let mut gr = vec![T::zero(); zs.c];
                for (k, &v) in zv.data().iter().enumerate() {
                    let c = (k / zs.plane()) % zs.c;
                    let raw = rv[c].to_f64();
                    let (_, dv, ds) = gaussian_bin_bits(v.to_f64(), 0.0, scale_from_raw(raw));
                    gz[k] = T::from_f64(g0 * dv);
                    gr[c] = gr[c] + T::from_f64(g0 * ds * scale_from_raw_grad(raw));
                }
                if self.rg(*z) {
                    Self::accumulate(grads, *z, &gz);
                }
                if self.rg(*scale_raw) {
                    Self::accumulate(grads, *scale_raw, &gr);
                }
            }
            Op::SpikeSlabBits { w, params } => {
                let g0 = g[0].to_f64();
                let gw: Vec<T> = self
                    .value(*w)
                    .data()
                    .iter()
                    .map(|&v| T::from_f64(g0 * params.bits_and_grad(v.to_f64()).1))
                    .collect();
                Self::accumulate(grads, *w, &gw);
            }
            Op::AdapterDelta { a, b, geometry } => {
                let gout = Tensor::from_vec(shape, g.to_vec())?;
                let (ga, gb) = adapter::delta_backward(self.value(*a), self.value(*b), geometry, &gout);
                if self.rg(*a) {
                    Self::accumulate(grads, *a, ga.data());
                }
                if self.rg(*b) {
                    Self::accumulate(grads, *b, gb.data());
                }
            }
            Op::Combine { terms } => {
                for &(v, c) in terms {
                    if self.rg(v) {
                        let gv: Vec<T> = g.iter().map(|&x| x * c).collect();
                        Self::accumulate(grads, v, &gv);
                    }
                }
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn leaky<T: Real>(v: T, alpha: T) -> T {
    if v > T::zero() {
        v
    } else {
        v * alpha
    }
}

/// Bits of `z` under zero-mean per-channel discretized Gaussians.
pub(crate) fn factorized_total<T: Real>(z: &Tensor<T>, scale_raw: &Tensor<T>) -> f64 {
    let zs = z.shape();
    let rv = scale_raw.data();
    z.data()
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let c = (k / zs.plane()) % zs.c;
            gaussian_bin_bits(v.to_f64(), 0.0, scale_from_raw(rv[c].to_f64())).0
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_values_and_slopes() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(
            Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 2.0, -2.0]).unwrap(),
            true,
        );
        let y = g.leaky_relu(x, 0.1);
        assert_eq!(g.value(y).data()[0], -0.1);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.1, 1.0, 0.1]);
    }

    #[test]
    fn add_zero_is_identity() {
        let mut g = Graph::<f32>::new();
        let t = Tensor::from_fn(Shape::new(2, 2, 2, 2), |n, c, y, x| {
            (n + 2 * c + 3 * y + 5 * x) as f32 - 4.5
        });
        let x = g.constant(t.clone());
        let z = g.constant(Tensor::zeros(t.shape()));
        let y = g.add(x, z).unwrap();
        assert_eq!(g.value(y), &t);
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        let mut g = Graph::<f64>::new();
        let xt = Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, y, x| {
            (c * 9 + y * 3 + x) as f64 * 0.5 - 2.0
        });
        let w = g.leaf(Tensor::full(xt.shape(), 0.3), true);
        let x = g.constant(xt.clone());
        let p = g.mul(w, x).unwrap();
        let loss = g.sum(p);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), xt.data());
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_contract() {
        let mut g = Graph::<f64>::new();
        let w = g.leaf(Tensor::full(Shape::new(1, 1, 2, 2), 1.0), true);
        assert_eq!(g.backward(w), Err(Error::NonScalarLoss(4)));
        let s = g.sum(w);
        g.backward(s).unwrap();
        assert_eq!(g.backward(s), Err(Error::BackwardTwice));
        g.reset_grads();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn broadcast_over_batch_only() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::full(Shape::new(3, 2, 1, 1), 1.0), true);
        let b = g.leaf(Tensor::full(Shape::new(1, 2, 1, 1), 2.0), true);
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).data(), &[3.0; 6]);
        let l = g.sum(s);
        g.backward(l).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[3.0, 3.0]);
        let c = g.leaf(Tensor::full(Shape::new(3, 1, 1, 1), 1.0), false);
        assert!(matches!(
            g.add(a, c),
            Err(Error::Dimension {
                axis: Axis::Channel,
                ..
            })
        ));
    }

    #[test]
    fn round_ste_passes_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.4, 1.6]).unwrap(), true);
        let r = g.round_ste(x);
        assert_eq!(g.value(r).data(), &[0.0, 2.0]);
        let l = g.sum(r);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0]);
    }
}
