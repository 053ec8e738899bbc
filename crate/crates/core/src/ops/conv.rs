//! 2-D convolution and transposed convolution via im2col + gemm.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{dim, Axis, Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::{Real, Shape, Tensor};

/// Geometry of one convolution layer. Square kernels only.
///
/// For a transposed layer the stored kernel layout is `(c_in, c_out, K, K)`
/// and the output size is `(h - 1) * stride - 2 * padding + K + output_padding`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn conv(c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            c_in,
            c_out,
            kernel,
            stride,
            padding,
            output_padding: 0,
            transposed: false,
        }
    }

    pub fn transposed(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Self {
        Self {
            c_in,
            c_out,
            kernel,
            stride,
            padding,
            output_padding,
            transposed: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config(format!("conv spec fields must be positive: {self:?}")));
        }
        if self.output_padding > 0 && self.output_padding >= self.stride {
            return Err(Error::Config(format!(
                "output_padding {} must be smaller than stride {}",
                self.output_padding, self.stride
            )));
        }
        Ok(())
    }

    /// Stored kernel shape: `(c_out, c_in, K, K)` or `(c_in, c_out, K, K)` when transposed.
    pub fn weight_shape(&self) -> Shape {
        let k = self.kernel;
        if self.transposed {
            Shape::new(self.c_in, self.c_out, k, k)
        } else {
            Shape::new(self.c_out, self.c_in, k, k)
        }
    }

    pub fn weight_numel(&self) -> usize {
        self.c_in * self.c_out * self.kernel * self.kernel
    }

    /// Output spatial size for an input of `size`, if positive.
    pub fn output_size(&self, size: usize) -> Option<usize> {
        let (k, s, p) = (self.kernel as isize, self.stride as isize, self.padding as isize);
        let size = size as isize;
        let out = if self.transposed {
            (size - 1) * s - 2 * p + k + self.output_padding as isize
        } else {
            let span = size + 2 * p - k;
            if span < 0 {
                return None;
            }
            span / s + 1
        };
        (out > 0 && size > 0).then_some(out as usize)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let oh = self.output_size(input.h);
        let ow = self.output_size(input.w);
        match (oh, ow) {
            (Some(h), Some(w)) => Ok(Shape::new(input.n, self.c_out, h, w)),
            _ => Err(Error::Config(format!(
                "conv output would be empty for input {input} with {self:?}"
            ))),
        }
    }
}

/// Unfolding geometry shared by im2col / col2im: an image of
/// `channels x height x width` scanned by a `kernel` window giving an
/// `out_h x out_w` grid.
#[derive(Debug, Clone, Copy)]
struct Unfold {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Unfold {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source index along one axis, or `None` inside the zero padding.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, padding: usize, len: usize) -> Option<usize> {
        let i = (o * stride + k) as isize - padding as isize;
        (i >= 0 && (i as usize) < len).then_some(i as usize)
    }

    fn im2col<T: Real>(&self, img: &[T], cols: &mut [T]) {
        let k = self.kernel;
        let ncols = self.cols();
        for c in 0..self.channels {
            let plane = &img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        match Self::src(oy, ki, self.stride, self.padding, self.height) {
                            None => line.iter_mut().for_each(|v| *v = T::zero()),
                            Some(iy) => {
                                let srow = &plane[iy * self.width..(iy + 1) * self.width];
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match Self::src(ox, kj, self.stride, self.padding, self.width) {
                                        Some(ix) => srow[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: accumulates columns back into `img`.
    fn col2im<T: Real>(&self, cols: &[T], img: &mut [T]) {
        let k = self.kernel;
        let ncols = self.cols();
        for c in 0..self.channels {
            let plane = &mut img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.out_h {
                        let Some(iy) = Self::src(oy, ki, self.stride, self.padding, self.height) else {
                            continue;
                        };
                        let line = &src[oy * self.out_w..(oy + 1) * self.out_w];
                        let drow = &mut plane[iy * self.width..(iy + 1) * self.width];
                        for (ox, &v) in line.iter().enumerate() {
                            if let Some(ix) = Self::src(ox, kj, self.stride, self.padding, self.width) {
                                drow[ix] = drow[ix] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_operands<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
    transposed: bool,
    context: &'static str,
) -> Result<Shape> {
    spec.validate()?;
    if spec.transposed != transposed {
        return Err(Error::Config(format!(
            "{context} called with transposed={} spec",
            spec.transposed
        )));
    }
    dim(context, Axis::Channel, spec.c_in, x.shape().c)?;
    w.shape().expect(context, &spec.weight_shape())?;
    if let Some(b) = b {
        dim(context, Axis::Channel, spec.c_out, b.shape().numel())?;
    }
    spec.output_shape(x.shape())
}

/// Geometry of the conv whose input is `image` (for plain convs) and whose
/// output grid is `grid` (for transposed convs the roles swap).
fn unfold_for(spec: &ConvSpec, image: Shape, grid: Shape, channels: usize) -> Unfold {
    Unfold {
        channels,
        height: image.h,
        width: image.w,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
        out_h: grid.h,
        out_w: grid.w,
    }
}

fn add_bias<T: Real>(out: &mut Tensor<T>, b: Option<&Tensor<T>>) {
    if let Some(b) = b {
        let s = out.shape();
        let plane = s.plane();
        let bias = b.data();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bv = bias[i % s.c];
            chunk.iter_mut().for_each(|v| *v = *v + bv);
        }
    }
}

fn bias_grad<T: Real>(gout: &Tensor<T>) -> Tensor<T> {
    let s = gout.shape();
    let mut g = vec![T::zero(); s.c];
    for (i, chunk) in gout.data().chunks(s.plane()).enumerate() {
        g[i % s.c] = g[i % s.c] + chunk.iter().copied().sum::<T>();
    }
    Tensor::from_vec(Shape::new(1, s.c, 1, 1), g).expect("bias length")
}

/// Cross-correlation with the given stride and zero padding.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let out_shape = check_operands(x, w, b, spec, false, "conv2d")?;
    let xs = x.shape();
    let uf = unfold_for(spec, xs, out_shape, spec.c_in);
    let mut cols = vec![T::zero(); uf.rows() * uf.cols()];
    let mut out = Tensor::zeros(out_shape);
    let out_item = out_shape.item();
    for n in 0..xs.n {
        uf.im2col(&x.data()[n * xs.item()..(n + 1) * xs.item()], &mut cols);
        gemm(
            MatRef::new(w.data(), spec.c_out, uf.rows()),
            MatRef::new(&cols, uf.rows(), uf.cols()),
            &mut out.data_mut()[n * out_item..(n + 1) * out_item],
            false,
        );
    }
    add_bias(&mut out, b);
    Ok(out)
}

/// Fractionally strided convolution (adjoint of [`conv2d`] w.r.t. its input).
pub fn conv_transpose2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_shape = check_operands(x, w, b, spec, true, "conv_transpose2d")?;
    let xs = x.shape();
    let uf = unfold_for(spec, out_shape, xs, spec.c_out);
    let mut cols = vec![T::zero(); uf.rows() * uf.cols()];
    let mut out = Tensor::zeros(out_shape);
    let out_item = out_shape.item();
    for n in 0..xs.n {
        gemm(
            MatRef::new(w.data(), spec.c_in, uf.rows()).t(),
            MatRef::new(&x.data()[n * xs.item()..(n + 1) * xs.item()], spec.c_in, uf.cols()),
            &mut cols,
            false,
        );
        uf.col2im(&cols, &mut out.data_mut()[n * out_item..(n + 1) * out_item]);
    }
    add_bias(&mut out, b);
    Ok(out)
}

/// Gradients of a (possibly transposed) convolution. Only the requested
/// operands are computed.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    gout: &Tensor<T>,
    need: [bool; 3],
) -> ConvGrads<T> {
    let xs = x.shape();
    let gs = gout.shape();
    let [need_x, need_w, need_b] = need;
    let mut gx = need_x.then(|| Tensor::zeros(xs));
    let mut gw = need_w.then(|| Tensor::zeros(w.shape()));
    if spec.transposed {
        // Forward: out = col2im(W^T x). The "image" is the output.
        let uf = unfold_for(spec, gs, xs, spec.c_out);
        let mut cols = vec![T::zero(); uf.rows() * uf.cols()];
        for n in 0..xs.n {
            uf.im2col(&gout.data()[n * gs.item()..(n + 1) * gs.item()], &mut cols);
            let xn = &x.data()[n * xs.item()..(n + 1) * xs.item()];
            if let Some(gx) = gx.as_mut() {
                gemm(
                    MatRef::new(w.data(), spec.c_in, uf.rows()),
                    MatRef::new(&cols, uf.rows(), uf.cols()),
                    &mut gx.data_mut()[n * xs.item()..(n + 1) * xs.item()],
                    false,
                );
            }
            if let Some(gw) = gw.as_mut() {
                gemm(
                    MatRef::new(xn, spec.c_in, uf.cols()),
                    MatRef::new(&cols, uf.rows(), uf.cols()).t(),
                    gw.data_mut(),
                    true,
                );
            }
        }
    } else {
        let uf = unfold_for(spec, xs, gs, spec.c_in);
        let mut cols = vec![T::zero(); uf.rows() * uf.cols()];
        for n in 0..xs.n {
            let gn = &gout.data()[n * gs.item()..(n + 1) * gs.item()];
            if let Some(gw) = gw.as_mut() {
                uf.im2col(&x.data()[n * xs.item()..(n + 1) * xs.item()], &mut cols);
                gemm(
                    MatRef::new(gn, spec.c_out, uf.cols()),
                    MatRef::new(&cols, uf.rows(), uf.cols()).t(),
                    gw.data_mut(),
                    true,
                );
            }
            if let Some(gx) = gx.as_mut() {
                gemm(
                    MatRef::new(w.data(), spec.c_out, uf.rows()).t(),
                    MatRef::new(gn, spec.c_out, uf.cols()),
                    &mut cols,
                    false,
                );
                uf.col2im(&cols, &mut gx.data_mut()[n * xs.item()..(n + 1) * xs.item()]);
            }
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: need_b.then(|| bias_grad(gout)),
    }
}

/// Spatially flipped kernel with input/output roles swapped:
/// `(c_in, c_out, K, K)` transposed layout -> `(c_in, c_out, K, K)` plain layout
/// of the equivalent correlation. Used by duality tests.
pub fn flip_for_duality<T: Real>(w: &Tensor<T>) -> Tensor<T> {
    let s = w.shape();
    let mut out = Vec::with_capacity(s.numel());
    // plain layout is (c_out_plain = s.c, c_in_plain = s.n, K, K)
    for co in 0..s.c {
        for ci in 0..s.n {
            for i in 0..s.h {
                for j in 0..s.w {
                    out.push(w.at(ci, co, s.h - 1 - i, s.w - 1 - j));
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(s.c, s.n, s.h, s.w), out).expect("same numel")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(shape: Shape) -> Tensor<f64> {
        Tensor::full(shape, 1.0)
    }

    #[test]
    fn sum_of_ones() {
        let spec = ConvSpec::conv(1, 1, 3, 1, 0);
        let out = conv2d(
            &ones(Shape::new(1, 1, 3, 3)),
            &ones(Shape::new(1, 1, 3, 3)),
            None,
            &spec,
        )
        .unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_fn(Shape::new(2, 1, 4, 5), |n, _, y, x| (n * 20 + y * 5 + x) as f64 * 0.37);
        let spec = ConvSpec::conv(1, 1, 1, 1, 0);
        let out = conv2d(&x, &ones(Shape::new(1, 1, 1, 1)), None, &spec).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn single_tap_spread() {
        let spec = ConvSpec::transposed(1, 1, 2, 2, 0, 0);
        let x = Tensor::full(Shape::new(1, 1, 1, 1), 2.0f64);
        let out = conv_transpose2d(&x, &ones(Shape::new(1, 1, 2, 2)), None, &spec).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(out.data(), &[2.0; 4]);
    }

    #[test]
    fn output_size_formulas() {
        let down = ConvSpec::conv(3, 8, 5, 2, 2);
        assert_eq!(down.output_size(64), Some(32));
        let up = ConvSpec::transposed(8, 3, 5, 2, 2, 1);
        assert_eq!(up.output_size(32), Some(64));
        let plain_up = ConvSpec::transposed(8, 3, 5, 2, 2, 0);
        assert_eq!(plain_up.output_size(32), Some((32 - 1) * 2 - 4 + 5));
        assert_eq!(ConvSpec::conv(1, 1, 5, 1, 0).output_size(3), None);
    }

    #[test]
    fn shape_errors_name_the_axis() {
        let spec = ConvSpec::conv(3, 4, 3, 1, 1);
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 8, 8));
        let w = Tensor::<f32>::zeros(spec.weight_shape());
        match conv2d(&x, &w, None, &spec) {
            Err(Error::Dimension {
                axis: Axis::Channel,
                expected: 3,
                actual: 2,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let bad_w = Tensor::<f32>::zeros(Shape::new(4, 3, 3, 2));
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 8, 8));
        assert!(matches!(
            conv2d(&x, &bad_w, None, &spec),
            Err(Error::Dimension { axis: Axis::Width, .. })
        ));
        assert!(matches!(conv_transpose2d(&x, &w, None, &spec), Err(Error::Config(_))));
    }
}
