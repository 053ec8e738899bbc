//! Scale-space warping: trilinear sampling of a Gaussian blur stack at
//! `(x + fx, y + fy, s)`.
//!
//! Level `i` of the stack is the reference blurred with a 5-tap separable
//! Gaussian of standard deviation `2^i - 1` (level 0 is the reference
//! itself). Borders are handled by edge clamping, both in the blur and in
//! the sampler.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim, Axis, Error, Result};
use crate::{Real, Shape, Tensor};

pub const BLUR_TAPS: usize = 5;

/// Normalized 5-tap Gaussian for stack level `level`, or `None` for the
/// unblurred level 0.
pub fn blur_kernel(level: usize) -> Option<[f64; BLUR_TAPS]> {
    let sigma = ((1u64 << level) - 1) as f64;
    if sigma == 0.0 {
        return None;
    }
    let mut taps = [0.0; BLUR_TAPS];
    let half = (BLUR_TAPS / 2) as isize;
    for (i, t) in taps.iter_mut().enumerate() {
        let k = (i as isize - half) as f64;
        *t = libm::exp(-k * k / (2.0 * sigma * sigma));
    }
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Some(taps)
}

#[inline]
fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// One separable pass over every plane. `horizontal` selects the axis.
fn blur_pass<T: Real>(src: &[T], dst: &mut [T], h: usize, w: usize, taps: &[T; BLUR_TAPS], horizontal: bool) {
    let half = (BLUR_TAPS / 2) as isize;
    for (sp, dp) in src.chunks(h * w).zip(dst.chunks_mut(h * w)) {
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for (t, &g) in taps.iter().enumerate() {
                    let k = t as isize - half;
                    let v = if horizontal {
                        sp[y * w + clamp_index(x as isize + k, w)]
                    } else {
                        sp[clamp_index(y as isize + k, h) * w + x]
                    };
                    acc = acc + g * v;
                }
                dp[y * w + x] = acc;
            }
        }
    }
}

/// Adjoint of [`blur_pass`]: scatters `src` back through the clamped taps,
/// accumulating into `dst`.
fn blur_pass_adjoint<T: Real>(src: &[T], dst: &mut [T], h: usize, w: usize, taps: &[T; BLUR_TAPS], horizontal: bool) {
    let half = (BLUR_TAPS / 2) as isize;
    for (sp, dp) in src.chunks(h * w).zip(dst.chunks_mut(h * w)) {
        for y in 0..h {
            for x in 0..w {
                let g = sp[y * w + x];
                for (t, &tap) in taps.iter().enumerate() {
                    let k = t as isize - half;
                    let i = if horizontal {
                        y * w + clamp_index(x as isize + k, w)
                    } else {
                        clamp_index(y as isize + k, h) * w + x
                    };
                    dp[i] = dp[i] + tap * g;
                }
            }
        }
    }
}

fn taps_as<T: Real>(taps: [f64; BLUR_TAPS]) -> [T; BLUR_TAPS] {
    taps.map(T::from_f64)
}

/// Blur `x` with the fixed kernel of stack level `level`.
pub fn blur<T: Real>(x: &Tensor<T>, level: usize) -> Tensor<T> {
    let Some(taps) = blur_kernel(level) else {
        return x.clone();
    };
    let taps = taps_as::<T>(taps);
    let s = x.shape();
    let mut tmp = vec![T::zero(); s.numel()];
    blur_pass(x.data(), &mut tmp, s.h, s.w, &taps, true);
    let mut out = Tensor::zeros(s);
    blur_pass(&tmp, out.data_mut(), s.h, s.w, &taps, false);
    out
}

fn blur_adjoint_into<T: Real>(g: &Tensor<T>, level: usize, acc: &mut [T]) {
    let Some(taps) = blur_kernel(level) else {
        acc.iter_mut().zip(g.data()).for_each(|(a, &v)| *a = *a + v);
        return;
    };
    let taps = taps_as::<T>(taps);
    let s = g.shape();
    let mut tmp = vec![T::zero(); s.numel()];
    blur_pass_adjoint(g.data(), &mut tmp, s.h, s.w, &taps, false);
    blur_pass_adjoint(&tmp, acc, s.h, s.w, &taps, true);
}

pub fn blur_stack<T: Real>(reference: &Tensor<T>, levels: usize) -> Vec<Tensor<T>> {
    (0..levels).map(|l| blur(reference, l)).collect()
}

fn check<T: Real>(reference: &Tensor<T>, flow: &Tensor<T>, scale: &Tensor<T>, levels: usize) -> Result<()> {
    if levels < 1 {
        return Err(Error::Config("scale-space warp needs at least one level".into()));
    }
    let r = reference.shape();
    let f = flow.shape();
    let s = scale.shape();
    dim("warp flow", Axis::Batch, r.n, f.n)?;
    dim("warp flow", Axis::Channel, 2, f.c)?;
    dim("warp flow", Axis::Height, r.h, f.h)?;
    dim("warp flow", Axis::Width, r.w, f.w)?;
    dim("warp scale", Axis::Batch, r.n, s.n)?;
    dim("warp scale", Axis::Channel, 1, s.c)?;
    dim("warp scale", Axis::Height, r.h, s.h)?;
    dim("warp scale", Axis::Width, r.w, s.w)
}

/// Sampling stencil for one output pixel.
#[derive(Clone, Copy)]
struct Stencil<T> {
    x: [usize; 2],
    y: [usize; 2],
    ax: T,
    ay: T,
    level: usize,
    a_s: T,
    /// Whether the scale coordinate is inside `[0, levels - 1]`.
    scale_live: bool,
    two_levels: bool,
}

#[inline]
fn stencil<T: Real>(x: usize, y: usize, fx: T, fy: T, s: T, h: usize, w: usize, levels: usize) -> Stencil<T> {
    let sx = T::from_f64(x as f64) + fx;
    let sy = T::from_f64(y as f64) + fy;
    let x0 = sx.floor();
    let y0 = sy.floor();
    let ax = sx - x0;
    let ay = sy - y0;
    let (x0, y0) = (x0.to_f64() as isize, y0.to_f64() as isize);
    let top = T::from_f64((levels - 1) as f64);
    let scale_live = s >= T::zero() && s <= top;
    let sc = s.max(T::zero()).min(top);
    let (level, a_s, two_levels) = if levels == 1 {
        (0, T::zero(), false)
    } else {
        let l0 = (sc.floor().to_f64() as usize).min(levels - 2);
        (l0, sc - T::from_f64(l0 as f64), true)
    };
    Stencil {
        x: [clamp_index(x0, w), clamp_index(x0 + 1, w)],
        y: [clamp_index(y0, h), clamp_index(y0 + 1, h)],
        ax,
        ay,
        level,
        a_s,
        scale_live,
        two_levels,
    }
}

#[inline]
fn bilinear<T: Real>(plane: &[T], w: usize, st: &Stencil<T>) -> T {
    let one = T::one();
    let top = (one - st.ax) * plane[st.y[0] * w + st.x[0]] + st.ax * plane[st.y[0] * w + st.x[1]];
    let bot = (one - st.ax) * plane[st.y[1] * w + st.x[0]] + st.ax * plane[st.y[1] * w + st.x[1]];
    (one - st.ay) * top + st.ay * bot
}

pub fn warp_scale_space<T: Real>(
    reference: &Tensor<T>,
    flow: &Tensor<T>,
    scale: &Tensor<T>,
    levels: usize,
) -> Result<Tensor<T>> {
    check(reference, flow, scale, levels)?;
    let stack = blur_stack(reference, levels);
    Ok(sample(&stack, flow, scale, levels))
}

fn sample<T: Real>(stack: &[Tensor<T>], flow: &Tensor<T>, scale: &Tensor<T>, levels: usize) -> Tensor<T> {
    let s = stack[0].shape();
    let (h, w) = (s.h, s.w);
    let plane = h * w;
    let mut out = Tensor::zeros(s);
    let one = T::one();
    for n in 0..s.n {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let fx = flow.data()[(n * 2) * plane + p];
                let fy = flow.data()[(n * 2 + 1) * plane + p];
                let sv = scale.data()[n * plane + p];
                let st = stencil(x, y, fx, fy, sv, h, w, levels);
                for c in 0..s.c {
                    let base = (n * s.c + c) * plane;
                    let lo = bilinear(&stack[st.level].data()[base..base + plane], w, &st);
                    let v = if st.two_levels {
                        let hi = bilinear(&stack[st.level + 1].data()[base..base + plane], w, &st);
                        (one - st.a_s) * lo + st.a_s * hi
                    } else {
                        lo
                    };
                    out.data_mut()[base + p] = v;
                }
            }
        }
    }
    out
}

pub struct WarpGrads<T> {
    pub reference: Option<Tensor<T>>,
    pub flow: Option<Tensor<T>>,
    pub scale: Option<Tensor<T>>,
}

pub fn warp_backward<T: Real>(
    reference: &Tensor<T>,
    flow: &Tensor<T>,
    scale: &Tensor<T>,
    levels: usize,
    gout: &Tensor<T>,
    need: [bool; 3],
) -> WarpGrads<T> {
    let stack = blur_stack(reference, levels);
    let s = reference.shape();
    let (h, w) = (s.h, s.w);
    let plane = h * w;
    let one = T::one();
    let [need_ref, need_flow, need_scale] = need;
    let mut gstack: Vec<Vec<T>> = if need_ref {
        (0..levels).map(|_| vec![T::zero(); s.numel()]).collect()
    } else {
        Vec::new()
    };
    let mut gflow = need_flow.then(|| Tensor::zeros(flow.shape()));
    let mut gscale = need_scale.then(|| Tensor::zeros(scale.shape()));
    for n in 0..s.n {
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let fx = flow.data()[(n * 2) * plane + p];
                let fy = flow.data()[(n * 2 + 1) * plane + p];
                let sv = scale.data()[n * plane + p];
                let st = stencil(x, y, fx, fy, sv, h, w, levels);
                let taps = [
                    (st.y[0], st.x[0], (one - st.ay) * (one - st.ax)),
                    (st.y[0], st.x[1], (one - st.ay) * st.ax),
                    (st.y[1], st.x[0], st.ay * (one - st.ax)),
                    (st.y[1], st.x[1], st.ay * st.ax),
                ];
                let level_w = if st.two_levels {
                    [(st.level, one - st.a_s), (st.level + 1, st.a_s)]
                } else {
                    [(st.level, one), (st.level, T::zero())]
                };
                let (mut dx, mut dy, mut ds) = (T::zero(), T::zero(), T::zero());
                for c in 0..s.c {
                    let base = (n * s.c + c) * plane;
                    let g = gout.data()[base + p];
                    if g == T::zero() {
                        continue;
                    }
                    if need_ref {
                        for &(l, wl) in level_w.iter() {
                            if wl == T::zero() {
                                continue;
                            }
                            let gs = &mut gstack[l][base..base + plane];
                            for &(yy, xx, wt) in taps.iter() {
                                gs[yy * w + xx] = gs[yy * w + xx] + g * wl * wt;
                            }
                        }
                    }
                    if need_flow || need_scale {
                        let mut level_vals = [(T::zero(), T::zero(), T::zero()); 2];
                        for (slot, &(l, _)) in level_vals.iter_mut().zip(level_w.iter()) {
                            let pl = &stack[l].data()[base..base + plane];
                            let v00 = pl[st.y[0] * w + st.x[0]];
                            let v01 = pl[st.y[0] * w + st.x[1]];
                            let v10 = pl[st.y[1] * w + st.x[0]];
                            let v11 = pl[st.y[1] * w + st.x[1]];
                            let ddx = (one - st.ay) * (v01 - v00) + st.ay * (v11 - v10);
                            let ddy = (one - st.ax) * (v10 - v00) + st.ax * (v11 - v01);
                            let val = bilinear(pl, w, &st);
                            *slot = (ddx, ddy, val);
                        }
                        for (k, &(_, wl)) in level_w.iter().enumerate() {
                            dx = dx + g * wl * level_vals[k].0;
                            dy = dy + g * wl * level_vals[k].1;
                        }
                        if st.two_levels && st.scale_live {
                            ds = ds + g * (level_vals[1].2 - level_vals[0].2);
                        }
                    }
                }
                if let Some(gf) = gflow.as_mut() {
                    gf.data_mut()[(n * 2) * plane + p] = dx;
                    gf.data_mut()[(n * 2 + 1) * plane + p] = dy;
                }
                if let Some(gs) = gscale.as_mut() {
                    gs.data_mut()[n * plane + p] = ds;
                }
            }
        }
    }
    let gref = need_ref.then(|| {
        let mut acc = vec![T::zero(); s.numel()];
        for (l, g) in gstack.into_iter().enumerate() {
            let g = Tensor::from_vec(s, g).expect("stack shape");
            blur_adjoint_into(&g, l, &mut acc);
        }
        Tensor::from_vec(s, acc).expect("reference shape")
    });
    WarpGrads {
        reference: gref,
        flow: gflow,
        scale: gscale,
    }
}

/// Shape helper for callers assembling flow/scale planes.
pub fn flow_shape(reference: Shape) -> Shape {
    Shape::new(reference.n, 2, reference.h, reference.w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> Tensor<f64> {
        Tensor::from_fn(Shape::new(1, 2, 6, 7), |_, c, y, x| {
            libm::sin(0.7 * x as f64 + 1.3 * y as f64 + c as f64) * 40.0 + 100.0
        })
    }

    #[test]
    fn zero_flow_zero_scale_is_identity() {
        let r = reference();
        let s = r.shape();
        let flow = Tensor::zeros(flow_shape(s));
        let scale = Tensor::zeros(Shape::new(1, 1, s.h, s.w));
        let out = warp_scale_space(&r, &flow, &scale, 3).unwrap();
        assert_eq!(out, r);
    }

    #[test]
    fn integer_translation_with_edge_clamp() {
        let r = reference();
        let s = r.shape();
        let flow = Tensor::from_fn(flow_shape(s), |_, c, _, _| if c == 0 { 1.0 } else { 0.0 });
        let scale = Tensor::zeros(Shape::new(1, 1, s.h, s.w));
        let out = warp_scale_space(&r, &flow, &scale, 3).unwrap();
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let src = (x + 1).min(s.w - 1);
                    assert_eq!(out.at(0, c, y, x), r.at(0, c, y, src));
                }
            }
        }
    }

    #[test]
    fn top_scale_is_most_blurred_level() {
        let r = reference();
        let s = r.shape();
        let flow = Tensor::zeros(flow_shape(s));
        let scale = Tensor::full(Shape::new(1, 1, s.h, s.w), 2.0);
        let out = warp_scale_space(&r, &flow, &scale, 3).unwrap();
        // Oracle: blur directly with an explicit clamped 2-D stencil.
        let taps = blur_kernel(2).unwrap();
        let expected = Tensor::from_fn(s, |n, c, y, x| {
            let mut acc = 0.0;
            for (i, ty) in taps.iter().enumerate() {
                for (j, tx) in taps.iter().enumerate() {
                    let yy = clamp_index(y as isize + i as isize - 2, s.h);
                    let xx = clamp_index(x as isize + j as isize - 2, s.w);
                    acc += ty * tx * r.at(n, c, yy, xx);
                }
            }
            acc
        });
        assert!(out.max_abs_diff(&expected) < 1e-10);
    }

    #[test]
    fn blur_levels_have_expected_sigmas() {
        assert!(blur_kernel(0).is_none());
        let k1 = blur_kernel(1).unwrap();
        assert!((k1.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((k1[1] / k1[2] - libm::exp(-0.5)).abs() < 1e-12);
        let k2 = blur_kernel(2).unwrap();
        assert!((k2[0] / k2[2] - libm::exp(-4.0 / 18.0)).abs() < 1e-12);
    }

    #[test]
    fn rejects_zero_levels_and_misaligned_flow() {
        let r = reference();
        let s = r.shape();
        let flow = Tensor::zeros(flow_shape(s));
        let scale = Tensor::zeros(Shape::new(1, 1, s.h, s.w));
        assert!(matches!(warp_scale_space(&r, &flow, &scale, 0), Err(Error::Config(_))));
        let bad = Tensor::zeros(Shape::new(1, 2, s.h, s.w - 1));
        assert!(matches!(
            warp_scale_space(&r, &bad, &scale, 3),
            Err(Error::Dimension { axis: Axis::Width, .. })
        ));
    }
}
