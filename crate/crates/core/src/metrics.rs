//! Quality and rate-distortion metrics on RGB frames in `[0, 255]`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use libm::{exp, log, log10, pow};
use serde::{Deserialize, Serialize};

use crate::codec::frame::FrameKind;
use crate::error::{Error, Result};
use crate::Tensor;

pub const PEAK: f64 = 255.0;
/// Value written in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    a.shape().expect("mse", &b.shape())?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n)
}

/// `10 log10(peak^2 / mse)`; infinite when `mse == 0`.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * log10(peak * peak / mse)
    }
}

/// PSNR with the squared error pooled over all channels.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

pub fn cap_psnr(p: f64) -> f64 {
    p.min(PSNR_CAP)
}

const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = exp(-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter(plane: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut tmp = alloc::vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = alloc::vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> (f64, f64) {
    let c1 = (0.01 * PEAK) * (0.01 * PEAK);
    let c2 = (0.03 * PEAK) * (0.03 * PEAK);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let (mu_a, oh, ow) = filter(a, h, w, k);
    let (mu_b, _, _) = filter(b, h, w, k);
    let (aa, _, _) = filter(&prod(&|x, _| x * x), h, w, k);
    let (bb, _, _) = filter(&prod(&|_, y| y * y), h, w, k);
    let (ab, _, _) = filter(&prod(&|x, y| x * y), h, w, k);
    let n = (oh * ow) as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let c = (2.0 * cov + c2) / (va + vb + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs += c;
        ssim += l * c;
    }
    (ssim / n, cs / n)
}

fn downsample(p: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = alloc::vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = (p[i] + p[i + 1] + p[i + w] + p[i + w + 1]) / 4.0;
        }
    }
    (out, oh, ow)
}

/// Number of scales usable for a frame, at most `requested`.
pub fn ms_ssim_scales(h: usize, w: usize, requested: usize) -> usize {
    let mut s = 0;
    while s < requested.min(MS_SSIM_WEIGHTS.len()) && h.min(w) >> s >= WINDOW {
        s += 1;
    }
    s
}

/// Multi-scale SSIM averaged over channels. Scales that do not fit the
/// frame are dropped and the remaining exponents renormalized.
pub fn ms_ssim(a: &Tensor<f32>, b: &Tensor<f32>, scales: usize) -> Result<f64> {
    a.shape().expect("ms_ssim", &b.shape())?;
    let s = a.shape();
    let used = ms_ssim_scales(s.h, s.w, scales);
    if used == 0 {
        return Err(Error::Config(format!(
            "frame {}x{} is smaller than the {WINDOW}x{WINDOW} window",
            s.w, s.h
        )));
    }
    let weights = &MS_SSIM_WEIGHTS[..used];
    let wsum: f64 = weights.iter().sum();
    let k = gaussian_window();
    let mut total = 0.0;
    let planes = s.n * s.c;
    for p in 0..planes {
        let range = p * s.plane()..(p + 1) * s.plane();
        let mut pa: Vec<f64> = a.data()[range.clone()].iter().map(|&v| v as f64).collect();
        let mut pb: Vec<f64> = b.data()[range].iter().map(|&v| v as f64).collect();
        let (mut h, mut w) = (s.h, s.w);
        let mut value = 1.0;
        for (j, &wj) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&pa, &pb, h, w, &k);
            let term = if j + 1 == used { ssim } else { cs };
            value *= pow(term.max(0.0), wj / wsum);
            if j + 1 < used {
                let (da, nh, nw) = downsample(&pa, h, w);
                pb = downsample(&pb, h, w).0;
                pa = da;
                h = nh;
                w = nw;
            }
        }
        total += value;
    }
    Ok(total / planes as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub label: String,
    pub lambda: f64,
    pub bpp: f64,
    pub psnr: f64,
    pub msssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QualityAxis {
    Psnr,
    MsSsim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    pub label: String,
    pub points: Vec<RdPoint>,
}

impl RdCurve {
    /// Points sorted by ascending rate.
    pub fn new(label: impl Into<String>, mut points: Vec<RdPoint>) -> Self {
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        Self {
            label: label.into(),
            points,
        }
    }

    fn pairs(&self, axis: QualityAxis) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .map(|p| {
                let q = match axis {
                    QualityAxis::Psnr => p.psnr,
                    QualityAxis::MsSsim => p.msssim,
                };
                (p.bpp, q)
            })
            .collect()
    }
}

/// Least-squares cubic `log(rate) ~ poly(t)`, `t = (q - centre) / scale`.
fn fit_cubic(pairs: &[(f64, f64)], centre: f64, scale: f64) -> Result<[f64; 4]> {
    let mut ata = [[0.0f64; 4]; 4];
    let mut aty = [0.0f64; 4];
    for &(rate, q) in pairs {
        let t = (q - centre) / scale;
        let row = [1.0, t, t * t, t * t * t];
        let y = log(rate);
        for i in 0..4 {
            aty[i] += row[i] * y;
            for j in 0..4 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&a, &b| ata[a][col].abs().total_cmp(&ata[b][col].abs()))
            .unwrap();
        if ata[piv][col].abs() < 1e-12 {
            return Err(Error::Config("rate-distortion points are degenerate".into()));
        }
        ata.swap(col, piv);
        aty.swap(col, piv);
        for r in col + 1..4 {
            let f = ata[r][col] / ata[col][col];
            for c in col..4 {
                ata[r][c] -= f * ata[col][c];
            }
            aty[r] -= f * aty[col];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|c| ata[r][c] * x[c]).sum();
        x[r] = (aty[r] - s) / ata[r][r];
    }
    Ok(x)
}

fn integrate(p: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let anti = |t: f64| p[0] * t + p[1] * t * t / 2.0 + p[2] * t * t * t / 3.0 + p[3] * t * t * t * t / 4.0;
    anti(hi) - anti(lo)
}

/// Bjontegaard rate difference of `test` against `anchor` in percent;
/// negative means `test` needs fewer bits for the same quality.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve, axis: QualityAxis) -> Result<f64> {
    let (pa, pt) = (anchor.pairs(axis), test.pairs(axis));
    for (c, p) in [(anchor, &pa), (test, &pt)] {
        if p.len() < 4 {
            return Err(Error::Config(format!("curve {:?} needs at least 4 points", c.label)));
        }
        if p.iter().any(|&(r, q)| !(r > 0.0 && r.is_finite() && q.is_finite())) {
            return Err(Error::Config(format!(
                "curve {:?} has non-positive or non-finite values",
                c.label
            )));
        }
    }
    let range = |p: &[(f64, f64)]| {
        p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, q)| {
            (lo.min(q), hi.max(q))
        })
    };
    let (alo, ahi) = range(&pa);
    let (tlo, thi) = range(&pt);
    let (lo, hi) = (alo.max(tlo), ahi.min(thi));
    if lo >= hi {
        return Err(Error::Config("quality ranges of the two curves do not overlap".into()));
    }
    let centre = (alo.min(tlo) + ahi.max(thi)) / 2.0;
    let scale = ((ahi.max(thi) - alo.min(tlo)) / 2.0).max(1e-12);
    let fa = fit_cubic(&pa, centre, scale)?;
    let ft = fit_cubic(&pt, centre, scale)?;
    let (u, v) = ((lo - centre) / scale, (hi - centre) / scale);
    let mean_diff = (integrate(&ft, u, v) - integrate(&fa, u, v)) / (v - u);
    Ok(100.0 * (exp(mean_diff) - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub idx: usize,
    pub kind: char,
    pub psnr: f64,
    pub bits: u64,
    pub cumulative_bits: u64,
}

/// One row per frame: PSNR (uncapped) and the frame's coded bits.
pub fn per_frame_trace(
    recon: &[Tensor<f32>],
    originals: &[Tensor<f32>],
    kinds: &[FrameKind],
    bits: &[u64],
) -> Result<Vec<FrameRow>> {
    if recon.len() != originals.len() || kinds.len() != recon.len() || bits.len() != recon.len() {
        return Err(Error::Config(format!(
            "trace inputs differ in length: {} recon, {} originals, {} kinds, {} bit counts",
            recon.len(),
            originals.len(),
            kinds.len(),
            bits.len()
        )));
    }
    let mut cumulative = 0;
    recon
        .iter()
        .zip(originals)
        .enumerate()
        .map(|(i, (r, o))| {
            cumulative += bits[i];
            Ok(FrameRow {
                idx: i,
                kind: kinds[i].letter(),
                psnr: psnr(r, o, PEAK)?,
                bits: bits[i],
                cumulative_bits: cumulative,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, size: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(Shape::new(1, 3, size, size), |_, _, _, _| {
            rng.gen_range(0.0..255.0f32).round()
        })
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Tensor::full(Shape::new(1, 3, 4, 4), 0.0f32);
        let b = Tensor::full(Shape::new(1, 3, 4, 4), 255.0f32);
        assert_eq!(psnr(&a, &b, PEAK).unwrap(), 0.0);
        assert_eq!(cap_psnr(psnr(&a, &a, PEAK).unwrap()), 99.0);
        assert!((psnr_from_mse(65.025, PEAK) - 30.0).abs() < 1e-9);
    }

    #[test]
    fn ms_ssim_basics() {
        let a = noise(1, 64);
        let b = noise(2, 64);
        assert_eq!(ms_ssim(&a, &a, 5).unwrap(), 1.0);
        assert_eq!(ms_ssim(&a, &b, 5).unwrap(), ms_ssim(&b, &a, 5).unwrap());
        assert_eq!(ms_ssim_scales(64, 64, 5), 3);
        assert!(ms_ssim(&noise(1, 8), &noise(2, 8), 5).is_err());
    }

    fn curve(label: &str, scale: f64) -> RdCurve {
        let pts = [(0.1, 28.0), (0.2, 31.0), (0.4, 33.5), (0.8, 36.0), (1.6, 38.0)]
            .iter()
            .map(|&(r, q)| RdPoint {
                label: label.into(),
                lambda: 0.0,
                bpp: r * scale,
                psnr: q,
                msssim: 0.9,
            })
            .collect();
        RdCurve::new(label, pts)
    }

    #[test]
    fn bd_rate_closed_forms() {
        let a = curve("a", 1.0);
        assert_eq!(bd_rate(&a, &a, QualityAxis::Psnr).unwrap(), 0.0);
        let t = curve("t", 0.9);
        assert!((bd_rate(&a, &t, QualityAxis::Psnr).unwrap() + 10.0).abs() < 1e-9);
        assert!((bd_rate(&t, &a, QualityAxis::Psnr).unwrap() - 100.0 / 9.0).abs() < 1e-9);
    }

    #[test]
    fn bd_rate_rejects_disjoint_ranges() {
        let a = curve("a", 1.0);
        let mut b = curve("b", 1.0);
        b.points.iter_mut().for_each(|p| p.psnr += 20.0);
        assert!(bd_rate(&a, &b, QualityAxis::Psnr).is_err());
        let short = RdCurve::new("s", a.points[..3].to_vec());
        assert!(bd_rate(&a, &short, QualityAxis::Psnr).is_err());
    }
}
