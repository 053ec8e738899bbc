//! Deterministic synthetic clips.
//!
//! Every style is a pure function of `(spec, seed, t)`; all time dependence
//! is scaled by the motion magnitude, so magnitude 0 yields a still clip.

use std::f64::consts::PI;
use std::str::FromStr;

use pevc_core::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::video_io::VideoSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Style {
    MovingShapes,
    Textured,
    CartoonFlat,
    NoisyComplex,
}

impl FromStr for Style {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "moving-shapes" | "movingshapes" | "shapes" => Ok(Style::MovingShapes),
            "textured" => Ok(Style::Textured),
            "cartoon-flat" | "cartoonflat" | "cartoon" => Ok(Style::CartoonFlat),
            "noisy-complex" | "noisycomplex" | "noisy" => Ok(Style::NoisyComplex),
            other => Err(format!(
                "unknown style {other:?} (moving-shapes, textured, cartoon-flat, noisy-complex)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub style: Style,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Pixels per frame of the dominant motion.
    pub magnitude: f64,
    pub seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x1F1F_1F1F) ^ (iy as u64).rotate_left(32)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[0, 1]`.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
    let (ix, iy) = (fx as i64, fy as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

fn fractal(seed: u64, x: f64, y: f64, octaves: usize, base: f64) -> f64 {
    let (mut sum, mut amp, mut freq, mut norm) = (0.0, 1.0, 1.0 / base, 0.0);
    for o in 0..octaves {
        sum += amp * value_noise(seed.wrapping_add(o as u64 * 7919), x * freq, y * freq);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

#[derive(Debug, Clone)]
struct Polygon {
    centre: (f64, f64),
    velocity: (f64, f64),
    radius: f64,
    angle: f64,
    spin: f64,
    sides: usize,
    color: [f64; 3],
}

impl Polygon {
    fn random(rng: &mut ChaCha8Rng, w: f64, h: f64, magnitude: f64) -> Self {
        Self {
            centre: (rng.gen_range(0.0..w), rng.gen_range(0.0..h)),
            velocity: (
                magnitude * rng.gen_range(0.5..1.5),
                magnitude * rng.gen_range(-0.5..0.5),
            ),
            radius: rng.gen_range(0.08..0.3) * w.min(h),
            angle: rng.gen_range(0.0..2.0 * PI),
            spin: rng.gen_range(-0.05..0.05),
            sides: rng.gen_range(3..=6),
            color: [
                rng.gen_range(0.0..255.0),
                rng.gen_range(0.0..255.0),
                rng.gen_range(0.0..255.0),
            ],
        }
    }

    fn contains(&self, t: f64, magnitude: f64, x: f64, y: f64, w: f64, h: f64) -> bool {
        let cx = (self.centre.0 + self.velocity.0 * t).rem_euclid(w + 2.0 * self.radius) - self.radius;
        let cy = (self.centre.1 + self.velocity.1 * t).rem_euclid(h + 2.0 * self.radius) - self.radius;
        let ang = self.angle + self.spin * magnitude * t;
        let (dx, dy) = (x - cx, y - cy);
        // Inside a regular polygon: the point lies within every edge's half-plane.
        let apothem = self.radius * (PI / self.sides as f64).cos();
        (0..self.sides).all(|k| {
            let a = ang + (2.0 * k as f64 + 1.0) * PI / self.sides as f64;
            dx * a.cos() + dy * a.sin() <= apothem
        })
    }
}

const SUPERSAMPLE: usize = 4;

fn frame_from(w: usize, h: usize, mut pixel: impl FnMut(usize, usize) -> [f64; 3]) -> Tensor<f32> {
    let mut data = vec![0.0f32; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let p = pixel(x, y);
            for c in 0..3 {
                data[c * w * h + y * w + x] = p[c].clamp(0.0, 255.0).round() as f32;
            }
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data).expect("frame shape")
}

fn moving_shapes(spec: &SynthSpec, textured: bool) -> Vec<Tensor<f32>> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let count = if textured { 2 } else { rng.gen_range(3..=6) };
    let shapes: Vec<Polygon> = (0..count)
        .map(|_| Polygon::random(&mut rng, w, h, spec.magnitude))
        .collect();
    let mut color = || {
        [
            rng.gen_range(0.0..255.0),
            rng.gen_range(0.0..255.0),
            rng.gen_range(0.0..255.0),
        ]
    };
    let (c0, c1) = (color(), color());
    let dir = rng.gen_range(0.0..2.0 * PI);
    let (dx, dy) = (dir.cos() / (w + h), dir.sin() / (w + h));
    let seed = spec.seed;
    (0..spec.frames)
        .map(|t| {
            let t = t as f64;
            let pan = spec.magnitude * t;
            let background = |px: f64, py: f64| -> [f64; 3] {
                let bx = px - pan;
                if textured {
                    let n = fractal(seed, bx, py, 4, 10.0);
                    let m = fractal(seed ^ 0xABCD, bx, py, 4, 17.0);
                    return [255.0 * n, 255.0 * (0.5 * n + 0.5 * m), 255.0 * m];
                }
                let a = (0.5 + bx * dx + py * dy).clamp(0.0, 1.0);
                let grain = 80.0 * (fractal(seed, bx, py, 3, 12.0) - 0.5);
                [0, 1, 2].map(|k| c0[k] + (c1[k] - c0[k]) * a + grain)
            };
            frame_from(spec.width, spec.height, |x, y| {
                let mut acc = [0.0; 3];
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                        let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                        let c = shapes
                            .iter()
                            .rev()
                            .find(|s| s.contains(t, spec.magnitude, px, py, w, h))
                            .map_or_else(|| background(px, py), |s| s.color);
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                    }
                }
                let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
                [acc[0] / n, acc[1] / n, acc[2] / n]
            })
        })
        .collect()
}

fn cartoon_flat(spec: &SynthSpec) -> Vec<Tensor<f32>> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let palette: Vec<[f64; 3]> = (0..6)
        .map(|_| {
            let mut c = [0.0; 3];
            for v in c.iter_mut() {
                *v = [0.0, 64.0, 128.0, 200.0, 255.0][rng.gen_range(0..5)];
            }
            c
        })
        .collect();
    let background = palette[0];
    let sky_split = rng.gen_range(0.3..0.6) * h;
    let ground = palette[1];
    struct Blob {
        pos: (f64, f64),
        size: (f64, f64),
        ellipse: bool,
        color: [f64; 3],
        jumps: Vec<(f64, f64)>,
    }
    let blobs: Vec<Blob> = (0..5)
        .map(|i| Blob {
            pos: (rng.gen_range(0.0..w), rng.gen_range(0.0..h)),
            size: (rng.gen_range(0.1..0.3) * w, rng.gen_range(0.1..0.3) * h),
            ellipse: i % 2 == 0,
            color: palette[2 + i % 4],
            jumps: (0..spec.frames)
                .map(|_| (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
                .collect(),
        })
        .collect();
    (0..spec.frames)
        .map(|t| {
            // Discontinuous motion: every few frames a blob jumps.
            let offsets: Vec<(f64, f64)> = blobs
                .iter()
                .map(|b| {
                    let mut o = (0.0, 0.0);
                    for (k, j) in b.jumps.iter().enumerate().take(t + 1) {
                        if k % 3 == 0 {
                            o.0 += spec.magnitude * j.0;
                            o.1 += spec.magnitude * j.1;
                        }
                    }
                    o
                })
                .collect();
            frame_from(spec.width, spec.height, |x, y| {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut c = if py < sky_split { background } else { ground };
                for (b, o) in blobs.iter().zip(&offsets) {
                    let cx = (b.pos.0 + o.0).rem_euclid(w);
                    let cy = (b.pos.1 + o.1).rem_euclid(h);
                    let (dx, dy) = ((px - cx) / b.size.0, (py - cy) / b.size.1);
                    let inside = if b.ellipse {
                        dx * dx + dy * dy <= 1.0
                    } else {
                        dx.abs() <= 1.0 && dy.abs() <= 1.0
                    };
                    let outline = if b.ellipse {
                        (0.8..=1.0).contains(&(dx * dx + dy * dy))
                    } else {
                        inside && (dx.abs() > 0.85 || dy.abs() > 0.85)
                    };
                    if outline {
                        c = [10.0, 10.0, 10.0];
                    } else if inside {
                        c = b.color;
                    }
                }
                c
            })
        })
        .collect()
}

fn noisy_complex(spec: &SynthSpec) -> Vec<Tensor<f32>> {
    let seed = spec.seed;
    (0..spec.frames)
        .map(|t| {
            let t = t as f64 * spec.magnitude;
            frame_from(spec.width, spec.height, |x, y| {
                let (px, py) = (x as f64, y as f64);
                // Turbulent advection: a noise-driven displacement field.
                let ax = 8.0 * (fractal(seed ^ 1, px, py + 0.5 * t, 3, 24.0) - 0.5) + t;
                let ay = 8.0 * (fractal(seed ^ 2, px + 0.5 * t, py, 3, 24.0) - 0.5) + 0.3 * t;
                let (sx, sy) = (px - ax, py - ay);
                let r = fractal(seed ^ 3, sx, sy, 5, 6.0);
                let g = fractal(seed ^ 4, sx, sy, 5, 4.0);
                let b = fractal(seed ^ 5, sx, sy, 5, 9.0);
                let grain = lattice(seed ^ 6, x as i64, y as i64 + 1000 * (t as i64)) - 0.5;
                [
                    255.0 * r + 30.0 * grain,
                    255.0 * (0.6 * g + 0.4 * r) + 30.0 * grain,
                    255.0 * b + 30.0 * grain,
                ]
            })
        })
        .collect()
}

pub fn synthesize(spec: &SynthSpec) -> VideoSequence {
    let frames = match spec.style {
        Style::MovingShapes => moving_shapes(spec, false),
        Style::Textured => moving_shapes(spec, true),
        Style::CartoonFlat => cartoon_flat(spec),
        Style::NoisyComplex => noisy_complex(spec),
    };
    VideoSequence::from_frames(frames, 30.0, format!("synth:{:?}:seed={}", spec.style, spec.seed))
        .expect("synthesized frames share one size")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn style_names_parse() {
        assert_eq!("cartoon-flat".parse::<Style>().unwrap(), Style::CartoonFlat);
        assert_eq!("MovingShapes".parse::<Style>().unwrap(), Style::MovingShapes);
        assert!("vhs".parse::<Style>().is_err());
    }
}
