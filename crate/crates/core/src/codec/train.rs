//! Adam and seeded pretraining on short clips.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{lambda_for_index, CodecConfig};
use super::model::CodecModel;
use super::net::{window_loss, Binding, Trainable};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::{Shape, Tensor};

/// Adam with a step count per tensor: a tensor whose gradient is all zero
/// (its branch was not exercised) keeps its moments and count unchanged.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: Vec<i32>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: alloc::vec![0; sizes.len()],
            m: sizes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<f32>], grads: &[Tensor<f32>]) {
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if g.data().iter().all(|&x| x == 0.0) {
                continue;
            }
            self.t[k] += 1;
            let c1 = 1.0 - libm::pow(self.beta1, self.t[k] as f64);
            let c2 = 1.0 - libm::pow(self.beta2, self.t[k] as f64);
            let step = (self.lr * libm::sqrt(c2) / c1) as f32;
            let eps = (self.eps * libm::sqrt(c2)) as f32;
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                *w -= step * m[i] / (libm::sqrtf(v[i]) + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub lambda_index: u8,
    /// Warm-up steps on single intra frames before whole windows.
    pub intra_steps: usize,
    pub steps: usize,
    pub batch: usize,
    /// Square crop size, a multiple of 16.
    pub crop: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lambda_index: 3,
            intra_steps: 2000,
            steps: 600,
            batch: 4,
            crop: 64,
            lr: 2e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub mse: f64,
    pub bpp: f64,
}

/// Stack `(1, 3, h, w)` crops into one batch tensor.
pub fn stack_batch(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let s = items[0].shape();
    let mut data = Vec::with_capacity(items.len() * s.item());
    for t in items {
        t.shape().expect("batch item", &s)?;
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(Shape::new(items.len(), s.c, s.h, s.w), data)
}

/// Spatial crop of a `(1, c, h, w)` frame.
pub fn crop(frame: &Tensor<f32>, y0: usize, x0: usize, size: usize) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(1, frame.shape().c, size, size), |_, c, y, x| {
        frame.at(0, c, y0 + y, x0 + x)
    })
}

/// Loss of one window evaluated without gradients.
pub fn evaluate_window(model: &CodecModel, window: &[Tensor<f32>], lambda: f64) -> Result<(f64, f64, f64)> {
    let mut g = Graph::<f32>::new();
    let bind = Binding::new(&mut g, model, Trainable::Nothing)?;
    let wl = window_loss(&mut g, &bind, model, window, lambda)?;
    Ok((g.scalar(wl.loss) as f64, wl.mse, wl.bpp))
}

/// Train a fresh model on clips of `[0, 255]` frames: `intra_steps` on
/// single frames at `lr`, then `steps` on windows of `gop_train` frames
/// starting at `lr / 2`, halved at 60% and again at 85% of that phase.
/// Recurrent P-frame chains diverge at the full rate.
pub fn pretrain(
    clips: &[Vec<Tensor<f32>>],
    config: CodecConfig,
    cfg: &PretrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<CodecModel> {
    let lambda = lambda_for_index(cfg.lambda_index)?;
    config.check_frame(cfg.crop, cfg.crop)?;
    let window = config.gop_train;
    let usable: Vec<&Vec<Tensor<f32>>> = clips
        .iter()
        .filter(|c| c.len() >= window && c[0].shape().h >= cfg.crop && c[0].shape().w >= cfg.crop)
        .collect();
    if usable.is_empty() || cfg.batch == 0 {
        return Err(Error::Empty("pretraining clips long and large enough"));
    }
    let mut model = CodecModel::new(config, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED);
    let sizes: Vec<usize> = model.named_params().iter().map(|(_, t)| t.shape().numel()).collect();
    let mut adam = Adam::new(cfg.lr, &sizes);
    for step in 0..cfg.intra_steps + cfg.steps {
        let (window, phase_step, phase_lr) = match step.checked_sub(cfg.intra_steps) {
            None => (1, 0, cfg.lr),
            Some(k) => (window, k, 0.5 * cfg.lr),
        };
        adam.lr = phase_lr
            * if phase_step * 100 >= cfg.steps * 85 {
                0.25
            } else if phase_step * 100 >= cfg.steps * 60 {
                0.5
            } else {
                1.0
            };
        let mut per_frame: Vec<Vec<Tensor<f32>>> = alloc::vec![Vec::new(); window];
        for _ in 0..cfg.batch {
            let clip = usable.choose(&mut rng).expect("non-empty");
            let s = clip[0].shape();
            let t0 = rng.gen_range(0..=clip.len() - window);
            let y0 = rng.gen_range(0..=s.h - cfg.crop);
            let x0 = rng.gen_range(0..=s.w - cfg.crop);
            for (k, f) in clip[t0..t0 + window].iter().enumerate() {
                per_frame[k].push(crop(f, y0, x0, cfg.crop).map(|v| v / 255.0));
            }
        }
        let frames = per_frame.iter().map(|f| stack_batch(f)).collect::<Result<Vec<_>>>()?;
        let mut g = Graph::<f32>::new();
        let bind = Binding::new(&mut g, &model, Trainable::Everything)?;
        let wl = window_loss(&mut g, &bind, &model, &frames, lambda)?;
        let loss = g.scalar(wl.loss) as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        g.backward(wl.loss)?;
        let grads: Vec<Tensor<f32>> = bind.base_vars.iter().map(|&(_, v)| g.grad_tensor(v)).collect();
        let mut params: Vec<&mut Tensor<f32>> = model.named_params_mut().into_iter().map(|(_, t)| t).collect();
        adam.step(&mut params, &grads);
        on_step(&StepLog {
            step,
            lr: adam.lr,
            loss,
            mse: wl.mse,
            bpp: wl.bpp,
        });
    }
    Ok(model)
}
