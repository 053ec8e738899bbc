//! Per-instance fine-tuning of a pretrained codec.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterSet, Variant};
use crate::codec::config::{lambda_for_index, Part};
use crate::codec::delta::{quantize_adapters, quantize_full, WeightDeltaPayload};
use crate::codec::model::{CodecModel, Scope};
use crate::codec::net::{window_loss, Binding, Trainable};
use crate::codec::sequence::{encode_sequence, to_pixels, to_unit, EncodeOptions, EncodedSequence};
use crate::codec::train::{stack_batch, Adam};
use crate::container::total_bpp;
use crate::entropy::SpikeSlabParams;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::metrics;
use crate::Tensor;

/// Reduce-on-plateau learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    /// Relative improvement that counts as progress.
    pub threshold: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 2,
            threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl ScheduleState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }
}

/// Feed one epoch loss; returns the learning rate for the next epoch.
pub fn lr_schedule_step(state: &mut ScheduleState, plateau: &Plateau, epoch_loss: f64) -> f64 {
    if epoch_loss < state.best * (1.0 - plateau.threshold) || state.best == f64::INFINITY {
        state.best = epoch_loss;
        state.bad_epochs = 0;
    } else {
        state.bad_epochs += 1;
        if state.bad_epochs >= plateau.patience {
            state.lr *= plateau.factor;
            state.bad_epochs = 0;
        }
    }
    state.lr
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub lambda_index: u8,
    pub beta: f64,
    pub spike_slab: SpikeSlabParams,
    /// Defaults to 5e-4 for adapter scopes and 1e-4 for full fine-tuning.
    pub lr: Option<f64>,
    pub epochs: usize,
    pub gop_train: usize,
    pub gop_test: usize,
    pub batch: usize,
    pub ranks: Vec<usize>,
    pub variant: Variant,
    pub scope: Scope,
    pub plateau: Plateau,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            lambda_index: 3,
            beta: 1.0,
            spike_slab: SpikeSlabParams::default(),
            lr: None,
            epochs: 15,
            gop_train: 4,
            gop_test: 12,
            batch: 3,
            ranks: alloc::vec![16, 8, 8, 2],
            variant: Variant::Repeat,
            scope: Scope::DecoderOnly,
            plateau: Plateau::default(),
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.scope {
            Scope::FullFineTune => 1e-4,
            _ => 5e-4,
        })
    }

    pub fn validate(&self) -> Result<()> {
        lambda_for_index(self.lambda_index)?;
        self.spike_slab.validate()?;
        let lr = self.learning_rate();
        if !(lr >= 0.0 && lr.is_finite()) || self.gop_train == 0 || self.gop_test == 0 || self.batch == 0 {
            return Err(Error::Config(format!("invalid adaptation settings: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean optimizer loss over the epoch's steps.
    pub loss: f64,
    /// Mean squared error on the 0..255 scale.
    pub distortion: f64,
    /// Latent bits per pixel.
    pub latent_bpp: f64,
    /// Continuous weight bits of the whole update.
    pub weight_bits: f64,
}

impl EpochRecord {
    /// The loss rebuilt from its components.
    pub fn recomputed_loss(&self, lambda: f64, beta: f64, total_pixels: f64) -> f64 {
        lambda * self.distortion + self.latent_bpp + beta * self.weight_bits / total_pixels
    }
}

/// Rate-distortion summary of one coded sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceEval {
    pub total_bpp: f64,
    pub latent_bpp: f64,
    pub weight_bytes: usize,
    pub container_bytes: usize,
    pub mse: f64,
    pub psnr: f64,
    pub msssim: f64,
    /// `lambda * mse + total_bpp`.
    pub rd_loss: f64,
}

/// Evaluate a coded sequence against its `[0, 255]` originals using the
/// 8-bit reconstructions the receiver would display.
pub fn evaluate(encoded: &EncodedSequence, originals: &[Tensor<f32>], lambda: f64) -> Result<SequenceEval> {
    let s = originals[0].shape();
    let pixels = (originals.len() * s.h * s.w) as f64;
    let mut sq = 0.0;
    let mut ssim = 0.0;
    for (r, o) in encoded.recon.iter().zip(originals) {
        let px = to_pixels(r);
        sq += metrics::mse(&px, o)?;
        ssim += metrics::ms_ssim(&px, o, 5)?;
    }
    let n = originals.len() as f64;
    let mse = sq / n;
    let total = total_bpp(encoded.bytes.len(), originals.len(), s.w, s.h);
    Ok(SequenceEval {
        total_bpp: total,
        latent_bpp: encoded.frame_bits.iter().sum::<u64>() as f64 / pixels,
        weight_bytes: encoded.weight_bytes,
        container_bytes: encoded.bytes.len(),
        mse,
        psnr: metrics::psnr_from_mse(mse, metrics::PEAK),
        msssim: ssim / n,
        rd_loss: lambda * mse + total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub scope: Scope,
    pub variant: Option<Variant>,
    pub lambda: f64,
    pub trainable_params: usize,
    pub epochs: Vec<EpochRecord>,
    pub payload_bytes: usize,
    pub pre: SequenceEval,
    pub post: SequenceEval,
}

/// Parameters an adaptation run trains, counted.
pub fn scope_mask(model: &CodecModel, scope: Scope, variant: Variant, ranks: &[usize]) -> Result<usize> {
    match scope {
        Scope::FullFineTune => Ok(model.decoder_param_count()),
        _ => Ok(model.init_adapters(scope, variant, ranks, 0)?.param_count()),
    }
}

enum State {
    Adapters(AdapterSet),
    Full(CodecModel),
}

/// Continuous weight bits of the current update, added to the graph.
fn weight_bits_var(
    g: &mut Graph<f32>,
    bind: &Binding,
    state: &State,
    base: &CodecModel,
    a0: &[Tensor<f32>],
    params: SpikeSlabParams,
) -> Result<Option<Var>> {
    let mut terms = Vec::new();
    match state {
        State::Adapters(_) => {
            for (av, z) in bind.adapter_vars.iter().zip(a0) {
                let zc = g.constant(z.clone());
                let da = g.sub(av.a, zc)?;
                terms.push((g.spike_slab_bits(da, params), 1.0f32));
                terms.push((g.spike_slab_bits(av.b, params), 1.0));
            }
        }
        State::Full(_) => {
            let flat: Vec<&Tensor<f32>> = base.named_params().into_iter().map(|(_, t)| t).collect();
            for &(slot, v) in &bind.base_vars {
                let zc = g.constant(flat[slot].clone());
                let d = g.sub(v, zc)?;
                terms.push((g.spike_slab_bits(d, params), 1.0));
            }
        }
    }
    if terms.is_empty() {
        return Ok(None);
    }
    Ok(Some(g.combine(&terms)?))
}

/// Fine-tune `model` on `video` (frames in `[0, 255]`), then quantize the
/// update and score what the receiver would decode.
pub fn adapt(
    model: &CodecModel,
    video: &[Tensor<f32>],
    cfg: &AdaptConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(WeightDeltaPayload, AdaptReport)> {
    cfg.validate()?;
    if video.len() < cfg.gop_train {
        return Err(Error::Config(format!(
            "video has {} frames, fewer than the training GoP {}",
            video.len(),
            cfg.gop_train
        )));
    }
    let lambda = lambda_for_index(cfg.lambda_index)?;
    let s = video[0].shape();
    model.config.check_frame(s.h, s.w)?;
    let total_pixels = (video.len() * s.h * s.w) as f64;
    let unit: Vec<Tensor<f32>> = video.iter().map(to_unit).collect();

    let mut state = match cfg.scope {
        Scope::FullFineTune => State::Full(model.clone()),
        scope => State::Adapters(model.init_adapters(scope, cfg.variant, &cfg.ranks, cfg.seed)?),
    };
    let a0: Vec<Tensor<f32>> = match &state {
        State::Adapters(set) => set.adapters.values().map(|a| a.a.clone()).collect(),
        State::Full(_) => Vec::new(),
    };
    let sizes: Vec<usize> = match &state {
        State::Adapters(set) => set
            .adapters
            .values()
            .flat_map(|a| [a.a.shape().numel(), a.b.shape().numel()])
            .collect(),
        State::Full(m) => m
            .layers
            .iter()
            .filter(|l| l.id.part == Part::Decoder)
            .flat_map(|l| [l.weight.shape().numel(), l.bias.shape().numel()])
            .collect(),
    };
    let trainable_params = sizes.iter().sum();
    let mut adam = Adam::new(cfg.learning_rate(), &sizes);
    let mut schedule = ScheduleState::new(cfg.learning_rate());
    let offsets: Vec<usize> = (0..=video.len() - cfg.gop_train).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let params = crate::container::wire_params(&cfg.spike_slab);

    for epoch in 0..cfg.epochs {
        let mut order = offsets.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64 + 1)));
        let mut sums = [0.0f64; 4];
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let frames = (0..cfg.gop_train)
                .map(|k| {
                    let items: Vec<Tensor<f32>> = chunk.iter().map(|&o| unit[o + k].clone()).collect();
                    stack_batch(&items)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut g = Graph::<f32>::new();
            let (bind, current) = match &state {
                State::Adapters(set) => (Binding::new(&mut g, model, Trainable::Adapters(set))?, model),
                State::Full(m) => (Binding::new(&mut g, m, Trainable::Decoders)?, m),
            };
            let wl = window_loss(&mut g, &bind, current, &frames, lambda)?;
            let wbits = weight_bits_var(&mut g, &bind, &state, model, &a0, params)?;
            let loss = match wbits {
                Some(w) => g.combine(&[(wl.loss, 1.0), (w, (cfg.beta / total_pixels) as f32)])?,
                None => wl.loss,
            };
            let loss_value = g.scalar(loss) as f64;
            if !loss_value.is_finite() {
                return Err(Error::Divergence {
                    step: epoch * offsets.len().div_ceil(cfg.batch) + steps,
                    loss: loss_value,
                });
            }
            let wb = wbits.map_or(0.0, |w| g.scalar(w) as f64);
            g.backward(loss)?;
            match &mut state {
                State::Adapters(set) => {
                    let mut grads = Vec::new();
                    for av in &bind.adapter_vars {
                        grads.push(g.grad_tensor(av.a));
                        grads.push(g.grad_tensor(av.b));
                    }
                    let mut p: Vec<&mut Tensor<f32>> =
                        set.adapters.values_mut().flat_map(|a| [&mut a.a, &mut a.b]).collect();
                    adam.step(&mut p, &grads);
                }
                State::Full(m) => {
                    let grads: Vec<Tensor<f32>> = bind.base_vars.iter().map(|&(_, v)| g.grad_tensor(v)).collect();
                    let mut p: Vec<&mut Tensor<f32>> = m
                        .layers
                        .iter_mut()
                        .filter(|l| l.id.part == Part::Decoder)
                        .flat_map(|l| [&mut l.weight, &mut l.bias])
                        .collect();
                    adam.step(&mut p, &grads);
                }
            }
            sums[0] += loss_value;
            sums[1] += wl.mse;
            sums[2] += wl.bpp;
            sums[3] += wb;
            steps += 1;
        }
        let n = steps.max(1) as f64;
        let record = EpochRecord {
            epoch,
            lr: adam.lr,
            loss: sums[0] / n,
            distortion: sums[1] / n,
            latent_bpp: sums[2] / n,
            weight_bits: sums[3] / n,
        };
        adam.lr = lr_schedule_step(&mut schedule, &cfg.plateau, record.loss);
        on_epoch(&record);
        epochs.push(record);
    }

    let payload = match &state {
        State::Adapters(set) => quantize_adapters(set, cfg.seed, &params)?.0,
        State::Full(m) => quantize_full(model, m, &params)?.0,
    };
    let opts = EncodeOptions {
        gop: cfg.gop_test,
        lambda_index: cfg.lambda_index,
        display: None,
    };
    let pre = evaluate(&encode_sequence(model, video, &opts, None)?, video, lambda)?;
    let post_seq = encode_sequence(model, video, &opts, Some(&payload))?;
    let post = evaluate(&post_seq, video, lambda)?;
    let report = AdaptReport {
        scope: cfg.scope,
        variant: payload.variant,
        lambda,
        trainable_params,
        epochs,
        payload_bytes: post_seq.weight_bytes,
        pre,
        post,
    };
    Ok((payload, report))
}
