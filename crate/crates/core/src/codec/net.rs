//! The network topology, written once against [`Graph`] and shared by
//! training and inference.

use alloc::vec::Vec;

use super::config::{Branch, LayerId, Part, LEAKY_SLOPE};
use super::model::CodecModel;
use crate::adapter::AdapterSet;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::{Real, Tensor};

/// What a bound graph may differentiate.
#[derive(Debug, Clone, Copy)]
pub enum Trainable<'a> {
    Nothing,
    /// Every base parameter (pretraining).
    Everything,
    /// Adapter factors only; base weights stay constant.
    Adapters(&'a AdapterSet),
    /// Weights and biases of the main decoders.
    Decoders,
}

#[derive(Debug, Clone, Copy)]
pub struct AdapterVars {
    pub layer: u32,
    pub a: Var,
    pub b: Var,
}

/// Model parameters placed on a graph.
#[derive(Debug, Clone)]
pub struct Binding {
    weights: Vec<Var>,
    biases: Vec<Var>,
    priors: Vec<Var>,
    /// Base-parameter leaves that require gradients, in storage order
    /// (`weight, bias` per layer, then priors).
    pub base_vars: Vec<(usize, Var)>,
    pub adapter_vars: Vec<AdapterVars>,
}

fn cast<T: Real>(t: &Tensor<f32>) -> Tensor<T> {
    t.cast()
}

impl Binding {
    pub fn new<T: Real>(g: &mut Graph<T>, model: &CodecModel, trainable: Trainable<'_>) -> Result<Self> {
        let mut b = Binding {
            weights: Vec::with_capacity(model.layers.len()),
            biases: Vec::with_capacity(model.layers.len()),
            priors: Vec::new(),
            base_vars: Vec::new(),
            adapter_vars: Vec::new(),
        };
        for (li, layer) in model.layers.iter().enumerate() {
            let train_base = match trainable {
                Trainable::Everything => true,
                Trainable::Decoders => layer.id.part == Part::Decoder,
                _ => false,
            };
            let mut w = g.leaf(cast(&layer.weight), train_base);
            let bias = g.leaf(cast(&layer.bias), train_base);
            if train_base {
                b.base_vars.push((2 * li, w));
                b.base_vars.push((2 * li + 1, bias));
            }
            if let Trainable::Adapters(set) = trainable {
                if let Some(ad) = set.get(layer.id.code()) {
                    let a = g.leaf(cast(&ad.a), true);
                    let bb = g.leaf(cast(&ad.b), true);
                    let delta = g.adapter_delta(a, bb, ad.geometry)?;
                    w = g.add(w, delta)?;
                    b.adapter_vars.push(AdapterVars {
                        layer: layer.id.code(),
                        a,
                        b: bb,
                    });
                }
            }
            b.weights.push(w);
            b.biases.push(bias);
        }
        let base = 2 * model.layers.len();
        for (i, p) in model.priors.iter().enumerate() {
            let train = matches!(trainable, Trainable::Everything);
            let v = g.leaf(cast(p), train);
            if train {
                b.base_vars.push((base + i, v));
            }
            b.priors.push(v);
        }
        Ok(b)
    }

    pub fn prior(&self, branch: Branch) -> Var {
        self.priors[branch.index()]
    }

    fn conv<T: Real>(&self, g: &mut Graph<T>, model: &CodecModel, id: LayerId, x: Var) -> Result<Var> {
        let i = CodecModel::layer_index(id);
        g.conv2d(x, self.weights[i], Some(self.biases[i]), model.layer(id).spec)
    }

    fn stack<T: Real>(&self, g: &mut Graph<T>, model: &CodecModel, branch: Branch, part: Part, x: Var) -> Result<Var> {
        let mut h = x;
        let slope = T::from_f64(LEAKY_SLOPE);
        for index in 0..part.depth() {
            h = self.conv(g, model, LayerId { branch, part, index }, h)?;
            if index + 1 < part.depth() {
                h = g.leaky_relu(h, slope);
            }
        }
        Ok(h)
    }

    /// Main latent `y` and hyper latent `z` (both unquantized).
    pub fn analysis<T: Real>(
        &self,
        g: &mut Graph<T>,
        model: &CodecModel,
        branch: Branch,
        x: Var,
    ) -> Result<(Var, Var)> {
        let y = self.stack(g, model, branch, Part::Encoder, x)?;
        let z = self.stack(g, model, branch, Part::HyperEncoder, y)?;
        Ok((y, z))
    }

    /// Mean and raw scale of `y` given the quantized hyper latent.
    pub fn hyper_synthesis<T: Real>(
        &self,
        g: &mut Graph<T>,
        model: &CodecModel,
        branch: Branch,
        z_hat: Var,
    ) -> Result<(Var, Var)> {
        let h = self.stack(g, model, branch, Part::HyperDecoder, z_hat)?;
        let m = model.config.latent_channels;
        let mean = g.narrow_channels(h, 0, m)?;
        let raw = g.narrow_channels(h, m, m)?;
        Ok((mean, raw))
    }

    pub fn synthesis<T: Real>(&self, g: &mut Graph<T>, model: &CodecModel, branch: Branch, y_hat: Var) -> Result<Var> {
        self.stack(g, model, branch, Part::Decoder, y_hat)
    }

    /// Training-time pass through one branch with straight-through rounding.
    /// Returns the branch output and its total latent bits.
    pub fn code_branch<T: Real>(
        &self,
        g: &mut Graph<T>,
        model: &CodecModel,
        branch: Branch,
        x: Var,
    ) -> Result<(Var, Var)> {
        let (y, z) = self.analysis(g, model, branch, x)?;
        let z_hat = g.round_ste(z);
        let (mean, raw) = self.hyper_synthesis(g, model, branch, z_hat)?;
        let y_hat = g.round_ste(y);
        let bits_y = g.gaussian_bits(y_hat, mean, raw)?;
        let bits_z = g.factorized_bits(z_hat, self.prior(branch))?;
        let bits = g.add(bits_y, bits_z)?;
        let out = self.synthesis(g, model, branch, y_hat)?;
        Ok((out, bits))
    }

    /// Prediction of the current frame from the reference and the decoded
    /// motion output `(fx, fy, scale)`.
    pub fn predict<T: Real>(&self, g: &mut Graph<T>, model: &CodecModel, reference: Var, motion: Var) -> Result<Var> {
        let flow = g.narrow_channels(motion, 0, 2)?;
        let scale = g.narrow_channels(motion, 2, 1)?;
        g.warp_scale_space(reference, flow, scale, model.config.blur_levels)
    }

    /// One training frame: returns reconstruction and latent bits.
    pub fn train_frame<T: Real>(
        &self,
        g: &mut Graph<T>,
        model: &CodecModel,
        x: Var,
        reference: Option<Var>,
    ) -> Result<(Var, Var)> {
        match reference {
            None => self.code_branch(g, model, Branch::Intra, x),
            Some(r) => {
                let input = g.concat_channels(&[x, r])?;
                let (motion, bits_m) = self.code_branch(g, model, Branch::Motion, input)?;
                let pred = self.predict(g, model, r, motion)?;
                let residual = g.sub(x, pred)?;
                let (r_hat, bits_r) = self.code_branch(g, model, Branch::Residual, residual)?;
                let recon = g.add(pred, r_hat)?;
                let bits = g.add(bits_m, bits_r)?;
                Ok((recon, bits))
            }
        }
    }
}

/// Per-window training objective.
#[derive(Debug, Clone, Copy)]
pub struct WindowLoss {
    pub loss: Var,
    /// Mean squared error on the 0..255 scale, averaged over frames.
    pub mse: f64,
    /// Latent bits per pixel, averaged over frames.
    pub bpp: f64,
}

/// `(1/F) * sum_t [lambda * MSE_t + bits_t / (N h w)]` over a window of
/// batched frames in `[0, 1]`.
pub fn window_loss<T: Real>(
    g: &mut Graph<T>,
    bind: &Binding,
    model: &CodecModel,
    frames: &[Tensor<T>],
    lambda: f64,
) -> Result<WindowLoss> {
    let s = frames[0].shape();
    let pixels = (s.n * s.h * s.w) as f64;
    let count = frames.len() as f64;
    let mut terms = Vec::with_capacity(2 * frames.len());
    let mut reference = None;
    let (mut mse, mut bpp) = (0.0, 0.0);
    for f in frames {
        let x = g.constant(f.clone());
        let (recon, bits) = bind.train_frame(g, model, x, reference)?;
        let d = g.mse(x, recon)?;
        mse += g.scalar(d).to_f64() * 255.0 * 255.0;
        bpp += g.scalar(bits).to_f64() / pixels;
        terms.push((d, T::from_f64(lambda * 255.0 * 255.0 / count)));
        terms.push((bits, T::from_f64(1.0 / (pixels * count))));
        reference = Some(recon);
    }
    let loss = g.combine(&terms)?;
    Ok(WindowLoss {
        loss,
        mse: mse / count,
        bpp: bpp / count,
    })
}
