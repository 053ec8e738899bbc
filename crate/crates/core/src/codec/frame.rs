//! Entropy-coded inference for single frames.
//!
//! A frame record is one range-coded stream holding, in order, the hyper
//! latent and main latent of each branch used: intra frames code the intra
//! branch, predicted frames code motion then residual.

use alloc::vec::Vec;

use super::config::Branch;
use super::model::CodecModel;
use super::net::{Binding, Trainable};
use crate::entropy::likelihood::scale_from_raw;
use crate::entropy::{LatentCode, LatentModel, RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Intra,
    Predicted,
}

impl FrameKind {
    pub fn letter(self) -> char {
        match self {
            FrameKind::Intra => 'I',
            FrameKind::Predicted => 'P',
        }
    }
}

#[derive(Debug, Clone)]
pub struct CodedFrame {
    pub kind: FrameKind,
    pub record: Vec<u8>,
    /// Reconstruction in `[0, 1]` units, unclamped.
    pub recon: Tensor<f32>,
    /// Sum of model `-log2 p` over every coded symbol.
    pub estimated_bits: f64,
}

fn symbols_of(t: &Tensor<f32>) -> Result<Vec<i32>> {
    t.data()
        .iter()
        .map(|&v| {
            if v.is_finite() && v.abs() < 1e9 {
                Ok(v as i32)
            } else {
                Err(Error::Coding(alloc::format!("latent value {v} cannot be coded")))
            }
        })
        .collect()
}

fn tensor_of(code: &LatentCode) -> Tensor<f32> {
    Tensor::from_vec(code.shape, code.symbols.iter().map(|&s| s as f32).collect()).expect("code shape")
}

fn factorized_model(g: &Graph<f32>, prior: Var) -> LatentModel {
    LatentModel::FactorizedHyper {
        scales: g
            .value(prior)
            .data()
            .iter()
            .map(|&r| scale_from_raw(r as f64))
            .collect(),
    }
}

fn conditional_model(g: &Graph<f32>, mean: Var, raw: Var) -> LatentModel {
    LatentModel::ConditionalGaussian {
        means: g.value(mean).data().iter().map(|&m| m as f64).collect(),
        scales: g.value(raw).data().iter().map(|&r| scale_from_raw(r as f64)).collect(),
    }
}

fn encode_branch(
    g: &mut Graph<f32>,
    bind: &Binding,
    model: &CodecModel,
    branch: Branch,
    input: Var,
    enc: &mut RangeEncoder,
) -> Result<(Var, f64)> {
    let (y, z) = bind.analysis(g, model, branch, input)?;
    let z_hat = g.round_ste(z);
    let z_code = LatentCode::new(
        g.value(z_hat).shape(),
        symbols_of(g.value(z_hat))?,
        factorized_model(g, bind.prior(branch)),
    )?;
    z_code.encode(enc)?;
    let (mean, raw) = bind.hyper_synthesis(g, model, branch, z_hat)?;
    let y_hat = g.round_ste(y);
    let y_code = LatentCode::new(
        g.value(y_hat).shape(),
        symbols_of(g.value(y_hat))?,
        conditional_model(g, mean, raw),
    )?;
    y_code.encode(enc)?;
    let out = bind.synthesis(g, model, branch, y_hat)?;
    Ok((out, z_code.latent_bits() + y_code.latent_bits()))
}

fn decode_branch(
    g: &mut Graph<f32>,
    bind: &Binding,
    model: &CodecModel,
    branch: Branch,
    dec: &mut RangeDecoder<'_>,
    y_shape: Shape,
) -> Result<Var> {
    let z_shape = Shape::new(y_shape.n, model.config.hyper_channels, y_shape.h, y_shape.w);
    let z_code = LatentCode::decode(dec, z_shape, factorized_model(g, bind.prior(branch)))?;
    let z_hat = g.constant(tensor_of(&z_code));
    let (mean, raw) = bind.hyper_synthesis(g, model, branch, z_hat)?;
    let y_code = LatentCode::decode(dec, y_shape, conditional_model(g, mean, raw))?;
    let y_hat = g.constant(tensor_of(&y_code));
    bind.synthesis(g, model, branch, y_hat)
}

fn check_input(model: &CodecModel, x: &Tensor<f32>) -> Result<()> {
    let s = x.shape();
    crate::error::dim("frame", crate::error::Axis::Channel, 3, s.c)?;
    model.config.check_frame(s.h, s.w)
}

/// Code one frame (values in `[0, 1]`). A reference makes it a predicted
/// frame.
pub fn encode_frame(model: &CodecModel, x: &Tensor<f32>, reference: Option<&Tensor<f32>>) -> Result<CodedFrame> {
    check_input(model, x)?;
    let mut g = Graph::new();
    let bind = Binding::new(&mut g, model, Trainable::Nothing)?;
    let mut enc = RangeEncoder::new();
    let xv = g.constant(x.clone());
    let (recon, bits, kind) = match reference {
        None => {
            let (out, bits) = encode_branch(&mut g, &bind, model, Branch::Intra, xv, &mut enc)?;
            (out, bits, FrameKind::Intra)
        }
        Some(r) => {
            r.shape().expect("reference", &x.shape())?;
            let rv = g.constant(r.clone());
            let input = g.concat_channels(&[xv, rv])?;
            let (motion, bits_m) = encode_branch(&mut g, &bind, model, Branch::Motion, input, &mut enc)?;
            let pred = bind.predict(&mut g, model, rv, motion)?;
            let residual = g.sub(xv, pred)?;
            let (r_hat, bits_r) = encode_branch(&mut g, &bind, model, Branch::Residual, residual, &mut enc)?;
            (g.add(pred, r_hat)?, bits_m + bits_r, FrameKind::Predicted)
        }
    };
    Ok(CodedFrame {
        kind,
        record: enc.finish(),
        recon: g.value(recon).clone(),
        estimated_bits: bits,
    })
}

/// Inverse of [`encode_frame`]: returns the reconstruction in `[0, 1]`.
pub fn decode_frame(
    model: &CodecModel,
    record: &[u8],
    reference: Option<&Tensor<f32>>,
    height: usize,
    width: usize,
) -> Result<Tensor<f32>> {
    model.config.check_frame(height, width)?;
    let y_shape = Shape::new(
        1,
        model.config.latent_channels,
        height / super::config::DOWNSAMPLE,
        width / super::config::DOWNSAMPLE,
    );
    let mut g = Graph::new();
    let bind = Binding::new(&mut g, model, Trainable::Nothing)?;
    let mut dec = RangeDecoder::new(record);
    let recon = match reference {
        None => decode_branch(&mut g, &bind, model, Branch::Intra, &mut dec, y_shape)?,
        Some(r) => {
            if r.shape() != Shape::new(1, 3, height, width) {
                return Err(Error::Protocol("reference frame has the wrong geometry".into()));
            }
            let rv = g.constant(r.clone());
            let motion = decode_branch(&mut g, &bind, model, Branch::Motion, &mut dec, y_shape)?;
            let pred = bind.predict(&mut g, model, rv, motion)?;
            let r_hat = decode_branch(&mut g, &bind, model, Branch::Residual, &mut dec, y_shape)?;
            g.add(pred, r_hat)?
        }
    };
    Ok(g.value(recon).clone())
}
