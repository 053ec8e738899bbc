//! Whole-sequence coding into a `.pevc` container.

use alloc::format;
use alloc::vec::Vec;

use super::delta::{apply_payload, WeightDeltaPayload, DELTA_NONE};
use super::frame::{decode_frame, encode_frame, FrameKind};
use super::model::CodecModel;
use crate::container::{
    join_frame_records, read_container, record_bits, split_frame_records, wire_params, write_container,
    ContainerHeader, Section, SectionKind,
};
use crate::entropy::SpikeSlabParams;
use crate::error::{Error, Result};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeOptions {
    pub gop: usize,
    pub lambda_index: u8,
    /// Size before padding; defaults to the coded size.
    pub display: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct EncodedSequence {
    pub bytes: Vec<u8>,
    /// Sender-side reconstructions in `[0, 1]`.
    pub recon: Vec<Tensor<f32>>,
    pub kinds: Vec<FrameKind>,
    /// Bits of each frame record, length prefix included.
    pub frame_bits: Vec<u64>,
    pub estimated_bits: Vec<f64>,
    /// Bytes of the weight-delta section, zero when absent.
    pub weight_bytes: usize,
}

#[derive(Debug, Clone)]
pub struct DecodedSequence {
    pub header: ContainerHeader,
    pub recon: Vec<Tensor<f32>>,
    pub kinds: Vec<FrameKind>,
}

/// Frame type of index `i` under GoP size `gop`.
pub fn frame_kind(i: usize, gop: usize) -> FrameKind {
    if i % gop == 0 {
        FrameKind::Intra
    } else {
        FrameKind::Predicted
    }
}

/// `[0, 255]` pixels to codec units.
pub fn to_unit(frame: &Tensor<f32>) -> Tensor<f32> {
    frame.map(|v| v / 255.0)
}

/// Codec units to displayable 8-bit pixels.
pub fn to_pixels(recon: &Tensor<f32>) -> Tensor<f32> {
    recon.map(|v| libm::roundf((v * 255.0).clamp(0.0, 255.0)))
}

fn dim16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit the header")))
}

/// Encode frames given in `[0, 255]`. A payload, when given, is applied to
/// `base` before coding and shipped in the container.
pub fn encode_sequence(
    base: &CodecModel,
    frames: &[Tensor<f32>],
    opts: &EncodeOptions,
    payload: Option<&WeightDeltaPayload>,
) -> Result<EncodedSequence> {
    if frames.is_empty() {
        return Err(Error::Empty("frame sequence"));
    }
    if opts.gop == 0 || opts.gop > u8::MAX as usize {
        return Err(Error::Config(format!("GoP size {} outside 1..=255", opts.gop)));
    }
    let s = frames[0].shape();
    let adapted;
    let model = match payload {
        Some(p) => {
            adapted = apply_payload(base, p)?;
            &adapted
        }
        None => base,
    };
    let (dw, dh) = opts.display.unwrap_or((s.w, s.h));
    let mut sections = Vec::new();
    let mut weight_bytes = 0;
    if let Some(p) = payload {
        let body = p.to_bytes()?;
        weight_bytes = body.len();
        sections.push(Section {
            kind: SectionKind::WeightDelta,
            payload: body,
        });
    }
    let mut out = EncodedSequence {
        bytes: Vec::new(),
        recon: Vec::with_capacity(frames.len()),
        kinds: Vec::with_capacity(frames.len()),
        frame_bits: Vec::with_capacity(frames.len()),
        estimated_bits: Vec::with_capacity(frames.len()),
        weight_bytes,
    };
    for gop in frames.chunks(opts.gop) {
        let mut records = Vec::with_capacity(gop.len());
        let mut reference: Option<Tensor<f32>> = None;
        for f in gop {
            f.shape().expect("sequence frame", &s)?;
            let coded = encode_frame(model, &to_unit(f), reference.as_ref())?;
            out.frame_bits.push(record_bits(coded.record.len()));
            out.estimated_bits.push(coded.estimated_bits);
            out.kinds.push(coded.kind);
            out.recon.push(coded.recon.clone());
            reference = Some(coded.recon);
            records.push(coded.record);
        }
        sections.push(Section {
            kind: SectionKind::GopLatents,
            payload: join_frame_records(records.iter().map(|r| r.as_slice())),
        });
    }
    let (kind, ranks, seed, params) = match payload {
        Some(p) => (p.kind_code(), p.ranks.clone(), p.adapter_seed, p.params),
        None => (DELTA_NONE, Vec::new(), 0, wire_params(&SpikeSlabParams::default())),
    };
    let header = ContainerHeader {
        lambda_index: opts.lambda_index,
        frames: u32::try_from(frames.len()).map_err(|_| Error::Config("too many frames".into()))?,
        width: dim16(s.w, "width")?,
        height: dim16(s.h, "height")?,
        display_width: dim16(dw, "display width")?,
        display_height: dim16(dh, "display height")?,
        gop: opts.gop as u8,
        delta_kind: kind,
        ranks,
        spike_slab: params,
        adapter_seed: seed,
    };
    out.bytes = write_container(&header, &sections)?;
    Ok(out)
}

fn payload_from_section(header: &ContainerHeader, bytes: &[u8]) -> Result<WeightDeltaPayload> {
    WeightDeltaPayload::from_bytes(
        bytes,
        header.delta_kind,
        header.ranks.clone(),
        header.adapter_seed,
        header.spike_slab,
    )
}

/// The weight update carried by a container, if any.
pub fn extract_payload(bytes: &[u8]) -> Result<Option<WeightDeltaPayload>> {
    let (header, sections) = read_container(bytes)?;
    sections
        .iter()
        .find(|s| s.kind == SectionKind::WeightDelta)
        .map(|s| payload_from_section(&header, &s.payload))
        .transpose()
}

/// Decode a container against the base model it was produced with.
pub fn decode_sequence(base: &CodecModel, bytes: &[u8]) -> Result<DecodedSequence> {
    let (header, sections) = read_container(bytes)?;
    let (h, w) = (header.height as usize, header.width as usize);
    let gop = header.gop as usize;
    if gop == 0 {
        return Err(Error::Protocol("GoP size 0".into()));
    }
    let mut model_owned = None;
    let mut gops = Vec::new();
    for s in &sections {
        match s.kind {
            SectionKind::WeightDelta => {
                model_owned = Some(apply_payload(base, &payload_from_section(&header, &s.payload)?)?);
            }
            SectionKind::GopLatents => gops.push(split_frame_records(&s.payload)?),
            SectionKind::Unknown(_) => {}
        }
    }
    if model_owned.is_none() && header.delta_kind != DELTA_NONE {
        return Err(Error::Protocol(
            "header announces a weight delta but none is present".into(),
        ));
    }
    let model = model_owned.as_ref().unwrap_or(base);
    let frames = header.frames as usize;
    let expected_gops = frames.div_ceil(gop);
    if gops.len() != expected_gops {
        return Err(Error::Protocol(format!(
            "expected {expected_gops} GoP sections for {frames} frames, found {}",
            gops.len()
        )));
    }
    let mut recon = Vec::with_capacity(frames);
    let mut kinds = Vec::with_capacity(frames);
    for (gi, records) in gops.iter().enumerate() {
        let want = gop.min(frames - gi * gop);
        if records.len() != want {
            return Err(Error::Protocol(format!(
                "GoP {gi} holds {} frames, expected {want}",
                records.len()
            )));
        }
        let mut reference: Option<Tensor<f32>> = None;
        for rec in records {
            let r = decode_frame(model, rec, reference.as_ref(), h, w)?;
            kinds.push(if reference.is_none() {
                FrameKind::Intra
            } else {
                FrameKind::Predicted
            });
            recon.push(r.clone());
            reference = Some(r);
        }
    }
    Ok(DecodedSequence { header, recon, kinds })
}
