//! Scoring a decoded sequence against its source and its stream.

use pevc_core::codec::config::lambda_for_index;
use pevc_core::codec::sequence::frame_kind;
use pevc_core::codec::FrameKind;
use pevc_core::container::{read_container, record_bits, split_frame_records, total_bpp, ContainerHeader, SectionKind};
use pevc_core::metrics::{self, FrameRow, RdPoint};
use pevc_core::Tensor;

/// Per-frame rate accounting of a container.
#[derive(Debug, Clone)]
pub struct StreamStats {
    pub header: ContainerHeader,
    pub frame_bits: Vec<u64>,
    pub kinds: Vec<FrameKind>,
    pub weight_bytes: usize,
    pub total_bytes: usize,
}

pub fn stream_stats(bytes: &[u8]) -> pevc_core::Result<StreamStats> {
    let (header, sections) = read_container(bytes)?;
    let mut frame_bits = Vec::new();
    let mut weight_bytes = 0;
    for s in &sections {
        match s.kind {
            SectionKind::GopLatents => {
                frame_bits.extend(split_frame_records(&s.payload)?.iter().map(|r| record_bits(r.len())))
            }
            SectionKind::WeightDelta => weight_bytes += s.payload.len(),
            SectionKind::Unknown(_) => {}
        }
    }
    let gop = header.gop.max(1) as usize;
    let kinds = (0..frame_bits.len()).map(|i| frame_kind(i, gop)).collect();
    Ok(StreamStats {
        header,
        frame_bits,
        kinds,
        weight_bytes,
        total_bytes: bytes.len(),
    })
}

/// RD point and per-frame trace. Frames are `[0, 255]` at display size;
/// rate counts every container byte over the displayed pixels.
pub fn score(
    label: &str,
    originals: &[Tensor<f32>],
    recon: &[Tensor<f32>],
    stats: &StreamStats,
) -> pevc_core::Result<(RdPoint, Vec<FrameRow>)> {
    if originals.len() != recon.len() || originals.len() != stats.frame_bits.len() {
        return Err(pevc_core::Error::Config(format!(
            "{} source frames, {} decoded frames, {} coded frames",
            originals.len(),
            recon.len(),
            stats.frame_bits.len()
        )));
    }
    let s = originals[0].shape();
    let mut sq = 0.0;
    let mut ssim = 0.0;
    for (r, o) in recon.iter().zip(originals) {
        sq += metrics::mse(r, o)?;
        ssim += metrics::ms_ssim(r, o, 5)?;
    }
    let n = originals.len() as f64;
    let point = RdPoint {
        label: label.to_string(),
        lambda: lambda_for_index(stats.header.lambda_index)?,
        bpp: total_bpp(stats.total_bytes, originals.len(), s.w, s.h),
        psnr: metrics::cap_psnr(metrics::psnr_from_mse(sq / n, metrics::PEAK)),
        msssim: ssim / n,
    };
    let trace = metrics::per_frame_trace(recon, originals, &stats.kinds, &stats.frame_bits)?
        .into_iter()
        .map(|mut r| {
            r.psnr = metrics::cap_psnr(r.psnr);
            r
        })
        .collect();
    Ok((point, trace))
}
