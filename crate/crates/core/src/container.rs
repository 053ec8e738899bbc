//! `.pevc` container: a fixed header, a section table and section bodies.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PEVC"
//! 4       2     version (u16)
//! 6       1     lambda ladder index
//! 7       4     frame count (u32)
//! 11      2     coded width (u16), multiple of 16
//! 13      2     coded height (u16)
//! 15      2     display width (u16)
//! 17      2     display height (u16)
//! 19      1     GoP size
//! 20      1     delta kind: 0 none, 1 repeat, 2 extended, 3 full
//! 21      1     rank count R
//! 22      R     ranks (u8 each)
//! ..      16    spike-and-slab slab std, spike std, alpha, step (f32 each)
//! ..      8     adapter seed (u64)
//! ..      8     total container length (u64)
//! ..      2     section count S (u16)
//! ..      17*S  section table: kind (u8), offset (u64), length (u64)
//! ```
//! Everything is little-endian. Section kinds: 1 weight delta, 2 GoP
//! latents; others are skipped. A GoP section is a run of frame records,
//! each `u32 length` followed by that many range-coded bytes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::entropy::SpikeSlabParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PEVC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SectionKind {
    WeightDelta,
    GopLatents,
    Unknown(u8),
}

impl SectionKind {
    pub fn code(self) -> u8 {
        match self {
            SectionKind::WeightDelta => 1,
            SectionKind::GopLatents => 2,
            SectionKind::Unknown(c) => c,
        }
    }

    pub fn from_code(c: u8) -> Self {
        match c {
            1 => SectionKind::WeightDelta,
            2 => SectionKind::GopLatents,
            c => SectionKind::Unknown(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub kind: SectionKind,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainerHeader {
    pub lambda_index: u8,
    pub frames: u32,
    pub width: u16,
    pub height: u16,
    pub display_width: u16,
    pub display_height: u16,
    pub gop: u8,
    pub delta_kind: u8,
    pub ranks: Vec<u8>,
    pub spike_slab: SpikeSlabParams,
    pub adapter_seed: u64,
}

/// Parameters exactly as they survive the header's f32 fields.
pub fn wire_params(p: &SpikeSlabParams) -> SpikeSlabParams {
    SpikeSlabParams {
        slab_std: p.slab_std as f32 as f64,
        spike_std: p.spike_std as f32 as f64,
        alpha: p.alpha as f32 as f64,
        step: p.step as f32 as f64,
    }
}

fn err(section: &'static str, offset: usize, reason: impl Into<String>) -> Error {
    Error::Container {
        section,
        offset: offset as u64,
        reason: reason.into(),
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(err(
                self.section,
                self.pos,
                format!("need {n} bytes, {} left", self.data.len() - self.pos),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn header_len(ranks: usize, sections: usize) -> usize {
    22 + ranks + 16 + 8 + 8 + 2 + 17 * sections
}

fn check_order(kinds: impl Iterator<Item = SectionKind>) -> core::result::Result<(), &'static str> {
    let mut seen_delta = false;
    let mut seen_gop = false;
    for k in kinds {
        match k {
            SectionKind::WeightDelta if seen_delta => return Err("more than one weight-delta section"),
            SectionKind::WeightDelta if seen_gop => return Err("weight-delta section after GoP latents"),
            SectionKind::WeightDelta => seen_delta = true,
            SectionKind::GopLatents => seen_gop = true,
            SectionKind::Unknown(_) => {}
        }
    }
    Ok(())
}

pub fn write_container(header: &ContainerHeader, sections: &[Section]) -> Result<Vec<u8>> {
    check_order(sections.iter().map(|s| s.kind)).map_err(|r| Error::Protocol(r.into()))?;
    let rank_count = u8::try_from(header.ranks.len()).map_err(|_| Error::Protocol("too many ranks".into()))?;
    let count = u16::try_from(sections.len()).map_err(|_| Error::Protocol("too many sections".into()))?;
    let head = header_len(header.ranks.len(), sections.len());
    let total = head + sections.iter().map(|s| s.payload.len()).sum::<usize>();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(header.lambda_index);
    out.extend_from_slice(&header.frames.to_le_bytes());
    for v in [header.width, header.height, header.display_width, header.display_height] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(header.gop);
    out.push(header.delta_kind);
    out.push(rank_count);
    out.extend_from_slice(&header.ranks);
    let p = &header.spike_slab;
    for v in [p.slab_std, p.spike_std, p.alpha, p.step] {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&header.adapter_seed.to_le_bytes());
    out.extend_from_slice(&(total as u64).to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    let mut offset = head;
    for s in sections {
        out.push(s.kind.code());
        out.extend_from_slice(&(offset as u64).to_le_bytes());
        out.extend_from_slice(&(s.payload.len() as u64).to_le_bytes());
        offset += s.payload.len();
    }
    for s in sections {
        out.extend_from_slice(&s.payload);
    }
    debug_assert_eq!(out.len(), total);
    Ok(out)
}

/// Parse a container. Unknown section kinds are skipped.
pub fn read_container(bytes: &[u8]) -> Result<(ContainerHeader, Vec<Section>)> {
    let mut r = Reader {
        data: bytes,
        pos: 0,
        section: "header",
    };
    if r.take(4)? != MAGIC {
        return Err(err("header", 0, "bad magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(err("header", 4, format!("unsupported version {version}")));
    }
    let lambda_index = r.u8()?;
    let frames = r.u32()?;
    let width = r.u16()?;
    let height = r.u16()?;
    let display_width = r.u16()?;
    let display_height = r.u16()?;
    let gop = r.u8()?;
    let delta_kind = r.u8()?;
    let n_ranks = r.u8()? as usize;
    let ranks = r.take(n_ranks)?.to_vec();
    let spike_slab = SpikeSlabParams {
        slab_std: r.f32()? as f64,
        spike_std: r.f32()? as f64,
        alpha: r.f32()? as f64,
        step: r.f32()? as f64,
    };
    let adapter_seed = r.u64()?;
    let total_at = r.pos;
    let total = r.u64()?;
    if total != bytes.len() as u64 {
        return Err(err(
            "header",
            total_at,
            format!("declared length {total}, have {}", bytes.len()),
        ));
    }
    let count = r.u16()? as usize;
    r.section = "section-table";
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = SectionKind::from_code(r.u8()?);
        let entry_at = r.pos;
        let offset = r.u64()?;
        let length = r.u64()?;
        table.push((kind, offset, length, entry_at));
    }
    let head = r.pos as u64;
    let mut cursor = head;
    for &(_, offset, length, at) in &table {
        let end = offset.checked_add(length);
        match end {
            Some(end) if offset >= cursor && end <= total => cursor = end,
            _ => {
                return Err(err(
                    "section-table",
                    at,
                    format!("section [{offset}, +{length}) out of bounds or overlapping"),
                ))
            }
        }
    }
    check_order(table.iter().map(|t| t.0)).map_err(|reason| err("section-table", head as usize, reason))?;
    let sections = table
        .iter()
        .filter(|t| !matches!(t.0, SectionKind::Unknown(_)))
        .map(|&(kind, offset, length, _)| Section {
            kind,
            payload: bytes[offset as usize..(offset + length) as usize].to_vec(),
        })
        .collect();
    let header = ContainerHeader {
        lambda_index,
        frames,
        width,
        height,
        display_width,
        display_height,
        gop,
        delta_kind,
        ranks,
        spike_slab,
        adapter_seed,
    };
    Ok((header, sections))
}

/// Frame records of one GoP section.
pub fn split_frame_records(payload: &[u8]) -> Result<Vec<&[u8]>> {
    let mut r = Reader {
        data: payload,
        pos: 0,
        section: "gop-latents",
    };
    let mut out = Vec::new();
    while r.pos < payload.len() {
        let len = r.u32()? as usize;
        out.push(r.take(len)?);
    }
    Ok(out)
}

pub fn join_frame_records<'a>(records: impl IntoIterator<Item = &'a [u8]>) -> Vec<u8> {
    let mut out = Vec::new();
    for rec in records {
        out.extend_from_slice(&(rec.len() as u32).to_le_bytes());
        out.extend_from_slice(rec);
    }
    out
}

/// Bits of one frame record including its length prefix.
pub fn record_bits(record_len: usize) -> u64 {
    8 * (4 + record_len as u64)
}

/// Whole-container bits per pixel.
pub fn total_bpp(container_len: usize, frames: usize, width: usize, height: usize) -> f64 {
    8.0 * container_len as f64 / (frames * width * height) as f64
}
