//! Byte layout of a weight-delta payload body.
//!
//! ```text
//! u8   reshape convention
//! u16  tensor count
//! per tensor: u32 id, u32 length
//! ...  range-coded quantized values, every tensor in order
//! ```
//! All integers little-endian. Values are coded with the spike-and-slab
//! weight table; the parameters travel in the container header.

use alloc::vec::Vec;

use super::range_coder::{RangeDecoder, RangeEncoder};
use super::spike_slab::SpikeSlabParams;
use super::tables::WindowTable;
use crate::error::{Error, Result};

/// Block reshape: matrix entry `(o*K + i, c*K + j)` maps to kernel entry
/// `(o, c, i, j)` in the stored layout.
pub const RESHAPE_BLOCK: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedTensor {
    pub id: u32,
    pub values: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightPayloadBody {
    pub convention: u8,
    pub tensors: Vec<QuantizedTensor>,
}

fn container_err(offset: usize, reason: &str) -> Error {
    Error::Container {
        section: "weight-delta",
        offset: offset as u64,
        reason: reason.into(),
    }
}

impl WeightPayloadBody {
    pub fn to_bytes(&self, params: &SpikeSlabParams) -> Result<Vec<u8>> {
        let table = WindowTable::weights(params)?;
        let mut out = Vec::new();
        out.push(self.convention);
        let count = u16::try_from(self.tensors.len()).map_err(|_| Error::Coding("too many tensors".into()))?;
        out.extend_from_slice(&count.to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&t.id.to_le_bytes());
            out.extend_from_slice(&(t.values.len() as u32).to_le_bytes());
        }
        let mut enc = RangeEncoder::new();
        for t in &self.tensors {
            for &v in &t.values {
                table.encode(&mut enc, v as i64)?;
            }
        }
        out.extend_from_slice(&enc.finish());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], params: &SpikeSlabParams) -> Result<Self> {
        let table = WindowTable::weights(params)?;
        if bytes.len() < 3 {
            return Err(container_err(bytes.len(), "truncated payload header"));
        }
        let convention = bytes[0];
        let count = u16::from_le_bytes([bytes[1], bytes[2]]) as usize;
        let mut pos = 3;
        let mut dims = Vec::with_capacity(count);
        for _ in 0..count {
            if bytes.len() < pos + 8 {
                return Err(container_err(bytes.len(), "truncated tensor directory"));
            }
            let id = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
            let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
            dims.push((id, len));
            pos += 8;
        }
        let body = &bytes[pos..];
        let total: usize = dims.iter().map(|d| d.1).sum();
        // Every in-window symbol costs at least 2^-24 of the range, so a
        // stream this short cannot hold that many symbols.
        if total > (body.len() + 8).saturating_mul(8 << 24) {
            return Err(container_err(pos, "tensor directory larger than coded body"));
        }
        let mut dec = RangeDecoder::new(body);
        let mut tensors = Vec::with_capacity(count);
        for (id, len) in dims {
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                let v = table
                    .decode(&mut dec)
                    .map_err(|e| container_err(pos, &alloc::format!("{e}")))?;
                values.push(i32::try_from(v).map_err(|_| container_err(pos, "weight index overflow"))?);
            }
            tensors.push(QuantizedTensor { id, values });
        }
        Ok(Self { convention, tensors })
    }

    /// Sum of per-value coding costs under the weight table.
    pub fn estimated_bits(&self, params: &SpikeSlabParams) -> Result<f64> {
        let table = WindowTable::weights(params)?;
        Ok(self
            .tensors
            .iter()
            .flat_map(|t| t.values.iter())
            .map(|&v| table.cost_bits(v as i64))
            .sum())
    }
}
