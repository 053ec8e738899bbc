//! Model checkpoints: `PEVCMODL`, a version, the codec configuration, the
//! pretraining rung, then every named parameter as shape + f32 LE data.

use std::path::{Path, PathBuf};

use pevc_core::codec::CodecConfig;
use pevc_core::codec::CodecModel;
use pevc_core::Shape;
use thiserror::Error;

use crate::fsutil::write_atomic;

pub const MAGIC: &[u8; 8] = b"PEVCMODL";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("parameter mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Codec(#[from] pevc_core::Error),
}

/// A pretrained model together with the ladder rung it was trained for.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub lambda_index: u8,
    pub model: CodecModel,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn config_fields(c: &CodecConfig) -> [usize; 8] {
    [
        c.channels,
        c.latent_channels,
        c.hyper_channels,
        c.kernel,
        c.hyper_kernel,
        c.gop_train,
        c.gop_test,
        c.blur_levels,
    ]
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in config_fields(&self.model.config) {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(self.lambda_index);
        let params = self.model.named_params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let s = t.shape();
            for d in [s.n, s.c, s.h, s.w] {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut f = [0usize; 8];
        for v in f.iter_mut() {
            *v = r.u32()? as usize;
        }
        let config = CodecConfig {
            channels: f[0],
            latent_channels: f[1],
            hyper_channels: f[2],
            kernel: f[3],
            hyper_kernel: f[4],
            gop_train: f[5],
            gop_test: f[6],
            blur_levels: f[7],
        };
        let lambda_index = r.u8()?;
        let mut model = CodecModel::new(config, 0)?;
        let count = r.u32()? as usize;
        let mut slots = model.named_params_mut();
        if count != slots.len() {
            return Err(CheckpointError::Mismatch(format!(
                "{count} tensors stored, model has {}",
                slots.len()
            )));
        }
        for (name, tensor) in slots.iter_mut() {
            let len = r.u16()? as usize;
            let stored = String::from_utf8_lossy(r.take(len)?).into_owned();
            if stored != *name {
                return Err(CheckpointError::Mismatch(format!("expected {name}, found {stored}")));
            }
            let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|d| d as usize);
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            if shape != tensor.shape() {
                return Err(CheckpointError::Mismatch(format!(
                    "{name}: stored {shape}, expected {}",
                    tensor.shape()
                )));
            }
            let raw = r.take(4 * shape.numel())?;
            for (dst, src) in tensor.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(src.try_into().unwrap());
            }
        }
        drop(slots);
        if r.pos != bytes.len() {
            return Err(CheckpointError::Mismatch(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { lambda_index, model })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        write_atomic(path, &self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
