//! Machine-readable run outputs: RD points, per-frame traces, run manifests.

use std::path::{Path, PathBuf};

use pevc_core::metrics::{FrameRow, RdPoint};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::write_atomic;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0} holds no rows")]
    Empty(PathBuf),
}

pub type Result<T> = std::result::Result<T, OutputError>;

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceRecord {
    idx: usize,
    #[serde(rename = "type")]
    kind: char,
    psnr: f64,
    bits: u64,
}

fn csv_bytes<T: Serialize>(path: &Path, rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.into_inner().map_err(|e| OutputError::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })
}

/// Columns `label,lambda,bpp,psnr,msssim`.
pub fn write_rd_csv(path: &Path, points: &[RdPoint]) -> Result<()> {
    if points.is_empty() {
        return write(path, b"label,lambda,bpp,psnr,msssim\n");
    }
    write(path, &csv_bytes(path, points)?)
}

pub fn read_rd_csv(path: &Path) -> Result<Vec<RdPoint>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<RdPoint>, _>>()
        .map_err(csv_err(path))?;
    if rows.is_empty() {
        return Err(OutputError::Empty(path.to_path_buf()));
    }
    Ok(rows)
}

/// Columns `idx,type,psnr,bits`.
pub fn write_trace_csv(path: &Path, rows: &[FrameRow]) -> Result<()> {
    let recs: Vec<TraceRecord> = rows
        .iter()
        .map(|r| TraceRecord {
            idx: r.idx,
            kind: r.kind,
            psnr: r.psnr,
            bits: r.bits,
        })
        .collect();
    write(path, &csv_bytes(path, &recs)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write(path, &bytes)
}

/// Newline-delimited JSON, one record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut bytes = Vec::new();
    for r in records {
        serde_json::to_writer(&mut bytes, r)?;
        bytes.push(b'\n');
    }
    write(path, &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub pevc: String,
    pub container: u16,
    pub checkpoint: u16,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            pevc: env!("CARGO_PKG_VERSION").to_string(),
            container: pevc_core::container::VERSION,
            checkpoint: crate::checkpoint::VERSION,
        }
    }
}

/// Effective configuration of one CLI run. Replaying it reproduces the
/// run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub versions: Versions,
}

impl RunManifest {
    pub fn manifest_path(primary_output: &Path) -> std::path::PathBuf {
        let mut name = primary_output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        primary_output.with_file_name(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rd_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rd.csv");
        let pts = vec![RdPoint {
            label: "a,b".into(),
            lambda: 0.01,
            bpp: 0.25,
            psnr: 31.5,
            msssim: 0.97,
        }];
        write_rd_csv(&path, &pts).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("label,lambda,bpp,psnr,msssim\n"));
        assert_eq!(read_rd_csv(&path).unwrap(), pts);
    }

    #[test]
    fn trace_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = [FrameRow {
            idx: 0,
            kind: 'I',
            psnr: 30.0,
            bits: 800,
            cumulative_bits: 800,
        }];
        write_trace_csv(&path, &rows).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "idx,type,psnr,bits\n0,I,30.0,800\n"
        );
    }

    #[test]
    fn manifest_sits_beside_output() {
        let p = RunManifest::manifest_path(Path::new("/x/out.pevc"));
        assert_eq!(p, Path::new("/x/out.pevc.manifest.json"));
    }
}
