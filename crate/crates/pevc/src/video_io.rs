//! Frame ingestion: raw RGB24 with a JSON sidecar, and PNG sequence directories.

use std::fs;
use std::path::{Path, PathBuf};

use pevc_core::codec::config::DOWNSAMPLE;
use pevc_core::{Shape, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::write_atomic;

pub const RAW_FILE: &str = "seq.rgb24";
pub const SIDECAR_FILE: &str = "seq.json";

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad metadata in {path}: {reason}")]
    Metadata { path: PathBuf, reason: String },
    #[error("no frames found in {0}")]
    Empty(PathBuf),
    #[error("frame {index} is missing ({path})")]
    MissingFrame { index: usize, path: PathBuf },
    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    InconsistentSize {
        index: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("raw stream {path} holds {got} bytes, expected {want}")]
    Truncated { path: PathBuf, got: usize, want: usize },
    #[error("image decode failed for {path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error("cannot determine format of {0}")]
    UnknownFormat(PathBuf),
}

pub type Result<T> = std::result::Result<T, VideoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VideoError + '_ {
    move |source| VideoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoFormat {
    Raw,
    PngDir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub frames: usize,
    pub pixfmt: String,
}

/// Frames in `[0, 255]`, shape `(1, 3, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub frames: Vec<Tensor<f32>>,
    pub fps: f64,
    pub source: String,
    /// Size of the visible picture; frames may be padded beyond it.
    pub display: (usize, usize),
}

impl VideoSequence {
    pub fn from_frames(frames: Vec<Tensor<f32>>, fps: f64, source: String) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| VideoError::Empty(PathBuf::from(&source)))?;
        let (want_h, want_w) = (first.shape().h, first.shape().w);
        for (index, f) in frames.iter().enumerate() {
            let s = f.shape();
            if s.h != want_h || s.w != want_w || s.c != 3 || s.n != 1 {
                return Err(VideoError::InconsistentSize {
                    index,
                    got_w: s.w,
                    got_h: s.h,
                    want_w,
                    want_h,
                });
            }
        }
        Ok(Self {
            frames,
            fps,
            source,
            display: (want_w, want_h),
        })
    }

    pub fn width(&self) -> usize {
        self.frames[0].shape().w
    }

    pub fn height(&self) -> usize {
        self.frames[0].shape().h
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_padded(&self) -> bool {
        self.display != (self.width(), self.height())
    }

    /// Pad right and bottom by edge replication up to a multiple of `multiple`.
    pub fn padded(&self, multiple: usize) -> Self {
        let (w, h) = (self.width(), self.height());
        let pw = w.div_ceil(multiple) * multiple;
        let ph = h.div_ceil(multiple) * multiple;
        let frames = self
            .frames
            .iter()
            .map(|f| {
                Tensor::from_fn(Shape::new(1, 3, ph, pw), |_, c, y, x| {
                    f.at(0, c, y.min(h - 1), x.min(w - 1))
                })
            })
            .collect();
        Self {
            frames,
            fps: self.fps,
            source: self.source.clone(),
            display: self.display,
        }
    }

    /// Pad to the codec's downsampling factor.
    pub fn padded_for_codec(&self) -> Self {
        self.padded(DOWNSAMPLE)
    }

    /// Crop back to the display size.
    pub fn cropped(&self) -> Self {
        let (dw, dh) = self.display;
        Self {
            frames: self.frames.iter().map(|f| crop_frame(f, dw, dh)).collect(),
            fps: self.fps,
            source: self.source.clone(),
            display: self.display,
        }
    }

    pub fn window(&self, start: usize, len: usize) -> Self {
        let end = (start + len).min(self.len());
        Self {
            frames: self.frames[start.min(end)..end].to_vec(),
            fps: self.fps,
            source: self.source.clone(),
            display: self.display,
        }
    }
}

pub fn crop_frame(f: &Tensor<f32>, w: usize, h: usize) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| f.at(0, c, y, x))
}

fn frame_to_rgb(f: &Tensor<f32>) -> Vec<u8> {
    let s = f.shape();
    let mut out = Vec::with_capacity(3 * s.h * s.w);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                out.push(f.at(0, c, y, x).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

fn rgb_to_frame(bytes: &[u8], w: usize, h: usize) -> Tensor<f32> {
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| bytes[(y * w + x) * 3 + c] as f32)
}

pub fn detect_format(path: &Path) -> Result<VideoFormat> {
    if path.is_file() {
        return match path.extension().and_then(|e| e.to_str()) {
            Some("rgb24") | Some("json") => Ok(VideoFormat::Raw),
            _ => Err(VideoError::UnknownFormat(path.to_path_buf())),
        };
    }
    if path.join(SIDECAR_FILE).is_file() {
        return Ok(VideoFormat::Raw);
    }
    if path.is_dir() {
        return Ok(VideoFormat::PngDir);
    }
    Err(VideoError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
    })
}

/// Load a sequence; `format` of `None` means detect from the path.
pub fn load_sequence(path: &Path, format: Option<VideoFormat>) -> Result<VideoSequence> {
    let format = match format {
        Some(f) => f,
        None => detect_format(path)?,
    };
    match format {
        VideoFormat::Raw => load_raw(path),
        VideoFormat::PngDir => load_png_dir(path),
    }
}

fn raw_paths(path: &Path) -> (PathBuf, PathBuf) {
    let dir = if path.is_file() {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    };
    (dir.join(RAW_FILE), dir.join(SIDECAR_FILE))
}

fn load_raw(path: &Path) -> Result<VideoSequence> {
    let (raw, meta) = raw_paths(path);
    let text = fs::read_to_string(&meta).map_err(io_err(&meta))?;
    let bad = |reason: String| VideoError::Metadata {
        path: meta.clone(),
        reason,
    };
    let side: Sidecar = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if side.pixfmt != "rgb24" {
        return Err(bad(format!("unsupported pixfmt {:?}", side.pixfmt)));
    }
    if side.width == 0 || side.height == 0 {
        return Err(bad("zero frame size".into()));
    }
    if !(side.fps.is_finite() && side.fps > 0.0) {
        return Err(bad(format!("fps must be positive, got {}", side.fps)));
    }
    if side.frames == 0 {
        return Err(VideoError::Empty(raw));
    }
    let bytes = fs::read(&raw).map_err(io_err(&raw))?;
    let per = 3 * side.width * side.height;
    let want = per * side.frames;
    if bytes.len() != want {
        return Err(VideoError::Truncated {
            path: raw,
            got: bytes.len(),
            want,
        });
    }
    let frames = bytes
        .chunks_exact(per)
        .map(|b| rgb_to_frame(b, side.width, side.height))
        .collect();
    VideoSequence::from_frames(frames, side.fps, raw.display().to_string())
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.png")
}

fn load_png_dir(dir: &Path) -> Result<VideoSequence> {
    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(idx) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".png"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            indexed.push((idx, p));
        }
    }
    if indexed.is_empty() {
        return Err(VideoError::Empty(dir.to_path_buf()));
    }
    indexed.sort();
    let base = indexed[0].0;
    for (k, (idx, _)) in indexed.iter().enumerate() {
        if *idx != base + k {
            return Err(VideoError::MissingFrame {
                index: base + k,
                path: dir.join(frame_file_name(base + k)),
            });
        }
    }
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let chunk = indexed.len().div_ceil(workers);
    let decoded: Vec<Result<(usize, usize, Tensor<f32>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = indexed
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|(_, p)| decode_png(p)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("decoder thread"))
            .collect()
    });
    let mut frames = Vec::with_capacity(decoded.len());
    let mut size = None;
    for (index, d) in decoded.into_iter().enumerate() {
        let (w, h, f) = d?;
        let (want_w, want_h) = *size.get_or_insert((w, h));
        if (w, h) != (want_w, want_h) {
            return Err(VideoError::InconsistentSize {
                index,
                got_w: w,
                got_h: h,
                want_w,
                want_h,
            });
        }
        frames.push(f);
    }
    VideoSequence::from_frames(frames, 30.0, dir.display().to_string())
}

fn decode_png(path: &Path) -> Result<(usize, usize, Tensor<f32>)> {
    let img = image::open(path).map_err(|e| VideoError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok((w, h, rgb_to_frame(rgb.as_raw(), w, h)))
}

pub fn write_raw(dir: &Path, seq: &VideoSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut bytes = Vec::with_capacity(3 * seq.width() * seq.height() * seq.len());
    for f in &seq.frames {
        bytes.extend(frame_to_rgb(f));
    }
    let side = Sidecar {
        width: seq.width(),
        height: seq.height(),
        fps: seq.fps,
        frames: seq.len(),
        pixfmt: "rgb24".into(),
    };
    let raw = dir.join(RAW_FILE);
    write_atomic(&raw, &bytes).map_err(io_err(&raw))?;
    let meta = dir.join(SIDECAR_FILE);
    let json = serde_json::to_vec_pretty(&side).expect("sidecar serializes");
    write_atomic(&meta, &json).map_err(io_err(&meta))
}

pub fn write_png_dir(dir: &Path, seq: &VideoSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, f) in seq.frames.iter().enumerate() {
        let path = dir.join(frame_file_name(i));
        let (w, h) = (f.shape().w as u32, f.shape().h as u32);
        let mut png = Vec::new();
        image::RgbImage::from_raw(w, h, frame_to_rgb(f))
            .expect("buffer matches size")
            .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| VideoError::Image {
                path: path.clone(),
                reason: e.to_string(),
            })?;
        write_atomic(&path, &png).map_err(io_err(&path))?;
    }
    Ok(())
}
