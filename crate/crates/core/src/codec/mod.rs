//! Three-branch video codec: intra, motion (scale-space warp) and residual,
//! each an autoencoder with a scale-and-mean hyperprior.

pub mod config;
pub mod delta;
pub mod frame;
pub mod model;
pub mod net;
pub mod sequence;
pub mod train;

pub use config::{Branch, CodecConfig, LayerId, Part};
pub use delta::{apply_payload, quantize_adapters, quantize_full, WeightDeltaPayload};
pub use frame::FrameKind;
pub use model::{CodecModel, Scope};
pub use sequence::{decode_sequence, encode_sequence, extract_payload, EncodeOptions, EncodedSequence};
