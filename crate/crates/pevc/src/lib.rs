//! File formats, synthetic clips, checkpoints and run plumbing around
//! [`pevc_core`].

pub mod checkpoint;
pub mod fsutil;
pub mod outputs;
pub mod report;
pub mod synth;
pub mod video_io;

pub use synth::{synthesize, Style, SynthSpec};
pub use video_io::{load_sequence, VideoError, VideoFormat, VideoSequence};
