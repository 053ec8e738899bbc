use alloc::string::String;

/// Axis of a rank-4 tensor, used to name the offending dimension in shape errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Channel,
    Height,
    Width,
    /// Any dimension of a 2-D factor matrix or an element count.
    Len,
}

impl core::fmt::Display for Axis {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let s = match self {
            Axis::Batch => "batch",
            Axis::Channel => "channel",
            Axis::Height => "height",
            Axis::Width => "width",
            Axis::Len => "length",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{context}: {axis} mismatch (expected {expected}, got {actual})")]
    Dimension {
        context: &'static str,
        axis: Axis,
        expected: usize,
        actual: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("loss must be a scalar, got {0} elements")]
    NonScalarLoss(usize),
    #[error("backward already ran on this graph; reset gradients first")]
    BackwardTwice,
    #[error("entropy coding failed: {0}")]
    Coding(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("container {section} invalid at byte {offset}: {reason}")]
    Container {
        section: &'static str,
        offset: u64,
        reason: String,
    },
    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn dim(context: &'static str, axis: Axis, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            axis,
            expected,
            actual,
        })
    }
}
