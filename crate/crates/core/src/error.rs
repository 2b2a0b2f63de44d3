use alloc::string::String;

/// Errors raised by tensor operations, model construction and training.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: expected {expected} input channels, got {got}")]
    ChannelMismatch { op: &'static str, expected: usize, got: usize },
    #[error("{op}: output would have an empty dimension")]
    EmptyOutput { op: &'static str },
    #[error("deform_conv2d: offset field has {got} channels, kernel needs 2K = {expected}")]
    OffsetChannels { expected: usize, got: usize },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("backward: loss must be a scalar, got {0} elements")]
    NotScalar(usize),
    #[error("backward: loss is not connected to any tensor that requires grad")]
    Detached,
    #[error("{op}: input spatial size {h}x{w} is below the minimum {min}x{min}")]
    InputTooSmall { op: &'static str, h: usize, w: usize, min: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("dataset split: {0}")]
    Split(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
