use thiserror::Error;

/// Errors produced by the separation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Two operands disagree in spatial size or channel/band count.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A requested dictionary does not fit in its atom support.
    #[error("capacity exceeded: {atoms} atoms requested but a {side}x{side} support holds at most {max}")]
    Capacity { atoms: usize, side: usize, max: usize },

    /// An argument is outside its admissible range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The solver produced a non-finite value.
    #[error("numerical divergence at scale {scale}, layer {layer}, stage {stage}")]
    Divergence { scale: usize, layer: usize, stage: Stage },

    /// A serialized artifact could not be decoded.
    #[error("format error: {0}")]
    Format(String),
}

/// Sub-step of one solver layer, reported on divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Initialization,
    TransmissionCodes,
    ReflectionCodes,
    Transmission,
    Reflection,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Initialization => "initialization",
            Stage::TransmissionCodes => "transmission codes (z_T)",
            Stage::ReflectionCodes => "reflection codes (z_R)",
            Stage::Transmission => "transmission estimate (T)",
            Stage::Reflection => "reflection estimate (R)",
        };
        f.write_str(name)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
