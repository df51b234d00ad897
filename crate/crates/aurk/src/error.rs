use std::fmt;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Malformed record in an input file (wrong field count, non-numeric data, ...).
    Format(String),
    /// A basic RoI polygon collapsed to zero area or folded over itself.
    DegenerateRegion {
        roi_no: u8,
        detail: String,
    },
    /// An AU group referenced a basic RoI that was not supplied.
    MissingRegion {
        roi_no: u8,
    },
    /// A mask operation received an empty mask.
    EmptyMask {
        group_id: u8,
    },
    /// A streaming aggregate was asked to summarize zero frames.
    EmptyDataset,
    /// Dimension mismatch between tensors, matrices or streams.
    Shape(String),
    /// Non-finite value where a finite one is required.
    Numeric(String),
    /// A video is too short for the requested timeline window.
    InsufficientFrames {
        needed: usize,
        got: usize,
    },
    /// Not enough aligned data points for a statistic.
    InsufficientData(String),
    /// Checkpoint or file version does not match the active configuration.
    Version(String),
    /// Bad run configuration value.
    Config(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::DegenerateRegion { roi_no, detail } => {
                write!(f, "degenerate region: basic RoI {roi_no}: {detail}")
            }
            Error::MissingRegion { roi_no } => write!(f, "missing basic RoI {roi_no}"),
            Error::EmptyMask { group_id } => write!(f, "empty mask for AU group #{group_id}"),
            Error::EmptyDataset => write!(f, "empty dataset: no frames to aggregate"),
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::InsufficientFrames { needed, got } => {
                write!(f, "insufficient frames: need {needed}, got {got}")
            }
            Error::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
            Error::Version(msg) => write!(f, "version error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
