use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("box ({xmin},{ymin},{width},{height}) exceeds {img_width}x{img_height} image")]
    OutOfBounds {
        xmin: u32,
        ymin: u32,
        width: u32,
        height: u32,
        img_width: u32,
        img_height: u32,
    },
    #[error("invalid value: {0}")]
    InvalidInput(String),
    #[error("merge loop did not reach {target} boxes within {iterations} iterations (last count {last_count})")]
    NonConvergence {
        target: usize,
        iterations: usize,
        last_count: usize,
    },
    #[error("only {available} proposals survived filtering, {required} objects declared")]
    InsufficientProposals { available: usize, required: usize },
    #[error("category `{0}` has no training crops")]
    EmptyCategory(String),
    #[error("external scorer protocol error for crop `{crop_id}`: {message}")]
    ScorerProtocol { crop_id: String, message: String },
    #[error("no foreground pixels survive thresholding")]
    EmptyForeground,
    #[error("placed patch lies entirely outside the image")]
    NoOverlap,
    #[error("patch database is empty")]
    EmptyPatchDb,
    #[error("no ground truth for class `{0}`")]
    ZeroGroundTruth(String),
    #[error("ground truth set is empty")]
    NoGroundTruth,
    #[error("could not place object {placed} of {requested} after {attempts} attempts")]
    PlacementFailure {
        placed: usize,
        requested: usize,
        attempts: usize,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invariant violation in {path}: {message}")]
    InvariantViolation { path: PathBuf, message: String },
    #[error("duplicate path `{0}` in manifest")]
    DuplicatePath(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec failure on {path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short stable name of the variant, used as the drop reason in manifests.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::InvalidInput(_) => "InvalidInput",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::InsufficientProposals { .. } => "InsufficientProposals",
            Error::EmptyCategory(_) => "EmptyCategory",
            Error::ScorerProtocol { .. } => "ScorerProtocolError",
            Error::EmptyForeground => "EmptyForeground",
            Error::NoOverlap => "NoOverlap",
            Error::EmptyPatchDb => "EmptyPatchDb",
            Error::ZeroGroundTruth(_) => "ZeroGroundTruth",
            Error::NoGroundTruth => "NoGroundTruth",
            Error::PlacementFailure { .. } => "PlacementFailure",
            Error::Parse { .. } => "ParseError",
            Error::InvariantViolation { .. } => "InvariantViolation",
            Error::DuplicatePath(_) => "DuplicatePath",
            Error::Io { .. } | Error::Codec { .. } => "IoFailure",
        }
    }
}
