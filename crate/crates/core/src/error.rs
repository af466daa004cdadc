use thiserror::Error;

use crate::parser::TaskKind;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the kernel can report. `code()` gives the stable string used
/// by the CLI and the JSON API.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mask has no set cells")]
    EmptyMask,
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid image dimensions {width}x{height}")]
    InvalidDims { width: u32, height: u32 },
    #[error("prediction contains no points")]
    EmptyPrediction,
    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),
    #[error("invalid sample count {0}, need at least 2")]
    InvalidSampleCount(usize),
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("invalid reward spec: {0}")]
    InvalidSpec(String),
    #[error("verification kind `{verification}` does not match task {task}")]
    SpecMismatch {
        task: TaskKind,
        verification: &'static str,
    },
    #[error("environment checker failed: {0}")]
    CheckerFailure(String),
    #[error("group of size {0} is too small, need at least 2")]
    GroupTooSmall(usize),
    #[error("log-probability arrays are misaligned: {0}")]
    MisalignedLogp(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no valid depth within {radius} px of ({x}, {y})")]
    NoValidDepth { x: f64, y: f64, radius: u32 },
    #[error("depth {0} mm outside the valid range")]
    DepthOutOfRange(f64),
    #[error("point ({x}, {y}) lies outside the image")]
    OutOfBounds { x: f64, y: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("unknown anchor object `{0}`")]
    UnknownAnchor(String),
    #[error("invalid relation: {0}")]
    InvalidRelation(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {message}")]
    Image { path: String, message: String },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyMask => "EmptyMask",
            Error::InvalidMask(_) => "InvalidMask",
            Error::InvalidDims { .. } => "InvalidDims",
            Error::EmptyPrediction => "EmptyPrediction",
            Error::DegenerateTrajectory(_) => "DegenerateTrajectory",
            Error::InvalidSampleCount(_) => "InvalidSampleCount",
            Error::EmptyCandidateSet => "EmptyCandidateSet",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::SpecMismatch { .. } => "SpecMismatch",
            Error::CheckerFailure(_) => "CheckerFailure",
            Error::GroupTooSmall(_) => "GroupTooSmall",
            Error::MisalignedLogp(_) => "MisalignedLogp",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::NoValidDepth { .. } => "NoValidDepth",
            Error::DepthOutOfRange(_) => "DepthOutOfRange",
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::InvalidIntrinsics(_) => "InvalidIntrinsics",
            Error::InvalidScene(_) => "InvalidScene",
            Error::UnknownAnchor(_) => "UnknownAnchor",
            Error::InvalidRelation(_) => "InvalidRelation",
            Error::SchemaViolation(_) => "SchemaViolation",
            Error::Io { .. } => "Unreadable",
            Error::Unwritable { .. } => "Unwritable",
            Error::Image { .. } => "Image",
            Error::Json(_) => "Json",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn unwritable(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Unwritable {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
