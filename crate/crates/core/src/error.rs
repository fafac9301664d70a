use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the numeric core and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("kinematic tree has cycle")]
    TreeCycle,

    #[error("invalid kinematic tree: {0}")]
    InvalidTree(String),

    #[error("shape basis rank mismatch: expected 10 basis sets, got {0}")]
    ShapeBasisRank(usize),

    #[error("skinning weights row {row} sums to {sum}, expected 1")]
    SkinningWeights { row: usize, sum: f64 },

    #[error("model has no skinning block")]
    NoSkinning,

    #[error("degenerate vector: norm below 1e-12")]
    DegenerateVector,

    #[error("point at or behind camera (joint {joint}, depth {depth})")]
    BehindCamera { joint: usize, depth: f64 },

    #[error("degenerate point set: {0}")]
    DegeneratePointSet(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("could not place {requested} negative patches (placed {placed})")]
    SamplingExhausted { requested: usize, placed: usize },

    #[error("annotation length mismatch: {0}")]
    AnnotationLength(String),

    #[error("degenerate intrinsics in sample {0}")]
    DegenerateIntrinsics(usize),

    #[error("unknown motion preset `{0}`")]
    UnknownPreset(String),

    #[error("frame {frame}: {source}")]
    Frame {
        frame: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed field `{field}`: {reason}")]
    Malformed { field: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn malformed(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_frame(self, frame: u64) -> Self {
        Error::Frame {
            frame,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
