//! Crate-wide error type.
//!
//! Every variant has a stable class name (see [`Error::class`]) which the
//! command-line front end prints verbatim, so scripts can match on it.

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage tag attached to errors raised inside an episode run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    SupportPooling,
    SupportLabels,
    AuxiliaryPooling,
    GraphConstruction,
    Propagation,
    ConfidenceMap,
    GlobalPrototype,
    Similarity,
    Fusion,
    Calibration,
    Scoring,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::SupportPooling => "support pooling",
            Stage::SupportLabels => "support labels",
            Stage::AuxiliaryPooling => "auxiliary pooling",
            Stage::GraphConstruction => "graph construction",
            Stage::Propagation => "propagation",
            Stage::ConfidenceMap => "confidence map",
            Stage::GlobalPrototype => "global prototype",
            Stage::Similarity => "similarity map",
            Stage::Fusion => "fusion",
            Stage::Calibration => "calibration",
            Stage::Scoring => "scoring",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("pooling window {window:?} exceeds spatial extent {extent:?}")]
    WindowTooLarge {
        window: (usize, usize),
        extent: (usize, usize),
    },

    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("mask of {source_dims:?} cannot be downsampled to larger {target:?}")]
    UpsampleRequested {
        source_dims: (usize, usize),
        target: (usize, usize),
    },

    #[error("mask grid {mask:?} does not match prototype grid {grid:?}")]
    GridMismatch { mask: (usize, usize), grid: (usize, usize) },

    #[error("mask has zero total weight")]
    DegenerateMask,

    #[error("K = {k} but only {n} points (need K <= n - 1)")]
    KTooLarge { k: usize, n: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no labeled vertices")]
    NoLabels,

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("graph has {components} connected components")]
    DisconnectedGraph { components: usize },

    #[error("direct solve limited to {limit} vertices, got {n}")]
    TooLargeForDirect { n: usize, limit: usize },

    #[error("mask is not strictly binary")]
    NotBinary,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("bad magic in {path}")]
    BadMagic { path: PathBuf },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("unknown dtype code {code} in {path}")]
    UnknownDtype { path: PathBuf, code: u8 },

    #[error("manifest key `{key}`: {message}")]
    Manifest { key: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable, machine-parsable class name. Stage wrappers report the class
    /// of the underlying error.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidTensor(_) => "InvalidTensor",
            Error::WindowTooLarge { .. } => "WindowTooLarge",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::UpsampleRequested { .. } => "UpsampleRequested",
            Error::GridMismatch { .. } => "GridMismatch",
            Error::DegenerateMask => "DegenerateMask",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NoLabels => "NoLabels",
            Error::InvalidLabel(_) => "InvalidLabel",
            Error::DisconnectedGraph { .. } => "DisconnectedGraph",
            Error::TooLargeForDirect { .. } => "TooLargeForDirect",
            Error::NotBinary => "NotBinary",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::BadMagic { .. } => "BadMagic",
            Error::TruncatedPayload { .. } => "TruncatedPayload",
            Error::UnknownDtype { .. } => "UnknownDtype",
            Error::Manifest { .. } => "ManifestError",
            Error::Io { .. } => "IoError",
            Error::Stage { source, .. } => source.class(),
        }
    }

    /// Strips any stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

/// All class names, in declaration order. Used to check that the mapping
/// from variants to CLI strings is one-to-one.
pub const ERROR_CLASSES: &[&str] = &[
    "InvalidTensor",
    "WindowTooLarge",
    "LengthMismatch",
    "UpsampleRequested",
    "GridMismatch",
    "DegenerateMask",
    "KTooLarge",
    "DimensionMismatch",
    "ShapeMismatch",
    "NoLabels",
    "InvalidLabel",
    "DisconnectedGraph",
    "TooLargeForDirect",
    "NotBinary",
    "InvalidParameter",
    "BadMagic",
    "TruncatedPayload",
    "UnknownDtype",
    "ManifestError",
    "IoError",
];
