//! Core library of `sfpp`, a desk-scale anchor-free siamese tracker.
//!
//! The crate is self-contained: a dense tensor kernel with reverse-mode
//! differentiation ([`tensor`], [`tape`]), the siamese model ([`model`]),
//! per-pixel box coding ([`codec`]), the training objective ([`loss`]),
//! a deterministic synthetic video world ([`synth`]), the optimization
//! harness ([`train`]), the online tracker with score post-processing
//! ([`track`]), and evaluation plus the anchor-head ablation ([`eval`],
//! [`anchor`]). No external crates: every file format and random stream
//! is specified here so identical seeds produce byte-identical artifacts.

pub mod anchor;
pub mod codec;
pub mod eval;
pub mod gradcheck;
pub mod imgio;
pub mod loss;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod track;
pub mod train;

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the tracker stack.
///
/// Numeric trouble (NaN/Inf) is an error, never silently propagated;
/// file-format errors carry enough position info to locate the defect.
#[derive(Debug)]
pub enum Error {
    /// Tensor operands do not fit the operation.
    Shape { op: &'static str, detail: String },
    /// An operation produced a NaN or Inf value.
    NonFinite { op: &'static str, detail: String },
    /// A configuration value or argument is out of its valid range.
    Invalid { what: &'static str, detail: String },
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// A text file (config, CSV, PPM header) failed to parse.
    Parse { path: String, line: usize, detail: String },
    /// A checkpoint file is malformed; `offset` is the byte position.
    Checkpoint { offset: u64, detail: String },
    /// Training aborted (non-finite loss or gradient).
    Train { step: usize, detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape error in {op}: {detail}"),
            Error::NonFinite { op, detail } => {
                write!(f, "non-finite value in {op}: {detail}")
            }
            Error::Invalid { what, detail } => write!(f, "invalid {what}: {detail}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Parse { path, line, detail } => {
                write!(f, "parse error at {path}:{line}: {detail}")
            }
            Error::Checkpoint { offset, detail } => {
                write!(f, "bad checkpoint at byte {offset}: {detail}")
            }
            Error::Train { step, detail } => write!(f, "training aborted at step {step}: {detail}"),
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

impl Error {
    /// Stable one-word category used by the CLI for machine-parsable
    /// error lines and distinct exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "numeric",
            Error::Invalid { .. } => "config",
            Error::Io(_) => "io",
            Error::Parse { .. } => "parse",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Train { .. } => "train",
        }
    }
}
