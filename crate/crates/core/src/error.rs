use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("document `{0}` has no tokens")]
    EmptyDocument(String),
    #[error("format error: {0}")]
    FormatError(String),
    #[error("truncated dump: record starting at byte {offset} is incomplete")]
    TruncatedDump { offset: u64 },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("step {step} outside schedule range 0..={total}")]
    InvalidStep { step: u64, total: u64 },
    #[error("need at least {needed} tokens for one batch, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("input sequence is empty")]
    EmptyInput,
    #[error("phi exponent {0} outside (0, 1]")]
    InvalidPhi(f64),
    #[error("feature {feature} outside vocabulary of size {m}")]
    InvalidFeature { feature: u32, m: usize },
    #[error("fraction {0} outside [0, 1)")]
    InvalidFraction(f64),
    #[error("document ordinal {ordinal} outside collection of {n} documents")]
    InvalidDocument { ordinal: usize, n: usize },
    #[error("query `{0}` has empty support")]
    EmptyQuery(String),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("no query is both judged and present in the run")]
    NoJudgedQueries,
    #[error("index not found at {}", .0.display())]
    MissingIndex(PathBuf),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable variant name, used in CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DuplicateDocument(_) => "DuplicateDocument",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::EmptyDocument(_) => "EmptyDocument",
            Error::FormatError(_) => "FormatError",
            Error::TruncatedDump { .. } => "TruncatedDump",
            Error::InvalidShape(_) => "InvalidShape",
            Error::NonFiniteInput => "NonFiniteInput",
            Error::EmptyBatch => "EmptyBatch",
            Error::InvalidStep { .. } => "InvalidStep",
            Error::InsufficientData { .. } => "InsufficientData",
            Error::EmptyInput => "EmptyInput",
            Error::InvalidPhi(_) => "InvalidPhi",
            Error::InvalidFeature { .. } => "InvalidFeature",
            Error::InvalidFraction(_) => "InvalidFraction",
            Error::InvalidDocument { .. } => "InvalidDocument",
            Error::EmptyQuery(_) => "EmptyQuery",
            Error::ParseError { .. } => "ParseError",
            Error::NoJudgedQueries => "NoJudgedQueries",
            Error::MissingIndex(_) => "MissingIndex",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io(_) => "Io",
        }
    }
}
