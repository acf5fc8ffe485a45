//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid clade: {0}")]
    InvalidClade(String),
    #[error("wrong rootedness: {0}")]
    WrongRootedness(String),
    #[error("unknown edge: {0}")]
    MissingEdge(String),
    #[error("unsupported taxon count: {0}")]
    UnsupportedSize(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("alignment shape: {0}")]
    AlignmentShape(String),
    #[error("duplicate taxon: {0}")]
    DuplicateTaxon(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("taxon set mismatch: {0}")]
    TaxonSet(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("duplicate entry: {0}")]
    Duplicate(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("support violation: {0}")]
    SupportViolation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("baseline undefined: {0}")]
    BaselineUndefined(String),
    #[error("invalid particle: {0}")]
    InvalidParticle(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
