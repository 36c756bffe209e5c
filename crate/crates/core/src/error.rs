//! Error types shared across the engine.

use thiserror::Error;

use crate::backend::BackendError;

/// Engine-level error type.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("similarity: {0}")]
    Similarity(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("graph file error: {0}")]
    GraphFile(String),

    #[error("graph invariant violated: {0}")]
    Invariant(String),

    #[error("extraction failed for clip {clip_index}: {message}")]
    Extraction { clip_index: u32, message: String },

    #[error("query analysis failed: {0}")]
    Analysis(String),

    #[error("subquery generation failed: {0}")]
    Subquery(String),

    #[error("aggregation requires a non-empty refined set")]
    EmptyRefinedSet,

    #[error("answer parse failed: {0}")]
    AnswerParse(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("backend: {0}")]
    Backend(#[from] BackendError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EngineError>;
