//! Crate-wide error type and corpus validation violations.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// A single invariant violation found while validating a corpus.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Id of the offending record (a doc_id or a query_id).
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateDocId,
    DuplicateQueryId,
    EmptyDocText,
    EmptyQueryText,
    DanglingGoldRef,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.subject, self.detail)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed JSON at byte {offset} (line {line}, column {column}): {message}")]
    JsonParse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("line {line}: {message}")]
    JsonlLine { line: usize, message: String },

    #[error("corpus validation failed with {} violation(s): {}", violations.len(), summarize(violations))]
    CorpusInvalid { violations: Vec<Violation> },

    #[error("embedding failed for {} item(s): {}", items.len(), summarize_items(items))]
    BatchItems { items: Vec<(usize, String)> },

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("empty index")]
    EmptyIndex,

    #[error("unknown doc id: {doc_id}")]
    UnknownDocId { doc_id: String },

    #[error("duplicate doc id: {doc_id}")]
    DuplicateDocId { doc_id: String },

    #[error("corrupt index file: {message}")]
    CorruptFile { message: String },

    #[error("embedder fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("empty rewrite")]
    EmptyRewrite,

    #[error("empty exemplar store")]
    EmptyStore,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("pipeline stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// True for failures worth retrying at the transport level.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}

fn summarize(violations: &[Violation]) -> String {
    let mut parts: Vec<String> = violations.iter().take(3).map(|v| v.to_string()).collect();
    if violations.len() > 3 {
        parts.push("...".to_string());
    }
    parts.join("; ")
}

fn summarize_items(items: &[(usize, String)]) -> String {
    let mut parts: Vec<String> = items
        .iter()
        .take(3)
        .map(|(i, m)| format!("[{i}] {m}"))
        .collect();
    if items.len() > 3 {
        parts.push("...".to_string());
    }
    parts.join("; ")
}
