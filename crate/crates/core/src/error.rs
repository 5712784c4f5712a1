use std::path::PathBuf;

use crate::attention::MatrixKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("layout has no paragraphs")]
    NoParagraphs,

    #[error("question span is empty")]
    EmptyQuestion,

    #[error("paragraph {index} is empty")]
    EmptyParagraph { index: usize },

    #[error("span [{start}, {end}] is inverted")]
    InvertedSpan { start: usize, end: usize },

    #[error("spans overlap: {first} and {second} share token {token}")]
    OverlappingSpans {
        first: String,
        second: String,
        token: usize,
    },

    #[error("target {target} is not the last token (total_len {total_len})")]
    TargetNotLast { target: usize, total_len: usize },

    #[error("span [{start}, {end}] lies outside 0..{len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },

    #[error("paragraph ordinals out of order: expected {expected}, found {found}")]
    ParagraphOrder { expected: usize, found: usize },

    #[error("paragraph index {index} out of range (C = {count})")]
    BadParagraphIndex { index: usize, count: usize },

    #[error("layout mismatch: expected {expected} tokens, found {found}")]
    LayoutMismatch { expected: usize, found: usize },

    #[error("expected a {expected:?} matrix, got {found:?}")]
    WrongMatrixKind {
        expected: MatrixKind,
        found: MatrixKind,
    },

    #[error("row {row} sums to {sum}, expected {expected} (tolerance {tolerance})")]
    RowSum {
        row: usize,
        sum: f64,
        expected: f64,
        tolerance: f64,
    },

    #[error("causality violation: masked entry ({row}, {col}) holds {value}")]
    CausalityViolation { row: usize, col: usize, value: f64 },

    #[error("payload size {found}, expected {expected}")]
    PayloadSize { expected: usize, found: usize },

    #[error("input is empty")]
    EmptyInput,

    #[error("group {0} has no instances")]
    EmptyGroup(&'static str),

    #[error("paragraphs carry no supporting/negative labels")]
    MissingLabels,

    #[error("no reference answers")]
    EmptyReferences,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot tokenize: {0}")]
    TokenizationFailure(String),

    #[error("prompt too long: {prompt_len} tokens plus {max_new_tokens} new tokens exceeds max_seq_len {max_seq_len}")]
    PromptTooLong {
        prompt_len: usize,
        max_new_tokens: usize,
        max_seq_len: usize,
    },

    #[error("token id {id} outside vocabulary of {vocab_size}")]
    TokenOutOfVocab { id: u32, vocab_size: usize },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Self::Format {
            what,
            reason: reason.into(),
        }
    }
}
