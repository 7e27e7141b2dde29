//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide error enum. Variants map onto the failure categories the
/// command-line layer translates into exit codes.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Incompatible shapes; both operand shapes are named.
    #[error("{op}: dimension mismatch between {lhs} and {rhs}")]
    Dimension {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    /// An argument outside its admissible range (e.g. a non-positive temperature).
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// A token id not covered by the embedding table.
    #[error("token id {id} outside vocabulary of size {vocab}")]
    Vocabulary { id: usize, vocab: usize },

    /// An embedding sequence longer than the encoder supports.
    #[error("sequence length {len} exceeds maximum prompt length {max}")]
    SequenceLength { len: usize, max: usize },

    /// Numeric breakdown (underflow, non-finite values) with a remediation hint.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Optimization aborted; `step` is the offending optimizer step or batch index.
    #[error("training failed at step {step}: {reason}")]
    Training { step: usize, reason: String },

    /// Problem instance too large for an exhaustive solver.
    #[error("instance size {n} exceeds brute-force limit {max}")]
    Size { n: usize, max: usize },

    /// A protocol precondition was violated (bad split, disjoint vocabulary, ...).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Evaluation of a loss or metric failed.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Bad run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or unreadable checkpoint data.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
