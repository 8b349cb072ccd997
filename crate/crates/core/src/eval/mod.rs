//! ROUGE-1/2/L and corpus-level reports.

mod report;
mod rouge;

use thiserror::Error;

pub use report::{evaluate_corpus, read_predictions, DocScore, EvalReport, Prediction};
pub use rouge::{lcs_len, rouge_l, rouge_n, words, RougeScore};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("predictions reference unknown article ids: {}", .0.join(", "))]
    UnmatchedIds(Vec<String>),
    #[error("predictions line {line}: {message}")]
    Parse { line: usize, message: String },
}
