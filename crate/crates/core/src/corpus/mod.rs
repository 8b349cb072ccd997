//! arXiv JSON-lines ingestion, corpus statistics, and synthetic corpora.

mod document;
mod load;
mod stats;
pub mod synthetic;

use std::path::PathBuf;

use thiserror::Error;

pub use document::{parse_record, strip_sentence_tags, Document};
pub use load::{load_split, read_documents, sample_subset, split_path, LoadOptions, LoadedSplit, Split};
pub use stats::{compute_stats, word_count, CorpusStats};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing required key `{key}`")]
    MissingKey { line: usize, key: &'static str },
    #[error("line {line}: field `{key}` has the wrong type")]
    WrongType { line: usize, key: &'static str },
    #[error("line {line}: empty article_id")]
    EmptyId { line: usize },
    #[error("duplicate article_id `{0}`")]
    DuplicateId(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot compute statistics of an empty corpus")]
    Empty,
    #[error("{0}")]
    Invalid(String),
}
