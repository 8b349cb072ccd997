//! Byte-level pair-merge tokenizer and fixed-size chunking.

mod bpe;
mod chunk;

use thiserror::Error;

pub use bpe::{train_tokenizer, Tokenizer, BOS, EOS, FORMAT_VERSION, NUM_RESERVED, PAD, SEP, UNK};
pub use chunk::{chunk, unchunk, Chunk};

#[derive(Debug, Error)]
pub enum TextError {
    #[error("vocab size {got} is below the minimum {min}")]
    VocabTooSmall { got: usize, min: usize },
    #[error("tokenizer training corpus is empty")]
    EmptyCorpus,
    #[error("chunk size must be at least 1")]
    ZeroChunkSize,
    #[error("token sequence contains the pad id at position {0}")]
    PadInSequence(usize),
    #[error("tokenizer file: {0}")]
    Format(String),
    #[error("tokenizer format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a token sequence came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    Title,
    Abstract,
    Body,
    Generated,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub source: Source,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>, source: Source) -> Self {
        Self { ids, source }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}
