//! Chunk embeddings and exact per-document nearest-neighbor search.

mod doc_index;
mod embedding;
mod io;
mod knn;

use thiserror::Error;

pub use doc_index::{build_index, build_index_from_ids, DocIndex, Neighbor};
pub use embedding::{embed_chunk, ChunkEncoder, Embedding, TableEncoder};
pub use io::{load_index, read_index, save_index, write_index, INDEX_MAGIC, INDEX_VERSION};
pub use knn::brute_force_knn;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("document `{0}` has an empty body")]
    EmptyBody(String),
    #[error("chunk {index} of `{doc_id}` is all padding")]
    EmptyChunk { doc_id: String, index: usize },
    #[error("chunk encoder produced a zero or non-finite vector")]
    Degenerate,
    #[error("dimension mismatch: index has {index}, query has {query}")]
    Dimension { index: usize, query: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index file: {0}")]
    Format(String),
    #[error("index format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Text(#[from] crate::text::TextError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
