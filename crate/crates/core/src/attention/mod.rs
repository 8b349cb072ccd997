//! Full, transient-global, and chunked cross-attention kernels with exact
//! pair accounting, plus the layers built on them.

mod bench;
mod config;
mod count;
mod engine;
mod kernels;
mod layer;
mod neighbors;

use thiserror::Error;

use crate::nn::NnError;

pub use bench::{bench_attention, BenchRow};
pub use config::{AttentionConfig, AttentionKind, CcaAlignment};
pub use count::count_attended_pairs;
pub use engine::relative_bucket;
pub use kernels::{
    chunked_cross_attention_kernel, full_attention, tglobal_attention, CcaLayout, FullMask, RelBias, TGlobalSpec,
};
pub use layer::{ChunkedCrossAttention, CrossAttention, LayerKv, MemoryKv, SelfAttention, SelfAttnKind};
pub use neighbors::NeighborBatch;

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("attention config: {0}")]
    Config(String),
    #[error("attention shape: {0}")]
    Shape(String),
    #[error("unknown attention kind `{0}`")]
    UnknownKind(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("neighbors for chunk {chunk} are missing ({available} chunks supplied)")]
    MissingNeighbors { chunk: usize, available: usize },
}
