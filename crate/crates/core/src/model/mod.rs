//! The three summarization systems, retro-fitting, training, and generation.

mod config;
mod data;
mod decode;
mod freeze;
mod generate;
mod io;
mod network;
mod train;

use thiserror::Error;

use crate::attention::AttentionError;
use crate::index::IndexError;
use crate::nn::NnError;
use crate::text::TextError;

pub use config::ModelConfig;
pub use data::{
    attach_neighbors, encoder_ids, index_document, neighbors_for, prepare_example, prompt_ids, retrieve, TraceEntry,
};
pub use decode::{decode_strategy, Strategy};
pub use freeze::FreezeMask;
pub use generate::{generate, GenerateOptions, Generation, GenerationState};
pub use io::{from_checkpoint, load_model, save_model, to_checkpoint, ModelSnapshot};
pub use network::{
    build_base_decoder, build_encdec, build_model, retrofit, Example, Forward, Model, ModelKind, NeighborEmbedder,
};
pub use train::{
    evaluate_loss, prepare_examples, reembed_indexes, train, LossRecord, LossSplit, LossStats, TrainConfig, TrainData,
    TrainMode, Trainer,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no index for document `{0}`")]
    MissingIndex(String),
    #[error("document `{0}` has an empty body")]
    EmptyBody(String),
    #[error("model has no neighbor encoder (not retro-fitted)")]
    NotRetro,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Text(#[from] TextError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
