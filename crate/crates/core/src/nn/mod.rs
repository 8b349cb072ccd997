//! Dense tensors, reverse-mode differentiation, Adam, and checkpoints.

pub mod checkpoint;
mod error;
mod float;
pub mod layers;
pub mod gradcheck;
mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};
pub use error::{NnError, Result};
pub use float::Float;
pub use layers::{Embedding, FeedForward, LayerNorm, Linear, LAYER_NORM_EPS};
pub use optim::{Adam, AdamConfig};
pub use params::{Init, ParamId, ParamStore, Parameter};
pub use tape::{BackCtx, Grads, ParamGrads, Tape, Var};
pub use tensor::Tensor;

pub(crate) use ops::softmax_in_place;
pub(crate) use tensor::dot;
