use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{load_checkpoint, save_checkpoint, Checkpoint, RngState};

use super::{build_model, Model, ModelConfig, ModelError, ModelKind, Result, TrainConfig, Trainer};

/// Configuration blob stored inside model checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub step: u64,
}

/// Parameters, and optionally the optimizer and sampling stream of `trainer`.
pub fn to_checkpoint(model: &Model, trainer: Option<&Trainer>) -> Result<Checkpoint> {
    let snapshot = ModelSnapshot {
        kind: model.kind,
        model: model.config.clone(),
        train: trainer.map(|t| t.config.clone()),
        step: trainer.map_or(0, |t| t.step),
    };
    let rng = match trainer {
        Some(t) => RngState::capture(&t.rng),
        None => RngState::capture(&ChaCha8Rng::seed_from_u64(model.config.seed)),
    };
    Ok(Checkpoint {
        config: serde_json::to_string(&snapshot).map_err(|e| ModelError::Checkpoint(e.to_string()))?,
        root_seed: model.config.seed,
        rng,
        params: model.params.clone(),
        optimizer: trainer.map(|t| t.optimizer.clone()),
    })
}

/// Rebuilds the architecture named in the checkpoint and loads its values.
/// The trainer is restored when the checkpoint carries optimizer state.
pub fn from_checkpoint(ckpt: Checkpoint) -> Result<(Model, Option<Trainer>)> {
    let snapshot: ModelSnapshot =
        serde_json::from_str(&ckpt.config).map_err(|e| ModelError::Checkpoint(format!("config blob: {e}")))?;
    let mut model = build_model(&snapshot.model, snapshot.kind)?;
    if model.params.len() != ckpt.params.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} parameters, found {}",
            model.params.len(),
            ckpt.params.len()
        )));
    }
    for ((_, want), (_, got)) in model.params.iter().zip(ckpt.params.iter()) {
        if want.name != got.name || want.value.shape() != got.value.shape() {
            return Err(ModelError::Checkpoint(format!(
                "parameter `{}` {:?} does not match `{}` {:?}",
                got.name,
                got.value.shape(),
                want.name,
                want.value.shape()
            )));
        }
    }
    model.params = ckpt.params;
    let trainer = match (ckpt.optimizer, snapshot.train) {
        (Some(optimizer), Some(config)) => Some(Trainer {
            config,
            optimizer,
            rng: ckpt.rng.restore(),
            step: snapshot.step,
        }),
        _ => None,
    };
    Ok((model, trainer))
}

pub fn save_model(path: &Path, model: &Model, trainer: Option<&Trainer>) -> Result<()> {
    Ok(save_checkpoint(path, &to_checkpoint(model, trainer)?)?)
}

pub fn load_model(path: &Path) -> Result<(Model, Option<Trainer>)> {
    from_checkpoint(load_checkpoint(path)?)
}
