use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::index::DocIndex;
use crate::nn::{Adam, AdamConfig, ParamGrads, Tape};
use crate::text::Tokenizer;

use super::data::{attach_neighbors, prepare_example};
use super::{Example, Model, ModelError, ModelKind, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Language modeling of abstracts with the decoder-only model.
    #[serde(alias = "pretrain")]
    PretrainBase,
    /// Neighbor encoder and chunked cross-attention only.
    Retrofit,
    Encdec,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PretrainBase => "pretrain",
            Self::Retrofit => "retrofit",
            Self::Encdec => "encdec",
        }
    }

    pub fn model_kind(self) -> ModelKind {
        match self {
            Self::PretrainBase => ModelKind::Decoder,
            Self::Retrofit => ModelKind::Retro,
            Self::Encdec => ModelKind::EncDec,
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" | "pretrain_base" => Ok(Self::PretrainBase),
            "retrofit" => Ok(Self::Retrofit),
            "encdec" => Ok(Self::Encdec),
            other => Err(ModelError::Config(format!("unknown training mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Micro-batches summed into one optimizer step.
    pub accumulation: usize,
    /// Sequences per forward pass.
    pub micro_batch: usize,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<u64>,
    /// Extra validation points every this many steps (validation always runs
    /// at the end of each epoch).
    pub eval_every: Option<u64>,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-4,
            accumulation: 32,
            micro_batch: 1,
            max_steps: None,
            eval_every: None,
            shuffle: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.accumulation == 0 || self.micro_batch == 0 {
            return Err(ModelError::Config("accumulation and micro_batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ModelError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.accumulation * self.micro_batch
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSplit {
    Train,
    Val,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub split: LossSplit,
    pub loss: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,split,loss";

    pub fn to_csv(&self) -> String {
        let split = match self.split {
            LossSplit::Train => "train",
            LossSplit::Val => "val",
        };
        format!("{},{split},{:.6}", self.step, self.loss)
    }
}

/// Optimizer, sampling stream, and step counter of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
    pub step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(AdamConfig {
            lr: config.lr as f32,
            ..AdamConfig::default()
        });
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            config,
            optimizer,
            rng,
            step: 0,
        })
    }

    /// One optimizer step on `batch`: the mean of per-sequence losses,
    /// accumulated over micro-batches of `config.micro_batch` sequences.
    /// Returns the batch loss.
    pub fn step(&mut self, model: &mut Model, batch: &[&Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(ModelError::Config("empty batch".into()));
        }
        if model.num_trainable_params() == 0 {
            return Err(ModelError::Config("model has no trainable parameters".into()));
        }
        let mut acc = ParamGrads::new();
        let mut total = 0.0;
        for micro in batch.chunks(self.config.micro_batch) {
            let mut tape = Tape::<f32>::new();
            let mut losses = Vec::with_capacity(micro.len());
            for ex in micro {
                losses.push(model.loss(&mut tape, &model.params, ex, Some(&mut self.rng))?);
            }
            let sum = tape.add_all(&losses)?;
            let loss = tape.scale(sum, 1.0 / micro.len() as f32);
            let weight = micro.len() as f32 / batch.len() as f32;
            total += tape.value(loss).item() as f64 * weight as f64;
            let mut grads = tape.backward(loss)?.into_param_grads();
            grads.scale(weight);
            acc.accumulate(grads);
        }
        self.optimizer.step(&mut model.params, &acc)?;
        self.step += 1;
        Ok(total)
    }
}

/// Loss of a model on fixed examples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossStats {
    /// Mean over sequences of each sequence's mean token loss.
    pub mean: f64,
    /// Mean over all scored tokens.
    pub per_token: f64,
    pub tokens: usize,
}

/// Teacher-forced loss without dropout; sequences are scored in parallel.
pub fn evaluate_loss(model: &Model, examples: &[Example]) -> Result<LossStats> {
    if examples.is_empty() {
        return Err(ModelError::Config("no examples to evaluate".into()));
    }
    let per: Vec<(f64, usize)> = examples
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::<f32>::inference();
            let loss = model.loss(&mut tape, &model.params, ex, None)?;
            Ok((tape.value(loss).item() as f64, ex.scored_tokens()))
        })
        .collect::<Result<_>>()?;
    let tokens: usize = per.iter().map(|p| p.1).sum();
    Ok(LossStats {
        mean: per.iter().map(|p| p.0).sum::<f64>() / per.len() as f64,
        per_token: per.iter().map(|&(l, n)| l * n as f64).sum::<f64>() / tokens.max(1) as f64,
        tokens,
    })
}

/// Inputs to [`train`].
pub struct TrainData<'a> {
    pub train: &'a [Document],
    pub val: &'a [Document],
    pub tokenizer: &'a Tokenizer,
    /// Per-document indexes, required for retro-fit training. They are
    /// re-embedded with the current neighbor encoder at every epoch start.
    pub indexes: Option<&'a mut BTreeMap<String, DocIndex>>,
}

/// Prepares teacher-forcing examples; in retro-fit mode every document needs
/// its own index.
pub fn prepare_examples(
    model: &Model,
    docs: &[Document],
    tokenizer: &Tokenizer,
    indexes: Option<&BTreeMap<String, DocIndex>>,
) -> Result<Vec<Example>> {
    docs.iter()
        .map(|doc| {
            let mut ex = prepare_example(model, doc, tokenizer)?;
            if let Some(indexes) = indexes {
                let index = indexes
                    .get(&doc.article_id)
                    .ok_or_else(|| ModelError::MissingIndex(doc.article_id.clone()))?;
                attach_neighbors(model, &mut ex, index)?;
            }
            Ok(ex)
        })
        .collect()
}

/// Re-embeds each index with the model's current neighbor encoder.
pub fn reembed_indexes(model: &Model, indexes: &mut BTreeMap<String, DocIndex>) -> Result<()> {
    let encoder = model.chunk_encoder()?;
    let mut list: Vec<&mut DocIndex> = indexes.values_mut().collect();
    list.par_iter_mut()
        .try_for_each(|index| index.reembed(&encoder))
        .map_err(ModelError::from)
}

fn check_indexes(docs: &[&Document], indexes: &BTreeMap<String, DocIndex>) -> Result<()> {
    match docs.iter().find(|d| !indexes.contains_key(&d.article_id)) {
        Some(d) => Err(ModelError::MissingIndex(d.article_id.clone())),
        None => Ok(()),
    }
}

/// Runs `trainer.config.epochs` epochs (resuming at the epoch implied by
/// `trainer.step`) and reports every loss point through `on_record`.
pub fn train(
    model: &mut Model,
    trainer: &mut Trainer,
    data: TrainData<'_>,
    mode: TrainMode,
    mut on_record: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    if model.kind != mode.model_kind() {
        return Err(ModelError::Config(format!(
            "{mode} training needs a {} model, got {}",
            mode.model_kind().as_str(),
            model.kind.as_str()
        )));
    }
    if data.train.is_empty() {
        return Err(ModelError::Config("no training documents".into()));
    }
    let cfg = trainer.config.clone();
    let mut indexes = data.indexes;
    let all_docs: Vec<&Document> = data.train.iter().chain(data.val).collect();
    if mode == TrainMode::Retrofit {
        let idx = indexes.as_deref().ok_or_else(|| ModelError::MissingIndex(data.train[0].article_id.clone()))?;
        check_indexes(&all_docs, idx)?;
    }

    let mut base_train = prepare_examples(model, data.train, data.tokenizer, None)?;
    let mut base_val = prepare_examples(model, data.val, data.tokenizer, None)?;
    let steps_per_epoch = data.train.len().div_ceil(cfg.batch_size()) as u64;
    let mut records = Vec::new();
    let mut emit = |r: LossRecord, records: &mut Vec<LossRecord>| {
        on_record(&r);
        records.push(r);
    };
    let start_epoch = (trainer.step / steps_per_epoch) as usize;

    for _epoch in start_epoch..cfg.epochs {
        if let (TrainMode::Retrofit, Some(idx)) = (mode, indexes.as_deref_mut()) {
            reembed_indexes(model, idx)?;
            let encoder = model.chunk_encoder()?;
            for ex in base_train.iter_mut().chain(base_val.iter_mut()) {
                let index = &idx[&ex.doc_id];
                let (nb, _) = super::data::neighbors_for(model, &ex.ids, index, &encoder)?;
                ex.neighbors = Some(nb);
            }
        }
        let mut order: Vec<usize> = (0..base_train.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut trainer.rng);
        }
        let mut last_val = None;
        for batch in order.chunks(cfg.batch_size()) {
            let refs: Vec<&Example> = batch.iter().map(|&i| &base_train[i]).collect();
            let loss = trainer.step(model, &refs)?;
            emit(
                LossRecord {
                    step: trainer.step,
                    split: LossSplit::Train,
                    loss,
                },
                &mut records,
            );
            if let Some(every) = cfg.eval_every {
                if every > 0 && trainer.step.is_multiple_of(every) && !base_val.is_empty() {
                    let l = evaluate_loss(model, &base_val)?.mean;
                    emit(
                        LossRecord {
                            step: trainer.step,
                            split: LossSplit::Val,
                            loss: l,
                        },
                        &mut records,
                    );
                    last_val = Some(trainer.step);
                }
            }
            if cfg.max_steps.is_some_and(|m| trainer.step >= m) {
                break;
            }
        }
        if !base_val.is_empty() && last_val != Some(trainer.step) {
            let l = evaluate_loss(model, &base_val)?.mean;
            emit(
                LossRecord {
                    step: trainer.step,
                    split: LossSplit::Val,
                    loss: l,
                },
                &mut records,
            );
        }
        if cfg.max_steps.is_some_and(|m| trainer.step >= m) {
            break;
        }
    }
    Ok(records)
}
