use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionKind};
use crate::text::NUM_RESERVED;

use super::ModelError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub decoder_layers: usize,
    pub encoder_layers: usize,
    pub neighbor_encoder_layers: usize,
    /// 1-based decoder layers that receive chunked cross-attention.
    pub cca_layers: Vec<usize>,
    /// Encoder input length; longer bodies are truncated to a prefix.
    pub max_input: usize,
    /// Generated or teacher-forced abstract tokens, including eos.
    pub max_output: usize,
    /// Title tokens kept in the prompt.
    pub max_title: usize,
    /// Clip distance of the learned relative-position bias in self-attention.
    pub rel_max: usize,
    /// Chunking, retrieval, and encoder attention settings. `heads` and
    /// `d_model` must agree with the fields above.
    pub attention: AttentionConfig,
    pub dropout: f64,
    /// Score tokens against the input embedding table instead of a separate
    /// output projection.
    pub tie_embeddings: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            d_model: 128,
            heads: 4,
            ff_dim: 512,
            decoder_layers: 12,
            encoder_layers: 4,
            neighbor_encoder_layers: 2,
            cca_layers: vec![6, 9, 12],
            max_input: 4096,
            max_output: 512,
            max_title: 64,
            rel_max: 32,
            attention: AttentionConfig::default(),
            dropout: 0.1,
            tie_embeddings: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration for tests and toy corpora.
    pub fn tiny(vocab_size: usize) -> Self {
        let attention = AttentionConfig {
            kind: AttentionKind::Tglobal,
            n: 256,
            r: 8,
            k: 4,
            m: 8,
            num_neighbors: 2,
            heads: 2,
            d_model: 32,
            ..AttentionConfig::default()
        };
        Self {
            vocab_size,
            d_model: 32,
            heads: 2,
            ff_dim: 64,
            decoder_layers: 3,
            encoder_layers: 2,
            neighbor_encoder_layers: 1,
            cca_layers: vec![2, 3],
            max_input: 256,
            max_output: 64,
            max_title: 16,
            rel_max: 16,
            attention,
            dropout: 0.0,
            tie_embeddings: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.vocab_size < NUM_RESERVED as usize + 256 {
            return bad(format!("vocab_size {} cannot hold the byte alphabet", self.vocab_size));
        }
        if self.d_model == 0 || self.ff_dim == 0 || self.decoder_layers == 0 {
            return bad("d_model, ff_dim, and decoder_layers must be positive".into());
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} is not divisible by heads {}", self.d_model, self.heads));
        }
        if self.attention.d_model != self.d_model || self.attention.heads != self.heads {
            return bad("attention.d_model and attention.heads must match the model".into());
        }
        self.attention.validate()?;
        let mut seen = vec![false; self.decoder_layers + 1];
        for &l in &self.cca_layers {
            if l == 0 || l > self.decoder_layers {
                return bad(format!("cca layer {l} outside 1..={}", self.decoder_layers));
            }
            if std::mem::replace(&mut seen[l], true) {
                return bad(format!("cca layer {l} listed twice"));
            }
        }
        if self.max_output < self.attention.m {
            return bad(format!(
                "max_output {} is shorter than one chunk ({})",
                self.max_output, self.attention.m
            ));
        }
        if self.max_input == 0 {
            return bad("max_input must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn chunk_size(&self) -> usize {
        self.attention.m
    }

    pub fn has_cca(&self, layer: usize) -> bool {
        self.cca_layers.contains(&layer)
    }
}
