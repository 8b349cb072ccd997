use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    AttentionKind, ChunkedCrossAttention, CrossAttention, FullMask, NeighborBatch, SelfAttention, SelfAttnKind,
};
use crate::index::ChunkEncoder;
use crate::nn::{Embedding, FeedForward, Float, Init, LayerNorm, Linear, ParamId, ParamStore, Tape, Tensor, Var};
use crate::text::PAD;

use super::{FreezeMask, ModelConfig, ModelError, Result};

/// Which of the three systems a [`Model`] implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Decoder-only with the title as prompt.
    Decoder,
    /// Transient-global encoder over the body plus a cross-attending decoder.
    EncDec,
    /// Retro-fitted decoder with a neighbor encoder and chunked
    /// cross-attention.
    Retro,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Decoder => "decoder",
            Self::EncDec => "encdec",
            Self::Retro => "retro",
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderLayer {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub cross: Option<(LayerNorm, CrossAttention)>,
    pub cca: Option<ChunkedCrossAttention>,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

/// Bidirectional pre-norm stack with a final norm.
#[derive(Clone, Debug)]
pub(crate) struct Encoder {
    pub layers: Vec<EncoderLayer>,
    pub ln_f: LayerNorm,
}

/// One training or scoring sequence: decoder inputs with next-token targets
/// and, depending on the model, encoder input or retrieved neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub doc_id: String,
    pub ids: Vec<u32>,
    /// `targets[i]` is the token after `ids[i]` when it is scored.
    pub targets: Vec<Option<u32>>,
    /// Encoder input; `PAD` positions are masked.
    pub encoder_ids: Option<Vec<u32>>,
    pub neighbors: Option<NeighborBatch>,
}

impl Example {
    pub fn scored_tokens(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}

/// A model: architecture handles plus its parameter values.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub kind: ModelKind,
    pub params: ParamStore<f32>,
    pub(crate) tok_emb: Embedding,
    pub(crate) decoder: Vec<DecoderLayer>,
    pub(crate) ln_f: LayerNorm,
    pub(crate) lm_head: OutputHead,
    pub(crate) encoder: Option<Encoder>,
    pub(crate) neighbor_encoder: Option<Encoder>,
}

/// Vocabulary projection, either its own weights or the transposed token
/// embedding table scaled by `1/sqrt(d)`.
#[derive(Clone, Debug)]
pub(crate) enum OutputHead {
    Linear(Linear),
    Tied { bias: ParamId, scale: f32 },
}

impl OutputHead {
    pub(crate) fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        tok_emb: &Embedding,
        h: Var,
    ) -> Result<Var> {
        match self {
            Self::Linear(lin) => Ok(lin.forward(tape, store, h)?),
            Self::Tied { bias, scale } => {
                let table = tape.param(store, tok_emb.table);
                let hs = tape.scale(h, T::lit(*scale as f64));
                let logits = tape.matmul_nt(hs, table)?;
                let b = tape.param(store, *bias);
                Ok(tape.add_bias(logits, b)?)
            }
        }
    }
}

fn encoder_stack(
    store: &mut ParamStore<f32>,
    init: &mut Init,
    cfg: &ModelConfig,
    name: &str,
    layers: usize,
    kind: SelfAttnKind,
) -> Result<Encoder> {
    let d = cfg.d_model;
    let mut out = Vec::with_capacity(layers);
    for i in 1..=layers {
        let p = format!("{name}.layers.{i}");
        out.push(EncoderLayer {
            ln1: LayerNorm::new(store, &format!("{p}.ln1"), d)?,
            attn: SelfAttention::new(store, init, &format!("{p}.attn"), d, cfg.heads, kind, Some(cfg.rel_max))?,
            ln2: LayerNorm::new(store, &format!("{p}.ln2"), d)?,
            ff: FeedForward::new(store, init, &format!("{p}.ff"), d, cfg.ff_dim)?,
        });
    }
    Ok(Encoder {
        layers: out,
        ln_f: LayerNorm::new(store, &format!("{name}.ln_f"), d)?,
    })
}

fn build_decoder(cfg: &ModelConfig, cross: bool, store: &mut ParamStore<f32>, init: &mut Init) -> Result<Model> {
    let d = cfg.d_model;
    let tok_emb = Embedding::new(store, init, "tok_emb", cfg.vocab_size, d)?;
    let mut decoder = Vec::with_capacity(cfg.decoder_layers);
    for i in 1..=cfg.decoder_layers {
        let p = format!("decoder.layers.{i}");
        let ln1 = LayerNorm::new(store, &format!("{p}.ln1"), d)?;
        let attn = SelfAttention::new(
            store,
            init,
            &format!("{p}.attn"),
            d,
            cfg.heads,
            SelfAttnKind::Full { causal: true },
            Some(cfg.rel_max),
        )?;
        let cross = if cross {
            Some((
                LayerNorm::new(store, &format!("{p}.cross_ln"), d)?,
                CrossAttention::new(store, init, &format!("{p}.cross"), d, cfg.heads)?,
            ))
        } else {
            None
        };
        decoder.push(DecoderLayer {
            ln1,
            attn,
            cross,
            cca: None,
            ln2: LayerNorm::new(store, &format!("{p}.ln2"), d)?,
            ff: FeedForward::new(store, init, &format!("{p}.ff"), d, cfg.ff_dim)?,
        });
    }
    let ln_f = LayerNorm::new(store, "decoder.ln_f", d)?;
    let lm_head = if cfg.tie_embeddings {
        OutputHead::Tied {
            bias: store.add("lm_head.bias", Tensor::zeros(&[cfg.vocab_size]))?,
            scale: 1.0 / (d as f32).sqrt(),
        }
    } else {
        OutputHead::Linear(Linear::new(store, init, "lm_head", d, cfg.vocab_size, true)?)
    };
    Ok(Model {
        config: cfg.clone(),
        kind: ModelKind::Decoder,
        params: ParamStore::new(),
        tok_emb,
        decoder,
        ln_f,
        lm_head,
        encoder: None,
        neighbor_encoder: None,
    })
}

/// Pre-norm causal decoder with the title as prompt. Initialization is a
/// pure function of `cfg.seed`.
pub fn build_base_decoder(cfg: &ModelConfig) -> Result<Model> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut init = Init::new(cfg.seed);
    let mut model = build_decoder(cfg, false, &mut store, &mut init)?;
    model.params = store;
    Ok(model)
}

/// Encoder over the (truncated) body and a decoder that cross-attends to it.
pub fn build_encdec(cfg: &ModelConfig) -> Result<Model> {
    cfg.validate()?;
    let kind = match cfg.attention.kind {
        AttentionKind::Tglobal => SelfAttnKind::TGlobal {
            radius: cfg.attention.r,
            block: cfg.attention.k,
        },
        AttentionKind::FullCausal => SelfAttnKind::Full { causal: false },
        AttentionKind::ChunkedCross => {
            return Err(ModelError::Config("the encoder needs tglobal or full attention".into()))
        }
    };
    let mut store = ParamStore::new();
    let mut init = Init::new(cfg.seed);
    let mut model = build_decoder(cfg, true, &mut store, &mut init)?;
    model.encoder = Some(encoder_stack(
        &mut store,
        &mut init,
        cfg,
        "encoder",
        cfg.encoder_layers,
        kind,
    )?);
    model.kind = ModelKind::EncDec;
    model.params = store;
    Ok(model)
}

/// Adds chunked cross-attention at `cfg.cca_layers` and a neighbor encoder to
/// a decoder-only model, then freezes everything else. The new output
/// projections are zero, so the result computes the same function as `base`.
pub fn retrofit(base: Model) -> Result<Model> {
    if base.kind != ModelKind::Decoder {
        return Err(ModelError::Config(format!("cannot retro-fit a {} model", base.kind.as_str())));
    }
    let cfg = base.config.clone();
    cfg.validate()?;
    let mut model = base;
    let mut store = std::mem::take(&mut model.params);
    let mut init = Init::new(cfg.seed ^ 0x5245_5452_4f46_4954);
    for &l in &cfg.cca_layers {
        let name = format!("decoder.layers.{l}.cca");
        model.decoder[l - 1].cca = Some(ChunkedCrossAttention::new(&mut store, &mut init, &name, &cfg.attention)?);
    }
    model.neighbor_encoder = Some(encoder_stack(
        &mut store,
        &mut init,
        &cfg,
        "neighbor_encoder",
        cfg.neighbor_encoder_layers,
        SelfAttnKind::Full { causal: false },
    )?);
    FreezeMask::retrofit().apply(&mut store);
    model.params = store;
    model.kind = ModelKind::Retro;
    Ok(model)
}

/// Rebuilds the architecture for `kind` with freshly initialized values.
pub fn build_model(cfg: &ModelConfig, kind: ModelKind) -> Result<Model> {
    match kind {
        ModelKind::Decoder => build_base_decoder(cfg),
        ModelKind::EncDec => build_encdec(cfg),
        ModelKind::Retro => retrofit(build_base_decoder(cfg)?),
    }
}

fn residual<T: Float>(tape: &mut Tape<T>, x: Var, y: Var, dropout: &mut Option<(&mut ChaCha8Rng, f64)>) -> Result<Var> {
    let y = match dropout {
        Some((rng, p)) => tape.dropout(y, *p, &mut **rng),
        None => y,
    };
    Ok(tape.add(x, y)?)
}

impl Encoder {
    /// Encodes `x` under `mask` (for transient-global layers only the query
    /// validity is read).
    fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        mut x: Var,
        mask: &FullMask,
        dropout: &mut Option<(&mut ChaCha8Rng, f64)>,
    ) -> Result<(Var, u64)> {
        let mut pairs = 0;
        for layer in &self.layers {
            let h = layer.ln1.forward(tape, store, x)?;
            let (a, p) = layer.attn.forward_masked(tape, store, h, mask)?;
            pairs += p;
            x = residual(tape, x, a, dropout)?;
            let h = layer.ln2.forward(tape, store, x)?;
            let f = layer.ff.forward(tape, store, h)?;
            x = residual(tape, x, f, dropout)?;
        }
        Ok((self.ln_f.forward(tape, store, x)?, pairs))
    }
}

/// Output of a full-sequence forward pass.
pub struct Forward {
    pub logits: Var,
    /// Attended query/key pairs over every attention call.
    pub pairs: u64,
}

impl Model {
    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    pub fn num_trainable_params(&self) -> usize {
        self.params.num_trainable_elements()
    }

    pub fn chunk_size(&self) -> usize {
        self.config.attention.m
    }

    pub(crate) fn neighbor_encoder(&self) -> Result<&Encoder> {
        self.neighbor_encoder.as_ref().ok_or(ModelError::NotRetro)
    }

    /// Encoder states for `ids` (pads masked) and their validity.
    pub(crate) fn encode_input<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ids: &[u32],
        dropout: &mut Option<(&mut ChaCha8Rng, f64)>,
    ) -> Result<(Var, Vec<bool>, u64)> {
        let encoder = self
            .encoder
            .as_ref()
            .ok_or_else(|| ModelError::Config("model has no encoder".into()))?;
        if ids.is_empty() {
            return Err(ModelError::Config("empty encoder input".into()));
        }
        let valid: Vec<bool> = ids.iter().map(|&t| t != PAD).collect();
        let x = self.tok_emb.forward(tape, store, ids)?;
        let mask = FullMask {
            query_valid: Some(valid.clone()),
            key_valid: Some(valid.clone()),
            ..FullMask::default()
        };
        let (states, pairs) = encoder.forward(tape, store, x, &mask, dropout)?;
        Ok((states, valid, pairs))
    }

    /// Encodes every neighbor row of `nb` independently; pads and disabled
    /// chunks are masked.
    pub(crate) fn encode_neighbors<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        nb: &NeighborBatch,
        dropout: &mut Option<(&mut ChaCha8Rng, f64)>,
    ) -> Result<(Var, Vec<bool>, u64)> {
        let encoder = self.neighbor_encoder()?;
        let valid = nb.key_valid();
        let x = self.tok_emb.forward(tape, store, nb.tokens())?;
        let mask = FullMask {
            segment: Some(nb.neighbor_len),
            query_valid: Some(valid.clone()),
            key_valid: Some(valid.clone()),
            ..FullMask::default()
        };
        let (states, pairs) = encoder.forward(tape, store, x, &mask, dropout)?;
        Ok((states, valid, pairs))
    }

    /// Teacher-forced logits (`ids.len() × vocab`) for `ex` using `store`,
    /// which must hold this model's parameters in any precision. With
    /// `dropout` set, residual branches are dropped out.
    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ex: &Example,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        if ex.ids.is_empty() {
            return Err(ModelError::Config("empty decoder input".into()));
        }
        let mut dropout = dropout.filter(|_| self.config.dropout > 0.0).map(|r| (r, self.config.dropout));
        let mut pairs = 0;

        let memory = match (&self.encoder, &ex.encoder_ids) {
            (Some(_), Some(ids)) => {
                let (states, valid, p) = self.encode_input(tape, store, ids, &mut dropout)?;
                pairs += p;
                Some((states, valid))
            }
            (Some(_), None) => return Err(ModelError::Config(format!("{}: missing encoder input", ex.doc_id))),
            _ => None,
        };
        let neighbors = match (&self.neighbor_encoder, &ex.neighbors) {
            (Some(_), Some(nb)) if nb.num_chunks() > 0 => {
                let (states, key_valid, p) = self.encode_neighbors(tape, store, nb, &mut dropout)?;
                pairs += p;
                Some((states, key_valid, nb.chunk_valid().to_vec()))
            }
            _ => None,
        };

        let mut x = self.tok_emb.forward(tape, store, &ex.ids)?;
        for layer in &self.decoder {
            let h = layer.ln1.forward(tape, store, x)?;
            let (a, p) = layer.attn.forward(tape, store, h, None)?;
            pairs += p;
            x = residual(tape, x, a, &mut dropout)?;
            if let (Some((ln, cross)), Some((mem, valid))) = (&layer.cross, &memory) {
                let h = ln.forward(tape, store, x)?;
                let (c, p) = cross.forward(tape, store, h, *mem, valid)?;
                pairs += p;
                x = residual(tape, x, c, &mut dropout)?;
            }
            if let (Some(cca), Some((states, key_valid, chunk_valid))) = (&layer.cca, &neighbors) {
                let (k, v) = cca.project(tape, store, *states)?;
                let layout = cca.layout(0, chunk_valid, key_valid);
                let (y, p) = cca.attend(tape, store, x, k, v, &layout)?;
                pairs += p;
                x = y;
            }
            let h = layer.ln2.forward(tape, store, x)?;
            let f = layer.ff.forward(tape, store, h)?;
            x = residual(tape, x, f, &mut dropout)?;
        }
        let h = self.ln_f.forward(tape, store, x)?;
        let logits = self.lm_head.forward(tape, store, &self.tok_emb, h)?;
        Ok(Forward { logits, pairs })
    }

    /// Mean cross-entropy over the scored targets of `ex`.
    pub fn loss<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ex: &Example,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let out = self.forward(tape, store, ex, dropout)?;
        Ok(tape.cross_entropy(out.logits, &ex.targets)?)
    }

    /// Inference logits with the model's own parameters.
    pub fn logits(&self, ex: &Example) -> Result<Tensor<f32>> {
        let mut tape = Tape::inference();
        let out = self.forward(&mut tape, &self.params, ex, None)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Chunk embedder backed by the neighbor encoder with mean pooling.
    pub fn chunk_encoder(&self) -> Result<NeighborEmbedder<'_>> {
        self.neighbor_encoder()?;
        Ok(NeighborEmbedder { model: self })
    }
}

/// Mean of the neighbor encoder's final states over a chunk's tokens.
pub struct NeighborEmbedder<'a> {
    model: &'a Model,
}

impl NeighborEmbedder<'_> {
    pub fn try_encode(&self, tokens: &[u32]) -> Result<Vec<f32>> {
        let encoder = self.model.neighbor_encoder()?;
        let store = &self.model.params;
        let mut tape = Tape::<f32>::inference();
        let x = self.model.tok_emb.forward(&mut tape, store, tokens)?;
        let (h, _) = encoder.forward(&mut tape, store, x, &FullMask::default(), &mut None)?;
        let (n, d) = tape.value(h).dims2()?;
        let mut acc = vec![0.0f64; d];
        for i in 0..n {
            for (a, &v) in acc.iter_mut().zip(tape.value(h).row(i)) {
                *a += v as f64;
            }
        }
        Ok(acc.iter().map(|&a| (a / n as f64) as f32).collect())
    }
}

impl ChunkEncoder for NeighborEmbedder<'_> {
    fn dim(&self) -> usize {
        self.model.config.d_model
    }

    /// # Panics
    /// On token ids outside the model vocabulary.
    fn encode(&self, tokens: &[u32]) -> Vec<f32> {
        self.try_encode(tokens).expect("neighbor encoder forward")
    }
}
