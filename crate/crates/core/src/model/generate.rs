use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{LayerKv, MemoryKv, NeighborBatch};
use crate::corpus::Document;
use crate::index::DocIndex;
use crate::nn::{Tape, Tensor};
use crate::text::{Source, TokenSeq, Tokenizer, EOS, PAD};

use super::data::{encoder_ids, prompt_ids, retrieve, TraceEntry};
use super::{decode_strategy, Model, ModelError, ModelKind, NeighborEmbedder, Result, Strategy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateOptions {
    /// Generated tokens at most (also capped by the model's `max_output`).
    pub max_len: usize,
    pub retrieval: bool,
    pub strategy: Strategy,
    pub seed: u64,
    pub stop_at_eos: bool,
    /// Keep the logits row used for every sampled token.
    pub keep_logits: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            max_len: 512,
            retrieval: true,
            strategy: Strategy::Greedy,
            seed: 0,
            stop_at_eos: true,
            keep_logits: false,
        }
    }
}

/// Decoding progress for one document.
#[derive(Clone, Debug)]
pub struct GenerationState {
    /// Prompt followed by the generated tokens.
    pub ids: Vec<u32>,
    pub prompt_len: usize,
    /// Positions fed through the decoder so far.
    pub t: usize,
    /// Neighbors of every completed chunk read so far (retrieval on).
    pub neighbors: Option<NeighborBatch>,
    pub trace: Vec<TraceEntry>,
    /// Peak floats held in decoder self-attention key/value caches.
    pub peak_self_attn_floats: usize,
    /// Peak floats held in projected neighbor keys/values.
    pub peak_neighbor_floats: usize,
    pub logits: Vec<Vec<f32>>,
}

impl GenerationState {
    pub fn generated(&self) -> &[u32] {
        &self.ids[self.prompt_len..]
    }
}

pub struct Generation {
    /// Generated abstract tokens without the closing eos.
    pub tokens: TokenSeq,
    pub text: String,
    pub state: GenerationState,
}

/// Incremental decoder with per-layer caches.
struct Stepper<'a> {
    model: &'a Model,
    kv: Vec<LayerKv<f32>>,
    cca_kv: Vec<Option<(Tensor<f32>, Tensor<f32>)>>,
    memory: Vec<Option<MemoryKv<f32>>>,
    chunk_valid: Vec<bool>,
    key_valid: Vec<bool>,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a Model, encoder_input: Option<&[u32]>) -> Result<Self> {
        let d = model.config.d_model;
        let layers = model.decoder.len();
        let mut memory = vec![None; layers];
        if let Some(ids) = encoder_input {
            let mut tape = Tape::<f32>::inference();
            let (states, valid, _) = model.encode_input(&mut tape, &model.params, ids, &mut None)?;
            for (slot, layer) in memory.iter_mut().zip(&model.decoder) {
                if let Some((_, cross)) = &layer.cross {
                    let (k, v) = cross.project(&mut tape, &model.params, states)?;
                    *slot = Some(MemoryKv {
                        k: tape.value(k).clone(),
                        v: tape.value(v).clone(),
                        valid: valid.clone(),
                    });
                }
            }
        }
        let cca_kv = model
            .decoder
            .iter()
            .map(|l| l.cca.as_ref().map(|_| (Tensor::zeros(&[0, d]), Tensor::zeros(&[0, d]))))
            .collect();
        Ok(Self {
            model,
            kv: (0..layers).map(|_| LayerKv::new(d)).collect(),
            cca_kv,
            memory,
            chunk_valid: Vec::new(),
            key_valid: Vec::new(),
        })
    }

    fn self_attn_floats(&self) -> usize {
        self.kv.iter().map(LayerKv::num_floats).sum()
    }

    fn neighbor_floats(&self) -> usize {
        self.cca_kv.iter().flatten().map(|(k, v)| k.len() + v.len()).sum()
    }

    /// Encodes one chunk's neighbors and appends their projections.
    fn add_chunk(&mut self, nb: &NeighborBatch) -> Result<()> {
        let store = &self.model.params;
        let mut tape = Tape::<f32>::inference();
        let (states, key_valid, _) = self.model.encode_neighbors(&mut tape, store, nb, &mut None)?;
        for (slot, layer) in self.cca_kv.iter_mut().zip(&self.model.decoder) {
            if let (Some((kc, vc)), Some(cca)) = (slot, &layer.cca) {
                let (k, v) = cca.project(&mut tape, store, states)?;
                kc.append_rows(tape.value(k).data())?;
                vc.append_rows(tape.value(v).data())?;
            }
        }
        self.chunk_valid.extend_from_slice(nb.chunk_valid());
        self.key_valid.extend(key_valid);
        Ok(())
    }

    /// Feeds `ids` at the next positions and returns the last row of logits.
    fn feed(&mut self, ids: &[u32]) -> Result<Vec<f32>> {
        let model = self.model;
        let store = &model.params;
        let mut tape = Tape::<f32>::inference();
        let q_offset = self.kv[0].len();
        let mut x = model.tok_emb.forward(&mut tape, store, ids)?;
        for (l, layer) in model.decoder.iter().enumerate() {
            let h = layer.ln1.forward(&mut tape, store, x)?;
            let (a, _) = layer.attn.forward_cached(&mut tape, store, h, &mut self.kv[l])?;
            x = tape.add(x, a)?;
            if let (Some((ln, cross)), Some(mem)) = (&layer.cross, &self.memory[l]) {
                let h = ln.forward(&mut tape, store, x)?;
                let k = tape.constant(mem.k.clone());
                let v = tape.constant(mem.v.clone());
                let (c, _) = cross.attend(&mut tape, store, h, k, v, &mem.valid)?;
                x = tape.add(x, c)?;
            }
            if let (Some(cca), Some((kc, vc))) = (&layer.cca, &self.cca_kv[l]) {
                if !self.chunk_valid.is_empty() {
                    let k = tape.constant(kc.clone());
                    let v = tape.constant(vc.clone());
                    let layout = cca.layout(q_offset, &self.chunk_valid, &self.key_valid);
                    x = cca.attend(&mut tape, store, x, k, v, &layout)?.0;
                }
            }
            let h = layer.ln2.forward(&mut tape, store, x)?;
            let f = layer.ff.forward(&mut tape, store, h)?;
            x = tape.add(x, f)?;
        }
        let last = tape.slice_rows(x, ids.len() - 1, ids.len())?;
        let h = model.ln_f.forward(&mut tape, store, last)?;
        let logits = model.lm_head.forward(&mut tape, store, &model.tok_emb, h)?;
        Ok(tape.value(logits).data().to_vec())
    }
}

struct Retriever<'a> {
    index: &'a DocIndex,
    encoder: NeighborEmbedder<'a>,
}

/// Summarizes `doc` token by token. With retrieval on (retro models only),
/// each chunk's neighbors are fetched from `index` as soon as the first
/// position that reads them is generated.
pub fn generate(
    model: &Model,
    doc: &Document,
    tokenizer: &Tokenizer,
    index: Option<&DocIndex>,
    opts: &GenerateOptions,
) -> Result<Generation> {
    let cfg = &model.config;
    let att = &cfg.attention;
    let m = att.m;
    let retriever = if opts.retrieval && model.kind == ModelKind::Retro {
        let index = index.ok_or_else(|| ModelError::MissingIndex(doc.article_id.clone()))?;
        if index.doc_id != doc.article_id {
            return Err(ModelError::MissingIndex(doc.article_id.clone()));
        }
        Some(Retriever {
            index,
            encoder: model.chunk_encoder()?,
        })
    } else {
        None
    };
    let encoder_input = match model.kind {
        ModelKind::EncDec => Some(encoder_ids(doc, tokenizer, cfg.max_input)?),
        _ => None,
    };
    let mut stepper = Stepper::new(model, encoder_input.as_deref())?;
    let prompt = prompt_ids(doc, tokenizer, cfg.max_title);
    let mut state = GenerationState {
        prompt_len: prompt.len(),
        ids: Vec::new(),
        t: 0,
        neighbors: retriever
            .as_ref()
            .map(|_| NeighborBatch::new(att.num_neighbors, att.neighbor_len(), PAD)),
        trace: Vec::new(),
        peak_self_attn_floats: 0,
        peak_neighbor_floats: 0,
        logits: Vec::new(),
    };

    let push = |state: &mut GenerationState, stepper: &mut Stepper, tok: u32| -> Result<()> {
        state.ids.push(tok);
        let Some(r) = &retriever else { return Ok(()) };
        let nb = state.neighbors.as_mut().unwrap();
        while nb.num_chunks() < att.cca_alignment.chunks_needed(state.ids.len(), m) {
            let c = nb.num_chunks();
            let query = &state.ids[c * m..(c + 1) * m];
            let mut single = NeighborBatch::new(att.num_neighbors, att.neighbor_len(), PAD);
            let found = retrieve(r.index, &r.encoder, query, att.num_neighbors, att.neighbor_continuation)?;
            let entry = TraceEntry {
                query_chunk: c,
                neighbors: found.iter().flatten().map(|n| n.chunk_index).collect(),
                scores: found.iter().flatten().map(|n| n.score).collect(),
            };
            match found {
                Some(found) => {
                    let rows: Vec<Vec<u32>> = found.into_iter().map(|n| n.tokens).collect();
                    single.push_chunk(&rows);
                    nb.push_chunk(&rows);
                }
                None => {
                    single.push_empty();
                    nb.push_empty();
                }
            }
            stepper.add_chunk(&single)?;
            state.trace.push(entry);
        }
        state.peak_neighbor_floats = state.peak_neighbor_floats.max(stepper.neighbor_floats());
        Ok(())
    };

    for &tok in &prompt {
        push(&mut state, &mut stepper, tok)?;
    }
    let mut logits = stepper.feed(&prompt)?;
    state.t = prompt.len();
    state.peak_self_attn_floats = stepper.self_attn_floats();

    let max_new = opts.max_len.min(cfg.max_output);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut generated = 0;
    while generated < max_new {
        let tok = decode_strategy(&logits, opts.strategy, &mut rng);
        if opts.keep_logits {
            state.logits.push(std::mem::take(&mut logits));
        }
        push(&mut state, &mut stepper, tok)?;
        generated += 1;
        if (opts.stop_at_eos && tok == EOS) || generated == max_new {
            break;
        }
        logits = stepper.feed(&[tok])?;
        state.t += 1;
        state.peak_self_attn_floats = state.peak_self_attn_floats.max(stepper.self_attn_floats());
    }

    let mut out: Vec<u32> = state.generated().to_vec();
    if out.last() == Some(&EOS) {
        out.pop();
    }
    let text = tokenizer.decode(&out);
    Ok(Generation {
        tokens: TokenSeq::new(out, Source::Generated),
        text,
        state,
    })
}
