use serde::{Deserialize, Serialize};

use crate::attention::NeighborBatch;
use crate::corpus::Document;
use crate::index::{ChunkEncoder, DocIndex, Embedding};
use crate::text::{Tokenizer, BOS, EOS, PAD, SEP};

use super::{Example, Model, ModelKind, ModelError, Result};

/// One retrieval event: the query chunk and the neighbor chunks it returned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub query_chunk: usize,
    pub neighbors: Vec<usize>,
    pub scores: Vec<f32>,
}

/// `bos + title + sep`, with the title cut to `max_title` tokens. An empty
/// title leaves the bare sentinels.
pub fn prompt_ids(doc: &Document, tokenizer: &Tokenizer, max_title: usize) -> Vec<u32> {
    let mut title = tokenizer.encode(&doc.title);
    if title.is_empty() {
        log::warn!("{}: empty title, prompting with bos only", doc.article_id);
    }
    title.truncate(max_title);
    let mut ids = Vec::with_capacity(title.len() + 2);
    ids.push(BOS);
    ids.extend(title);
    ids.push(SEP);
    ids
}

/// Body tokens truncated to `max_input`.
pub fn encoder_ids(doc: &Document, tokenizer: &Tokenizer, max_input: usize) -> Result<Vec<u32>> {
    let mut ids = tokenizer.encode(&doc.body_text());
    if ids.is_empty() {
        return Err(ModelError::EmptyBody(doc.article_id.clone()));
    }
    ids.truncate(max_input);
    Ok(ids)
}

/// Teacher-forcing example for `doc`: the decoder reads the prompt and the
/// abstract, and only abstract tokens and the final eos are scored.
/// Neighbors are attached separately (see [`attach_neighbors`]).
pub fn prepare_example(model: &Model, doc: &Document, tokenizer: &Tokenizer) -> Result<Example> {
    let cfg = &model.config;
    let mut seq = prompt_ids(doc, tokenizer, cfg.max_title);
    let prompt_len = seq.len();
    let mut abs = tokenizer.encode(&doc.abstract_text());
    abs.truncate(cfg.max_output - 1);
    seq.extend(abs);
    seq.push(EOS);
    let ids = seq[..seq.len() - 1].to_vec();
    let targets = (1..seq.len()).map(|i| (i >= prompt_len).then_some(seq[i])).collect();
    let encoder_ids = match model.kind {
        ModelKind::EncDec => Some(encoder_ids(doc, tokenizer, cfg.max_input)?),
        _ => None,
    };
    Ok(Example {
        doc_id: doc.article_id.clone(),
        ids,
        targets,
        encoder_ids,
        neighbors: None,
    })
}

/// Embeds `query` (special tokens removed) and returns its nearest chunks,
/// or `None` when nothing is left to embed.
pub fn retrieve<E: ChunkEncoder + ?Sized>(
    index: &DocIndex,
    encoder: &E,
    query: &[u32],
    k: usize,
    continuation: bool,
) -> Result<Option<Vec<crate::index::Neighbor>>> {
    let content: Vec<u32> = query.iter().copied().filter(|&t| !Tokenizer::is_special(t)).collect();
    if content.is_empty() {
        return Ok(None);
    }
    let q = Embedding::normalized(&encoder.encode(&content))?;
    Ok(Some(index.query(&q, k, continuation)?))
}

/// Retrieves neighbors for every chunk of `ids` that some decoder position
/// reads, using only `index` (the document's own chunks).
pub fn neighbors_for<E: ChunkEncoder + ?Sized>(
    model: &Model,
    ids: &[u32],
    index: &DocIndex,
    encoder: &E,
) -> Result<(NeighborBatch, Vec<TraceEntry>)> {
    let att = &model.config.attention;
    let m = att.m;
    let mut nb = NeighborBatch::new(att.num_neighbors, att.neighbor_len(), PAD);
    let mut trace = Vec::new();
    for c in 0..att.cca_alignment.chunks_needed(ids.len(), m) {
        let query = &ids[c * m..(c + 1) * m];
        match retrieve(index, encoder, query, att.num_neighbors, att.neighbor_continuation)? {
            Some(found) => {
                trace.push(TraceEntry {
                    query_chunk: c,
                    neighbors: found.iter().map(|n| n.chunk_index).collect(),
                    scores: found.iter().map(|n| n.score).collect(),
                });
                let rows: Vec<Vec<u32>> = found.into_iter().map(|n| n.tokens).collect();
                nb.push_chunk(&rows);
            }
            None => {
                trace.push(TraceEntry {
                    query_chunk: c,
                    neighbors: Vec::new(),
                    scores: Vec::new(),
                });
                nb.push_empty();
            }
        }
    }
    Ok((nb, trace))
}

/// Attaches neighbors retrieved from `index` with the model's current
/// neighbor encoder.
pub fn attach_neighbors(model: &Model, ex: &mut Example, index: &DocIndex) -> Result<()> {
    if index.doc_id != ex.doc_id {
        return Err(ModelError::Config(format!(
            "index for {} used with document {}",
            index.doc_id, ex.doc_id
        )));
    }
    let encoder = model.chunk_encoder()?;
    let (nb, _) = neighbors_for(model, &ex.ids, index, &encoder)?;
    ex.neighbors = Some(nb);
    Ok(())
}

/// Builds the document's index with the model's neighbor encoder.
pub fn index_document(model: &Model, doc: &Document, tokenizer: &Tokenizer) -> Result<DocIndex> {
    let encoder = model.chunk_encoder()?;
    Ok(crate::index::build_index(doc, tokenizer, &encoder, model.chunk_size())?)
}
