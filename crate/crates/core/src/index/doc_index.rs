use crate::corpus::Document;
use crate::text::{chunk, Chunk, Tokenizer, PAD};

use super::embedding::{embed_chunk, ChunkEncoder, Embedding};
use super::knn::top_k;
use super::IndexError;

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub chunk_index: usize,
    pub score: f32,
    /// The neighbor chunk followed, when requested, by its continuation
    /// chunk (pad-filled after the last chunk).
    pub tokens: Vec<u32>,
}

/// Chunk embeddings of one document.
#[derive(Clone, Debug, PartialEq)]
pub struct DocIndex {
    pub doc_id: String,
    pub d: usize,
    pub m: usize,
    /// Row-major `num_chunks × d`, unit rows.
    pub embeddings: Vec<f32>,
    pub chunks: Vec<Chunk>,
}

pub fn build_index_from_ids<E: ChunkEncoder + ?Sized>(
    doc_id: &str,
    ids: &[u32],
    encoder: &E,
    m: usize,
) -> Result<DocIndex, IndexError> {
    if ids.is_empty() {
        return Err(IndexError::EmptyBody(doc_id.to_string()));
    }
    let chunks = chunk(doc_id, ids, m)?;
    let mut embeddings = Vec::with_capacity(chunks.len() * encoder.dim());
    for c in &chunks {
        embeddings.extend(embed_chunk(encoder, c)?.vec);
    }
    Ok(DocIndex {
        doc_id: doc_id.to_string(),
        d: encoder.dim(),
        m,
        embeddings,
        chunks,
    })
}

/// Tokenizes the body of `doc` and indexes its chunks.
pub fn build_index<E: ChunkEncoder + ?Sized>(
    doc: &Document,
    tokenizer: &Tokenizer,
    encoder: &E,
    m: usize,
) -> Result<DocIndex, IndexError> {
    build_index_from_ids(&doc.article_id, &tokenizer.encode(&doc.body_text()), encoder, m)
}

impl DocIndex {
    pub fn num_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.d..(i + 1) * self.d]
    }

    /// Recomputes every embedding with `encoder` (chunks are unchanged).
    pub fn reembed<E: ChunkEncoder + ?Sized>(&mut self, encoder: &E) -> Result<(), IndexError> {
        let mut embeddings = Vec::with_capacity(self.chunks.len() * encoder.dim());
        for c in &self.chunks {
            embeddings.extend(embed_chunk(encoder, c)?.vec);
        }
        self.d = encoder.dim();
        self.embeddings = embeddings;
        Ok(())
    }

    /// Up to `k` most similar chunks, best first; ties go to the lower index.
    pub fn query(&self, q: &Embedding, k: usize, continuation: bool) -> Result<Vec<Neighbor>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if q.dim() != self.d {
            return Err(IndexError::Dimension {
                index: self.d,
                query: q.dim(),
            });
        }
        Ok(top_k(&self.embeddings, self.d, &q.vec, k)
            .into_iter()
            .map(|(i, score)| Neighbor {
                chunk_index: i,
                score,
                tokens: self.neighbor_tokens(i, continuation),
            })
            .collect())
    }

    pub fn neighbor_tokens(&self, i: usize, continuation: bool) -> Vec<u32> {
        let mut t = self.chunks[i].ids.clone();
        if continuation {
            match self.chunks.get(i + 1) {
                Some(next) => t.extend_from_slice(&next.ids),
                None => t.extend(std::iter::repeat_n(PAD, self.m)),
            }
        }
        t
    }
}
