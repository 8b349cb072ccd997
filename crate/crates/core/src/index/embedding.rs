use crate::nn::Tensor;
use crate::text::{Chunk, PAD};

use super::IndexError;

/// Unit-norm chunk embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub vec: Vec<f32>,
}

impl Embedding {
    /// L2-normalizes `raw`.
    pub fn normalized(raw: &[f32]) -> Result<Self, IndexError> {
        let norm = raw.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(IndexError::Degenerate);
        }
        Ok(Self {
            vec: raw.iter().map(|&x| (x as f64 / norm) as f32).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.vec.len()
    }
}

/// Maps the non-pad tokens of a chunk to a pooled vector.
pub trait ChunkEncoder {
    fn dim(&self) -> usize;

    /// Pooled, unnormalized representation of `tokens` (never empty).
    fn encode(&self, tokens: &[u32]) -> Vec<f32>;
}

/// Mean of fixed token vectors.
#[derive(Clone, Debug)]
pub struct TableEncoder {
    pub table: Tensor<f32>,
}

impl ChunkEncoder for TableEncoder {
    fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    fn encode(&self, tokens: &[u32]) -> Vec<f32> {
        let d = self.dim();
        let mut acc = vec![0.0f64; d];
        for &t in tokens {
            for (a, &x) in acc.iter_mut().zip(self.table.row(t as usize)) {
                *a += x as f64;
            }
        }
        acc.iter().map(|&a| (a / tokens.len() as f64) as f32).collect()
    }
}

pub fn embed_chunk<E: ChunkEncoder + ?Sized>(encoder: &E, chunk: &Chunk) -> Result<Embedding, IndexError> {
    let content: Vec<u32> = chunk.ids.iter().copied().filter(|&t| t != PAD).collect();
    if content.is_empty() {
        return Err(IndexError::EmptyChunk {
            doc_id: chunk.doc_id.clone(),
            index: chunk.index,
        });
    }
    Embedding::normalized(&encoder.encode(&content))
}
