use super::bpe::PAD;
use super::TextError;

/// A window of exactly `m` token ids; the last `pad_len` are padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub doc_id: String,
    pub index: usize,
    pub ids: Vec<u32>,
    pub pad_len: usize,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// The ids without trailing padding.
    pub fn content(&self) -> &[u32] {
        &self.ids[..self.ids.len() - self.pad_len]
    }
}

/// Splits `ids` into `ceil(len/m)` chunks, padding the last one.
pub fn chunk(doc_id: &str, ids: &[u32], m: usize) -> Result<Vec<Chunk>, TextError> {
    if m == 0 {
        return Err(TextError::ZeroChunkSize);
    }
    if let Some(pos) = ids.iter().position(|&t| t == PAD) {
        return Err(TextError::PadInSequence(pos));
    }
    Ok(ids
        .chunks(m)
        .enumerate()
        .map(|(index, c)| {
            let mut v = c.to_vec();
            v.resize(m, PAD);
            Chunk {
                doc_id: doc_id.to_string(),
                index,
                ids: v,
                pad_len: m - c.len(),
            }
        })
        .collect())
}

/// Concatenates chunk contents.
pub fn unchunk(chunks: &[Chunk]) -> Vec<u32> {
    chunks.iter().flat_map(|c| c.content().iter().copied()).collect()
}
