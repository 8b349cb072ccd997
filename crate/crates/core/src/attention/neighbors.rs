/// Retrieved neighbor tokens for consecutive chunks of one sequence.
/// Chunk `c` holds `num_neighbors` rows of `neighbor_len` tokens each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborBatch {
    pub num_neighbors: usize,
    pub neighbor_len: usize,
    pub pad_id: u32,
    tokens: Vec<u32>,
    chunk_valid: Vec<bool>,
}

impl NeighborBatch {
    pub fn new(num_neighbors: usize, neighbor_len: usize, pad_id: u32) -> Self {
        Self {
            num_neighbors,
            neighbor_len,
            pad_id,
            tokens: Vec::new(),
            chunk_valid: Vec::new(),
        }
    }

    pub fn num_chunks(&self) -> usize {
        self.chunk_valid.len()
    }

    pub fn rows_per_chunk(&self) -> usize {
        self.num_neighbors * self.neighbor_len
    }

    /// Adds one chunk's neighbors. Missing neighbors and short rows are
    /// padded; extra neighbors and overlong rows are truncated.
    pub fn push_chunk(&mut self, neighbors: &[Vec<u32>]) {
        for i in 0..self.num_neighbors {
            let row = neighbors.get(i).map(Vec::as_slice).unwrap_or(&[]);
            let take = row.len().min(self.neighbor_len);
            self.tokens.extend_from_slice(&row[..take]);
            self.tokens
                .extend(std::iter::repeat_n(self.pad_id, self.neighbor_len - take));
        }
        self.chunk_valid.push(true);
    }

    /// Adds a chunk with retrieval disabled: its keys are all masked.
    pub fn push_empty(&mut self) {
        self.tokens
            .extend(std::iter::repeat_n(self.pad_id, self.rows_per_chunk()));
        self.chunk_valid.push(false);
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn chunk_tokens(&self, c: usize) -> &[u32] {
        let r = self.rows_per_chunk();
        &self.tokens[c * r..(c + 1) * r]
    }

    pub fn chunk_valid(&self) -> &[bool] {
        &self.chunk_valid
    }

    /// Per-token validity (pad tokens and disabled chunks are `false`).
    pub fn key_valid(&self) -> Vec<bool> {
        let r = self.rows_per_chunk();
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| t != self.pad_id && self.chunk_valid[i / r])
            .collect()
    }

    pub fn truncate(&mut self, chunks: usize) {
        self.chunk_valid.truncate(chunks);
        self.tokens.truncate(chunks * self.rows_per_chunk());
    }
}
