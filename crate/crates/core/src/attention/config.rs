use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AttentionError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    FullCausal,
    Tglobal,
    ChunkedCross,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 3] = [Self::FullCausal, Self::Tglobal, Self::ChunkedCross];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::FullCausal => "full_causal",
            Self::Tglobal => "tglobal",
            Self::ChunkedCross => "chunked_cross",
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionKind {
    type Err = AttentionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" | "full_causal" => Ok(Self::FullCausal),
            "tglobal" => Ok(Self::Tglobal),
            "cca" | "chunked_cross" => Ok(Self::ChunkedCross),
            other => Err(AttentionError::UnknownKind(other.to_string())),
        }
    }
}

/// Which neighbor block a decoder position reads in chunked cross-attention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcaAlignment {
    /// Chunk `u` reads the neighbors retrieved with chunk `u-1`.
    #[default]
    PerChunk,
    /// The last token of chunk `u-1` and the first `m-1` tokens of chunk `u`
    /// read the neighbors of chunk `u-1`.
    Shifted,
}

impl CcaAlignment {
    /// Neighbor chunk index and query position inside the chunk for absolute
    /// decoder position `pos`, or `None` when no neighbors apply yet.
    pub fn neighbor_chunk(self, pos: usize, m: usize) -> Option<(usize, usize)> {
        let shifted = match self {
            Self::PerChunk => pos,
            Self::Shifted => pos + 1,
        };
        (shifted >= m).then(|| (shifted / m - 1, shifted % m))
    }

    /// Number of neighbor chunks needed to process positions `0..len`.
    pub fn chunks_needed(self, len: usize, m: usize) -> usize {
        if len == 0 {
            return 0;
        }
        self.neighbor_chunk(len - 1, m).map_or(0, |(c, _)| c + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub kind: AttentionKind,
    /// Maximum sequence length.
    pub n: usize,
    /// Local window radius: tokens attended on each side.
    pub r: usize,
    /// Block size used to build global tokens.
    pub k: usize,
    /// Chunk size.
    pub m: usize,
    pub num_neighbors: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Append each neighbor's in-document continuation chunk.
    pub neighbor_continuation: bool,
    pub cca_alignment: CcaAlignment,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            kind: AttentionKind::Tglobal,
            n: 4096,
            r: 127,
            k: 16,
            m: 64,
            num_neighbors: 2,
            heads: 4,
            d_model: 128,
            neighbor_continuation: true,
            cca_alignment: CcaAlignment::PerChunk,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), AttentionError> {
        let bad = |msg: String| Err(AttentionError::Config(msg));
        if self.k == 0 {
            return bad("block size k must be at least 1".into());
        }
        if self.m == 0 {
            return bad("chunk size m must be at least 1".into());
        }
        if self.heads == 0 {
            return bad("heads must be at least 1".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} is not divisible by heads {}", self.d_model, self.heads));
        }
        Ok(())
    }

    /// Tokens per retrieved neighbor (chunk plus optional continuation).
    pub fn neighbor_len(&self) -> usize {
        if self.neighbor_continuation {
            2 * self.m
        } else {
            self.m
        }
    }
}
