use super::config::{AttentionConfig, AttentionKind, CcaAlignment};

/// Closed-form number of (query, key) pairs scored for a length-`n`
/// sequence with no padding. `causal` only affects full attention.
/// For chunked cross-attention every retrieved neighbor is assumed complete.
pub fn count_attended_pairs(cfg: &AttentionConfig, n: usize, causal: bool) -> u64 {
    let n64 = n as u64;
    match cfg.kind {
        AttentionKind::FullCausal => {
            if causal {
                n64 * (n64 + 1) / 2
            } else {
                n64 * n64
            }
        }
        AttentionKind::Tglobal => {
            if n == 0 {
                return 0;
            }
            let r = cfg.r as u64;
            let local = if cfg.r >= n - 1 {
                n64 * n64
            } else {
                n64 * (2 * r + 1) - r * (r + 1)
            };
            local + n64 * n.div_ceil(cfg.k) as u64
        }
        AttentionKind::ChunkedCross => {
            let offset = match cfg.cca_alignment {
                CcaAlignment::PerChunk => cfg.m,
                CcaAlignment::Shifted => cfg.m - 1,
            };
            let queries = n.saturating_sub(offset) as u64;
            queries * cfg.num_neighbors as u64 * cfg.neighbor_len() as u64
        }
    }
}
