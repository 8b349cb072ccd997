use std::time::Instant;

use crate::nn::{Init, Tape};

use super::config::{AttentionConfig, AttentionKind};
use super::count::count_attended_pairs;
use super::kernels::{chunked_cross_attention_kernel, full_attention, tglobal_attention, CcaLayout, FullMask, TGlobalSpec};
use super::AttentionError;

/// One measurement of a kernel on random inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub kind: AttentionKind,
    pub n: usize,
    pub r: usize,
    pub k: usize,
    pub pairs: u64,
    pub predicted_pairs: u64,
    pub wall_ms: f64,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str = "kind,n,r,k,pairs,predicted_pairs,wall_ms";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.kind, self.n, self.r, self.k, self.pairs, self.predicted_pairs, self.wall_ms
        )
    }
}

/// Runs `cfg.kind` once over a random length-`n` sequence (causal for full
/// attention) and reports counted and predicted pairs.
pub fn bench_attention(cfg: &AttentionConfig, n: usize, seed: u64) -> Result<BenchRow, AttentionError> {
    cfg.validate()?;
    if n == 0 {
        return Err(AttentionError::EmptySequence);
    }
    let d = cfg.d_model;
    let mut init = Init::new(seed);
    let mut tape = Tape::<f32>::inference();
    let mut rand = |tape: &mut Tape<f32>, rows: usize| tape.constant(init.normal(&[rows, d], 1.0));
    let q = rand(&mut tape, n);
    let start;
    let (_, pairs) = match cfg.kind {
        AttentionKind::FullCausal => {
            let k = rand(&mut tape, n);
            let v = rand(&mut tape, n);
            let mask = FullMask {
                causal: true,
                ..FullMask::default()
            };
            start = Instant::now();
            full_attention(&mut tape, q, k, v, None, cfg.heads, &mask)?
        }
        AttentionKind::Tglobal => {
            let k = rand(&mut tape, n);
            let v = rand(&mut tape, n);
            let g = n.div_ceil(cfg.k);
            let gk = rand(&mut tape, g);
            let gv = rand(&mut tape, g);
            let spec = TGlobalSpec {
                radius: cfg.r,
                block: cfg.k,
                valid: None,
            };
            start = Instant::now();
            tglobal_attention(&mut tape, q, k, v, gk, gv, &vec![true; g], None, cfg.heads, &spec)?
        }
        AttentionKind::ChunkedCross => {
            let chunks = cfg.cca_alignment.chunks_needed(n, cfg.m);
            let rows = chunks * cfg.num_neighbors * cfg.neighbor_len();
            let k = rand(&mut tape, rows);
            let v = rand(&mut tape, rows);
            let layout = CcaLayout {
                chunk_size: cfg.m,
                num_neighbors: cfg.num_neighbors,
                neighbor_len: cfg.neighbor_len(),
                alignment: cfg.cca_alignment,
                q_offset: 0,
                chunk_valid: vec![true; chunks],
                key_valid: vec![true; rows],
            };
            start = Instant::now();
            chunked_cross_attention_kernel(&mut tape, q, k, v, None, cfg.heads, &layout)?
        }
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(BenchRow {
        kind: cfg.kind,
        n,
        r: cfg.r,
        k: cfg.k,
        pairs,
        predicted_pairs: count_attended_pairs(cfg, n, true),
        wall_ms,
    })
}
