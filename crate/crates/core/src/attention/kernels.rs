//! Tape operations for the three attention kernels.

use crate::nn::{Float, Tape, Tensor, Var};

use super::config::CcaAlignment;
use super::engine::{self, KeyPattern, KeyRef, NO_BUCKET};
use super::{relative_bucket, AttentionError};

type Result<T> = std::result::Result<T, AttentionError>;

/// Learned per-head relative-position bias table (`heads × buckets`).
#[derive(Clone, Copy, Debug)]
pub struct RelBias {
    pub table: Var,
    /// Offsets are clipped to `±max_distance`.
    pub max_distance: usize,
}

impl RelBias {
    pub fn buckets(&self) -> usize {
        2 * self.max_distance + 1
    }
}

/// Masking for dense attention.
#[derive(Clone, Debug, Default)]
pub struct FullMask {
    /// Query `i` sees keys `j <= i + q_offset` only.
    pub causal: bool,
    /// Absolute position of query row 0 (non-zero during cached decoding).
    pub q_offset: usize,
    /// Restricts attention to aligned segments of this many rows, so several
    /// independent sequences can share one call.
    pub segment: Option<usize>,
    /// Invalid query rows produce zeros and score nothing.
    pub query_valid: Option<Vec<bool>>,
    pub key_valid: Option<Vec<bool>>,
}

struct FullPattern {
    nk: usize,
    mask: FullMask,
    rel_max: Option<usize>,
}

impl KeyPattern for FullPattern {
    fn row_keys(&self, i: usize, out: &mut Vec<KeyRef>) {
        if self.mask.query_valid.as_ref().is_some_and(|v| !v[i]) {
            return;
        }
        let pos = i + self.mask.q_offset;
        let (start, mut end) = match self.mask.segment {
            Some(s) => (pos / s * s, (pos / s + 1) * s),
            None => (0, self.nk),
        };
        end = end.min(self.nk);
        if self.mask.causal {
            end = end.min(pos + 1);
        }
        for j in start..end {
            if self.mask.key_valid.as_ref().is_some_and(|v| !v[j]) {
                continue;
            }
            let bucket = self
                .rel_max
                .map_or(NO_BUCKET, |m| relative_bucket(j as isize - pos as isize, m) as u32);
            out.push(KeyRef {
                src: 0,
                row: j as u32,
                bucket,
            });
        }
    }
}

/// Local window plus block-mean global tokens.
#[derive(Clone, Debug)]
pub struct TGlobalSpec {
    pub radius: usize,
    pub block: usize,
    pub valid: Option<Vec<bool>>,
}

struct TGlobalPattern {
    n: usize,
    spec: TGlobalSpec,
    global_valid: Vec<bool>,
    rel_max: Option<usize>,
}

impl KeyPattern for TGlobalPattern {
    fn row_keys(&self, i: usize, out: &mut Vec<KeyRef>) {
        let valid = |j: usize| self.spec.valid.as_ref().is_none_or(|v| v[j]);
        if !valid(i) {
            return;
        }
        let lo = i.saturating_sub(self.spec.radius);
        let hi = (i + self.spec.radius).min(self.n - 1);
        for j in lo..=hi {
            if !valid(j) {
                continue;
            }
            let bucket = self
                .rel_max
                .map_or(NO_BUCKET, |m| relative_bucket(j as isize - i as isize, m) as u32);
            out.push(KeyRef {
                src: 0,
                row: j as u32,
                bucket,
            });
        }
        for (g, &ok) in self.global_valid.iter().enumerate() {
            if ok {
                out.push(KeyRef {
                    src: 1,
                    row: g as u32,
                    bucket: NO_BUCKET,
                });
            }
        }
    }
}

/// Where each query row finds its neighbors in a flattened
/// `(chunks · neighbors · neighbor_len) × d` key matrix.
#[derive(Clone, Debug)]
pub struct CcaLayout {
    pub chunk_size: usize,
    pub num_neighbors: usize,
    pub neighbor_len: usize,
    pub alignment: CcaAlignment,
    pub q_offset: usize,
    /// One flag per neighbor chunk; `false` masks the whole chunk.
    pub chunk_valid: Vec<bool>,
    /// One flag per key row (pad tokens are `false`).
    pub key_valid: Vec<bool>,
}

impl CcaLayout {
    pub fn num_chunks(&self) -> usize {
        self.chunk_valid.len()
    }

    pub fn rows_per_chunk(&self) -> usize {
        self.num_neighbors * self.neighbor_len
    }
}

struct CcaPattern {
    layout: CcaLayout,
    with_bias: bool,
}

impl KeyPattern for CcaPattern {
    fn row_keys(&self, i: usize, out: &mut Vec<KeyRef>) {
        let l = &self.layout;
        let Some((c, qpos)) = l.alignment.neighbor_chunk(i + l.q_offset, l.chunk_size) else {
            return;
        };
        if !l.chunk_valid[c] {
            return;
        }
        let m = l.chunk_size as isize;
        let base = c * l.rows_per_chunk();
        for r in base..base + l.rows_per_chunk() {
            if !l.key_valid[r] {
                continue;
            }
            let kpos = ((r - base) % l.neighbor_len) as isize;
            let bucket = if self.with_bias {
                ((kpos - qpos as isize).clamp(-m, m - 1) + m) as u32
            } else {
                NO_BUCKET
            };
            out.push(KeyRef {
                src: 0,
                row: r as u32,
                bucket,
            });
        }
    }
}

fn check_cols<T: Float>(tape: &Tape<T>, what: &'static str, v: Var, d: usize) -> Result<usize> {
    let (rows, cols) = tape.value(v).dims2()?;
    if cols != d {
        return Err(AttentionError::Shape(format!("{what} has {cols} columns, expected {d}")));
    }
    Ok(rows)
}

fn check_heads(d: usize, heads: usize) -> Result<()> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(AttentionError::Shape(format!("width {d} not divisible into {heads} heads")));
    }
    Ok(())
}

/// Registers an engine-backed attention op on the tape.
fn attention_op<T: Float, P: KeyPattern + 'static>(
    tape: &mut Tape<T>,
    name: &'static str,
    q: Var,
    keys: Vec<Var>,
    values: Vec<Var>,
    bias: Option<(Var, usize)>,
    heads: usize,
    pattern: P,
) -> Result<(Var, u64)> {
    let (nq, d) = tape.value(q).dims2()?;
    let inputs = engine::Inputs {
        q: tape.value(q).data(),
        nq,
        d,
        heads,
        keys: keys.iter().map(|&k| tape.value(k).data()).collect(),
        values: values.iter().map(|&v| tape.value(v).data()).collect(),
        bias: bias.map(|(b, nb)| (tape.value(b).data(), nb)),
    };
    let (out, pairs) = engine::forward(&inputs, &pattern);
    let value = Tensor::matrix(nq, d, out)?;
    let mut all = vec![q];
    all.extend(&keys);
    all.extend(&values);
    all.extend(bias.map(|(b, _)| b));
    let var = tape.push(name, value, &all, move |g, ctx| {
        let inputs = engine::Inputs {
            q: ctx.value(q).data(),
            nq,
            d,
            heads,
            keys: keys.iter().map(|&k| ctx.value(k).data()).collect(),
            values: values.iter().map(|&v| ctx.value(v).data()).collect(),
            bias: bias.map(|(b, nb)| (ctx.value(b).data(), nb)),
        };
        let bw = engine::backward(&inputs, &pattern, g.data());
        let shaped = |v: Var, data: Vec<T>| (v, Tensor::new(ctx.value(v).shape().to_vec(), data).unwrap());
        let mut res = vec![shaped(q, bw.dq)];
        for (&k, dk) in keys.iter().zip(bw.dkeys) {
            res.push(shaped(k, dk));
        }
        for (&v, dv) in values.iter().zip(bw.dvalues) {
            res.push(shaped(v, dv));
        }
        if let (Some((b, _)), Some(db)) = (bias, bw.dbias) {
            res.push(shaped(b, db));
        }
        res
    });
    Ok((var, pairs))
}

fn check_bias<T: Float>(tape: &Tape<T>, bias: Var, heads: usize, buckets: usize) -> Result<()> {
    if tape.value(bias).len() != heads * buckets {
        return Err(AttentionError::Shape(format!(
            "bias table has {} entries, expected {heads}×{buckets}",
            tape.value(bias).len()
        )));
    }
    Ok(())
}

/// Dense multi-head attention over projected `q`, `k`, `v`. Returns the
/// mixed values and the number of (query, key) pairs scored.
pub fn full_attention<T: Float>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    rel: Option<RelBias>,
    heads: usize,
    mask: &FullMask,
) -> Result<(Var, u64)> {
    let (nq, d) = tape.value(q).dims2()?;
    check_heads(d, heads)?;
    let nk = check_cols(tape, "keys", k, d)?;
    if check_cols(tape, "values", v, d)? != nk {
        return Err(AttentionError::Shape("keys and values differ in length".into()));
    }
    if mask.query_valid.as_ref().is_some_and(|m| m.len() != nq)
        || mask.key_valid.as_ref().is_some_and(|m| m.len() != nk)
    {
        return Err(AttentionError::Shape("mask length does not match sequence".into()));
    }
    if mask.segment == Some(0) {
        return Err(AttentionError::Config("segment length must be positive".into()));
    }
    if let Some(r) = rel {
        check_bias(tape, r.table, heads, r.buckets())?;
    }
    let pattern = FullPattern {
        nk,
        mask: mask.clone(),
        rel_max: rel.map(|r| r.max_distance),
    };
    attention_op(
        tape,
        "full_attention",
        q,
        vec![k],
        vec![v],
        rel.map(|r| (r.table, r.buckets())),
        heads,
        pattern,
    )
}

/// Transient-global attention: each valid token scores valid tokens within
/// `radius` on either side plus every valid global token (`kg`, `vg`).
#[allow(clippy::too_many_arguments)]
pub fn tglobal_attention<T: Float>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    global_k: Var,
    global_v: Var,
    global_valid: &[bool],
    rel: Option<RelBias>,
    heads: usize,
    spec: &TGlobalSpec,
) -> Result<(Var, u64)> {
    let (n, d) = tape.value(q).dims2()?;
    if n == 0 {
        return Err(AttentionError::EmptySequence);
    }
    check_heads(d, heads)?;
    if check_cols(tape, "keys", k, d)? != n || check_cols(tape, "values", v, d)? != n {
        return Err(AttentionError::Shape("self-attention keys must match queries".into()));
    }
    let g = check_cols(tape, "global keys", global_k, d)?;
    if check_cols(tape, "global values", global_v, d)? != g || global_valid.len() != g {
        return Err(AttentionError::Shape("global keys, values, and mask differ".into()));
    }
    if spec.valid.as_ref().is_some_and(|m| m.len() != n) {
        return Err(AttentionError::Shape("mask length does not match sequence".into()));
    }
    if let Some(r) = rel {
        check_bias(tape, r.table, heads, r.buckets())?;
    }
    let pattern = TGlobalPattern {
        n,
        spec: spec.clone(),
        global_valid: global_valid.to_vec(),
        rel_max: rel.map(|r| r.max_distance),
    };
    attention_op(
        tape,
        "tglobal_attention",
        q,
        vec![k, global_k],
        vec![v, global_v],
        rel.map(|r| (r.table, r.buckets())),
        heads,
        pattern,
    )
}

/// Chunked cross-attention kernel. `bias`, when given, is a `heads × 2m`
/// table indexed by key position relative to the query's position in its
/// chunk.
pub fn chunked_cross_attention_kernel<T: Float>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    bias: Option<Var>,
    heads: usize,
    layout: &CcaLayout,
) -> Result<(Var, u64)> {
    let (t, d) = tape.value(q).dims2()?;
    check_heads(d, heads)?;
    let rows = check_cols(tape, "neighbor keys", k, d)?;
    if check_cols(tape, "neighbor values", v, d)? != rows {
        return Err(AttentionError::Shape("neighbor keys and values differ".into()));
    }
    if layout.chunk_size == 0 || layout.neighbor_len == 0 {
        return Err(AttentionError::Config("chunk and neighbor length must be positive".into()));
    }
    if rows != layout.num_chunks() * layout.rows_per_chunk() || layout.key_valid.len() != rows {
        return Err(AttentionError::Shape(format!(
            "neighbor states have {rows} rows, layout expects {}×{}",
            layout.num_chunks(),
            layout.rows_per_chunk()
        )));
    }
    if t > 0 {
        let needed = layout
            .alignment
            .chunks_needed(t + layout.q_offset, layout.chunk_size);
        if needed > layout.num_chunks() {
            return Err(AttentionError::MissingNeighbors {
                chunk: needed - 1,
                available: layout.num_chunks(),
            });
        }
    }
    if let Some(b) = bias {
        check_bias(tape, b, heads, 2 * layout.chunk_size)?;
    }
    let pattern = CcaPattern {
        layout: layout.clone(),
        with_bias: bias.is_some(),
    };
    attention_op(
        tape,
        "chunked_cross_attention",
        q,
        vec![k],
        vec![v],
        bias.map(|b| (b, 2 * layout.chunk_size)),
        heads,
        pattern,
    )
}
