use crate::nn::{Float, Init, LayerNorm, Linear, ParamId, ParamStore, Tape, Tensor, Var};

use super::config::{AttentionConfig, CcaAlignment};
use super::kernels::{
    chunked_cross_attention_kernel, full_attention, tglobal_attention, CcaLayout, FullMask, RelBias, TGlobalSpec,
};
use super::AttentionError;

type Result<T> = std::result::Result<T, AttentionError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelfAttnKind {
    Full { causal: bool },
    TGlobal { radius: usize, block: usize },
}

/// Multi-head self-attention with an optional learned relative-position bias.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub rel_bias: Option<ParamId>,
    pub rel_max: usize,
    pub heads: usize,
    pub kind: SelfAttnKind,
}

/// Cached keys and values of one self-attention layer.
#[derive(Clone, Debug)]
pub struct LayerKv<T> {
    k: Tensor<T>,
    v: Tensor<T>,
}

impl<T: Float> LayerKv<T> {
    pub fn new(d: usize) -> Self {
        Self {
            k: Tensor::zeros(&[0, d]),
            v: Tensor::zeros(&[0, d]),
        }
    }

    pub fn len(&self) -> usize {
        self.k.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_floats(&self) -> usize {
        self.k.len() + self.v.len()
    }
}

impl SelfAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        d: usize,
        heads: usize,
        kind: SelfAttnKind,
        rel_max: Option<usize>,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(AttentionError::Config(format!("d_model {d} not divisible by {heads} heads")));
        }
        let rel_bias = match rel_max {
            Some(r) => Some(store.add(format!("{name}.rel_bias"), Tensor::zeros(&[heads, 2 * r + 1]))?),
            None => None,
        };
        Ok(Self {
            q: Linear::new(store, init, &format!("{name}.q"), d, d, true)?,
            k: Linear::new(store, init, &format!("{name}.k"), d, d, true)?,
            v: Linear::new(store, init, &format!("{name}.v"), d, d, true)?,
            o: Linear::new(store, init, &format!("{name}.o"), d, d, true)?,
            rel_bias,
            rel_max: rel_max.unwrap_or(0),
            heads,
            kind,
        })
    }

    fn rel<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Option<RelBias> {
        self.rel_bias.map(|id| RelBias {
            table: tape.param(store, id),
            max_distance: self.rel_max,
        })
    }

    /// Attends over `x` (already normalized). `valid` marks real tokens.
    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        valid: Option<&[bool]>,
    ) -> Result<(Var, u64)> {
        let mask = match self.kind {
            SelfAttnKind::Full { causal } => FullMask {
                causal,
                query_valid: valid.map(<[bool]>::to_vec),
                key_valid: valid.map(<[bool]>::to_vec),
                ..FullMask::default()
            },
            SelfAttnKind::TGlobal { .. } => FullMask {
                query_valid: valid.map(<[bool]>::to_vec),
                ..FullMask::default()
            },
        };
        self.forward_masked(tape, store, x, &mask)
    }

    /// Like [`forward`](Self::forward) with an explicit mask. For the
    /// transient-global kind only `query_valid` is read.
    pub fn forward_masked<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        mask: &FullMask,
    ) -> Result<(Var, u64)> {
        let q = self.q.forward(tape, store, x)?;
        let k = self.k.forward(tape, store, x)?;
        let v = self.v.forward(tape, store, x)?;
        let rel = self.rel(tape, store);
        let (a, pairs) = match self.kind {
            SelfAttnKind::Full { causal } => {
                let mask = FullMask { causal, ..mask.clone() };
                full_attention(tape, q, k, v, rel, self.heads, &mask)?
            }
            SelfAttnKind::TGlobal { radius, block } => {
                let n = tape.value(x).dims2()?.0;
                let valid = mask.query_valid.clone().unwrap_or_else(|| vec![true; n]);
                let (g, global_valid) = tape.block_mean(x, block, &valid)?;
                let gk = self.k.forward(tape, store, g)?;
                let gv = self.v.forward(tape, store, g)?;
                let spec = TGlobalSpec {
                    radius,
                    block,
                    valid: mask.query_valid.clone(),
                };
                tglobal_attention(tape, q, k, v, gk, gv, &global_valid, rel, self.heads, &spec)?
            }
        };
        Ok((self.o.forward(tape, store, a)?, pairs))
    }

    /// Causal attention for new rows `x_new`, appending their keys and values
    /// to `cache`. Rows produced this way equal the rows of a full forward.
    pub fn forward_cached<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x_new: Var,
        cache: &mut LayerKv<T>,
    ) -> Result<(Var, u64)> {
        if self.kind != (SelfAttnKind::Full { causal: true }) {
            return Err(AttentionError::Config("only causal full attention supports caching".into()));
        }
        let offset = cache.len();
        let q = self.q.forward(tape, store, x_new)?;
        let k = self.k.forward(tape, store, x_new)?;
        let v = self.v.forward(tape, store, x_new)?;
        cache.k.append_rows(tape.value(k).data())?;
        cache.v.append_rows(tape.value(v).data())?;
        let k_all = tape.constant(cache.k.clone());
        let v_all = tape.constant(cache.v.clone());
        let rel = self.rel(tape, store);
        let mask = FullMask {
            causal: true,
            q_offset: offset,
            ..FullMask::default()
        };
        let (a, pairs) = full_attention(tape, q, k_all, v_all, rel, self.heads, &mask)?;
        Ok((self.o.forward(tape, store, a)?, pairs))
    }
}

/// Projected encoder memory for cross-attention.
#[derive(Clone, Debug)]
pub struct MemoryKv<T> {
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    pub valid: Vec<bool>,
}

impl<T: Float> MemoryKv<T> {
    pub fn num_floats(&self) -> usize {
        self.k.len() + self.v.len()
    }
}

/// Decoder-to-encoder attention.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl CrossAttention {
    pub fn new<T: Float>(store: &mut ParamStore<T>, init: &mut Init, name: &str, d: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(AttentionError::Config(format!("d_model {d} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, init, &format!("{name}.q"), d, d, true)?,
            k: Linear::new(store, init, &format!("{name}.k"), d, d, true)?,
            v: Linear::new(store, init, &format!("{name}.v"), d, d, true)?,
            o: Linear::new(store, init, &format!("{name}.o"), d, d, true)?,
            heads,
        })
    }

    pub fn project<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, memory: Var) -> Result<(Var, Var)> {
        Ok((self.k.forward(tape, store, memory)?, self.v.forward(tape, store, memory)?))
    }

    pub fn attend<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        k: Var,
        v: Var,
        memory_valid: &[bool],
    ) -> Result<(Var, u64)> {
        let q = self.q.forward(tape, store, x)?;
        let mask = FullMask {
            key_valid: Some(memory_valid.to_vec()),
            ..FullMask::default()
        };
        let (a, pairs) = full_attention(tape, q, k, v, None, self.heads, &mask)?;
        Ok((self.o.forward(tape, store, a)?, pairs))
    }

    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        memory: Var,
        memory_valid: &[bool],
    ) -> Result<(Var, u64)> {
        let (k, v) = self.project(tape, store, memory)?;
        self.attend(tape, store, x, k, v, memory_valid)
    }
}

/// Residual chunked cross-attention block: `x + Wo · cca(ln(x), neighbors)`.
/// `Wo` starts at zero and has no bias, so a freshly inserted block is the
/// identity.
#[derive(Clone, Debug)]
pub struct ChunkedCrossAttention {
    pub ln: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub pos_bias: ParamId,
    pub heads: usize,
    pub chunk_size: usize,
    pub num_neighbors: usize,
    pub neighbor_len: usize,
    pub alignment: CcaAlignment,
}

impl ChunkedCrossAttention {
    pub fn new<T: Float>(store: &mut ParamStore<T>, init: &mut Init, name: &str, cfg: &AttentionConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        Ok(Self {
            ln: LayerNorm::new(store, &format!("{name}.ln"), d)?,
            q: Linear::new(store, init, &format!("{name}.q"), d, d, true)?,
            k: Linear::new(store, init, &format!("{name}.k"), d, d, true)?,
            v: Linear::new(store, init, &format!("{name}.v"), d, d, true)?,
            o: Linear::zeros(store, &format!("{name}.o"), d, d, false)?,
            pos_bias: store.add(format!("{name}.pos_bias"), Tensor::zeros(&[cfg.heads, 2 * cfg.m]))?,
            heads: cfg.heads,
            chunk_size: cfg.m,
            num_neighbors: cfg.num_neighbors,
            neighbor_len: cfg.neighbor_len(),
            alignment: cfg.cca_alignment,
        })
    }

    pub fn layout(&self, q_offset: usize, chunk_valid: &[bool], key_valid: &[bool]) -> CcaLayout {
        CcaLayout {
            chunk_size: self.chunk_size,
            num_neighbors: self.num_neighbors,
            neighbor_len: self.neighbor_len,
            alignment: self.alignment,
            q_offset,
            chunk_valid: chunk_valid.to_vec(),
            key_valid: key_valid.to_vec(),
        }
    }

    /// Keys and values for encoded neighbor states.
    pub fn project<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, states: Var) -> Result<(Var, Var)> {
        Ok((self.k.forward(tape, store, states)?, self.v.forward(tape, store, states)?))
    }

    /// Returns the updated residual stream and the pairs scored.
    pub fn attend<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        k: Var,
        v: Var,
        layout: &CcaLayout,
    ) -> Result<(Var, u64)> {
        let h = self.ln.forward(tape, store, x)?;
        let q = self.q.forward(tape, store, h)?;
        let bias = tape.param(store, self.pos_bias);
        let (a, pairs) = chunked_cross_attention_kernel(tape, q, k, v, Some(bias), self.heads, layout)?;
        let out = self.o.forward(tape, store, a)?;
        Ok((tape.add(x, out)?, pairs))
    }
}
