//! Parameterized building blocks. Each layer only holds parameter handles;
//! values live in a [`ParamStore`].

use super::error::Result;
use super::float::Float;
use super::params::{Init, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `y = x·W + b` with `W` stored as `in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let std = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), init.normal(&[fan_in, fan_out], std))?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    /// Same shape, weights and bias all zero.
    pub fn zeros<T: Float>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[fan_in, fan_out]))?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }

    pub fn num_params(&self) -> usize {
        self.fan_in * self.fan_out + if self.bias.is_some() { self.fan_out } else { 0 }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[dim]))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<T: Float>(store: &mut ParamStore<T>, init: &mut Init, name: &str, vocab: usize, dim: usize) -> Result<Self> {
        let table = store.add(format!("{name}.weight"), init.normal(&[vocab, dim], 1.0))?;
        Ok(Self { table, vocab, dim })
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, ids: &[u32]) -> Result<Var> {
        let t = tape.param(store, self.table);
        tape.embedding(t, ids)
    }
}

/// Two-layer GELU MLP.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new<T: Float>(store: &mut ParamStore<T>, init: &mut Init, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, init, &format!("{name}.fc1"), dim, hidden, true)?,
            fc2: Linear::new(store, init, &format!("{name}.fc2"), hidden, dim, true)?,
        })
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, store, h)
    }
}
