use std::collections::HashMap;

use super::error::{NnError, Result};
use super::float::Float;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Computes input gradients from the output gradient. Returned pairs name the
/// input each gradient belongs to.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &BackCtx<'_, T>) -> Vec<(Var, Tensor<T>)>>;

struct Node<T> {
    value: Tensor<T>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Read-only view of recorded values handed to backward closures.
pub struct BackCtx<'a, T> {
    nodes: &'a [Node<T>],
}

impl<T: Float> BackCtx<'_, T> {
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Whether `v` wants a gradient at all.
    pub fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

/// Reverse-mode differentiation tape.
///
/// Values are recorded in creation order; `backward` walks them in reverse.
/// Nodes that do not depend on any gradient-requiring leaf keep no backward
/// closure, so frozen sub-graphs cost nothing in the backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    param_vars: HashMap<ParamId, Var>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            param_vars: HashMap::new(),
        }
    }

    /// A tape that never records backward closures.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        self.nodes.push(Node {
            value,
            backward: None,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Places a parameter on the tape once; later calls return the same var.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.leaf(p.value.clone(), p.trainable);
        self.nodes[v.0].param = Some(id);
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push<F>(&mut self, op: &'static str, value: Tensor<T>, inputs: &[Var], backward: F) -> Var
    where
        F: Fn(&Tensor<T>, &BackCtx<'_, T>) -> Vec<(Var, Tensor<T>)> + 'static,
    {
        #[cfg(debug_assertions)]
        if !value.all_finite() {
            panic!("non-finite value produced by `{op}`");
        }
        let _ = op;
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let backward: Option<BackwardFn<T>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.nodes.push(Node {
            value,
            backward,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Backpropagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(NnError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::ones(lv.shape()));
        }
        let ctx = BackCtx { nodes: &self.nodes };
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            for (input, gi) in bw(&g, &ctx) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        let params = self
            .param_vars
            .iter()
            .map(|(&id, &v)| (id, v))
            .filter(|(_, v)| self.nodes[v.0].requires_grad)
            .collect();
        Ok(Grads { grads, params })
    }
}

/// Gradients produced by [`Tape::backward`]; only leaves keep theirs.
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Float> Grads<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of trainable parameters reached from the loss.
    pub fn into_param_grads(mut self) -> ParamGrads<T> {
        let mut map = HashMap::new();
        for (id, v) in self.params {
            if let Some(g) = self.grads[v.0].take() {
                map.insert(id, g);
            }
        }
        ParamGrads { map }
    }
}

/// Per-parameter gradients, summable across micro-batches.
#[derive(Clone, Debug, Default)]
pub struct ParamGrads<T> {
    map: HashMap<ParamId, Tensor<T>>,
}

impl<T: Float> ParamGrads<T> {
    pub fn new() -> Self {
        Self { map: HashMap::new() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.map.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor<T>) {
        self.map.insert(id, grad);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.map.keys().copied()
    }

    /// `self += other`.
    pub fn accumulate(&mut self, other: ParamGrads<T>) {
        for (id, g) in other.map {
            match self.map.get_mut(&id) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    self.map.insert(id, g);
                }
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.map.values_mut() {
            g.scale_assign(s);
        }
    }
}
