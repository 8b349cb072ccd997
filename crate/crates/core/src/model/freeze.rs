use glob::Pattern;

use crate::nn::{Float, ParamStore};

use super::ModelError;

/// Parameter-name patterns that stay trainable; every other parameter is
/// frozen.
#[derive(Clone, Debug)]
pub struct FreezeMask {
    patterns: Vec<Pattern>,
}

impl FreezeMask {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, ModelError> {
        let patterns = patterns
            .iter()
            .map(|p| Pattern::new(p.as_ref()).map_err(|e| ModelError::Config(format!("pattern `{}`: {e}", p.as_ref()))))
            .collect::<Result<_, _>>()?;
        Ok(Self { patterns })
    }

    pub fn all() -> Self {
        Self::new(&["*"]).unwrap()
    }

    /// Neighbor encoder and chunked cross-attention blocks only.
    pub fn retrofit() -> Self {
        Self::new(&["neighbor_encoder.*", "decoder.layers.*.cca.*"]).unwrap()
    }

    pub fn patterns(&self) -> Vec<String> {
        self.patterns.iter().map(|p| p.as_str().to_string()).collect()
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.patterns.iter().any(|p| p.matches(name))
    }

    pub fn apply<T: Float>(&self, store: &mut ParamStore<T>) {
        for (_, p) in store.iter_mut() {
            p.trainable = self.is_trainable(&p.name);
        }
    }
}
