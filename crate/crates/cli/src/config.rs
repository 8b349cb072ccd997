use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use retrosum::model::{GenerateOptions, ModelConfig, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory holding `train`, `val` and `test` JSON-lines files.
    pub corpus: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    /// Directory of per-document index files.
    pub indexes: Option<PathBuf>,
    /// Model checkpoint read by `build-index`, `generate` and retro-fit training.
    pub checkpoint: Option<PathBuf>,
    /// Training checkpoint to resume from.
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Subset {
    pub fraction: f64,
    pub seed: u64,
}

impl Default for Subset {
    fn default() -> Self {
        Self { fraction: 1.0, seed: 0 }
    }
}

/// Everything a run depends on. The snapshot written to `run.json` is the
/// fully resolved value of this struct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub subset: Subset,
    pub generate: GenerateOptions,
    pub vocab_size: usize,
    /// Skip malformed corpus records instead of failing.
    pub lenient: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            subset: Subset::default(),
            generate: GenerateOptions::default(),
            vocab_size: 4096,
            lenient: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies `key.path=value` overrides. Values are parsed as JSON and fall
    /// back to plain strings.
    pub fn with_overrides(self, sets: &[String]) -> Result<Self> {
        if sets.is_empty() {
            return Ok(self);
        }
        let mut root = serde_json::to_value(&self)?;
        for set in sets {
            let (key, raw) = set
                .split_once('=')
                .with_context(|| format!("override `{set}` is not key=value"))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut root;
            for part in key.split('.') {
                slot = match slot {
                    Value::Object(map) if map.contains_key(part) => map.get_mut(part).unwrap(),
                    _ => bail!("unknown config key `{key}`"),
                };
            }
            *slot = value;
        }
        serde_json::from_value(root).context("applying overrides")
    }

    /// One root seed for every random stream of the run.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.subset.seed = seed;
        self.generate.seed = seed;
    }

    pub fn corpus_dir(&self) -> Result<&Path> {
        self.paths.corpus.as_deref().context("no corpus directory (paths.corpus or --corpus)")
    }

    pub fn tokenizer_path(&self) -> Result<&Path> {
        self.paths.tokenizer.as_deref().context("no tokenizer (paths.tokenizer or --tokenizer)")
    }

    pub fn checkpoint_path(&self) -> Result<&Path> {
        self.paths.checkpoint.as_deref().context("no checkpoint (paths.checkpoint or --checkpoint)")
    }
}
