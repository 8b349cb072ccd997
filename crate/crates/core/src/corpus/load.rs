use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::document::{parse_record, Document};
use super::CorpusError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// Locates a split inside a dataset directory: `<split>.txt` (the public
/// release's naming) or `<split>.jsonl`.
pub fn split_path(dir: &Path, split: Split) -> Option<PathBuf> {
    ["txt", "jsonl"]
        .iter()
        .map(|ext| dir.join(format!("{split}.{ext}")))
        .find(|p| p.is_file())
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Skip (and log) malformed records instead of failing.
    pub lenient: bool,
}

#[derive(Clone, Debug)]
pub struct LoadedSplit {
    pub split: Split,
    pub documents: Vec<Document>,
    pub skipped: usize,
}

/// Parses JSON-lines text. Blank lines are ignored.
pub fn read_documents(text: &str, opts: LoadOptions) -> Result<(Vec<Document>, usize), CorpusError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    let parsed: Vec<Result<Document, CorpusError>> =
        lines.par_iter().map(|&(n, l)| parse_record(l.as_bytes(), n)).collect();
    let mut docs = Vec::with_capacity(parsed.len());
    let mut seen = HashSet::new();
    let mut skipped = 0;
    for r in parsed {
        let err = match r {
            Ok(d) if seen.insert(d.article_id.clone()) => {
                docs.push(d);
                continue;
            }
            Ok(d) => CorpusError::DuplicateId(d.article_id),
            Err(e) => e,
        };
        if !opts.lenient {
            return Err(err);
        }
        log::warn!("skipping record: {err}");
        skipped += 1;
    }
    Ok((docs, skipped))
}

pub fn load_split(path: &Path, split: Split, opts: LoadOptions) -> Result<LoadedSplit, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (documents, skipped) = read_documents(&text, opts)?;
    log::info!("{split}: {} documents from {}", documents.len(), path.display());
    Ok(LoadedSplit {
        split,
        documents,
        skipped,
    })
}

/// Seeded uniform sample of `round(fraction · n)` documents, kept in their
/// original order.
pub fn sample_subset(docs: &[Document], fraction: f64, seed: u64) -> Result<Vec<Document>, CorpusError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(CorpusError::Invalid(format!("subset fraction {fraction} outside [0, 1]")));
    }
    let amount = (fraction * docs.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, docs.len(), amount).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| docs[i].clone()).collect())
}
