use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::text::Tokenizer;

use super::document::Document;
use super::load::Split;
use super::CorpusError;

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub example_count: BTreeMap<String, usize>,
    pub avg_input_words: f64,
    pub avg_output_words: f64,
    pub avg_input_tokens: Option<f64>,
    pub avg_output_tokens: Option<f64>,
    pub tokenizer: Option<String>,
}

/// Averages over every document of every split. Token averages are only
/// computed when a tokenizer is supplied.
pub fn compute_stats(splits: &[(Split, &[Document])], tokenizer: Option<&Tokenizer>) -> Result<CorpusStats, CorpusError> {
    let docs: Vec<&Document> = splits.iter().flat_map(|(_, d)| d.iter()).collect();
    if docs.is_empty() {
        return Err(CorpusError::Empty);
    }
    let per_doc: Vec<[usize; 4]> = docs
        .par_iter()
        .map(|d| {
            let body = d.body_text();
            let abs = d.abstract_text();
            let (bt, at) = tokenizer.map_or((0, 0), |t| (t.encode(&body).len(), t.encode(&abs).len()));
            [word_count(&body), word_count(&abs), bt, at]
        })
        .collect();
    let n = docs.len() as f64;
    let mean = |k: usize| per_doc.iter().map(|c| c[k] as f64).sum::<f64>() / n;
    let mut example_count = BTreeMap::new();
    for (s, d) in splits {
        *example_count.entry(s.to_string()).or_default() += d.len();
    }
    Ok(CorpusStats {
        example_count,
        avg_input_words: mean(0),
        avg_output_words: mean(1),
        avg_input_tokens: tokenizer.map(|_| mean(2)),
        avg_output_tokens: tokenizer.map(|_| mean(3)),
        tokenizer: tokenizer.map(Tokenizer::identity),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.1}"))
}

impl CorpusStats {
    pub const CSV_HEADER: &'static str =
        "train,val,test,avg_input_words,avg_input_tokens,avg_output_words,avg_output_tokens,tokenizer";

    fn count(&self, s: Split) -> usize {
        self.example_count.get(s.as_str()).copied().unwrap_or(0)
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{:.1},{},{:.1},{},{}",
            self.count(Split::Train),
            self.count(Split::Val),
            self.count(Split::Test),
            self.avg_input_words,
            opt(self.avg_input_tokens),
            self.avg_output_words,
            opt(self.avg_output_tokens),
            self.tokenizer.as_deref().unwrap_or("none"),
        )
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for split in Split::ALL {
            s += &format!("{:<20}{:>12}\n", format!("# {split} examples"), self.count(split));
        }
        s += &format!("{:<20}{:>12.1}\n", "avg input words", self.avg_input_words);
        s += &format!("{:<20}{:>12}\n", "avg input tokens", opt(self.avg_input_tokens));
        s += &format!("{:<20}{:>12.1}\n", "avg output words", self.avg_output_words);
        s += &format!("{:<20}{:>12}\n", "avg output tokens", opt(self.avg_output_tokens));
        if let Some(t) = &self.tokenizer {
            s += &format!("{:<20}{:>12}\n", "tokenizer", t);
        }
        s
    }
}
