use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;

use super::rouge::{rouge_l, rouge_n, words, RougeScore};
use super::EvalError;

/// One generated summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub article_id: String,
    pub prediction: String,
}

pub fn read_predictions(text: &str) -> Result<Vec<Prediction>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocScore {
    pub article_id: String,
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_doc: Vec<DocScore>,
    /// Mean F1 × 100.
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

/// Scores each prediction against its document's abstract.
pub fn evaluate_corpus(predictions: &[Prediction], references: &[Document]) -> Result<EvalReport, EvalError> {
    let refs: HashMap<&str, &Document> = references.iter().map(|d| (d.article_id.as_str(), d)).collect();
    let missing: Vec<String> = predictions
        .iter()
        .filter(|p| !refs.contains_key(p.article_id.as_str()))
        .map(|p| p.article_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::UnmatchedIds(missing));
    }
    let per_doc: Vec<DocScore> = predictions
        .par_iter()
        .map(|p| {
            let cand = words(&p.prediction);
            let reference = words(&refs[p.article_id.as_str()].abstract_text());
            DocScore {
                article_id: p.article_id.clone(),
                r1: rouge_n(&cand, &reference, 1).unwrap(),
                r2: rouge_n(&cand, &reference, 2).unwrap(),
                rl: rouge_l(&cand, &reference),
            }
        })
        .collect();
    let n = per_doc.len().max(1) as f64;
    let mean = |f: fn(&DocScore) -> f64| per_doc.iter().map(f).sum::<f64>() / n * 100.0;
    Ok(EvalReport {
        r1: mean(|d| d.r1.f1),
        r2: mean(|d| d.r2.f1),
        rl: mean(|d| d.rl.f1),
        per_doc,
    })
}

impl EvalReport {
    pub fn count(&self) -> usize {
        self.per_doc.len()
    }

    /// `article_id,r1,r2,rl` rows (F1 × 100) followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("article_id,r1,r2,rl\n");
        for d in &self.per_doc {
            s += &format!(
                "{},{:.4},{:.4},{:.4}\n",
                d.article_id,
                d.r1.f1 * 100.0,
                d.r2.f1 * 100.0,
                d.rl.f1 * 100.0
            );
        }
        s += &format!("mean,{:.4},{:.4},{:.4}\n", self.r1, self.r2, self.rl);
        s
    }

    pub fn to_table(&self) -> String {
        format!(
            "ROUGE F1 x 100 over {} documents (summary-level LCS, no stemming)\n{:>8} {:>8} {:>8} {:>10}\n{:>8.2} {:>8.2} {:>8.2} {:>10}\n",
            self.count(),
            "R-1",
            "R-2",
            "R-L",
            "BERTScore",
            self.r1,
            self.r2,
            self.rl,
            "n/a"
        )
    }
}
