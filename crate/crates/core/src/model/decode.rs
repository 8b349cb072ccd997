use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Argmax; ties go to the lowest id.
    #[default]
    Greedy,
    /// Sample from the `k` highest logits.
    TopK(usize),
    /// Sample from `softmax(logits / τ)`.
    Temperature(f64),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Greedy => f.write_str("greedy"),
            Self::TopK(k) => write!(f, "topk:{k}"),
            Self::Temperature(t) => write!(f, "temperature:{t}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = ModelError;

    /// `greedy`, `topk:K`, or `temperature:T`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::Config(format!("unknown decoding strategy `{s}`"));
        match s.split_once(':') {
            None if s == "greedy" => Ok(Self::Greedy),
            Some(("topk", k)) => match k.parse() {
                Ok(k) if k > 0 => Ok(Self::TopK(k)),
                _ => Err(bad()),
            },
            Some(("temperature", t)) => match t.parse::<f64>() {
                Ok(t) if t > 0.0 && t.is_finite() => Ok(Self::Temperature(t)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Draws from `softmax(scaled)` over `ids`.
fn sample<R: Rng>(ids: &[usize], scaled: &[f64], rng: &mut R) -> u32 {
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (&id, &w) in ids.iter().zip(&weights) {
        if u < w {
            return id as u32;
        }
        u -= w;
    }
    ids[weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)] as u32
}

/// Picks the next token from one row of logits.
pub fn decode_strategy<R: Rng>(logits: &[f32], strategy: Strategy, rng: &mut R) -> u32 {
    assert!(!logits.is_empty(), "empty logits");
    match strategy {
        Strategy::Greedy => argmax(logits),
        Strategy::TopK(k) => {
            let mut order: Vec<usize> = (0..logits.len()).collect();
            order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
            order.truncate(k.max(1));
            let scaled: Vec<f64> = order.iter().map(|&i| logits[i] as f64).collect();
            sample(&order, &scaled, rng)
        }
        Strategy::Temperature(t) => {
            let ids: Vec<usize> = (0..logits.len()).collect();
            let scaled: Vec<f64> = logits.iter().map(|&v| v as f64 / t).collect();
            sample(&ids, &scaled, rng)
        }
    }
}
