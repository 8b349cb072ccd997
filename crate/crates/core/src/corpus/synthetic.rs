//! Generated corpora for experiments that need a known answer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::document::Document;

const FUNCTION_WORDS: [&str; 16] = [
    "the", "of", "and", "in", "we", "is", "a", "to", "for", "with", "that", "on", "by", "as", "this", "are",
];
const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Distinct pronounceable nonsense words.
pub fn word_pool(size: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let syllables = rng.gen_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(&mut rng).unwrap(), VOWELS.choose(&mut rng).unwrap()))
            .collect();
        if !FUNCTION_WORDS.contains(&w.as_str()) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn sentence(rng: &mut ChaCha8Rng, topic: &[String], len: usize) -> String {
    let mut words: Vec<&str> = (0..len)
        .map(|_| {
            if rng.gen_bool(0.3) {
                *FUNCTION_WORDS.choose(rng).unwrap()
            } else {
                topic.choose(rng).unwrap().as_str()
            }
        })
        .collect();
    let last = words.pop().unwrap_or("");
    let mut s = words.join(" ");
    if !s.is_empty() {
        s.push(' ');
    }
    s + last + "."
}

#[derive(Clone, Debug)]
pub struct CopyTaskConfig {
    pub docs: usize,
    /// Size of the shared nonsense-word pool.
    pub pool: usize,
    /// Words drawn from the pool for each document.
    pub topic_words: usize,
    pub body_sentences: usize,
    pub abstract_sentences: usize,
    pub sentence_len: (usize, usize),
    pub title_words: usize,
    pub seed: u64,
}

impl Default for CopyTaskConfig {
    fn default() -> Self {
        Self {
            docs: 64,
            pool: 400,
            topic_words: 24,
            body_sentences: 24,
            abstract_sentences: 3,
            sentence_len: (6, 9),
            title_words: 3,
            seed: 17,
        }
    }
}

/// Documents whose abstract is a contiguous run of body sentences and whose
/// title is a few content words of the abstract's first sentence.
pub fn copy_task(cfg: &CopyTaskConfig) -> Vec<Document> {
    let pool = word_pool(cfg.pool, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    (0..cfg.docs)
        .map(|i| {
            let topic: Vec<String> = pool.choose_multiple(&mut rng, cfg.topic_words).cloned().collect();
            let body: Vec<String> = (0..cfg.body_sentences)
                .map(|_| {
                    let len = rng.gen_range(cfg.sentence_len.0..=cfg.sentence_len.1);
                    sentence(&mut rng, &topic, len)
                })
                .collect();
            let start = rng.gen_range(0..=cfg.body_sentences - cfg.abstract_sentences);
            let abstract_sentences = body[start..start + cfg.abstract_sentences].to_vec();
            let mut title_words: Vec<&str> = Vec::new();
            for w in abstract_sentences[0].split_whitespace() {
                if topic.iter().any(|t| t == w) && !title_words.contains(&w) && title_words.len() < cfg.title_words {
                    title_words.push(w);
                }
            }
            Document {
                article_id: format!("copy-{i:03}"),
                title: title_words.join(" "),
                abstract_sentences,
                body_sentences: body.clone(),
                section_names: vec!["body".into()],
                sections: vec![body],
            }
        })
        .collect()
}

/// A document with roughly `words` body words, for scaling experiments.
pub fn long_document(id: &str, words: usize, seed: u64) -> Document {
    let pool = word_pool(200, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut body = Vec::new();
    let mut total = 0;
    while total < words {
        let len = rng.gen_range(6..=12).min(words - total).max(1);
        body.push(sentence(&mut rng, &pool, len));
        total += len;
    }
    let abstract_sentences = body.iter().take(2).cloned().collect();
    Document {
        article_id: id.to_string(),
        title: pool[..3].join(" "),
        abstract_sentences,
        body_sentences: body.clone(),
        section_names: vec!["body".into()],
        sections: vec![body],
    }
}
