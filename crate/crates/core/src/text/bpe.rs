use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::cmp::Reverse;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Source, TextError, TokenSeq};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
/// Separates the title prompt from the summary.
pub const SEP: u32 = 4;
/// Ids below this are reserved for special tokens; byte `b` is `NUM_RESERVED + b`.
pub const NUM_RESERVED: u32 = 8;
pub const FORMAT_VERSION: u32 = 1;

const SPECIAL_NAMES: [&str; 5] = ["<pad>", "<s>", "</s>", "<unk>", "<sep>"];

/// Byte-level BPE. Merges never cross word pieces, where a piece is a run of
/// whitespace followed by a run of non-whitespace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    pieces: Vec<Vec<u8>>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    format_version: u32,
    kind: String,
    vocab_size: usize,
    merges: Vec<(u32, u32)>,
}

fn pieces(text: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= text.len() {
            return None;
        }
        let mut i = start;
        while i < text.len() && text[i].is_ascii_whitespace() {
            i += 1;
        }
        while i < text.len() && !text[i].is_ascii_whitespace() {
            i += 1;
        }
        let piece = &text[start..i];
        start = i;
        Some(piece)
    })
}

fn byte_ids(piece: &[u8]) -> Vec<u32> {
    piece.iter().map(|&b| NUM_RESERVED + b as u32).collect()
}

/// Learns merges from `corpus` until the vocabulary reaches `vocab_size` or
/// no pair occurs twice. The most frequent pair is merged first; ties go to
/// the smallest `(left, right)` id pair.
pub fn train_tokenizer<I, S>(corpus: I, vocab_size: usize) -> Result<Tokenizer, TextError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let min = NUM_RESERVED as usize + 256;
    if vocab_size < min {
        return Err(TextError::VocabTooSmall { got: vocab_size, min });
    }
    let mut counts: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for text in corpus {
        for p in pieces(text.as_ref().as_bytes()) {
            *counts.entry(p.to_vec()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    let mut words: Vec<Vec<u32>> = Vec::with_capacity(counts.len());
    let mut freq: Vec<u64> = Vec::with_capacity(counts.len());
    for (p, c) in counts {
        words.push(byte_ids(&p));
        freq.push(c);
    }

    let mut pair_count: HashMap<(u32, u32), u64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (w, ids) in words.iter().enumerate() {
        for pair in ids.windows(2) {
            let key = (pair[0], pair[1]);
            *pair_count.entry(key).or_default() += freq[w];
            where_.entry(key).or_default().insert(w);
        }
    }
    let mut heap: BinaryHeap<(u64, Reverse<(u32, u32)>)> =
        pair_count.iter().map(|(&p, &c)| (c, Reverse(p))).collect();

    let mut merges = Vec::new();
    let mut next_id = min as u32;
    while (next_id as usize) < vocab_size {
        let Some((c, Reverse(pair))) = heap.pop() else {
            break;
        };
        if pair_count.get(&pair).copied() != Some(c) {
            continue;
        }
        if c < 2 {
            break;
        }
        let new_id = next_id;
        next_id += 1;
        merges.push(pair);
        let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        let mut touched = HashSet::new();
        for w in affected {
            let ids = &words[w];
            for p in ids.windows(2) {
                let key = (p[0], p[1]);
                let e = pair_count.get_mut(&key).unwrap();
                *e -= freq[w];
                touched.insert(key);
                if let Some(set) = where_.get_mut(&key) {
                    set.remove(&w);
                }
            }
            let merged = apply_merge(ids, pair, new_id);
            for p in merged.windows(2) {
                let key = (p[0], p[1]);
                *pair_count.entry(key).or_default() += freq[w];
                where_.entry(key).or_default().insert(w);
                touched.insert(key);
            }
            words[w] = merged;
        }
        pair_count.remove(&pair);
        for key in touched {
            match pair_count.get(&key) {
                Some(0) => {
                    pair_count.remove(&key);
                }
                Some(&c) if key != pair => heap.push((c, Reverse(key))),
                _ => {}
            }
        }
    }
    Ok(Tokenizer::from_merges(merges))
}

fn apply_merge(ids: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

impl Tokenizer {
    fn from_merges(merges: Vec<(u32, u32)>) -> Self {
        let base = NUM_RESERVED + 256;
        let mut pieces: Vec<Vec<u8>> = (0..NUM_RESERVED)
            .map(|i| SPECIAL_NAMES.get(i as usize).map_or_else(Vec::new, |s| s.as_bytes().to_vec()))
            .collect();
        pieces.extend((0..=255u8).map(|b| vec![b]));
        let mut ranks = HashMap::with_capacity(merges.len());
        for (r, &(a, b)) in merges.iter().enumerate() {
            let mut bytes = pieces[a as usize].clone();
            bytes.extend_from_slice(&pieces[b as usize]);
            pieces.push(bytes);
            ranks.insert((a, b), base + r as u32);
        }
        Self { merges, ranks, pieces }
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn is_special(id: u32) -> bool {
        id < NUM_RESERVED
    }

    /// Bytes covered by a token (special tokens map to their display name).
    pub fn piece(&self, id: u32) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    /// Token id for a byte string, if it is a single token.
    pub fn token_id(&self, bytes: &[u8]) -> Option<u32> {
        (NUM_RESERVED as usize..self.pieces.len())
            .find(|&i| self.pieces[i] == bytes)
            .map(|i| i as u32)
    }

    fn encode_piece(&self, piece: &[u8], out: &mut Vec<u32>) {
        let mut ids = byte_ids(piece);
        while ids.len() > 1 {
            let best = ids
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0], p[1])).map(|&id| (id, (p[0], p[1]))))
                .min();
            let Some((new_id, pair)) = best else {
                break;
            };
            ids = apply_merge(&ids, pair, new_id);
        }
        out.extend(ids);
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for p in pieces(text.as_bytes()) {
            self.encode_piece(p, &mut out);
        }
        out
    }

    pub fn tokenize(&self, text: &str, source: Source) -> TokenSeq {
        TokenSeq::new(self.encode(text), source)
    }

    /// Inverse of [`encode`](Self::encode). Special ids are dropped and
    /// invalid UTF-8 is replaced.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            if Self::is_special(id) {
                continue;
            }
            if let Some(p) = self.pieces.get(id as usize) {
                bytes.extend_from_slice(p);
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    pub fn detokenize(&self, seq: &TokenSeq) -> String {
        self.decode(&seq.ids)
    }

    /// Short identifier that changes whenever the merge table does.
    pub fn identity(&self) -> String {
        // FNV-1a over the merge table
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &(a, b) in &self.merges {
            for byte in a.to_le_bytes().into_iter().chain(b.to_le_bytes()) {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        format!("bpe{}-{:016x}", self.vocab_size(), h)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TokenizerFile {
            format_version: FORMAT_VERSION,
            kind: "byte-bpe".into(),
            vocab_size: self.vocab_size(),
            merges: self.merges.clone(),
        })
        .expect("tokenizer serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, TextError> {
        let f: TokenizerFile = serde_json::from_str(s).map_err(|e| TextError::Format(e.to_string()))?;
        if f.format_version != FORMAT_VERSION {
            return Err(TextError::Version {
                found: f.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let base = NUM_RESERVED + 256;
        for (r, &(a, b)) in f.merges.iter().enumerate() {
            let limit = base + r as u32;
            if a >= limit || b >= limit || a < NUM_RESERVED || b < NUM_RESERVED {
                return Err(TextError::Format(format!("merge {r} refers to an undefined token")));
            }
        }
        let t = Self::from_merges(f.merges);
        if t.vocab_size() != f.vocab_size {
            return Err(TextError::Format(format!(
                "declared vocab size {} but merges give {}",
                f.vocab_size,
                t.vocab_size()
            )));
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
