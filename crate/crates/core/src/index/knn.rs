use std::cmp::Ordering;

use super::IndexError;

pub(crate) fn score(row: &[f32], q: &[f32]) -> f32 {
    row.iter().zip(q).map(|(a, b)| a * b).sum()
}

/// Descending score, then ascending index.
pub(crate) fn rank(a: &(usize, f32), b: &(usize, f32)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Scores every row of the row-major `rows` (`len/d` rows) against `q` and
/// returns the best `k` by a full sort.
pub fn brute_force_knn(rows: &[f32], d: usize, q: &[f32], k: usize) -> Result<Vec<(usize, f32)>, IndexError> {
    if q.len() != d || (d > 0 && !rows.len().is_multiple_of(d)) {
        return Err(IndexError::Dimension { index: d, query: q.len() });
    }
    let mut all: Vec<(usize, f32)> = rows.chunks(d).map(|r| score(r, q)).enumerate().collect();
    all.sort_by(rank);
    all.truncate(k);
    Ok(all)
}

/// Bounded selection of the best `k` rows.
pub(crate) fn top_k(rows: &[f32], d: usize, q: &[f32], k: usize) -> Vec<(usize, f32)> {
    let mut best: Vec<(usize, f32)> = Vec::with_capacity(k + 1);
    for (i, r) in rows.chunks(d).enumerate() {
        let cand = (i, score(r, q));
        if best.len() == k && rank(&cand, &best[k - 1]) != Ordering::Less {
            continue;
        }
        let pos = best.partition_point(|b| rank(b, &cand) == Ordering::Less);
        best.insert(pos, cand);
        best.truncate(k);
    }
    best
}
