//! Row-wise multi-head attention over an explicit per-query key list.
//!
//! Each kernel describes which keys a query scores via a [`KeyPattern`]; the
//! engine does the scoring, softmax, and value mixing, and counts every
//! (query, key) pair it scores. Backward recomputes probabilities row by row
//! instead of storing them.

use crate::nn::{dot, softmax_in_place, Float};

pub(crate) const NO_BUCKET: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
pub(crate) struct KeyRef {
    /// Which key/value source the key lives in.
    pub src: u8,
    pub row: u32,
    /// Relative-position bias bucket, or [`NO_BUCKET`].
    pub bucket: u32,
}

pub(crate) trait KeyPattern {
    fn row_keys(&self, row: usize, out: &mut Vec<KeyRef>);
}

pub(crate) struct Inputs<'a, T> {
    pub q: &'a [T],
    pub nq: usize,
    pub d: usize,
    pub heads: usize,
    pub keys: Vec<&'a [T]>,
    pub values: Vec<&'a [T]>,
    /// `heads × buckets` bias table.
    pub bias: Option<(&'a [T], usize)>,
}

impl<T: Float> Inputs<'_, T> {
    fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    fn scale(&self) -> T {
        T::one() / T::lit(self.head_dim() as f64).sqrt()
    }

    fn scores(&self, i: usize, h: usize, refs: &[KeyRef], out: &mut Vec<T>) {
        let dh = self.head_dim();
        let d = self.d;
        let scale = self.scale();
        let qh = &self.q[i * d + h * dh..i * d + (h + 1) * dh];
        out.clear();
        for kr in refs {
            let base = kr.row as usize * d + h * dh;
            let kh = &self.keys[kr.src as usize][base..base + dh];
            let mut s = dot(qh, kh) * scale;
            if let (Some((b, nb)), true) = (self.bias, kr.bucket != NO_BUCKET) {
                s += b[h * nb + kr.bucket as usize];
            }
            out.push(s);
        }
        softmax_in_place(out);
    }
}

pub(crate) fn forward<T: Float, P: KeyPattern>(inp: &Inputs<'_, T>, pattern: &P) -> (Vec<T>, u64) {
    let d = inp.d;
    let dh = inp.head_dim();
    let mut out = vec![T::zero(); inp.nq * d];
    let mut pairs = 0u64;
    let mut refs = Vec::new();
    let mut probs = Vec::new();
    for i in 0..inp.nq {
        refs.clear();
        pattern.row_keys(i, &mut refs);
        pairs += refs.len() as u64;
        if refs.is_empty() {
            continue;
        }
        for h in 0..inp.heads {
            inp.scores(i, h, &refs, &mut probs);
            let o = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
            for (kr, &p) in refs.iter().zip(&probs) {
                let base = kr.row as usize * d + h * dh;
                let vh = &inp.values[kr.src as usize][base..base + dh];
                for (ot, &vt) in o.iter_mut().zip(vh) {
                    *ot += p * vt;
                }
            }
        }
    }
    (out, pairs)
}

pub(crate) struct Backward<T> {
    pub dq: Vec<T>,
    pub dkeys: Vec<Vec<T>>,
    pub dvalues: Vec<Vec<T>>,
    pub dbias: Option<Vec<T>>,
}

pub(crate) fn backward<T: Float, P: KeyPattern>(inp: &Inputs<'_, T>, pattern: &P, grad: &[T]) -> Backward<T> {
    let d = inp.d;
    let dh = inp.head_dim();
    let scale = inp.scale();
    let mut dq = vec![T::zero(); inp.nq * d];
    let mut dkeys: Vec<Vec<T>> = inp.keys.iter().map(|k| vec![T::zero(); k.len()]).collect();
    let mut dvalues: Vec<Vec<T>> = inp.values.iter().map(|v| vec![T::zero(); v.len()]).collect();
    let mut dbias = inp.bias.map(|(b, _)| vec![T::zero(); b.len()]);
    let mut refs = Vec::new();
    let mut probs = Vec::new();
    let mut dp = Vec::new();
    for i in 0..inp.nq {
        refs.clear();
        pattern.row_keys(i, &mut refs);
        if refs.is_empty() {
            continue;
        }
        for h in 0..inp.heads {
            inp.scores(i, h, &refs, &mut probs);
            let gh = &grad[i * d + h * dh..i * d + (h + 1) * dh];
            dp.clear();
            for (kr, &p) in refs.iter().zip(&probs) {
                let base = kr.row as usize * d + h * dh;
                let vh = &inp.values[kr.src as usize][base..base + dh];
                dp.push(dot(gh, vh));
                let dv = &mut dvalues[kr.src as usize][base..base + dh];
                for (dvt, &gt) in dv.iter_mut().zip(gh) {
                    *dvt += p * gt;
                }
            }
            let s = dot(&probs, &dp);
            let qh = &inp.q[i * d + h * dh..i * d + (h + 1) * dh];
            for ((kr, &p), &dpj) in refs.iter().zip(&probs).zip(&dp) {
                let ds = p * (dpj - s);
                let base = kr.row as usize * d + h * dh;
                let kh = &inp.keys[kr.src as usize][base..base + dh];
                let dqh = &mut dq[i * d + h * dh..i * d + (h + 1) * dh];
                for (dqt, &kt) in dqh.iter_mut().zip(kh) {
                    *dqt += scale * ds * kt;
                }
                let dk = &mut dkeys[kr.src as usize][base..base + dh];
                for (dkt, &qt) in dk.iter_mut().zip(qh) {
                    *dkt += scale * ds * qt;
                }
                if let (Some(db), Some((_, nb)), true) = (dbias.as_mut(), inp.bias, kr.bucket != NO_BUCKET) {
                    db[h * nb + kr.bucket as usize] += ds;
                }
            }
        }
    }
    Backward {
        dq,
        dkeys,
        dvalues,
        dbias,
    }
}

/// Bucket for a signed key-minus-query offset, clipped to `±max_distance`.
pub fn relative_bucket(delta: isize, max_distance: usize) -> usize {
    let m = max_distance as isize;
    (delta.clamp(-m, m) + m) as usize
}
