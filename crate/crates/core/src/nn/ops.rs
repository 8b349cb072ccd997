//! Differentiable primitives recorded on a [`Tape`].

use rand::Rng;

use super::error::{NnError, Result};
use super::float::Float;
use super::tape::{Tape, Var};
use super::tensor::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};

fn mismatch(op: &'static str, a: &Tensor<impl Float>, b: &Tensor<impl Float>) -> NnError {
    NnError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<T: Float> Tape<T> {
    /// `a[n×k] · b[k×m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2()?;
        let (k2, m) = self.value(b).dims2()?;
        if k != k2 {
            return Err(mismatch("matmul", self.value(a), self.value(b)));
        }
        let mut out = vec![T::zero(); n * m];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        let value = Tensor::matrix(n, m, out)?;
        Ok(self.push("matmul", value, &[a, b], move |g, ctx| {
            let mut res = Vec::new();
            if ctx.needs(a) {
                let mut da = vec![T::zero(); n * k];
                matmul_nt_acc(g.data(), ctx.value(b).data(), &mut da, n, k, m);
                res.push((a, Tensor::new(ctx.value(a).shape().to_vec(), da).unwrap()));
            }
            if ctx.needs(b) {
                let mut db = vec![T::zero(); k * m];
                matmul_tn_acc(ctx.value(a).data(), g.data(), &mut db, n, k, m);
                res.push((b, Tensor::new(ctx.value(b).shape().to_vec(), db).unwrap()));
            }
            res
        }))
    }

    /// `a[n×k] · b[m×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2()?;
        let (m, k2) = self.value(b).dims2()?;
        if k != k2 {
            return Err(mismatch("matmul_nt", self.value(a), self.value(b)));
        }
        let mut out = vec![T::zero(); n * m];
        matmul_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, n, m, k);
        let value = Tensor::matrix(n, m, out)?;
        Ok(self.push("matmul_nt", value, &[a, b], move |g, ctx| {
            let mut res = Vec::new();
            if ctx.needs(a) {
                let mut da = vec![T::zero(); n * k];
                matmul_acc(g.data(), ctx.value(b).data(), &mut da, n, m, k);
                res.push((a, Tensor::new(ctx.value(a).shape().to_vec(), da).unwrap()));
            }
            if ctx.needs(b) {
                let mut db = vec![T::zero(); m * k];
                matmul_tn_acc(g.data(), ctx.value(a).data(), &mut db, n, m, k);
                res.push((b, Tensor::new(ctx.value(b).shape().to_vec(), db).unwrap()));
            }
            res
        }))
    }

    /// `x[n×in] · w[in×out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, fan_in) = self.value(x).dims2()?;
        let (w_in, fan_out) = self.value(w).dims2()?;
        if fan_in != w_in {
            return Err(mismatch("linear", self.value(x), self.value(w)));
        }
        if let Some(b) = b {
            if self.value(b).len() != fan_out {
                return Err(mismatch("linear.bias", self.value(w), self.value(b)));
            }
        }
        let mut out = vec![T::zero(); n * fan_out];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(fan_out) {
                row.copy_from_slice(bias);
            }
        }
        matmul_acc(self.value(x).data(), self.value(w).data(), &mut out, n, fan_in, fan_out);
        let value = Tensor::matrix(n, fan_out, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push("linear", value, &inputs, move |g, ctx| {
            let mut res = Vec::new();
            if ctx.needs(x) {
                let mut dx = vec![T::zero(); n * fan_in];
                matmul_nt_acc(g.data(), ctx.value(w).data(), &mut dx, n, fan_in, fan_out);
                res.push((x, Tensor::new(ctx.value(x).shape().to_vec(), dx).unwrap()));
            }
            if ctx.needs(w) {
                let mut dw = vec![T::zero(); fan_in * fan_out];
                matmul_tn_acc(ctx.value(x).data(), g.data(), &mut dw, n, fan_in, fan_out);
                res.push((w, Tensor::new(ctx.value(w).shape().to_vec(), dw).unwrap()));
            }
            if let Some(b) = b {
                if ctx.needs(b) {
                    let mut db = vec![T::zero(); fan_out];
                    for row in g.data().chunks(fan_out) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    res.push((b, Tensor::new(ctx.value(b).shape().to_vec(), db).unwrap()));
                }
            }
            res
        }))
    }

    /// Adds the vector `b[m]` to every row of `x[n×m]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.value(x).dims2()?;
        if self.value(b).len() != m {
            return Err(mismatch("add_bias", self.value(x), self.value(b)));
        }
        let mut out = self.value(x).data().to_vec();
        let bias = self.value(b).data();
        for row in out.chunks_mut(m.max(1)) {
            for (o, &v) in row.iter_mut().zip(bias) {
                *o += v;
            }
        }
        let value = Tensor::matrix(n, m, out)?;
        Ok(self.push("add_bias", value, &[x, b], move |g, ctx| {
            let mut res = Vec::new();
            if ctx.needs(x) {
                res.push((x, g.clone()));
            }
            if ctx.needs(b) {
                let mut db = vec![T::zero(); m];
                for row in g.data().chunks(m.max(1)) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                res.push((b, Tensor::new(ctx.value(b).shape().to_vec(), db).unwrap()));
            }
            res
        }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch("add", self.value(a), self.value(b)));
        }
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push("add", value, &[a, b], move |g, _| {
            vec![(a, g.clone()), (b, g.clone())]
        }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch("mul", self.value(a), self.value(b)));
        }
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push("mul", value, &[a, b], move |g, ctx| {
            let prod = |t: &Tensor<T>| {
                let d = g.data().iter().zip(t.data()).map(|(&x, &y)| x * y).collect();
                Tensor::new(t.shape().to_vec(), d).unwrap()
            };
            vec![(a, prod(ctx.value(b))), (b, prod(ctx.value(a)))]
        }))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let data = self.value(x).data().iter().map(|&v| v * s).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        self.push("scale", value, &[x], move |g, _| {
            let mut gx = g.clone();
            gx.scale_assign(s);
            vec![(x, gx)]
        })
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: T = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(total), &[x], move |g, ctx| {
            let shape = ctx.value(x).shape().to_vec();
            vec![(x, Tensor::full(&shape, g.item()))]
        })
    }

    /// Sum of several scalars (or same-shaped tensors).
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| NnError::Invalid("add_all of nothing".into()))?;
        let mut acc = first;
        for &x in &xs[1..] {
            acc = self.add(acc, x)?;
        }
        Ok(acc)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let c = T::lit(GELU_C);
        let a = T::lit(GELU_A);
        let half = T::lit(0.5);
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()))
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        self.push("gelu", value, &[x], move |g, ctx| {
            let three = T::lit(3.0);
            let xv = ctx.value(x);
            let d = xv
                .data()
                .iter()
                .zip(g.data())
                .map(|(&v, &gv)| {
                    let t = (c * (v + a * v * v * v)).tanh();
                    let dt = (T::one() - t * t) * c * (T::one() + three * a * v * v);
                    gv * (half * (T::one() + t) + half * v * dt)
                })
                .collect();
            vec![(x, Tensor::new(xv.shape().to_vec(), d).unwrap())]
        })
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(mismatch("layer_norm", self.value(x), self.value(gain)));
        }
        let eps = T::lit(eps);
        let dn = T::lit(d as f64);
        let stats = move |row: &[T]| {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            (mean, T::one() / (var + eps).sqrt())
        };
        let mut out = vec![T::zero(); n * d];
        {
            let xv = self.value(x).data();
            let gv = self.value(gain).data();
            let bv = self.value(bias).data();
            for i in 0..n {
                let row = &xv[i * d..(i + 1) * d];
                let (mean, inv) = stats(row);
                for j in 0..d {
                    out[i * d + j] = (row[j] - mean) * inv * gv[j] + bv[j];
                }
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out)?;
        Ok(self.push("layer_norm", value, &[x, gain, bias], move |g, ctx| {
            let xv = ctx.value(x).data();
            let gv = ctx.value(gain).data();
            let gd = g.data();
            let mut dx = vec![T::zero(); n * d];
            let mut dgain = vec![T::zero(); d];
            let mut dbias = vec![T::zero(); d];
            let mut xhat = vec![T::zero(); d];
            let mut dxhat = vec![T::zero(); d];
            for i in 0..n {
                let row = &xv[i * d..(i + 1) * d];
                let grow = &gd[i * d..(i + 1) * d];
                let (mean, inv) = stats(row);
                for j in 0..d {
                    xhat[j] = (row[j] - mean) * inv;
                    dxhat[j] = grow[j] * gv[j];
                    dgain[j] += grow[j] * xhat[j];
                    dbias[j] += grow[j];
                }
                let mean_d = dxhat.iter().copied().sum::<T>() / dn;
                let mean_dx = dot(&dxhat, &xhat) / dn;
                for j in 0..d {
                    dx[i * d + j] = inv * (dxhat[j] - mean_d - xhat[j] * mean_dx);
                }
            }
            vec![
                (x, Tensor::new(ctx.value(x).shape().to_vec(), dx).unwrap()),
                (gain, Tensor::new(ctx.value(gain).shape().to_vec(), dgain).unwrap()),
                (bias, Tensor::new(ctx.value(bias).shape().to_vec(), dbias).unwrap()),
            ]
        }))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(d.max(1)) {
            softmax_in_place(row);
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out)?;
        Ok(self.push("softmax", value, &[x], move |g, ctx| {
            let xv = ctx.value(x);
            let mut probs = xv.data().to_vec();
            for row in probs.chunks_mut(d.max(1)) {
                softmax_in_place(row);
            }
            let mut dx = vec![T::zero(); n * d];
            for i in 0..n {
                let p = &probs[i * d..(i + 1) * d];
                let gr = &g.data()[i * d..(i + 1) * d];
                let s = dot(p, gr);
                for j in 0..d {
                    dx[i * d + j] = p[j] * (gr[j] - s);
                }
            }
            vec![(x, Tensor::new(xv.shape().to_vec(), dx).unwrap())]
        }))
    }

    /// Gathers rows of `table[V×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (vocab, d) = self.value(table).dims2()?;
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= vocab) {
            return Err(NnError::Invalid(format!(
                "token id {bad} out of range for embedding table of {vocab} rows"
            )));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        {
            let tv = self.value(table);
            for &i in ids {
                out.extend_from_slice(tv.row(i as usize));
            }
        }
        let value = Tensor::matrix(ids.len(), d, out)?;
        let ids = ids.to_vec();
        Ok(self.push("embedding", value, &[table], move |g, _| {
            let mut dt = vec![T::zero(); vocab * d];
            for (r, &i) in ids.iter().enumerate() {
                let i = i as usize;
                for j in 0..d {
                    dt[i * d + j] += g.data()[r * d + j];
                }
            }
            vec![(table, Tensor::matrix(vocab, d, dt).unwrap())]
        }))
    }

    /// Mean token cross-entropy over positions whose target is `Some`.
    /// With no scored positions the loss is zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<u32>]) -> Result<Var> {
        let (n, vocab) = self.value(logits).dims2()?;
        if targets.len() != n {
            return Err(NnError::ShapeMismatch {
                op: "cross_entropy",
                left: self.value(logits).shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t as usize >= vocab) {
            return Err(NnError::Invalid(format!("target {bad} out of range for {vocab} classes")));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        let mut total = T::zero();
        {
            let lv = self.value(logits).data();
            for (i, t) in targets.iter().enumerate() {
                if let Some(t) = t {
                    let row = &lv[i * vocab..(i + 1) * vocab];
                    total += log_sum_exp(row) - row[*t as usize];
                }
            }
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::lit(count as f64)
        };
        let targets = targets.to_vec();
        Ok(self.push("cross_entropy", Tensor::scalar(loss), &[logits], move |g, ctx| {
            let lv = ctx.value(logits).data();
            let mut dl = vec![T::zero(); n * vocab];
            if count > 0 {
                let scale = g.item() / T::lit(count as f64);
                for (i, t) in targets.iter().enumerate() {
                    if let Some(t) = t {
                        let row = &lv[i * vocab..(i + 1) * vocab];
                        let out = &mut dl[i * vocab..(i + 1) * vocab];
                        out.copy_from_slice(row);
                        softmax_in_place(out);
                        out[*t as usize] -= T::one();
                        for v in out.iter_mut() {
                            *v *= scale;
                        }
                    }
                }
            }
            vec![(logits, Tensor::matrix(n, vocab, dl).unwrap())]
        }))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| NnError::Invalid("concat of nothing".into()))?;
        let (_, d) = self.value(first).dims2()?;
        let mut rows = Vec::with_capacity(xs.len());
        let mut data = Vec::new();
        for &x in xs {
            let (r, c) = self.value(x).dims2()?;
            if c != d {
                return Err(mismatch("concat_rows", self.value(first), self.value(x)));
            }
            rows.push(r);
            data.extend_from_slice(self.value(x).data());
        }
        let total: usize = rows.iter().sum();
        let value = Tensor::matrix(total, d, data)?;
        let xs = xs.to_vec();
        Ok(self.push("concat_rows", value, &xs.clone(), move |g, ctx| {
            let mut res = Vec::new();
            let mut start = 0;
            for (&x, &r) in xs.iter().zip(&rows) {
                if ctx.needs(x) {
                    let part = g.data()[start * d..(start + r) * d].to_vec();
                    res.push((x, Tensor::new(ctx.value(x).shape().to_vec(), part).unwrap()));
                }
                start += r;
            }
            res
        }))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if start > end || end > n {
            return Err(NnError::Invalid(format!("row slice {start}..{end} of {n} rows")));
        }
        let data = self.value(x).data()[start * d..end * d].to_vec();
        let value = Tensor::matrix(end - start, d, data)?;
        Ok(self.push("slice_rows", value, &[x], move |g, _| {
            let mut dx = vec![T::zero(); n * d];
            dx[start * d..end * d].copy_from_slice(g.data());
            vec![(x, Tensor::matrix(n, d, dx).unwrap())]
        }))
    }

    /// Inverted dropout. Identity when `p == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data).unwrap();
        self.push("dropout", value, &[x], move |g, _| {
            let d = g.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            vec![(x, Tensor::new(g.shape().to_vec(), d).unwrap())]
        })
    }

    /// Mean of the valid rows inside each consecutive block of `block` rows.
    /// Returns the `ceil(n/block) × d` block means and which blocks had any
    /// valid row (blocks without one are zero).
    pub fn block_mean(&mut self, x: Var, block: usize, valid: &[bool]) -> Result<(Var, Vec<bool>)> {
        let (n, d) = self.value(x).dims2()?;
        if block == 0 {
            return Err(NnError::Invalid("block size must be at least 1".into()));
        }
        if valid.len() != n {
            return Err(NnError::ShapeMismatch {
                op: "block_mean",
                left: vec![n, d],
                right: vec![valid.len()],
            });
        }
        let blocks = n.div_ceil(block);
        let counts: Vec<usize> = (0..blocks)
            .map(|b| valid[b * block..((b + 1) * block).min(n)].iter().filter(|&&v| v).count())
            .collect();
        let mut out = vec![T::zero(); blocks * d];
        {
            let xv = self.value(x).data();
            for i in 0..n {
                if !valid[i] {
                    continue;
                }
                let b = i / block;
                let row = &mut out[b * d..(b + 1) * d];
                for (o, &v) in row.iter_mut().zip(&xv[i * d..(i + 1) * d]) {
                    *o += v;
                }
            }
            for (b, &c) in counts.iter().enumerate() {
                if c > 0 {
                    let inv = T::one() / T::lit(c as f64);
                    for o in &mut out[b * d..(b + 1) * d] {
                        *o *= inv;
                    }
                }
            }
        }
        let value = Tensor::matrix(blocks, d, out)?;
        let block_valid: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
        let valid = valid.to_vec();
        let var = self.push("block_mean", value, &[x], move |g, _| {
            let mut dx = vec![T::zero(); n * d];
            for i in 0..n {
                if !valid[i] {
                    continue;
                }
                let b = i / block;
                let inv = T::one() / T::lit(counts[b] as f64);
                for j in 0..d {
                    dx[i * d + j] = g.data()[b * d + j] * inv;
                }
            }
            vec![(x, Tensor::matrix(n, d, dx).unwrap())]
        });
        Ok((var, block_valid))
    }
}

/// Numerically stable in-place softmax. An empty slice is left untouched.
pub(crate) fn softmax_in_place<T: Float>(row: &mut [T]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn log_sum_exp<T: Float>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}
