use proptest::prelude::*;
use retrosum::attention::{
    chunked_cross_attention_kernel, count_attended_pairs, full_attention, relative_bucket, tglobal_attention,
    AttentionConfig, AttentionError, AttentionKind, CcaAlignment, CcaLayout, ChunkedCrossAttention, FullMask,
    RelBias, SelfAttention, SelfAttnKind, TGlobalSpec,
};
use retrosum::nn::gradcheck::check_gradients;
use retrosum::nn::{Init, NnError, ParamStore, Tape, Tensor, Var};

const GRAD_TOL: f64 = 1e-4;

fn nn(e: AttentionError) -> NnError {
    NnError::Invalid(e.to_string())
}

fn randn(init: &mut Init, rows: usize, d: usize) -> Tensor<f64> {
    init.normal(&[rows, d], 1.0)
}

/// Dense reference: explicit key list per query, optional per-(query,key) bias.
fn oracle(
    q: &[f64],
    keys: &[f64],
    values: &[f64],
    d: usize,
    heads: usize,
    allowed: impl Fn(usize, usize) -> Option<Vec<f64>>,
) -> Vec<f64> {
    let nq = q.len() / d;
    let nk = keys.len() / d;
    let dh = d / heads;
    let mut out = vec![0.0; nq * d];
    for i in 0..nq {
        for h in 0..heads {
            let mut scores = Vec::new();
            let mut idx = Vec::new();
            for j in 0..nk {
                if let Some(bias) = allowed(i, j) {
                    let s: f64 = (0..dh).map(|t| q[i * d + h * dh + t] * keys[j * d + h * dh + t]).sum::<f64>()
                        / (dh as f64).sqrt();
                    scores.push(s + bias[h]);
                    idx.push(j);
                }
            }
            if scores.is_empty() {
                continue;
            }
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
            for (s, &j) in scores.iter().zip(&idx) {
                let p = (s - mx).exp() / z;
                for t in 0..dh {
                    out[i * d + h * dh + t] += p * values[j * d + h * dh + t];
                }
            }
        }
    }
    out
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
    }
}

#[test]
fn relative_bucket_clips() {
    assert_eq!(relative_bucket(0, 3), 3);
    assert_eq!(relative_bucket(-10, 3), 0);
    assert_eq!(relative_bucket(10, 3), 6);
    assert_eq!(relative_bucket(2, 3), 5);
}

#[test]
fn closed_form_examples() {
    let full = AttentionConfig {
        kind: AttentionKind::FullCausal,
        ..AttentionConfig::default()
    };
    assert_eq!(count_attended_pairs(&full, 8, true), 36);
    assert_eq!(count_attended_pairs(&full, 8, false), 64);
    assert_eq!(count_attended_pairs(&full, 4096, false), 16_777_216);
    let tg = AttentionConfig {
        kind: AttentionKind::Tglobal,
        r: 1,
        k: 4,
        ..AttentionConfig::default()
    };
    assert_eq!(count_attended_pairs(&tg, 8, false), 38);
    let tg = AttentionConfig {
        kind: AttentionKind::Tglobal,
        ..AttentionConfig::default()
    };
    assert_eq!(count_attended_pairs(&tg, 4096, false), 2_076_800);
    let cca = AttentionConfig {
        kind: AttentionKind::ChunkedCross,
        ..AttentionConfig::default()
    };
    assert_eq!(count_attended_pairs(&cca, 438, true), 95_744);
}

/// Enumerates the TGlobal mask directly.
fn tglobal_pairs_by_enumeration(n: usize, r: usize, k: usize) -> u64 {
    let mut pairs = 0u64;
    for i in 0..n {
        for j in 0..n {
            if i.abs_diff(j) <= r {
                pairs += 1;
            }
        }
        pairs += n.div_ceil(k) as u64;
    }
    pairs
}

#[test]
fn tglobal_closed_form_matches_enumeration() {
    for n in 1..40 {
        for r in 0..12 {
            for k in 1..9 {
                let cfg = AttentionConfig {
                    kind: AttentionKind::Tglobal,
                    r,
                    k,
                    ..AttentionConfig::default()
                };
                assert_eq!(count_attended_pairs(&cfg, n, false), tglobal_pairs_by_enumeration(n, r, k));
            }
        }
    }
}

fn run_kernel_pairs(cfg: &AttentionConfig, n: usize) -> u64 {
    let d = cfg.d_model;
    let mut init = Init::new(7);
    let mut tape = Tape::<f32>::inference();
    let mut rnd = |tape: &mut Tape<f32>, rows: usize| tape.constant(init.normal(&[rows, d], 1.0));
    let q = rnd(&mut tape, n);
    match cfg.kind {
        AttentionKind::FullCausal => {
            let k = rnd(&mut tape, n);
            let v = rnd(&mut tape, n);
            let mask = FullMask {
                causal: true,
                ..FullMask::default()
            };
            full_attention(&mut tape, q, k, v, None, cfg.heads, &mask).unwrap().1
        }
        AttentionKind::Tglobal => {
            let k = rnd(&mut tape, n);
            let v = rnd(&mut tape, n);
            let g = n.div_ceil(cfg.k);
            let gk = rnd(&mut tape, g);
            let gv = rnd(&mut tape, g);
            let spec = TGlobalSpec {
                radius: cfg.r,
                block: cfg.k,
                valid: None,
            };
            tglobal_attention(&mut tape, q, k, v, gk, gv, &vec![true; g], None, cfg.heads, &spec)
                .unwrap()
                .1
        }
        AttentionKind::ChunkedCross => {
            let chunks = cfg.cca_alignment.chunks_needed(n, cfg.m);
            let rows = chunks * cfg.num_neighbors * cfg.neighbor_len();
            let k = rnd(&mut tape, rows);
            let v = rnd(&mut tape, rows);
            let layout = CcaLayout {
                chunk_size: cfg.m,
                num_neighbors: cfg.num_neighbors,
                neighbor_len: cfg.neighbor_len(),
                alignment: cfg.cca_alignment,
                q_offset: 0,
                chunk_valid: vec![true; chunks],
                key_valid: vec![true; rows],
            };
            chunked_cross_attention_kernel(&mut tape, q, k, v, None, cfg.heads, &layout)
                .unwrap()
                .1
        }
    }
}

#[test]
fn instrumented_pairs_match_closed_form_on_grid() {
    for &n in &[8usize, 64, 256, 1024] {
        for &r in &[1usize, 4, 127] {
            for &k in &[2usize, 4, 16] {
                for kind in AttentionKind::ALL {
                    if kind != AttentionKind::Tglobal && (r, k) != (1, 2) {
                        continue;
                    }
                    let cfg = AttentionConfig {
                        kind,
                        n,
                        r,
                        k,
                        heads: 1,
                        d_model: 2,
                        ..AttentionConfig::default()
                    };
                    assert_eq!(
                        run_kernel_pairs(&cfg, n),
                        count_attended_pairs(&cfg, n, true),
                        "{kind} n={n} r={r} k={k}"
                    );
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn cca_pairs_match_closed_form(
        n in 1usize..60,
        m in 1usize..9,
        neighbors in 1usize..4,
        continuation: bool,
        shifted: bool,
    ) {
        let cfg = AttentionConfig {
            kind: AttentionKind::ChunkedCross,
            m,
            num_neighbors: neighbors,
            neighbor_continuation: continuation,
            cca_alignment: if shifted { CcaAlignment::Shifted } else { CcaAlignment::PerChunk },
            heads: 1,
            d_model: 2,
            ..AttentionConfig::default()
        };
        prop_assert_eq!(run_kernel_pairs(&cfg, n), count_attended_pairs(&cfg, n, true));
    }

    #[test]
    fn full_causal_is_exactly_causal(n in 2usize..12, j in 0usize..12, seed in 0u64..1000) {
        let j = j % n;
        let d = 4;
        let mut init = Init::new(seed);
        let q = randn(&mut init, n, d);
        let k = randn(&mut init, n, d);
        let v = randn(&mut init, n, d);
        let run = |k: &Tensor<f64>, v: &Tensor<f64>| {
            let mut tape = Tape::inference();
            let (q, k, v) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
            let mask = FullMask { causal: true, ..FullMask::default() };
            let (o, _) = full_attention(&mut tape, q, k, v, None, 2, &mask).unwrap();
            tape.value(o).clone()
        };
        let base = run(&k, &v);
        let (mut k2, mut v2) = (k.clone(), v.clone());
        for t in 0..d {
            k2.data_mut()[j * d + t] += 3.0;
            v2.data_mut()[j * d + t] -= 2.0;
        }
        let pert = run(&k2, &v2);
        for i in 0..j {
            prop_assert_eq!(base.row(i), pert.row(i));
        }
    }
}

#[test]
fn single_token_returns_its_value() {
    let mut init = Init::new(1);
    let mut tape = Tape::<f64>::inference();
    let q = tape.constant(randn(&mut init, 1, 4));
    let k = tape.constant(randn(&mut init, 1, 4));
    let vt = randn(&mut init, 1, 4);
    let v = tape.constant(vt.clone());
    let (o, pairs) = full_attention(&mut tape, q, k, v, None, 2, &FullMask::default()).unwrap();
    assert_eq!(pairs, 1);
    assert_close(tape.value(o).data(), vt.data(), 1e-15);
}

#[test]
fn full_attention_matches_oracle_with_bias_and_masks() {
    let (n, d, heads, rmax) = (7, 6, 3, 2);
    let mut init = Init::new(3);
    let q = randn(&mut init, n, d);
    let k = randn(&mut init, n, d);
    let v = randn(&mut init, n, d);
    let bias = randn(&mut init, heads, 2 * rmax + 1);
    let key_valid = vec![true, true, false, true, true, true, false];
    let mut tape = Tape::<f64>::inference();
    let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let table = tape.constant(bias.clone());
    let mask = FullMask {
        causal: true,
        key_valid: Some(key_valid.clone()),
        ..FullMask::default()
    };
    let rel = RelBias {
        table,
        max_distance: rmax,
    };
    let (o, pairs) = full_attention(&mut tape, qv, kv, vv, Some(rel), heads, &mask).unwrap();
    let expected = oracle(q.data(), k.data(), v.data(), d, heads, |i, j| {
        (j <= i && key_valid[j]).then(|| {
            let b = relative_bucket(j as isize - i as isize, rmax);
            (0..heads).map(|h| bias.data()[h * (2 * rmax + 1) + b]).collect()
        })
    });
    assert_close(tape.value(o).data(), &expected, 1e-12);
    let counted: u64 = (0..n).map(|i| (0..=i).filter(|&j| key_valid[j]).count() as u64).sum();
    assert_eq!(pairs, counted);
}

#[test]
fn segments_isolate_sequences() {
    let (n, d) = (6, 2);
    let mut init = Init::new(5);
    let q = randn(&mut init, n, d);
    let k = randn(&mut init, n, d);
    let v = randn(&mut init, n, d);
    let mut tape = Tape::<f64>::inference();
    let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let mask = FullMask {
        segment: Some(3),
        ..FullMask::default()
    };
    let (o, pairs) = full_attention(&mut tape, qv, kv, vv, None, 1, &mask).unwrap();
    let expected = oracle(q.data(), k.data(), v.data(), d, 1, |i, j| (i / 3 == j / 3).then(|| vec![0.0]));
    assert_close(tape.value(o).data(), &expected, 1e-12);
    assert_eq!(pairs, 18);
}

fn tglobal_oracle(
    q: &Tensor<f64>,
    k: &Tensor<f64>,
    v: &Tensor<f64>,
    gk: &Tensor<f64>,
    gv: &Tensor<f64>,
    r: usize,
    valid: &[bool],
) -> Vec<f64> {
    let n = valid.len();
    let d = q.shape()[1];
    let keys: Vec<f64> = k.data().iter().chain(gk.data()).cloned().collect();
    let values: Vec<f64> = v.data().iter().chain(gv.data()).cloned().collect();
    oracle(q.data(), &keys, &values, d, 2, |i, j| {
        if !valid[i] {
            return None;
        }
        let ok = if j < n { valid[j] && i.abs_diff(j) <= r } else { true };
        ok.then(|| vec![0.0, 0.0])
    })
}

#[test]
fn tglobal_matches_mask_oracle() {
    let (n, d, r, block) = (11, 4, 2, 3);
    let mut init = Init::new(9);
    let x = randn(&mut init, n, d);
    let q = randn(&mut init, n, d);
    let k = randn(&mut init, n, d);
    let v = randn(&mut init, n, d);
    let mut valid = vec![true; n];
    valid[4] = false;
    valid[10] = false;
    let mut tape = Tape::<f64>::inference();
    let xv = tape.constant(x.clone());
    let (g, gvalid) = tape.block_mean(xv, block, &valid).unwrap();
    assert_eq!(gvalid, vec![true; 4]);
    let gt = tape.value(g).clone();
    // global means computed independently
    for b in 0..4 {
        let rows: Vec<usize> = (b * block..((b + 1) * block).min(n)).filter(|&i| valid[i]).collect();
        for t in 0..d {
            let mean = rows.iter().map(|&i| x.data()[i * d + t]).sum::<f64>() / rows.len() as f64;
            assert!((gt.data()[b * d + t] - mean).abs() < 1e-14);
        }
    }
    let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let spec = TGlobalSpec {
        radius: r,
        block,
        valid: Some(valid.clone()),
    };
    let (o, pairs) = tglobal_attention(&mut tape, qv, kv, vv, g, g, &gvalid, None, 2, &spec).unwrap();
    let expected = tglobal_oracle(&q, &k, &v, &gt, &gt, r, &valid);
    assert_close(tape.value(o).data(), &expected, 1e-12);
    for i in [4, 10] {
        assert!(tape.value(o).row(i).iter().all(|&x| x == 0.0));
    }
    let local: u64 = (0..n)
        .filter(|&i| valid[i])
        .map(|i| (0..n).filter(|&j| valid[j] && i.abs_diff(j) <= r).count() as u64)
        .sum();
    assert_eq!(pairs, local + 9 * 4);
}

#[test]
fn tglobal_degenerates_to_full_plus_one_global() {
    let (n, d) = (4, 4);
    let mut init = Init::new(11);
    let q = randn(&mut init, n, d);
    let k = randn(&mut init, n, d);
    let v = randn(&mut init, n, d);
    let gk = randn(&mut init, 1, d);
    let gv = randn(&mut init, 1, d);
    let mut tape = Tape::<f64>::inference();
    let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
    let (gkv, gvv) = (tape.constant(gk.clone()), tape.constant(gv.clone()));
    let spec = TGlobalSpec {
        radius: n - 1,
        block: n,
        valid: None,
    };
    let (o, _) = tglobal_attention(&mut tape, qv, kv, vv, gkv, gvv, &[true], None, 2, &spec).unwrap();
    let kcat = tape.concat_rows(&[kv, gkv]).unwrap();
    let vcat = tape.concat_rows(&[vv, gvv]).unwrap();
    let (full, pairs) = full_attention(&mut tape, qv, kcat, vcat, None, 2, &FullMask::default()).unwrap();
    assert_eq!(pairs, 20);
    assert_close(tape.value(o).data(), tape.value(full).data(), 1e-14);
}

#[test]
fn tglobal_rejects_empty_sequence() {
    let mut tape = Tape::<f64>::inference();
    let e = tape.constant(Tensor::zeros(&[0, 4]));
    let g = tape.constant(Tensor::zeros(&[0, 4]));
    let spec = TGlobalSpec {
        radius: 1,
        block: 2,
        valid: None,
    };
    let err = tglobal_attention(&mut tape, e, e, e, g, g, &[], None, 1, &spec).unwrap_err();
    assert!(matches!(err, AttentionError::EmptySequence));
}

fn cca_layout(m: usize, neighbors: usize, len: usize, chunks: usize) -> CcaLayout {
    CcaLayout {
        chunk_size: m,
        num_neighbors: neighbors,
        neighbor_len: len,
        alignment: CcaAlignment::PerChunk,
        q_offset: 0,
        chunk_valid: vec![true; chunks],
        key_valid: vec![true; chunks * neighbors * len],
    }
}

#[test]
fn cca_kernel_matches_oracle() {
    let (m, kn, len, d, heads) = (3, 2, 4, 4, 2);
    let t = 10;
    let chunks = 3;
    let rows = chunks * kn * len;
    let mut init = Init::new(13);
    let q = randn(&mut init, t, d);
    let k = randn(&mut init, rows, d);
    let v = randn(&mut init, rows, d);
    let bias = randn(&mut init, heads, 2 * m);
    let mut layout = cca_layout(m, kn, len, chunks);
    layout.key_valid[5] = false;
    layout.chunk_valid[1] = false;
    let mut tape = Tape::<f64>::inference();
    let (qv, kv, vv, bv) = (
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
        tape.constant(bias.clone()),
    );
    let (o, _) = chunked_cross_attention_kernel(&mut tape, qv, kv, vv, Some(bv), heads, &layout).unwrap();
    let expected = oracle(q.data(), k.data(), v.data(), d, heads, |i, j| {
        if i < m {
            return None;
        }
        let c = i / m - 1;
        let chunk_rows = kn * len;
        if j / chunk_rows != c || !layout.chunk_valid[c] || !layout.key_valid[j] {
            return None;
        }
        let kpos = (j % chunk_rows) % len;
        let qpos = i % m;
        let b = (kpos as isize - qpos as isize).clamp(-(m as isize), m as isize - 1) + m as isize;
        Some((0..heads).map(|h| bias.data()[h * 2 * m + b as usize]).collect())
    });
    assert_close(tape.value(o).data(), &expected, 1e-12);
}

#[test]
fn cca_missing_chunk_is_an_error() {
    let (m, kn, len, d) = (4, 2, 8, 4);
    let mut tape = Tape::<f64>::inference();
    let q = tape.constant(Tensor::zeros(&[9, d]));
    let rows = kn * len;
    let k = tape.constant(Tensor::zeros(&[rows, d]));
    // positions 8 needs chunk index 1, only one chunk supplied
    let err = chunked_cross_attention_kernel(&mut tape, q, k, k, None, 1, &cca_layout(m, kn, len, 1)).unwrap_err();
    assert!(matches!(err, AttentionError::MissingNeighbors { chunk: 1, available: 1 }));
}

fn cca_block(seed: u64, zero_out: bool) -> (ParamStore<f64>, ChunkedCrossAttention) {
    let cfg = AttentionConfig {
        kind: AttentionKind::ChunkedCross,
        m: 3,
        num_neighbors: 2,
        heads: 2,
        d_model: 4,
        ..AttentionConfig::default()
    };
    let mut store = ParamStore::new();
    let mut init = Init::new(seed);
    let block = ChunkedCrossAttention::new(&mut store, &mut init, "cca", &cfg).unwrap();
    if !zero_out {
        let w = store.get_mut(block.o.weight);
        w.value = init.normal(&[4, 4], 0.5);
        let b = store.get_mut(block.pos_bias);
        b.value = init.normal(&[2, 6], 0.5);
    }
    (store, block)
}

fn run_block(
    store: &ParamStore<f64>,
    block: &ChunkedCrossAttention,
    x: &Tensor<f64>,
    states: &Tensor<f64>,
    chunks: usize,
) -> Tensor<f64> {
    let mut tape = Tape::inference();
    let xv = tape.constant(x.clone());
    let sv = tape.constant(states.clone());
    let rows = states.shape()[0];
    let layout = block.layout(0, &vec![true; chunks], &vec![true; rows]);
    let (k, v) = block.project(&mut tape, store, sv).unwrap();
    let (o, _) = block.attend(&mut tape, store, xv, k, v, &layout).unwrap();
    tape.value(o).clone()
}

#[test]
fn cca_block_identity_cases() {
    let mut init = Init::new(2);
    let x = randn(&mut init, 11, 4);
    let states = randn(&mut init, 3 * 2 * 6, 4);
    let (store, block) = cca_block(1, true);
    assert_eq!(run_block(&store, &block, &x, &states, 3), x);
    let (store, block) = cca_block(1, false);
    let short = Tensor::matrix(3, 4, x.data()[..12].to_vec()).unwrap();
    let states0 = Tensor::zeros(&[0, 4]);
    assert_eq!(run_block(&store, &block, &short, &states0, 0), short);
}

#[test]
fn cca_chunk_causality() {
    let (m, t, chunks, per_chunk) = (3, 11, 3, 12);
    let mut init = Init::new(4);
    let x = randn(&mut init, t, 4);
    let states = randn(&mut init, chunks * per_chunk, 4);
    let (store, block) = cca_block(8, false);
    let base = run_block(&store, &block, &x, &states, chunks);
    for c in 0..chunks {
        let mut pert = states.clone();
        for e in c * per_chunk * 4..(c + 1) * per_chunk * 4 {
            pert.data_mut()[e] += 1.0;
        }
        let out = run_block(&store, &block, &x, &pert, chunks);
        for i in 0..t {
            let same = out.row(i) == base.row(i);
            // chunk c (0-based) is read by positions (c+1)m .. (c+2)m-1
            let reads = i >= (c + 1) * m && i < (c + 2) * m;
            assert_eq!(same, !reads, "chunk {c} position {i}");
        }
    }
}

#[test]
fn gradcheck_full_attention() {
    let mut init = Init::new(21);
    let mut store = ParamStore::<f64>::new();
    store.add("bias", init.normal(&[2, 5], 0.5)).unwrap();
    let inputs = vec![randn(&mut init, 5, 4), randn(&mut init, 5, 4), randn(&mut init, 5, 4)];
    let report = check_gradients(&store, &inputs, 1, 1e-5, |tape, store, x: &[Var]| {
        let table = tape.param(store, store.id("bias")?);
        let mask = FullMask {
            causal: true,
            key_valid: Some(vec![true, true, true, false, true]),
            ..FullMask::default()
        };
        let rel = RelBias {
            table,
            max_distance: 2,
        };
        Ok(full_attention(tape, x[0], x[1], x[2], Some(rel), 2, &mask).map_err(nn)?.0)
    })
    .unwrap();
    assert!(report.max_rel_error < GRAD_TOL, "{report:?}");
}

#[test]
fn gradcheck_tglobal_layer() {
    let mut init = Init::new(22);
    let mut store = ParamStore::<f64>::new();
    let attn = SelfAttention::new(
        &mut store,
        &mut init,
        "attn",
        4,
        2,
        SelfAttnKind::TGlobal { radius: 1, block: 3 },
        Some(2),
    )
    .unwrap();
    let rel = attn.rel_bias.unwrap();
    store.get_mut(rel).value = init.normal(&[2, 5], 0.5);
    let inputs = vec![randn(&mut init, 7, 4)];
    let valid = vec![true, true, true, true, false, true, true];
    let report = check_gradients(&store, &inputs, 2, 1e-5, |tape, store, x| {
        Ok(attn.forward(tape, store, x[0], Some(&valid)).map_err(nn)?.0)
    })
    .unwrap();
    assert!(report.max_rel_error < GRAD_TOL, "{report:?}");
}

#[test]
fn gradcheck_cca_block() {
    let (store, block) = cca_block(23, false);
    let mut init = Init::new(24);
    let inputs = vec![randn(&mut init, 8, 4), randn(&mut init, 2 * 2 * 6, 4)];
    let mut key_valid = vec![true; 24];
    key_valid[3] = false;
    let report = check_gradients(&store, &inputs, 3, 1e-5, |tape, store, x| {
        let layout = block.layout(0, &[true, true], &key_valid);
        let (k, v) = block.project(tape, store, x[1]).map_err(nn)?;
        Ok(block.attend(tape, store, x[0], k, v, &layout).map_err(nn)?.0)
    })
    .unwrap();
    assert!(report.max_rel_error < GRAD_TOL, "{report:?}");
}

#[test]
fn cached_self_attention_matches_full_bitwise() {
    let mut init = Init::new(30);
    let mut store = ParamStore::<f32>::new();
    let attn = SelfAttention::new(
        &mut store,
        &mut init,
        "attn",
        8,
        2,
        SelfAttnKind::Full { causal: true },
        Some(4),
    )
    .unwrap();
    let x: Tensor<f32> = init.normal(&[9, 8], 1.0);
    let mut tape = Tape::inference();
    let xv = tape.constant(x.clone());
    let (full, _) = attn.forward(&mut tape, &store, xv, None).unwrap();
    let full = tape.value(full).clone();
    let mut cache = retrosum::attention::LayerKv::new(8);
    for (start, end) in [(0, 4), (4, 5), (5, 9)] {
        let mut tape = Tape::inference();
        let rows = Tensor::matrix(end - start, 8, x.data()[start * 8..end * 8].to_vec()).unwrap();
        let xv = tape.constant(rows);
        let (o, _) = attn.forward_cached(&mut tape, &store, xv, &mut cache).unwrap();
        assert_eq!(tape.value(o).data(), &full.data()[start * 8..end * 8]);
    }
    assert_eq!(cache.len(), 9);
    assert_eq!(cache.num_floats(), 2 * 9 * 8);
}

#[test]
fn config_validation_and_parsing() {
    let mut cfg = AttentionConfig::default();
    assert!(cfg.validate().is_ok());
    cfg.d_model = 130;
    assert!(cfg.validate().is_err());
    cfg.d_model = 128;
    cfg.k = 0;
    assert!(cfg.validate().is_err());
    assert_eq!("tglobal".parse::<AttentionKind>().unwrap(), AttentionKind::Tglobal);
    assert!(matches!("dense".parse::<AttentionKind>(), Err(AttentionError::UnknownKind(_))));
    let json = serde_json::to_string(&AttentionConfig::default()).unwrap();
    assert_eq!(serde_json::from_str::<AttentionConfig>(&json).unwrap(), AttentionConfig::default());
}
