use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use retrosum::nn::checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
use retrosum::nn::gradcheck::check_gradients;
use retrosum::nn::{
    load_checkpoint, save_checkpoint, Adam, AdamConfig, Checkpoint, Embedding, FeedForward, Init, LayerNorm, Linear,
    NnError, ParamGrads, ParamStore, RngState, Tape, Tensor, LAYER_NORM_EPS,
};

const GRAD_TOL: f64 = 1e-4;
const H: f64 = 1e-5;

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut tape = Tape::<f64>::inference();
    let x = tape.constant(Tensor::zeros(&[1, 3]));
    let s = tape.softmax_rows(x).unwrap();
    for &p in tape.value(s).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn confident_cross_entropy_vanishes() {
    let mut tape = Tape::<f32>::inference();
    let mut logits = vec![0.0f32; 5];
    logits[2] = 20.0;
    let x = tape.constant(Tensor::matrix(1, 5, logits).unwrap());
    let loss = tape.cross_entropy(x, &[Some(2)]).unwrap();
    assert!(tape.value(loss).item() < 1e-6);
}

#[test]
fn cross_entropy_ignores_unscored_positions() {
    let mut tape = Tape::<f64>::inference();
    let x = tape.constant(Tensor::matrix(2, 2, vec![0.0, 0.0, 5.0, -5.0]).unwrap());
    let loss = tape.cross_entropy(x, &[Some(0), None]).unwrap();
    assert!((tape.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-15);
    let none = tape.cross_entropy(x, &[None, None]).unwrap();
    assert_eq!(tape.value(none).item(), 0.0);
}

#[test]
fn identity_matmul() {
    let mut init = Init::new(0);
    let a: Tensor<f64> = init.normal(&[3, 4], 1.0);
    let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
    let mut tape = Tape::inference();
    let (e, av) = (tape.constant(eye), tape.constant(a.clone()));
    let p = tape.matmul(e, av).unwrap();
    assert_eq!(tape.value(p), &a);
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    match err {
        NnError::ShapeMismatch { left, right, .. } => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("{other}"),
    }
}

#[test]
fn gradient_of_sum_is_ones() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2, 3]), true);
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &Tensor::ones(&[2, 3]));
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2]), true);
    assert!(matches!(tape.backward(x), Err(NnError::NonScalarLoss(_))));
}

#[test]
fn frozen_parameters_get_no_gradient() {
    let mut store = ParamStore::<f32>::new();
    let mut init = Init::new(1);
    let lin = Linear::new(&mut store, &mut init, "lin", 3, 2, true).unwrap();
    store.get_mut(lin.weight).trainable = false;
    let mut tape = Tape::new();
    let x = tape.constant(init.normal(&[4, 3], 1.0));
    let y = lin.forward(&mut tape, &store, x).unwrap();
    let loss = tape.sum(y);
    let grads = tape.backward(loss).unwrap().into_param_grads();
    assert!(grads.get(lin.weight).is_none());
    assert!(grads.get(lin.bias.unwrap()).is_some());
}

#[test]
fn gradcheck_linear() {
    let mut init = Init::new(2);
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut store, &mut init, "lin", 4, 3, true).unwrap();
    let r = check_gradients(&store, &[init.normal(&[5, 4], 1.0)], 1, H, |t, s, x| lin.forward(t, s, x[0])).unwrap();
    assert!(r.max_rel_error < GRAD_TOL, "{r:?}");
}

#[test]
fn gradcheck_layer_norm() {
    let mut init = Init::new(3);
    let mut store = ParamStore::<f64>::new();
    let ln = LayerNorm::new(&mut store, "ln", 6).unwrap();
    store.get_mut(ln.gain).value = init.normal(&[6], 1.0);
    store.get_mut(ln.bias).value = init.normal(&[6], 1.0);
    let r = check_gradients(&store, &[init.normal(&[4, 6], 2.0)], 2, H, |t, s, x| ln.forward(t, s, x[0])).unwrap();
    assert!(r.max_rel_error < GRAD_TOL, "{r:?}");
}

#[test]
fn gradcheck_softmax_and_cross_entropy() {
    let mut init = Init::new(4);
    let store = ParamStore::<f64>::new();
    let r = check_gradients(&store, &[init.normal(&[3, 5], 1.0)], 3, H, |t, _, x| t.softmax_rows(x[0])).unwrap();
    assert!(r.max_rel_error < GRAD_TOL, "{r:?}");
    let targets = [Some(1), None, Some(4)];
    let r = check_gradients(&store, &[init.normal(&[3, 5], 1.0)], 4, H, |t, _, x| t.cross_entropy(x[0], &targets))
        .unwrap();
    assert!(r.max_rel_error < GRAD_TOL, "{r:?}");
}

#[test]
fn gradcheck_embedding_and_feed_forward() {
    let mut init = Init::new(5);
    let mut store = ParamStore::<f64>::new();
    let emb = Embedding::new(&mut store, &mut init, "emb", 7, 4).unwrap();
    let ff = FeedForward::new(&mut store, &mut init, "ff", 4, 8).unwrap();
    let ids = [3u32, 0, 3, 6];
    let r = check_gradients(&store, &[], 5, H, |t, s, _| {
        let e = emb.forward(t, s, &ids)?;
        ff.forward(t, s, e)
    })
    .unwrap();
    assert!(r.max_rel_error < GRAD_TOL, "{r:?}");
}

#[test]
fn gradcheck_structural_ops() {
    let mut init = Init::new(6);
    let store = ParamStore::<f64>::new();
    let valid = [true, false, true, true, true];
    let inputs = [init.normal(&[5, 3], 1.0), init.normal(&[2, 3], 1.0)];
    let r = check_gradients(&store, &inputs, 6, H, |t, _, x| {
        let (g, _) = t.block_mean(x[0], 2, &valid)?;
        let c = t.concat_rows(&[x[0], g, x[1]])?;
        let s = t.slice_rows(c, 1, 8)?;
        let m = t.mul(s, s)?;
        let sc = t.scale(m, 0.5);
        Ok(t.gelu(sc))
    })
    .unwrap();
    assert!(r.max_rel_error < GRAD_TOL, "{r:?}");
}

#[test]
fn gradcheck_matmul_nt() {
    let mut init = Init::new(8);
    let store = ParamStore::<f64>::new();
    let inputs = [init.normal(&[3, 4], 1.0), init.normal(&[5, 4], 1.0)];
    let bias = init.normal(&[5], 1.0);
    let inputs = [inputs[0].clone(), inputs[1].clone(), bias];
    let r = check_gradients(&store, &inputs, 8, H, |t, _, x| {
        let y = t.matmul_nt(x[0], x[1])?;
        t.add_bias(y, x[2])
    })
    .unwrap();
    assert!(r.max_rel_error < GRAD_TOL, "{r:?}");
}

#[test]
fn embedding_rejects_out_of_range_ids() {
    let mut tape = Tape::<f32>::new();
    let table = tape.constant(Tensor::zeros(&[4, 2]));
    assert!(tape.embedding(table, &[4]).is_err());
}

#[test]
fn dropout_zero_is_identity() {
    let mut init = Init::new(7);
    let x: Tensor<f32> = init.normal(&[3, 3], 1.0);
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = tape.dropout(v, 0.0, &mut rng);
    assert_eq!(tape.value(y), &x);
}

fn scalar_store(value: f32) -> ParamStore<f32> {
    let mut store = ParamStore::new();
    store.add("w", Tensor::new(vec![1], vec![value]).unwrap()).unwrap();
    store
}

fn grads_of(store: &ParamStore<f32>, values: &[(&str, Vec<f32>)]) -> ParamGrads<f32> {
    let mut tape = Tape::new();
    let mut terms = Vec::new();
    for (name, g) in values {
        let id = store.id(name).unwrap();
        let p = tape.param(store, id);
        let c = tape.constant(Tensor::new(store.get(id).value.shape().to_vec(), g.clone()).unwrap());
        let m = tape.mul(p, c).unwrap();
        terms.push(tape.sum(m));
    }
    let loss = tape.add_all(&terms).unwrap();
    tape.backward(loss).unwrap().into_param_grads()
}

#[test]
fn adam_first_step_matches_closed_form() {
    let mut store = scalar_store(0.5);
    let grads = grads_of(&store, &[("w", vec![1.0])]);
    let cfg = AdamConfig::default();
    let mut adam = Adam::new(cfg);
    adam.step(&mut store, &grads).unwrap();
    // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps)
    let g = 1.0f32;
    let m = (1.0 - cfg.beta1) * g;
    let v = (1.0 - cfg.beta2) * g * g;
    let m_hat = m / (1.0 - cfg.beta1);
    let v_hat = v / (1.0 - cfg.beta2);
    let expected = 0.5 - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    assert_eq!(store.get(store.id("w").unwrap()).value.data()[0], expected);
    assert!((0.5 - expected - 1e-4).abs() < 1e-7);
}

#[test]
fn adam_zero_gradient_leaves_parameters() {
    let mut store = scalar_store(0.25);
    let grads = grads_of(&store, &[("w", vec![0.0])]);
    Adam::new(AdamConfig::default()).step(&mut store, &grads).unwrap();
    assert_eq!(store.by_name("w").unwrap().value.data()[0], 0.25);
}

#[test]
fn adam_skips_frozen_and_rejects_nan() {
    let mut store = ParamStore::<f32>::new();
    store.add("a", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
    store.add("b", Tensor::new(vec![2], vec![3.0, 4.0]).unwrap()).unwrap();
    let grads = grads_of(&store, &[("a", vec![1.0, 1.0]), ("b", vec![1.0, -1.0])]);
    store.get_mut(store.id("b").unwrap()).trainable = false;
    let before = store.by_name("b").unwrap().value.clone();
    let mut adam = Adam::new(AdamConfig::default());
    adam.step(&mut store, &grads).unwrap();
    assert_eq!(store.by_name("b").unwrap().value, before);
    assert!(adam.has_moments("a") && !adam.has_moments("b"));

    let mut bad = ParamGrads::new();
    bad.insert(store.id("a").unwrap(), Tensor::new(vec![2], vec![f32::NAN, 0.0]).unwrap());
    let snapshot = store.by_name("a").unwrap().value.clone();
    match adam.step(&mut store, &bad) {
        Err(NnError::NonFiniteGradient(name)) => assert_eq!(name, "a"),
        other => panic!("{other:?}"),
    }
    assert_eq!(store.by_name("a").unwrap().value, snapshot);
}

fn toy_step(store: &mut ParamStore<f32>, adam: &mut Adam, lin: &Linear, rng: &mut ChaCha8Rng) -> f32 {
    let mut init = Init::new(rand::Rng::gen(rng));
    let mut tape = Tape::new();
    let x = tape.constant(init.normal(&[4, 3], 1.0));
    let y = lin.forward(&mut tape, store, x).unwrap();
    let loss = tape.cross_entropy(y, &[Some(0), Some(1), None, Some(1)]).unwrap();
    let value = tape.value(loss).item();
    let grads = tape.backward(loss).unwrap().into_param_grads();
    adam.step(store, &grads).unwrap();
    value
}

#[test]
fn checkpoint_resume_is_bitwise() {
    let mut init = Init::new(8);
    let mut store = ParamStore::<f32>::new();
    let lin = Linear::new(&mut store, &mut init, "lin", 3, 2, true).unwrap();
    let mut adam = Adam::new(AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    toy_step(&mut store, &mut adam, &lin, &mut rng);
    store.get_mut(lin.bias.unwrap()).trainable = false;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.bin");
    let ckpt = Checkpoint {
        config: "{\"d\":3}".into(),
        root_seed: 99,
        rng: RngState::capture(&rng),
        params: store.clone(),
        optimizer: Some(adam.clone()),
    };
    save_checkpoint(&path, &ckpt).unwrap();

    let straight = toy_step(&mut store, &mut adam, &lin, &mut rng);
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config, "{\"d\":3}");
    assert_eq!(loaded.root_seed, 99);
    assert!(!loaded.params.by_name("lin.bias").unwrap().trainable);
    let mut store2 = loaded.params;
    let mut adam2 = loaded.optimizer.unwrap();
    let mut rng2 = loaded.rng.restore();
    let resumed = toy_step(&mut store2, &mut adam2, &lin, &mut rng2);
    assert_eq!(straight.to_bits(), resumed.to_bits());
    for ((_, a), (_, b)) in store.iter().zip(store2.iter()) {
        assert_eq!(a.value, b.value);
    }
    assert_eq!(adam, adam2);
}

#[test]
fn checkpoint_rejects_bad_magic_and_version() {
    let store = scalar_store(1.0);
    let ckpt = Checkpoint {
        config: String::new(),
        root_seed: 0,
        rng: RngState::capture(&ChaCha8Rng::seed_from_u64(0)),
        params: store,
        optimizer: None,
    };
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &ckpt).unwrap();
    assert!(read_checkpoint(&mut bytes.as_slice()).is_ok());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(NnError::Checkpoint(_))));
    let mut future = bytes.clone();
    let at = CHECKPOINT_MAGIC.len();
    future[at..at + 4].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(
        read_checkpoint(&mut future.as_slice()),
        Err(NnError::CheckpointVersion { found: 99, .. })
    ));
    assert!(read_checkpoint(&mut &bytes[..bytes.len() - 2]).is_err());
}

#[test]
fn layer_norm_normalizes_rows() {
    let mut store = ParamStore::<f64>::new();
    let ln = LayerNorm::new(&mut store, "ln", 8).unwrap();
    let mut init = Init::new(9);
    let mut tape = Tape::inference();
    let x = tape.constant(init.normal(&[3, 8], 5.0));
    let y = ln.forward(&mut tape, &store, x).unwrap();
    for r in 0..3 {
        let row = tape.value(y).row(r);
        let mean: f64 = row.iter().sum::<f64>() / 8.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 10.0 * LAYER_NORM_EPS);
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-30.0f32..30.0, 1..40), cols in 1usize..8) {
        let rows = vals.len() / cols;
        prop_assume!(rows > 0);
        let data = vals[..rows * cols].to_vec();
        let mut tape = Tape::<f32>::inference();
        let x = tape.constant(Tensor::matrix(rows, cols, data.clone()).unwrap());
        let s = tape.softmax_rows(x).unwrap();
        for r in 0..rows {
            let sum: f32 = tape.value(s).row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
        }
        let targets: Vec<Option<u32>> = (0..rows).map(|r| Some((r % cols) as u32)).collect();
        let ce = tape.cross_entropy(x, &targets).unwrap();
        prop_assert!(tape.value(ce).item() >= 0.0);
    }
}
