use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retrosum::corpus::Document;
use retrosum::eval::{evaluate_corpus, lcs_len, read_predictions, rouge_l, rouge_n, words, EvalError, Prediction};

fn w(s: &str) -> Vec<String> {
    words(s)
}

/// Memoized recursive LCS over the full table.
fn lcs_oracle(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len()]; a.len()];
    go(a, b, 0, 0, &mut memo)
}

#[test]
fn bigram_hand_example() {
    let s = rouge_n(&w("the cat sat on the mat"), &w("the cat lay on the mat"), 2).unwrap();
    assert!((s.precision - 0.6).abs() < 1e-4);
    assert!((s.recall - 0.6).abs() < 1e-4);
    assert!((s.f1 - 0.6).abs() < 1e-4);
}

#[test]
fn lcs_hand_examples() {
    let s = rouge_l(&w("the cat sat on the mat"), &w("the cat lay on the mat"));
    assert!((s.precision - 5.0 / 6.0).abs() < 1e-4);
    assert!((s.f1 - 0.8333).abs() < 1e-4);
    let s = rouge_l(&w("d c b a"), &w("a b c d"));
    assert_eq!((s.precision, s.recall), (0.25, 0.25));
}

#[test]
fn identity_disjoint_and_degenerate() {
    let a = w("alpha beta gamma");
    for n in 1..=3 {
        let s = rouge_n(&a, &a, n).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }
    assert_eq!(rouge_l(&a, &a).f1, 1.0);
    let b = w("delta epsilon");
    assert_eq!(rouge_n(&a, &b, 1).unwrap().f1, 0.0);
    assert_eq!(rouge_l(&a, &b).f1, 0.0);
    assert_eq!(rouge_n(&a, &b, 5).unwrap().f1, 0.0);
    assert_eq!(rouge_l(&a, &[]).f1, 0.0);
    assert!(matches!(rouge_n(&a, &a, 0), Err(EvalError::ZeroOrder)));
}

#[test]
fn clipping_counts_reference_multiplicity() {
    let s = rouge_n(&w("the the the the"), &w("the cat the"), 1).unwrap();
    assert_eq!(s.precision, 0.5);
    assert_eq!(s.recall, 2.0 / 3.0);
}

#[test]
fn word_normalization() {
    assert_eq!(words("The Cat, sat. (on) @xmath0 mat!"), vec!["the", "cat", "sat", "on", "xmath0", "mat"]);
    assert_eq!(words(" -- ... "), Vec::<String>::new());
}

#[test]
fn lcs_matches_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for _ in 0..500 {
        let la = rng.gen_range(0..=50);
        let lb = rng.gen_range(0..=50);
        let alpha = rng.gen_range(2..8u8);
        let a: Vec<u8> = (0..la).map(|_| rng.gen_range(0..alpha)).collect();
        let b: Vec<u8> = (0..lb).map(|_| rng.gen_range(0..alpha)).collect();
        assert_eq!(lcs_len(&a, &b), lcs_oracle(&a, &b));
    }
}

fn reference(id: &str, abs: &str) -> Document {
    Document {
        article_id: id.into(),
        title: String::new(),
        abstract_sentences: vec![format!("<S> {abs} </S>")],
        body_sentences: vec!["body".into()],
        section_names: vec![],
        sections: vec![],
    }
}

#[test]
fn corpus_examples() {
    let refs = vec![reference("a", "the cat lay on the mat"), reference("b", "a dog barked")];
    let same = vec![
        Prediction {
            article_id: "a".into(),
            prediction: "the cat lay on the mat".into(),
        },
        Prediction {
            article_id: "b".into(),
            prediction: "a dog barked".into(),
        },
    ];
    let r = evaluate_corpus(&same, &refs).unwrap();
    assert_eq!((r.r1, r.r2, r.rl), (100.0, 100.0, 100.0));

    let one = vec![Prediction {
        article_id: "a".into(),
        prediction: "the cat sat on the mat".into(),
    }];
    let r = evaluate_corpus(&one, &refs).unwrap();
    assert!((r.r2 - 60.0).abs() < 1e-9);
    assert!((r.rl - 83.33).abs() < 5e-3);

    let half = vec![
        same[0].clone(),
        Prediction {
            article_id: "b".into(),
            prediction: String::new(),
        },
    ];
    let r = evaluate_corpus(&half, &refs).unwrap();
    assert_eq!((r.r1, r.r2, r.rl), (50.0, 50.0, 50.0));
    let csv = r.to_csv();
    assert!(csv.starts_with("article_id,r1,r2,rl\n"));
    assert!(csv.ends_with("mean,50.0000,50.0000,50.0000\n"));
    assert!(r.to_table().contains("n/a"));

    let stray = vec![Prediction {
        article_id: "zz".into(),
        prediction: "x".into(),
    }];
    match evaluate_corpus(&stray, &refs) {
        Err(EvalError::UnmatchedIds(ids)) => assert_eq!(ids, vec!["zz"]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn predictions_file_parsing() {
    let text = "{\"article_id\":\"a\",\"prediction\":\"x y\",\"retrieval_trace\":[]}\n\n{\"article_id\":\"b\",\"prediction\":\"\"}\n";
    let p = read_predictions(text).unwrap();
    assert_eq!(p.len(), 2);
    assert!(matches!(read_predictions("{"), Err(EvalError::Parse { line: 1, .. })));
}

proptest! {
    #[test]
    fn self_score_is_one(a in prop::collection::vec(0u8..20, 1..30), n in 1usize..4) {
        prop_assume!(a.len() >= n);
        prop_assert_eq!(rouge_n(&a, &a, n).unwrap().f1, 1.0);
    }

    #[test]
    fn appending_unseen_token_never_raises_precision(
        c in prop::collection::vec(0u8..10, 0..20),
        r in prop::collection::vec(0u8..10, 1..20),
        n in 1usize..3,
    ) {
        let before = rouge_n(&c, &r, n).unwrap();
        let mut longer = c.clone();
        longer.push(99);
        let after = rouge_n(&longer, &r, n).unwrap();
        prop_assert!(after.precision <= before.precision);
        prop_assert_eq!(after.recall, before.recall);
    }
}
