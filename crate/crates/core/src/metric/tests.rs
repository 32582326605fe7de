use super::*;
use crate::data::{cluster_corpus, ClusterSpec, Outfit};
use crate::styles::ColorDescriptor;

fn item(id: &str, cat: &str, e: &[f64]) -> ItemRecord {
    ItemRecord {
        id: id.into(),
        category: cat.into(),
        embedding: e.to_vec(),
        color: Some(ColorDescriptor { h: 0.0, s: 0.5, v: 0.5 }),
    }
}

fn cfg() -> TripletConfig {
    TripletConfig::default()
}

#[test]
fn distance_identity_and_345() {
    let a = item("a", "top", &[0.0, 0.0]);
    let b = item("b", "shoe", &[3.0, 4.0]);
    assert_eq!(pair_distance(&a, &a, &cfg()).unwrap(), 0.0);
    assert_eq!(pair_distance(&a, &b, &cfg()).unwrap(), 5.0);
    assert_eq!(
        pair_distance(&a, &b, &cfg()).unwrap(),
        pair_distance(&b, &a, &cfg()).unwrap()
    );
}

#[test]
fn distance_dim_mismatch() {
    let a = item("a", "top", &[0.0, 0.0]);
    let b = item("b", "shoe", &[1.0]);
    assert!(matches!(
        pair_distance(&a, &b, &cfg()),
        Err(NgfError::Contract(_))
    ));
}

#[test]
fn combined_negative_examples() {
    let d = TripletDistances { d_pos: 0.0, d_abs_neg: 2.0, d_re_neg: 4.0 };
    d.validate().unwrap();
    assert_eq!(combined_negative(&d, &cfg()), 3.0);
    let mut c = cfg();
    c.alpha = 1.0;
    assert_eq!(combined_negative(&d, &c), 2.0);
    c.alpha = 0.0;
    assert_eq!(combined_negative(&d, &c), 4.0);
}

#[test]
fn triplet_loss_examples() {
    let c = cfg();
    let satisfied = TripletDistances { d_pos: 1.0, d_abs_neg: 3.0, d_re_neg: 3.0 };
    assert_eq!(triplet_loss(&satisfied, &c), 0.0);
    let violated = TripletDistances { d_pos: 3.0, d_abs_neg: 1.0, d_re_neg: 1.0 };
    assert!((triplet_loss(&violated, &c) - 2.3).abs() < 1e-12);
    let boundary = TripletDistances { d_pos: 2.0, d_abs_neg: 2.0, d_re_neg: 2.0 };
    assert!((triplet_loss(&boundary, &c) - c.margin).abs() < 1e-15);
}

fn sampling_corpus() -> Corpus {
    // top-1 + shoe-1 are a set; shoe-3 never co-occurs with top-1.
    Corpus::new(
        2,
        vec![
            item("top-1", "top", &[0.0, 0.0]),
            item("top-2", "top", &[1.0, 0.0]),
            item("shoe-1", "shoe", &[0.0, 1.0]),
            item("shoe-2", "shoe", &[1.0, 1.0]),
            item("shoe-3", "shoe", &[2.0, 1.0]),
        ],
        vec![
            Outfit {
                id: "s1".into(),
                items: vec!["top-1".into(), "shoe-1".into()],
                label: Label::Compatible,
                style: None,
                split: Split::Train,
            },
            Outfit {
                id: "s2".into(),
                items: vec!["top-1".into(), "shoe-2".into()],
                label: Label::Compatible,
                style: None,
                split: Split::Train,
            },
            Outfit {
                id: "s3".into(),
                items: vec!["top-2".into(), "shoe-3".into()],
                label: Label::Compatible,
                split: Split::Train,
                style: None,
            },
        ],
    )
}

#[test]
fn absolute_negative_forced_with_two_tops() {
    let corpus = sampling_corpus();
    let anchor = corpus.item("top-1").unwrap();
    let positive = corpus.item("shoe-1").unwrap();
    for seed in 0..10 {
        let (abs_neg, _) = sample_negatives(anchor, positive, &corpus, seed).unwrap();
        assert_eq!(abs_neg.id, "top-2");
    }
}

#[test]
fn relative_negative_excludes_all_cooccurring() {
    // top-1 co-occurs with shoe-1 and shoe-2; only shoe-3 remains.
    let corpus = sampling_corpus();
    let anchor = corpus.item("top-1").unwrap();
    let positive = corpus.item("shoe-1").unwrap();
    for seed in 0..10 {
        let (_, rel_neg) = sample_negatives(anchor, positive, &corpus, seed).unwrap();
        assert_eq!(rel_neg.id, "shoe-3");
    }
}

#[test]
fn sampling_is_deterministic_in_seed() {
    let corpus = cluster_corpus(&ClusterSpec::default(), 5).unwrap();
    let anchor = &corpus.items[0];
    let positive = corpus.item(&corpus.outfits[0].items[1]).unwrap();
    for seed in [0, 1, 99] {
        let a = sample_negatives(anchor, positive, &corpus, seed).unwrap();
        let b = sample_negatives(anchor, positive, &corpus, seed).unwrap();
        assert_eq!(a.0.id, b.0.id);
        assert_eq!(a.1.id, b.1.id);
    }
}

#[test]
fn empty_pool_errors_name_the_pool() {
    let corpus = Corpus::new(
        2,
        vec![item("top-1", "top", &[0.0, 0.0]), item("shoe-1", "shoe", &[1.0, 1.0])],
        vec![Outfit {
            id: "s".into(),
            items: vec!["top-1".into(), "shoe-1".into()],
            label: Label::Compatible,
            style: None,
            split: Split::Train,
        }],
    );
    let anchor = corpus.item("top-1").unwrap();
    let positive = corpus.item("shoe-1").unwrap();
    let err = sample_negatives(anchor, positive, &corpus, 0).unwrap_err();
    assert!(matches!(err, NgfError::Sampling(_)));
    assert!(err.to_string().contains("absolute"), "{err}");
}

#[test]
fn zero_lr_training_keeps_params_and_loss_constant() {
    let corpus = cluster_corpus(&ClusterSpec::default(), 7).unwrap();
    let cfg = EmbedTrainConfig {
        adam: AdamConfig::with_lr(0.0),
        epochs: 5,
        seed: 3,
        ..EmbedTrainConfig::default()
    };
    let result = train_embedding(&corpus, &cfg).unwrap();
    let fresh = ProjectionParams::init(corpus.dim, cfg.seed);
    assert_eq!(result.params.w1.values(), fresh.w1.values());
    assert_eq!(result.params.w2.values(), fresh.w2.values());
    // Same triplets each epoch are re-sampled, so the loss varies only
    // through sampling; with identical epoch seeds it would be constant.
    // Check instead that every epoch's loss stays in a narrow band around
    // the initial value (parameters never move).
    let first = result.loss_curve[0];
    for l in &result.loss_curve {
        assert!((l - first).abs() < 0.5, "loss drifted with frozen params");
    }
}

#[test]
fn separable_corpus_drives_loss_to_zero() {
    // Positives are near-duplicates; the only negatives are far away.
    let mut items = Vec::new();
    for c in 0..2 {
        let base = c as f64 * 50.0 - 25.0;
        items.push(item(&format!("c{c}-top"), "top", &[base, base]));
        items.push(item(&format!("c{c}-shoe"), "shoe", &[base + 0.01, base]));
    }
    let outfits = (0..2)
        .map(|c| Outfit {
            id: format!("s{c}"),
            items: vec![format!("c{c}-top"), format!("c{c}-shoe")],
            label: Label::Compatible,
            style: None,
            split: Split::Train,
        })
        .collect();
    let corpus = Corpus::new(2, items, outfits);
    let cfg = EmbedTrainConfig {
        adam: AdamConfig::with_lr(1e-2),
        epochs: 60,
        seed: 1,
        ..EmbedTrainConfig::default()
    };
    let result = train_embedding(&corpus, &cfg).unwrap();
    let last = *result.loss_curve.last().unwrap();
    assert!(last < 1e-3, "final loss {last} should vanish on separable data");
}

#[test]
fn training_needs_triplets() {
    let corpus = Corpus::new(2, vec![item("a", "top", &[0.0, 0.0])], vec![]);
    assert!(matches!(
        train_embedding(&corpus, &EmbedTrainConfig::default()),
        Err(NgfError::Data(_))
    ));
}

#[test]
fn projection_checkpoint_roundtrip() {
    let params = ProjectionParams::init(4, 9);
    let named = params.named_tensors();
    let mut buf = Vec::new();
    crate::checkpoint::write_checkpoint(&mut buf, &named).unwrap();
    let back = ProjectionParams::from_named(&crate::checkpoint::read_checkpoint(buf.as_slice()).unwrap()).unwrap();
    assert_eq!(params.w1.values(), back.w1.values());
    assert_eq!(params.b2.values(), back.b2.values());
}

#[test]
fn tape_projection_matches_plain_projection() {
    let params = ProjectionParams::init(4, 2);
    let x = [0.3, -0.7, 1.1, 0.05];
    let plain = params.project(&x);
    let mut tape = Tape::new();
    let w1 = tape.leaf(params.w1.clone());
    let b1 = tape.leaf(params.b1.clone());
    let w2 = tape.leaf(params.w2.clone());
    let b2 = tape.leaf(params.b2.clone());
    let xs = tape.leaf(Tensor::new(vec![1, 4], x.to_vec()).unwrap());
    let z = project_on_tape(&mut tape, xs, w1, b1, w2, b2).unwrap();
    assert_eq!(tape.value(z).values(), plain.as_slice());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 4..=4)
    }

    proptest! {
        // Euclidean distance metric axioms (triangle inequality up to
        // floating-point slack).
        #[test]
        fn metric_axioms(a in vec_strategy(), b in vec_strategy(), c in vec_strategy()) {
            let cfg = TripletConfig::default();
            let ia = item("a", "x", &a);
            let ib = item("b", "x", &b);
            let ic = item("c", "x", &c);
            let dab = pair_distance(&ia, &ib, &cfg).unwrap();
            let dba = pair_distance(&ib, &ia, &cfg).unwrap();
            let dac = pair_distance(&ia, &ic, &cfg).unwrap();
            let dcb = pair_distance(&ic, &ib, &cfg).unwrap();
            prop_assert_eq!(pair_distance(&ia, &ia, &cfg).unwrap(), 0.0);
            prop_assert_eq!(dab, dba);
            prop_assert!(dab <= dac + dcb + 1e-9 * (1.0 + dab.abs()));
        }

        // Monotone in each negative distance for fixed alpha.
        #[test]
        fn combined_negative_monotone(
            d_abs in 0.0f64..10.0,
            d_re in 0.0f64..10.0,
            bump in 0.0f64..5.0,
            alpha in 0.0f64..=1.0,
        ) {
            let cfg = TripletConfig { alpha, ..TripletConfig::default() };
            let base = TripletDistances { d_pos: 1.0, d_abs_neg: d_abs, d_re_neg: d_re };
            let more_abs = TripletDistances { d_abs_neg: d_abs + bump, ..base };
            let more_re = TripletDistances { d_re_neg: d_re + bump, ..base };
            prop_assert!(combined_negative(&more_abs, &cfg) >= combined_negative(&base, &cfg));
            prop_assert!(combined_negative(&more_re, &cfg) >= combined_negative(&base, &cfg));
        }

        // Hinge nonnegativity and its zero region.
        #[test]
        fn triplet_loss_nonneg(
            d_pos in 0.0f64..10.0,
            d_abs in 0.0f64..10.0,
            d_re in 0.0f64..10.0,
        ) {
            let cfg = TripletConfig::default();
            let d = TripletDistances { d_pos, d_abs_neg: d_abs, d_re_neg: d_re };
            let l = triplet_loss(&d, &cfg);
            prop_assert!(l >= 0.0);
            let d_neg = combined_negative(&d, &cfg);
            if d_neg > d_pos + cfg.margin {
                prop_assert_eq!(l, 0.0);
            }
        }
    }
}
