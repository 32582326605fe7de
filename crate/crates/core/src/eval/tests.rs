use super::*;
use crate::data::{generate_fitb, synth_corpus, SynthSpec};
use crate::graph::{NetworkOutput, STYLE_COUNT};
use std::sync::Mutex;

fn scored(pairs: &[(f64, u8)]) -> Vec<ScoredSet> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(score, label))| ScoredSet {
            set_id: format!("s{i}"),
            score,
            label: if label == 1 { Label::Compatible } else { Label::Incompatible },
            style: None,
            length: 3,
        })
        .collect()
}

/// O(P*N) pair count; the independent oracle for the sorted AUC.
fn brute_force_auc(sets: &[ScoredSet]) -> f64 {
    let pos: Vec<f64> = sets
        .iter()
        .filter(|s| s.label == Label::Compatible)
        .map(|s| s.score)
        .collect();
    let neg: Vec<f64> = sets
        .iter()
        .filter(|s| s.label == Label::Incompatible)
        .map(|s| s.score)
        .collect();
    let mut u = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                u += 1.0;
            } else if p == n {
                u += 0.5;
            }
        }
    }
    u / (pos.len() as f64 * neg.len() as f64)
}

#[test]
fn auc_perfect_separation() {
    let s = scored(&[(0.9, 1), (0.8, 1), (0.2, 0), (0.1, 0)]);
    assert_eq!(auc(&s).unwrap(), 1.0);
}

#[test]
fn auc_all_ties_is_half() {
    let s = scored(&[(0.5, 1), (0.5, 1), (0.5, 0), (0.5, 0)]);
    assert_eq!(auc(&s).unwrap(), 0.5);
}

#[test]
fn auc_derived_three_quarters() {
    let s = scored(&[(0.9, 1), (0.4, 1), (0.6, 0), (0.1, 0)]);
    assert_eq!(auc(&s).unwrap(), 0.75);
}

#[test]
fn auc_single_class_undefined() {
    let s = scored(&[(0.9, 1), (0.4, 1)]);
    assert!(matches!(auc(&s), Err(NgfError::UndefinedMetric(_))));
}

#[test]
fn auc_label_flip_antisymmetry() {
    let s = scored(&[(0.9, 1), (0.3, 0), (0.55, 1), (0.55, 0), (0.2, 1)]);
    let mut flipped = s.clone();
    for f in &mut flipped {
        f.label = match f.label {
            Label::Compatible => Label::Incompatible,
            Label::Incompatible => Label::Compatible,
        };
    }
    assert_eq!(auc(&s).unwrap() + auc(&flipped).unwrap(), 1.0);
}

/// Scorer that reads scores from a fixed table keyed by the candidate
/// item appended last.
struct TableScorer {
    by_last_embedding: fn(&[f64]) -> f64,
}

impl SetScorer for TableScorer {
    fn score_set(&self, embeddings: &[&[f64]]) -> crate::Result<NetworkOutput> {
        Ok(NetworkOutput {
            compatibility: (self.by_last_embedding)(embeddings[embeddings.len() - 1]),
            style_distribution: [1.0 / STYLE_COUNT as f64; STYLE_COUNT],
        })
    }
}

struct ConstantScorer(f64);

impl SetScorer for ConstantScorer {
    fn score_set(&self, _: &[&[f64]]) -> crate::Result<NetworkOutput> {
        Ok(NetworkOutput {
            compatibility: self.0,
            style_distribution: [1.0 / STYLE_COUNT as f64; STYLE_COUNT],
        })
    }
}

fn fitb_fixture() -> (Corpus, Vec<FITBQuestion>) {
    let spec = SynthSpec {
        items_per_category: 40,
        train_sets: 0,
        test_sets: 60,
        negative_fraction: 0.0,
        set_size_min: 3,
        set_size_max: 4,
        ..SynthSpec::default()
    };
    let corpus = synth_corpus(&spec, 17).unwrap();
    let questions: Vec<FITBQuestion> = corpus
        .outfits_in(Split::Test)
        .enumerate()
        .map(|(i, o)| generate_fitb(o, &corpus, 1000 + i as u64).unwrap())
        .collect();
    (corpus, questions)
}

#[test]
fn constant_scorer_accuracy_is_first_index_rate() {
    let (corpus, questions) = fitb_fixture();
    let acc = fitb_accuracy(&questions, &corpus, &ConstantScorer(0.7)).unwrap();
    let expected = questions.iter().filter(|q| q.answer_index == 0).count() as f64
        / questions.len() as f64;
    assert_eq!(acc, expected);
}

#[test]
fn oracle_scorer_gets_everything_right() {
    let (corpus, questions) = fitb_fixture();
    // The synthesized ground-truth item is the only candidate whose
    // embedding matches the completed outfit; recognize it by id lookup.
    struct Oracle<'a> {
        corpus: &'a Corpus,
        truth: Mutex<std::collections::HashMap<Vec<u64>, bool>>,
    }
    // Simpler: mark correctness by exact embedding equality with the
    // held-out item, precomputed per question.
    let _ = Oracle {
        corpus: &corpus,
        truth: Mutex::new(Default::default()),
    };
    for q in &questions {
        let answer_emb = corpus.item(q.answer()).unwrap().embedding.clone();
        let scorer = TableScorer {
            by_last_embedding: {
                // Closure-free: score 1.0 iff the last embedding equals the
                // answer; implemented per question below.
                |_| 0.0
            },
        };
        let _ = scorer;
        // Inline oracle: score by equality with the captured answer.
        struct EqScorer {
            answer: Vec<f64>,
        }
        impl SetScorer for EqScorer {
            fn score_set(&self, embeddings: &[&[f64]]) -> crate::Result<NetworkOutput> {
                let last = embeddings[embeddings.len() - 1];
                Ok(NetworkOutput {
                    compatibility: if last == self.answer.as_slice() { 1.0 } else { 0.0 },
                    style_distribution: [1.0 / 6.0; 6],
                })
            }
        }
        let acc = fitb_accuracy(
            std::slice::from_ref(q),
            &corpus,
            &EqScorer { answer: answer_emb },
        )
        .unwrap();
        assert_eq!(acc, 1.0, "question {}", q.source_id);
    }
}

#[test]
fn fitb_accuracy_invariant_under_question_order() {
    let (corpus, mut questions) = fitb_fixture();
    let a = fitb_accuracy(&questions, &corpus, &ConstantScorer(0.5)).unwrap();
    questions.reverse();
    let b = fitb_accuracy(&questions, &corpus, &ConstantScorer(0.5)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn breakdown_single_group_equals_global() {
    let s = scored(&[(0.9, 1), (0.4, 1), (0.6, 0), (0.1, 0)]);
    let report = breakdown(&s, &[], GroupBy::Length).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].auc, Some(0.75));
    assert_eq!(report.weighted_auc, Some(0.75));
}

#[test]
fn breakdown_weighted_average() {
    // Two groups, sizes 4 and 4, AUC 0.8 vs 0.9 -> 0.85 yields from
    // equal sizes; then sizes 1:3 with AUC 1.0/0.8 -> 0.85.
    let mut s = scored(&[(0.9, 1), (0.8, 1), (0.3, 0), (0.85, 0)]); // auc 0.75
    for x in &mut s {
        x.length = 3;
    }
    let mut t = scored(&[(0.9, 1), (0.7, 1), (0.1, 0), (0.2, 0)]); // auc 1.0
    for x in &mut t {
        x.length = 4;
        x.set_id.push('b');
    }
    s.extend(t);
    let report = breakdown(&s, &[], GroupBy::Length).unwrap();
    assert_eq!(report.rows.len(), 2);
    let expected = (0.75 * 4.0 + 1.0 * 4.0) / 8.0;
    assert!((report.weighted_auc.unwrap() - expected).abs() < 1e-15);
}

#[test]
fn breakdown_skips_single_class_groups_with_notice() {
    let mut s = scored(&[(0.9, 1), (0.4, 1), (0.6, 0), (0.1, 0)]);
    let mut only_pos = scored(&[(0.8, 1), (0.7, 1)]);
    for x in &mut only_pos {
        x.length = 7;
        x.set_id.push('c');
    }
    s.extend(only_pos);
    let report = breakdown(&s, &[], GroupBy::Length).unwrap();
    assert_eq!(report.notices.len(), 1);
    let row7 = report.rows.iter().find(|r| r.group == "7").unwrap();
    assert_eq!(row7.auc, None);
    // Weighted average excludes the undefined group.
    assert_eq!(report.weighted_auc, Some(0.75));
}

#[test]
fn fast_auc_equals_brute_force_exactly() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
    for case in 0..50 {
        let n = rng.random_range(5..=200);
        let sets: Vec<ScoredSet> = (0..n)
            .map(|i| {
                // Quantized scores force plenty of ties.
                let q = rng.random_range(0..=10);
                ScoredSet {
                    set_id: format!("s{i}"),
                    score: q as f64 / 10.0,
                    label: if rng.random::<bool>() { Label::Compatible } else { Label::Incompatible },
                    style: None,
                    length: 3,
                }
            })
            .collect();
        let p = sets.iter().filter(|s| s.label == Label::Compatible).count();
        if p == 0 || p == sets.len() {
            continue;
        }
        let fast = auc(&sets).unwrap();
        let brute = brute_force_auc(&sets);
        assert_eq!(fast, brute, "case {case}: fast {fast} vs brute {brute}");
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn sets_strategy() -> impl Strategy<Value = Vec<ScoredSet>> {
        prop::collection::vec((0u32..100, prop::bool::ANY), 4..60).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (q, pos))| ScoredSet {
                    set_id: format!("s{i}"),
                    score: q as f64 / 100.0,
                    label: if pos { Label::Compatible } else { Label::Incompatible },
                    style: None,
                    length: 3,
                })
                .collect()
        })
    }

    proptest! {
        // AUC is invariant under strictly monotone transforms of scores.
        #[test]
        fn auc_monotone_transform_invariant(sets in sets_strategy()) {
            let p = sets.iter().filter(|s| s.label == Label::Compatible).count();
            prop_assume!(p > 0 && p < sets.len());
            let base = auc(&sets).unwrap();
            let transformed: Vec<ScoredSet> = sets
                .iter()
                .map(|s| ScoredSet {
                    // x/(1+x) is strictly increasing on [0, 1].
                    score: s.score / (1.0 + s.score),
                    ..s.clone()
                })
                .collect();
            prop_assert_eq!(base, auc(&transformed).unwrap());
        }

        #[test]
        fn auc_matches_brute_force(sets in sets_strategy()) {
            let p = sets.iter().filter(|s| s.label == Label::Compatible).count();
            prop_assume!(p > 0 && p < sets.len());
            prop_assert_eq!(auc(&sets).unwrap(), brute_force_auc(&sets));
        }
    }
}
