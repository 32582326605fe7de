//! Benchmark metrics: compatibility AUC and fill-in-the-blank accuracy,
//! with per-style and per-length breakdowns.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, FITBQuestion, Label, Split};
use crate::error::{NgfError, Result};
use crate::graph::SetScorer;
use crate::styles::StyleLabel;

/// One scored garment set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredSet {
    pub set_id: String,
    pub score: f64,
    pub label: Label,
    pub style: Option<StyleLabel>,
    pub length: usize,
}

impl ScoredSet {
    pub fn validate(&self) -> Result<()> {
        if !self.score.is_finite() || !(0.0..=1.0).contains(&self.score) {
            return Err(NgfError::Numeric(format!(
                "set '{}' score {} outside [0, 1]",
                self.set_id, self.score
            )));
        }
        Ok(())
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(score+ > score-) + 0.5 * P(tie)`, computed exactly from average
/// ranks. Requires both classes.
pub fn auc(scored: &[ScoredSet]) -> Result<f64> {
    let p = scored.iter().filter(|s| s.label == Label::Compatible).count();
    let n = scored.len() - p;
    if p == 0 || n == 0 {
        return Err(NgfError::UndefinedMetric(format!(
            "AUC needs both classes, got {p} positives / {n} negatives"
        )));
    }
    for s in scored {
        s.validate()?;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].score.partial_cmp(&scored[b].score).unwrap());

    // Average ranks within tie groups keep everything dyadic, so the
    // result equals the brute-force pair count bit for bit.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].score == scored[order[i]].score {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            if scored[k].label == Label::Compatible {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p as f64 * n as f64))
}

/// Score every outfit of a split with the model.
pub fn score_corpus(
    corpus: &Corpus,
    split: Split,
    scorer: &dyn SetScorer,
) -> Result<Vec<ScoredSet>> {
    let outfits: Vec<_> = corpus.outfits_in(split).collect();
    outfits
        .par_iter()
        .map(|outfit| {
            let embeddings = corpus.outfit_embeddings(outfit)?;
            let out = scorer.score_set(&embeddings)?;
            Ok(ScoredSet {
                set_id: outfit.id.clone(),
                score: out.compatibility,
                label: outfit.label,
                style: outfit.style,
                length: outfit.items.len(),
            })
        })
        .collect()
}

/// Outcome of one fill-in-the-blank question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitbOutcome {
    pub source_id: String,
    pub correct: bool,
    pub picked_index: usize,
    pub style: Option<StyleLabel>,
    pub set_len: usize,
}

/// Accuracy plus per-question outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitbEval {
    pub accuracy: f64,
    pub outcomes: Vec<FitbOutcome>,
}

/// Answer each question by scoring the four completed sets; argmax picks
/// the answer, ties resolve to the lowest candidate index.
pub fn fitb_eval(
    questions: &[FITBQuestion],
    corpus: &Corpus,
    scorer: &dyn SetScorer,
) -> Result<FitbEval> {
    if questions.is_empty() {
        return Err(NgfError::Contract("no fill-in-the-blank questions".into()));
    }
    let outcomes: Vec<FitbOutcome> = questions
        .par_iter()
        .map(|q| {
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for (i, cand) in q.candidates.iter().enumerate() {
                let mut embeddings: Vec<&[f64]> = Vec::with_capacity(q.given.len() + 1);
                for id in &q.given {
                    embeddings.push(&corpus.item(id)?.embedding);
                }
                embeddings.push(&corpus.item(cand)?.embedding);
                let out = scorer.score_set(&embeddings).map_err(|e| {
                    NgfError::Numeric(format!("scoring question '{}': {e}", q.source_id))
                })?;
                if out.compatibility > best_score {
                    best_score = out.compatibility;
                    best = i;
                }
            }
            Ok(FitbOutcome {
                source_id: q.source_id.clone(),
                correct: best == q.answer_index,
                picked_index: best,
                style: q.style,
                set_len: q.set_len(),
            })
        })
        .collect::<Result<_>>()?;
    let accuracy =
        outcomes.iter().filter(|o| o.correct).count() as f64 / outcomes.len() as f64;
    Ok(FitbEval { accuracy, outcomes })
}

/// Convenience wrapper returning just the accuracy.
pub fn fitb_accuracy(
    questions: &[FITBQuestion],
    corpus: &Corpus,
    scorer: &dyn SetScorer,
) -> Result<f64> {
    Ok(fitb_eval(questions, corpus, scorer)?.accuracy)
}

/// Grouping key for breakdown tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Style,
    Length,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub group: String,
    pub n_sets: usize,
    pub auc: Option<f64>,
    pub n_questions: usize,
    pub fitb: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BreakdownReport {
    pub by: GroupBy,
    pub rows: Vec<BreakdownRow>,
    /// Group-size weighted averages over rows where the metric exists.
    pub weighted_auc: Option<f64>,
    pub weighted_fitb: Option<f64>,
    /// Groups skipped because a metric was undefined there.
    pub notices: Vec<String>,
}

fn group_key(by: GroupBy, style: Option<StyleLabel>, length: usize) -> String {
    match by {
        GroupBy::Style => style
            .map(|s| s.to_string())
            .unwrap_or_else(|| "unlabeled".into()),
        GroupBy::Length => format!("{length}"),
    }
}

/// Per-group AUC and fill-in-the-blank accuracy. Weighted averages use
/// group sizes as weights; groups where a metric is undefined are skipped
/// with a notice.
pub fn breakdown(
    scored: &[ScoredSet],
    fitb: &[FitbOutcome],
    by: GroupBy,
) -> Result<BreakdownReport> {
    let mut groups: BTreeMap<String, (Vec<&ScoredSet>, Vec<&FitbOutcome>)> = BTreeMap::new();
    for s in scored {
        groups
            .entry(group_key(by, s.style, s.length))
            .or_default()
            .0
            .push(s);
    }
    for o in fitb {
        groups
            .entry(group_key(by, o.style, o.set_len))
            .or_default()
            .1
            .push(o);
    }

    let mut rows = Vec::new();
    let mut notices = Vec::new();
    let (mut auc_w, mut auc_acc) = (0usize, 0.0);
    let (mut fitb_w, mut fitb_acc) = (0usize, 0.0);
    for (group, (sets, outcomes)) in &groups {
        let group_auc = if sets.is_empty() {
            None
        } else {
            let owned: Vec<ScoredSet> = sets.iter().map(|s| (*s).clone()).collect();
            match auc(&owned) {
                Ok(v) => Some(v),
                Err(NgfError::UndefinedMetric(_)) => {
                    notices.push(format!("group '{group}': AUC undefined (single class)"));
                    None
                }
                Err(e) => return Err(e),
            }
        };
        let group_fitb = if outcomes.is_empty() {
            None
        } else {
            Some(outcomes.iter().filter(|o| o.correct).count() as f64 / outcomes.len() as f64)
        };
        if let Some(v) = group_auc {
            auc_w += sets.len();
            auc_acc += v * sets.len() as f64;
        }
        if let Some(v) = group_fitb {
            fitb_w += outcomes.len();
            fitb_acc += v * outcomes.len() as f64;
        }
        rows.push(BreakdownRow {
            group: group.clone(),
            n_sets: sets.len(),
            auc: group_auc,
            n_questions: outcomes.len(),
            fitb: group_fitb,
        });
    }
    Ok(BreakdownReport {
        by,
        rows,
        weighted_auc: (auc_w > 0).then(|| auc_acc / auc_w as f64),
        weighted_fitb: (fitb_w > 0).then(|| fitb_acc / fitb_w as f64),
        notices,
    })
}

impl BreakdownReport {
    /// Aligned-column text table, one row per group plus the weighted
    /// average.
    pub fn table(&self) -> String {
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "-".into(),
        };
        let mut out = format!(
            "{:<16} {:>7} {:>8} {:>7} {:>8}\n",
            "group", "sets", "auc", "quest", "fitb"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>7} {:>8} {:>7} {:>8}\n",
                r.group,
                r.n_sets,
                fmt_opt(r.auc),
                r.n_questions,
                fmt_opt(r.fitb)
            ));
        }
        out.push_str(&format!(
            "{:<16} {:>7} {:>8} {:>7} {:>8}\n",
            "weighted avg",
            "",
            fmt_opt(self.weighted_auc),
            "",
            fmt_opt(self.weighted_fitb)
        ));
        for n in &self.notices {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests;
