//! Triplet metric learning over item embeddings.
//!
//! For an anchor x_i of type u and a positive partner x_j of type v from the
//! same compatible set, two negatives are drawn: an *absolute* negative of
//! the anchor's own type (two same-type items never share a set) and a
//! *relative* negative of the partner's type that never co-occurs with the
//! anchor. Their distances combine as
//! `d_neg = alpha * d_abs_neg + (1 - alpha) * d_re_neg`, and the loss is the
//! margin hinge `max(0, d_pos - d_neg + margin)`.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ReduceKind, Tape, Tensor, VarId};
use crate::data::{Corpus, ItemRecord, Label, Split};
use crate::error::{NgfError, Result};
use crate::optim::{Adam, AdamConfig};

/// Distance metric between embeddings. The ablation study names Euclidean
/// distance as the pairwise relation, and it is the only metric here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
}

/// Triplet construction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripletConfig {
    /// Ratio of absolute negatives in the combined negative distance.
    pub alpha: f64,
    /// Triplet margin.
    pub margin: f64,
    pub metric: DistanceMetric,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            margin: 0.3,
            metric: DistanceMetric::Euclidean,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(NgfError::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.margin > 0.0) {
            return Err(NgfError::Config(format!("margin {} must be positive", self.margin)));
        }
        Ok(())
    }
}

/// The three distances of one triplet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletDistances {
    pub d_pos: f64,
    pub d_abs_neg: f64,
    pub d_re_neg: f64,
}

impl TripletDistances {
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [
            ("d_pos", self.d_pos),
            ("d_abs_neg", self.d_abs_neg),
            ("d_re_neg", self.d_re_neg),
        ] {
            if !d.is_finite() || d < 0.0 {
                return Err(NgfError::Domain(format!("{name} = {d} is not a distance")));
            }
        }
        Ok(())
    }
}

/// Euclidean distance between two items' embeddings.
pub fn pair_distance(a: &ItemRecord, b: &ItemRecord, cfg: &TripletConfig) -> Result<f64> {
    if a.embedding.len() != b.embedding.len() {
        return Err(NgfError::Contract(format!(
            "items '{}' and '{}' have embedding dims {} vs {}",
            a.id,
            b.id,
            a.embedding.len(),
            b.embedding.len()
        )));
    }
    let DistanceMetric::Euclidean = cfg.metric;
    Ok(euclidean(&a.embedding, &b.embedding))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `d_neg = alpha * d_abs_neg + (1 - alpha) * d_re_neg`.
pub fn combined_negative(d: &TripletDistances, cfg: &TripletConfig) -> f64 {
    cfg.alpha * d.d_abs_neg + (1.0 - cfg.alpha) * d.d_re_neg
}

/// Margin hinge `max(0, d_pos - d_neg + margin)`.
pub fn triplet_loss(d: &TripletDistances, cfg: &TripletConfig) -> f64 {
    (d.d_pos - combined_negative(d, cfg) + cfg.margin).max(0.0)
}

/// Reusable negative-pool index over one corpus.
pub struct NegativeSampler<'a> {
    corpus: &'a Corpus,
    cooccur: HashSet<(String, String)>,
}

impl<'a> NegativeSampler<'a> {
    pub fn new(corpus: &'a Corpus) -> Self {
        Self {
            corpus,
            cooccur: corpus.cooccurrence(),
        }
    }

    /// Uniformly draw the absolute and relative negatives for one
    /// (anchor, positive) pair, as indexes into `corpus.items`.
    pub fn sample_idx(
        &self,
        anchor: &ItemRecord,
        positive: &ItemRecord,
        rng: &mut ChaCha8Rng,
    ) -> Result<(usize, usize)> {
        let abs_pool: Vec<usize> = self
            .corpus
            .items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.category == anchor.category && it.id != anchor.id)
            .map(|(i, _)| i)
            .collect();
        if abs_pool.is_empty() {
            return Err(NgfError::Sampling(format!(
                "absolute negative pool empty: no other item of category '{}'",
                anchor.category
            )));
        }
        let rel_pool: Vec<usize> = self
            .corpus
            .items
            .iter()
            .enumerate()
            .filter(|(_, it)| {
                it.category == positive.category
                    && !self
                        .cooccur
                        .contains(&(anchor.id.clone(), it.id.clone()))
            })
            .map(|(i, _)| i)
            .collect();
        if rel_pool.is_empty() {
            return Err(NgfError::Sampling(format!(
                "relative negative pool empty: every '{}' item co-occurs with '{}'",
                positive.category, anchor.id
            )));
        }
        let abs_neg = abs_pool[rng.random_range(0..abs_pool.len())];
        let rel_neg = rel_pool[rng.random_range(0..rel_pool.len())];
        Ok((abs_neg, rel_neg))
    }

    /// Like [`NegativeSampler::sample_idx`] but returning the items.
    pub fn sample(
        &self,
        anchor: &ItemRecord,
        positive: &ItemRecord,
        rng: &mut ChaCha8Rng,
    ) -> Result<(&'a ItemRecord, &'a ItemRecord)> {
        let (a, r) = self.sample_idx(anchor, positive, rng)?;
        Ok((&self.corpus.items[a], &self.corpus.items[r]))
    }
}

/// One-shot sampling with a fresh seeded generator.
pub fn sample_negatives<'a>(
    anchor: &ItemRecord,
    positive: &ItemRecord,
    corpus: &'a Corpus,
    seed: u64,
) -> Result<(&'a ItemRecord, &'a ItemRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NegativeSampler::new(corpus).sample(anchor, positive, &mut rng)
}

/// Learnable two-layer projection applied on top of raw item embeddings.
#[derive(Debug, Clone)]
pub struct ProjectionParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ProjectionParams {
    /// Xavier-uniform initialization for a dim -> dim -> dim stack.
    pub fn init(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xavier = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let vals: Vec<f64> = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Tensor::new(vec![rows, cols], vals).expect("finite init")
        };
        Self {
            w1: xavier(dim, dim),
            // Small positive bias keeps rectifier units alive at start.
            b1: Tensor::new(vec![dim], vec![0.01; dim]).expect("finite init"),
            w2: xavier(dim, dim),
            b2: Tensor::zeros(vec![dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.shape()[0]
    }

    /// Forward map for plain slices (inference path).
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        debug_assert_eq!(x.len(), dim);
        let mut h = self.b1.values().to_vec();
        for k in 0..dim {
            let a = x[k];
            let row = &self.w1.values()[k * dim..(k + 1) * dim];
            for (hj, w) in h.iter_mut().zip(row) {
                *hj += a * w;
            }
        }
        for v in h.iter_mut() {
            *v = v.max(0.0);
        }
        let mut out = self.b2.values().to_vec();
        for k in 0..dim {
            let a = h[k];
            if a == 0.0 {
                continue;
            }
            let row = &self.w2.values()[k * dim..(k + 1) * dim];
            for (oj, w) in out.iter_mut().zip(row) {
                *oj += a * w;
            }
        }
        out
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        vec![
            ("proj.w1".into(), self.w1.clone()),
            ("proj.b1".into(), self.b1.clone()),
            ("proj.w2".into(), self.w2.clone()),
            ("proj.b2".into(), self.b2.clone()),
        ]
    }

    pub fn from_named(tensors: &[(String, Tensor)]) -> Result<Self> {
        let find = |name: &str| -> Result<Tensor> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| NgfError::Checkpoint(format!("missing tensor '{name}'")))
        };
        Ok(Self {
            w1: find("proj.w1")?,
            b1: find("proj.b1")?,
            w2: find("proj.w2")?,
            b2: find("proj.b2")?,
        })
    }
}

/// Training options for the embedding projection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedTrainConfig {
    pub triplet: TripletConfig,
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Cap on (anchor, positive) pairs used per epoch.
    pub max_triplets_per_epoch: usize,
    pub seed: u64,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        Self {
            triplet: TripletConfig::default(),
            adam: AdamConfig::with_lr(5e-5),
            epochs: 200,
            max_triplets_per_epoch: 2048,
            seed: 0,
        }
    }
}

/// Trained projection plus the per-epoch mean triplet loss.
#[derive(Debug)]
pub struct EmbedTrainResult {
    pub params: ProjectionParams,
    pub loss_curve: Vec<f64>,
}

/// Enumerate one triplet anchor pair per ordered (anchor, positive) pair
/// within each compatible set of the split.
fn triplet_pairs(corpus: &Corpus, split: Split) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for outfit in corpus.outfits_in(split) {
        if outfit.label != Label::Compatible {
            continue;
        }
        let idx: Vec<usize> = outfit
            .items
            .iter()
            .map(|id| corpus.item_index(id).expect("validated corpus"))
            .collect();
        for &a in &idx {
            for &p in &idx {
                if a != p {
                    pairs.push((a, p));
                }
            }
        }
    }
    pairs
}

fn rows_leaf(tape: &mut Tape, corpus: &Corpus, rows: &[usize]) -> VarId {
    let dim = corpus.dim;
    let mut values = Vec::with_capacity(rows.len() * dim);
    for &r in rows {
        values.extend_from_slice(&corpus.items[r].embedding);
    }
    tape.leaf(Tensor::new(vec![rows.len(), dim], values).expect("corpus embeddings are finite"))
}

fn project_on_tape(
    tape: &mut Tape,
    x: VarId,
    w1: VarId,
    b1: VarId,
    w2: VarId,
    b2: VarId,
) -> Result<VarId> {
    let h = tape.affine(x, w1, b1)?;
    let h = tape.relu(h);
    tape.affine(h, w2, b2)
}

fn row_distance(tape: &mut Tape, a: VarId, b: VarId) -> Result<VarId> {
    let diff = tape.sub(a, b)?;
    let sq = tape.mul(diff, diff)?;
    let ss = tape.reduce(sq, 1, ReduceKind::Sum)?;
    // Tiny floor keeps the sqrt gradient finite when a pair coincides.
    let ss = tape.add_scalar(ss, 1e-12);
    Ok(tape.sqrt(ss))
}

/// Minimize the mean triplet loss of a two-layer projection over the train
/// split. Deterministic in `(corpus, cfg)`.
pub fn train_embedding(corpus: &Corpus, cfg: &EmbedTrainConfig) -> Result<EmbedTrainResult> {
    cfg.triplet.validate()?;
    let all_pairs = triplet_pairs(corpus, Split::Train);
    if all_pairs.is_empty() {
        return Err(NgfError::Data(
            "no triplets constructible: need a compatible train set of size >= 2".into(),
        ));
    }
    let sampler = NegativeSampler::new(corpus);
    let mut params = ProjectionParams::init(corpus.dim, cfg.seed);
    let sizes: Vec<usize> = [&params.w1, &params.b1, &params.w2, &params.b2]
        .iter()
        .map(|t| t.len())
        .collect();
    let mut adam = Adam::new(cfg.adam.clone(), &sizes);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e37_79b9 + epoch as u64));
        let mut pairs = all_pairs.clone();
        // Partial Fisher-Yates: shuffle only the prefix we keep.
        let keep = pairs.len().min(cfg.max_triplets_per_epoch);
        for i in 0..keep {
            let j = rng.random_range(i..pairs.len());
            pairs.swap(i, j);
        }
        pairs.truncate(keep);

        let mut anchors = Vec::with_capacity(keep);
        let mut positives = Vec::with_capacity(keep);
        let mut abs_negs = Vec::with_capacity(keep);
        let mut rel_negs = Vec::with_capacity(keep);
        for &(a, p) in &pairs {
            let (abs_neg, rel_neg) =
                sampler.sample_idx(&corpus.items[a], &corpus.items[p], &mut rng)?;
            anchors.push(a);
            positives.push(p);
            abs_negs.push(abs_neg);
            rel_negs.push(rel_neg);
        }

        let mut tape = Tape::new();
        let w1 = tape.leaf(params.w1.clone().with_grad());
        let b1 = tape.leaf(params.b1.clone().with_grad());
        let w2 = tape.leaf(params.w2.clone().with_grad());
        let b2 = tape.leaf(params.b2.clone().with_grad());
        let za = {
            let x = rows_leaf(&mut tape, corpus, &anchors);
            project_on_tape(&mut tape, x, w1, b1, w2, b2)?
        };
        let zp = {
            let x = rows_leaf(&mut tape, corpus, &positives);
            project_on_tape(&mut tape, x, w1, b1, w2, b2)?
        };
        let zn_abs = {
            let x = rows_leaf(&mut tape, corpus, &abs_negs);
            project_on_tape(&mut tape, x, w1, b1, w2, b2)?
        };
        let zn_rel = {
            let x = rows_leaf(&mut tape, corpus, &rel_negs);
            project_on_tape(&mut tape, x, w1, b1, w2, b2)?
        };
        let d_pos = row_distance(&mut tape, za, zp)?;
        let d_abs = row_distance(&mut tape, za, zn_abs)?;
        let d_rel = row_distance(&mut tape, za, zn_rel)?;
        let d_abs_w = tape.mul_scalar(d_abs, cfg.triplet.alpha);
        let d_rel_w = tape.mul_scalar(d_rel, 1.0 - cfg.triplet.alpha);
        let d_neg = tape.add(d_abs_w, d_rel_w)?;
        let gap = tape.sub(d_pos, d_neg)?;
        let shifted = tape.add_scalar(gap, cfg.triplet.margin);
        let hinge = tape.relu(shifted);
        let loss = tape.mean_all(hinge);

        let loss_value = tape.value(loss).values()[0];
        if !loss_value.is_finite() {
            return Err(NgfError::Numeric(format!(
                "non-finite triplet loss at epoch {epoch}"
            )));
        }
        curve.push(loss_value);

        tape.backward(loss)?;
        let grads: Vec<Vec<f64>> = [w1, b1, w2, b2]
            .iter()
            .map(|&id| {
                tape.grad(id)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.value(id).len()])
            })
            .collect();
        adam.step(
            &mut [
                &mut params.w1,
                &mut params.b1,
                &mut params.w2,
                &mut params.b2,
            ],
            &grads,
        )?;
    }

    Ok(EmbedTrainResult {
        params,
        loss_curve: curve,
    })
}

/// Fraction of triplets drawn from `split` that satisfy the margin
/// (`d_pos + margin <= d_neg`), measured in projected space when `params`
/// is given, else on raw embeddings.
pub fn margin_satisfaction(
    corpus: &Corpus,
    split: Split,
    params: Option<&ProjectionParams>,
    cfg: &TripletConfig,
    seed: u64,
) -> Result<f64> {
    cfg.validate()?;
    let pairs = triplet_pairs(corpus, split);
    if pairs.is_empty() {
        return Err(NgfError::Data(format!(
            "no triplets constructible from the {split:?} split"
        )));
    }
    let sampler = NegativeSampler::new(corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embed = |item: &ItemRecord| -> Vec<f64> {
        match params {
            Some(p) => p.project(&item.embedding),
            None => item.embedding.clone(),
        }
    };
    let mut satisfied = 0usize;
    for &(a, p) in &pairs {
        let (anchor, positive) = (&corpus.items[a], &corpus.items[p]);
        let (abs_neg, rel_neg) = sampler.sample(anchor, positive, &mut rng)?;
        let (za, zp) = (embed(anchor), embed(positive));
        let (zabs, zrel) = (embed(abs_neg), embed(rel_neg));
        let d = TripletDistances {
            d_pos: euclidean(&za, &zp),
            d_abs_neg: euclidean(&za, &zabs),
            d_re_neg: euclidean(&za, &zrel),
        };
        if d.d_pos + cfg.margin <= combined_negative(&d, cfg) {
            satisfied += 1;
        }
    }
    Ok(satisfied as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests;
