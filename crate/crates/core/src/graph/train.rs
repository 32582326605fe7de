//! Training of the graph filtering network.
//!
//! Binary cross-entropy on every set; focal style loss on compatible sets
//! only (the style head never sees negatives). The loop is deterministic in
//! the seed regardless of thread count: work is cut into fixed-size chunks
//! and chunk gradients are summed in index order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{bce_on_tape, focal_on_tape};
use super::model::{forward_on_tape, register_params, rows_leaf, GraphFilterNet, NetworkParams};
use super::GraphNetConfig;
use crate::autodiff::Tape;
use crate::data::{Corpus, Label, Split};
use crate::error::{NgfError, Result};
use crate::optim::{Adam, AdamConfig};

/// Sets processed per tape; fixed so that gradient summation order does
/// not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphTrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GraphTrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Mean training losses of one epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_bce: f64,
    pub mean_focal: f64,
}

#[derive(Debug)]
pub struct GraphTrainResult {
    pub net: GraphFilterNet,
    pub curve: Vec<EpochStats>,
    pub warnings: Vec<String>,
}

struct TrainSet {
    nodes: Vec<Vec<f64>>,
    label: Label,
    style: Option<usize>,
}

/// Train on the corpus train split. `init` continues from existing weights
/// when given.
pub fn train_graph(
    corpus: &Corpus,
    cfg: &GraphNetConfig,
    tcfg: &GraphTrainConfig,
    init: Option<NetworkParams>,
) -> Result<GraphTrainResult> {
    cfg.validate()?;
    if corpus.dim != cfg.input_dim {
        return Err(NgfError::Contract(format!(
            "corpus dim {} vs network input dim {}",
            corpus.dim, cfg.input_dim
        )));
    }
    let mut sets = Vec::new();
    for outfit in corpus.outfits_in(Split::Train) {
        let nodes: Vec<Vec<f64>> = corpus
            .outfit_embeddings(outfit)?
            .into_iter()
            .map(<[f64]>::to_vec)
            .collect();
        let style = match (cfg.style_head, outfit.label) {
            (true, Label::Compatible) => Some(
                outfit
                    .style
                    .ok_or_else(|| {
                        NgfError::Data(format!(
                            "style head enabled but compatible set '{}' has no style label",
                            outfit.id
                        ))
                    })?
                    .index(),
            ),
            _ => None,
        };
        sets.push(TrainSet {
            nodes,
            label: outfit.label,
            style,
        });
    }
    if sets.is_empty() {
        return Err(NgfError::Data("train split has no outfits".into()));
    }
    let mut warnings = Vec::new();
    let n_pos = sets.iter().filter(|s| s.label == Label::Compatible).count();
    if n_pos == 0 || n_pos == sets.len() {
        warnings.push(format!(
            "train split has a single class ({n_pos}/{} compatible); AUC will be undefined",
            sets.len()
        ));
    }

    let mut params = match init {
        Some(p) => p,
        None => NetworkParams::init(cfg, tcfg.seed)?,
    };
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(tcfg.adam.clone(), &sizes);
    let mut curve = Vec::with_capacity(tcfg.epochs);

    let mut order: Vec<usize> = (0..sets.len()).collect();
    for epoch in 0..tcfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ (0xa076_1d64 + epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        let (mut bce_sum, mut focal_sum) = (0.0, 0.0);
        for batch in order.chunks(tcfg.batch_size) {
            let chunk_results: Vec<Result<(Vec<Vec<f64>>, f64, f64)>> = batch
                .par_chunks(CHUNK)
                .map(|chunk| chunk_pass(&sets, chunk, &params, cfg))
                .collect();
            let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            for r in chunk_results {
                let (g, bce, focal) = r?;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    for (a, v) in acc.iter_mut().zip(gi) {
                        *a += v;
                    }
                }
                bce_sum += bce;
                focal_sum += focal;
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            adam.step(&mut params.tensors_mut(), &grads)?;
        }

        let n = sets.len() as f64;
        let stats = EpochStats {
            epoch,
            mean_loss: (bce_sum + focal_sum) / n,
            mean_bce: bce_sum / n,
            mean_focal: focal_sum / n,
        };
        if !stats.mean_loss.is_finite() {
            return Err(NgfError::Numeric(format!(
                "training diverged at epoch {epoch} (loss {})",
                stats.mean_loss
            )));
        }
        curve.push(stats);
    }

    Ok(GraphTrainResult {
        net: GraphFilterNet {
            cfg: cfg.clone(),
            params,
        },
        curve,
        warnings,
    })
}

/// Forward+backward over one fixed chunk of sets on a private tape.
/// Returns summed gradients and summed loss terms.
fn chunk_pass(
    sets: &[TrainSet],
    chunk: &[usize],
    params: &NetworkParams,
    cfg: &GraphNetConfig,
) -> Result<(Vec<Vec<f64>>, f64, f64)> {
    let mut tape = Tape::new();
    let pv = register_params(&mut tape, params, true);

    let mut total = None;
    let (mut bce_sum, mut focal_sum) = (0.0, 0.0);
    for &si in chunk {
        let set = &sets[si];
        let x = rows_leaf(&mut tape, &set.nodes)?;
        let (comp, style) = forward_on_tape(&mut tape, &pv, cfg, x, set.nodes.len())?;
        let bce = bce_on_tape(&mut tape, comp, set.label)?;
        bce_sum += tape.value(bce).values()[0];
        let set_loss = match set.style {
            Some(target) => {
                let focal = focal_on_tape(&mut tape, style, target, cfg.gamma)?;
                focal_sum += tape.value(focal).values()[0];
                tape.add(bce, focal)?
            }
            None => bce,
        };
        total = Some(match total {
            None => set_loss,
            Some(t) => tape.add(t, set_loss)?,
        });
    }
    let root = total.expect("chunks are nonempty");
    tape.backward(root)?;
    let grads = pv
        .flat
        .iter()
        .map(|&id| {
            tape.grad(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tape.value(id).len()])
        })
        .collect();
    Ok((grads, bce_sum, focal_sum))
}
