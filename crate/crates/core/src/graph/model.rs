//! Parameters and forward pass of the graph filtering network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Activation, AggregationMode, GraphNetConfig, NetworkOutput, PoolKind, SetScorer, STYLE_COUNT,
};
use crate::autodiff::{ReduceKind, Tape, Tensor, VarId};
use crate::error::{NgfError, Result};

/// Fully connected, undirected graph over a set's node embeddings. The
/// edge set is exactly `{(i, j) : i < j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GarmentGraph {
    nodes: Vec<Vec<f64>>,
    dim: usize,
}

impl GarmentGraph {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn edge_count(&self) -> usize {
        self.n() * (self.n() - 1) / 2
    }

    /// Edges in lexicographic order, `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut edges = Vec::with_capacity(self.edge_count());
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        edges
    }
}

/// Assemble the complete graph over a set of embeddings. Node order is
/// preserved but is semantically irrelevant downstream.
pub fn build_graph(items: Vec<Vec<f64>>) -> Result<GarmentGraph> {
    if items.len() < 2 {
        return Err(NgfError::Contract(format!(
            "a garment graph needs at least 2 items, got {}",
            items.len()
        )));
    }
    let dim = items[0].len();
    if dim == 0 || items.iter().any(|v| v.len() != dim) {
        return Err(NgfError::Contract(
            "garment graph nodes must share one positive dimension".into(),
        ));
    }
    Ok(GarmentGraph { nodes: items, dim })
}

/// One affine map's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePair {
    pub w: Tensor,
    pub b: Tensor,
}

/// Two consecutive position-wise affine maps with the configured
/// nonlinearity between them.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoAffine {
    pub a1: AffinePair,
    pub a2: AffinePair,
}

/// Weights of one edge-aggregation layer. `g` is absent in node mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub h: TwoAffine,
    pub g: Option<TwoAffine>,
}

/// All learnable weights, grouped by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    pub node_map: AffinePair,
    pub head: Vec<AffinePair>,
}

impl NetworkParams {
    /// Xavier-uniform initialization; biases ahead of a rectifier start at
    /// a small positive value so no unit is born dead.
    pub fn init(cfg: &GraphNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut affine = |d_in: usize, d_out: usize, pre_relu: bool| {
            let bound = (6.0 / (d_in + d_out) as f64).sqrt();
            let w: Vec<f64> = (0..d_in * d_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let bias = if pre_relu { 0.01 } else { 0.0 };
            AffinePair {
                w: Tensor::new(vec![d_in, d_out], w).expect("finite init"),
                b: Tensor::new(vec![d_out], vec![bias; d_out]).expect("finite init"),
            }
        };
        let relu = cfg.activation == Activation::Relu;
        let node_dims = cfg.node_dims();
        let ppl = cfg.pair_pool.len();
        let layers = cfg
            .layer_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| LayerParams {
                h: TwoAffine {
                    a1: affine(node_dims[i], w, relu),
                    a2: affine(w, w, false),
                },
                g: match cfg.mode {
                    AggregationMode::Node => None,
                    _ => Some(TwoAffine {
                        a1: affine(ppl * w, w, relu),
                        a2: affine(w, w, false),
                    }),
                },
            })
            .collect();
        let node_map = affine(*node_dims.last().unwrap(), cfg.node_map_width, false);
        let mut head = Vec::new();
        let mut d = cfg.pooled_width();
        for &hidden in &cfg.head_hidden {
            head.push(affine(d, hidden, relu));
            d = hidden;
        }
        head.push(affine(d, 1 + STYLE_COUNT, false));
        Ok(Self {
            layers,
            node_map,
            head,
        })
    }

    /// Checkpoint view: stable names in declaration order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let push_two = |tag: &str, two: &TwoAffine, out: &mut Vec<(String, Tensor)>| {
                out.push((format!("layer{i}.{tag}.w1"), two.a1.w.clone()));
                out.push((format!("layer{i}.{tag}.b1"), two.a1.b.clone()));
                out.push((format!("layer{i}.{tag}.w2"), two.a2.w.clone()));
                out.push((format!("layer{i}.{tag}.b2"), two.a2.b.clone()));
            };
            push_two("h", &layer.h, &mut out);
            if let Some(g) = &layer.g {
                push_two("g", g, &mut out);
            }
        }
        out.push(("node_map.w".into(), self.node_map.w.clone()));
        out.push(("node_map.b".into(), self.node_map.b.clone()));
        for (j, a) in self.head.iter().enumerate() {
            out.push((format!("head{j}.w"), a.w.clone()));
            out.push((format!("head{j}.b"), a.b.clone()));
        }
        out
    }

    /// Group name per tensor, aligned with `named_tensors` order.
    pub fn group_names(&self) -> Vec<String> {
        self.named_tensors().into_iter().map(|(n, _)| n).collect()
    }

    /// Rebuild from checkpoint tensors, verifying shapes against `cfg`.
    pub fn from_named(cfg: &GraphNetConfig, tensors: &[(String, Tensor)]) -> Result<Self> {
        let template = Self::init(cfg, 0)?;
        let lookup = |name: &str, like: &Tensor| -> Result<Tensor> {
            let t = tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| NgfError::Checkpoint(format!("missing tensor '{name}'")))?;
            if t.shape() != like.shape() {
                return Err(NgfError::Checkpoint(format!(
                    "tensor '{name}' has shape {:?}, config implies {:?}",
                    t.shape(),
                    like.shape()
                )));
            }
            Ok(t)
        };
        let mut layers = Vec::with_capacity(template.layers.len());
        for (i, tl) in template.layers.iter().enumerate() {
            let load_two = |tag: &str, like: &TwoAffine| -> Result<TwoAffine> {
                Ok(TwoAffine {
                    a1: AffinePair {
                        w: lookup(&format!("layer{i}.{tag}.w1"), &like.a1.w)?,
                        b: lookup(&format!("layer{i}.{tag}.b1"), &like.a1.b)?,
                    },
                    a2: AffinePair {
                        w: lookup(&format!("layer{i}.{tag}.w2"), &like.a2.w)?,
                        b: lookup(&format!("layer{i}.{tag}.b2"), &like.a2.b)?,
                    },
                })
            };
            layers.push(LayerParams {
                h: load_two("h", &tl.h)?,
                g: match &tl.g {
                    Some(g) => Some(load_two("g", g)?),
                    None => None,
                },
            });
        }
        Ok(Self {
            layers,
            node_map: AffinePair {
                w: lookup("node_map.w", &template.node_map.w)?,
                b: lookup("node_map.b", &template.node_map.b)?,
            },
            head: template
                .head
                .iter()
                .enumerate()
                .map(|(j, th)| {
                    Ok(AffinePair {
                        w: lookup(&format!("head{j}.w"), &th.w)?,
                        b: lookup(&format!("head{j}.b"), &th.b)?,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }

    /// Every tensor in `named_tensors` order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for two in std::iter::once(&layer.h).chain(layer.g.as_ref()) {
                out.extend([&two.a1.w, &two.a1.b, &two.a2.w, &two.a2.b]);
            }
        }
        out.extend([&self.node_map.w, &self.node_map.b]);
        for a in &self.head {
            out.extend([&a.w, &a.b]);
        }
        out
    }

    /// Mutable view in the same order as [`NetworkParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for layer in &mut self.layers {
            for two in std::iter::once(&mut layer.h).chain(layer.g.as_mut()) {
                out.push(&mut two.a1.w);
                out.push(&mut two.a1.b);
                out.push(&mut two.a2.w);
                out.push(&mut two.a2.b);
            }
        }
        out.push(&mut self.node_map.w);
        out.push(&mut self.node_map.b);
        for a in &mut self.head {
            out.push(&mut a.w);
            out.push(&mut a.b);
        }
        out
    }
}

/// Tape handles of registered parameters.
pub(crate) struct ParamVars {
    pub(crate) flat: Vec<VarId>,
    layers: Vec<(TwoVars, Option<TwoVars>)>,
    node_map: (VarId, VarId),
    head: Vec<(VarId, VarId)>,
}

#[derive(Clone, Copy)]
struct TwoVars {
    w1: VarId,
    b1: VarId,
    w2: VarId,
    b2: VarId,
}

pub(crate) fn register_params(
    tape: &mut Tape,
    params: &NetworkParams,
    with_grad: bool,
) -> ParamVars {
    let mut flat = Vec::new();
    let mut reg = |tape: &mut Tape, t: &Tensor| {
        let tensor = if with_grad {
            t.clone().with_grad()
        } else {
            t.clone()
        };
        let id = tape.leaf(tensor);
        flat.push(id);
        id
    };
    let mut layers = Vec::new();
    for layer in &params.layers {
        let mut reg_two = |tape: &mut Tape, two: &TwoAffine| TwoVars {
            w1: reg(tape, &two.a1.w),
            b1: reg(tape, &two.a1.b),
            w2: reg(tape, &two.a2.w),
            b2: reg(tape, &two.a2.b),
        };
        let h = reg_two(tape, &layer.h);
        let g = layer.g.as_ref().map(|g| reg_two(tape, g));
        layers.push((h, g));
    }
    let node_map = (reg(tape, &params.node_map.w), reg(tape, &params.node_map.b));
    let head = params
        .head
        .iter()
        .map(|a| (reg(tape, &a.w), reg(tape, &a.b)))
        .collect();
    ParamVars {
        flat,
        layers,
        node_map,
        head,
    }
}

/// Rebuild the structured parameter handles from leaves registered in
/// `named_tensors` order (the gradient checker owns the leaves).
pub(crate) fn param_vars_from_flat(cfg: &GraphNetConfig, flat: &[VarId]) -> ParamVars {
    let mut pos = 0;
    let next = |pos: &mut usize| {
        let id = flat[*pos];
        *pos += 1;
        id
    };
    let mut layers = Vec::with_capacity(cfg.layer_widths.len());
    for _ in &cfg.layer_widths {
        let h = TwoVars {
            w1: next(&mut pos),
            b1: next(&mut pos),
            w2: next(&mut pos),
            b2: next(&mut pos),
        };
        let g = match cfg.mode {
            AggregationMode::Node => None,
            _ => Some(TwoVars {
                w1: next(&mut pos),
                b1: next(&mut pos),
                w2: next(&mut pos),
                b2: next(&mut pos),
            }),
        };
        layers.push((h, g));
    }
    let node_map = (next(&mut pos), next(&mut pos));
    let head = (0..cfg.head_hidden.len() + 1)
        .map(|_| (next(&mut pos), next(&mut pos)))
        .collect();
    debug_assert_eq!(pos, flat.len());
    ParamVars {
        flat: flat.to_vec(),
        layers,
        node_map,
        head,
    }
}

fn activation(tape: &mut Tape, x: VarId, act: Activation) -> VarId {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Linear => x,
    }
}

fn two_affine(tape: &mut Tape, x: VarId, v: TwoVars, act: Activation) -> Result<VarId> {
    let z = tape.affine(x, v.w1, v.b1)?;
    let z = activation(tape, z, act);
    tape.affine(z, v.w2, v.b2)
}

fn pair_pool_block(tape: &mut Tape, a: VarId, b: VarId, kinds: &[PoolKind]) -> Result<VarId> {
    let mut blocks = Vec::with_capacity(kinds.len());
    for k in kinds {
        blocks.push(match k {
            PoolKind::Min => tape.pair_min(a, b)?,
            PoolKind::Max => tape.pair_max(a, b)?,
            PoolKind::Mean => tape.pair_mean(a, b)?,
        });
    }
    tape.concat(&blocks, 1)
}

/// Incident-edge row indexes per node, grouped: node 0's n-1 edges, then
/// node 1's, ... Edges are in lexicographic order.
fn incidence(n: usize) -> Vec<usize> {
    let mut edge_id = vec![vec![0usize; n]; n];
    let mut e = 0;
    for i in 0..n {
        for j in i + 1..n {
            edge_id[i][j] = e;
            edge_id[j][i] = e;
            e += 1;
        }
    }
    let mut inc = Vec::with_capacity(n * (n - 1));
    for l in 0..n {
        for j in 0..n {
            if j != l {
                inc.push(edge_id[l][j]);
            }
        }
    }
    inc
}

/// One edge-aggregation layer on a tape: h() per endpoint, symmetric pair
/// pooling into edge features, g() per edge, order-free aggregation over
/// each node's incident edges.
fn layer_on_tape(
    tape: &mut Tape,
    h: TwoVars,
    g: Option<TwoVars>,
    cfg: &GraphNetConfig,
    feats: VarId,
    n: usize,
) -> Result<VarId> {
    if cfg.mode == AggregationMode::Node {
        return two_affine(tape, feats, h, cfg.activation);
    }
    let g = g.expect("edge modes carry g weights");
    let t = two_affine(tape, feats, h, cfg.activation)?;
    let (mut src, mut dst) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in i + 1..n {
            src.push(i);
            dst.push(j);
        }
    }
    let a = tape.gather_rows(t, src)?;
    let b = tape.gather_rows(t, dst)?;
    let e = pair_pool_block(tape, a, b, &cfg.pair_pool)?;
    let u = two_affine(tape, e, g, cfg.activation)?;
    let w = tape.value(u).shape()[1];
    let gathered = tape.gather_rows(u, incidence(n))?;
    let grouped = tape.reshape(gathered, vec![n, n - 1, w])?;
    match cfg.mode {
        AggregationMode::Hierarchical => {
            let mn = tape.reduce(grouped, 1, ReduceKind::Min)?;
            let mx = tape.reduce(grouped, 1, ReduceKind::Max)?;
            tape.concat(&[mn, mx], 1)
        }
        AggregationMode::EdgeMax => tape.reduce(grouped, 1, ReduceKind::Max),
        AggregationMode::EdgeAvg => tape.reduce(grouped, 1, ReduceKind::Mean),
        AggregationMode::Node => unreachable!(),
    }
}

/// Build the whole forward pass on a tape. Returns the compatibility
/// probability (1x1) and the style distribution (1x6).
pub(crate) fn forward_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    cfg: &GraphNetConfig,
    x: VarId,
    n: usize,
) -> Result<(VarId, VarId)> {
    let mut feats = x;
    for &(h, g) in &pv.layers {
        feats = layer_on_tape(tape, h, g, cfg, feats, n)?;
    }
    let mapped = tape.affine(feats, pv.node_map.0, pv.node_map.1)?;
    let mx = tape.reduce(mapped, 0, ReduceKind::Max)?;
    let mean = tape.reduce(mapped, 0, ReduceKind::Mean)?;
    let pooled = tape.concat(&[mx, mean], 0)?;
    let width = tape.value(pooled).len();
    let mut z = tape.reshape(pooled, vec![1, width])?;
    let n_head = pv.head.len();
    for (j, &(w, b)) in pv.head.iter().enumerate() {
        z = tape.affine(z, w, b)?;
        if j + 1 < n_head {
            z = activation(tape, z, cfg.activation);
        }
    }
    let comp_logit = tape.slice(z, 1, 0, 1)?;
    let comp = tape.sigmoid(comp_logit);
    let style_logits = tape.slice(z, 1, 1, STYLE_COUNT)?;
    let style = tape.softmax_last(style_logits);
    Ok((comp, style))
}

pub(crate) fn rows_leaf(tape: &mut Tape, rows: &[Vec<f64>]) -> Result<VarId> {
    let dim = rows[0].len();
    let mut values = Vec::with_capacity(rows.len() * dim);
    for row in rows {
        values.extend_from_slice(row);
    }
    Ok(tape.leaf(Tensor::new(vec![rows.len(), dim], values)?))
}

/// The network: a config plus its weights.
#[derive(Debug, Clone)]
pub struct GraphFilterNet {
    pub cfg: GraphNetConfig,
    pub params: NetworkParams,
}

impl GraphFilterNet {
    pub fn init(cfg: GraphNetConfig, seed: u64) -> Result<Self> {
        let params = NetworkParams::init(&cfg, seed)?;
        Ok(Self { cfg, params })
    }

    /// Score one garment graph.
    pub fn forward(&self, graph: &GarmentGraph) -> Result<NetworkOutput> {
        if graph.dim() != self.cfg.input_dim {
            return Err(NgfError::Contract(format!(
                "graph dimension {} vs network input dimension {}",
                graph.dim(),
                self.cfg.input_dim
            )));
        }
        let mut tape = Tape::new();
        let pv = register_params(&mut tape, &self.params, false);
        let x = rows_leaf(&mut tape, graph.nodes())?;
        let (comp, style) = forward_on_tape(&mut tape, &pv, &self.cfg, x, graph.n())?;
        let compatibility = tape.value(comp).values()[0];
        let mut style_distribution = [0.0; STYLE_COUNT];
        style_distribution.copy_from_slice(tape.value(style).values());
        let out = NetworkOutput {
            compatibility,
            style_distribution,
        };
        out.validate()?;
        Ok(out)
    }

    /// Layer-0 edge feature for a node pair: both endpoints through the
    /// shared h() stack, combined by the configured symmetric pair pooling.
    /// Identical under argument swap.
    pub fn edge_feature(&self, xi: &[f64], xj: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != xj.len() || xi.len() != self.cfg.input_dim {
            return Err(NgfError::Contract(format!(
                "edge endpoints must both have dimension {}",
                self.cfg.input_dim
            )));
        }
        let mut tape = Tape::new();
        let pv = register_params(&mut tape, &self.params, false);
        let x = rows_leaf(&mut tape, &[xi.to_vec(), xj.to_vec()])?;
        let (h, _) = pv.layers[0];
        let t = two_affine(&mut tape, x, h, self.cfg.activation)?;
        let a = tape.gather_rows(t, vec![0])?;
        let b = tape.gather_rows(t, vec![1])?;
        let e = pair_pool_block(&mut tape, a, b, &self.cfg.pair_pool)?;
        Ok(tape.value(e).values().to_vec())
    }

    /// Apply one edge-aggregation layer to explicit per-node features.
    pub fn layer_features(&self, layer: usize, nodes: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let dims = self.cfg.node_dims();
        if layer >= self.params.layers.len() {
            return Err(NgfError::Contract(format!("layer {layer} out of range")));
        }
        let n = nodes.len();
        if n < 2 || nodes.iter().any(|r| r.len() != dims[layer]) {
            return Err(NgfError::Contract(format!(
                "layer {layer} expects >= 2 nodes of dimension {}",
                dims[layer]
            )));
        }
        let mut tape = Tape::new();
        let pv = register_params(&mut tape, &self.params, false);
        let x = rows_leaf(&mut tape, nodes)?;
        let (h, g) = pv.layers[layer];
        let out = layer_on_tape(&mut tape, h, g, &self.cfg, x, n)?;
        let w = tape.value(out).shape()[1];
        let vals = tape.value(out).values();
        Ok((0..n).map(|i| vals[i * w..(i + 1) * w].to_vec()).collect())
    }
}

impl SetScorer for GraphFilterNet {
    fn score_set(&self, embeddings: &[&[f64]]) -> Result<NetworkOutput> {
        let graph = build_graph(embeddings.iter().map(|e| e.to_vec()).collect())?;
        self.forward(&graph)
    }
}
