//! Edge-centric graph network over garment sets.
//!
//! A set of k garment embeddings becomes a fully connected graph. Each
//! layer builds symmetric edge features h(x_i, x_j) from the endpoint
//! embeddings, maps them through a shared two-affine stack g(), and
//! aggregates the n-1 edges incident to every node with order-free pooling.
//! After two such layers a position-wise node map, global max/mean pooling,
//! and a fully connected head produce one compatibility logit (sigmoid) and
//! six style logits (softmax).

mod check;
mod loss;
mod model;
mod train;

pub use check::pipeline_gradcheck;
pub use loss::{bce_on_tape, compatibility_loss, focal_loss, focal_on_tape};
pub use model::{
    build_graph, AffinePair, GarmentGraph, GraphFilterNet, LayerParams, NetworkParams, TwoAffine,
};
pub use train::{train_graph, EpochStats, GraphTrainConfig, GraphTrainResult};

use serde::{Deserialize, Serialize};

use crate::error::{NgfError, Result};

/// Number of style classes.
pub const STYLE_COUNT: usize = 6;

/// Nonlinearity applied between the affine maps of each stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Linear,
}

/// Pooling primitives used to combine the two transformed endpoints of an
/// edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Min,
    Max,
    Mean,
}

/// Per-node aggregation over incident edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    /// Concatenated min and max over incident edges (the full model).
    #[default]
    Hierarchical,
    /// Single max pooling over incident edges (naive-aggregation baseline).
    EdgeMax,
    /// Single mean pooling over incident edges (naive-aggregation baseline).
    EdgeAvg,
    /// No edges: each node is mapped independently (node baseline).
    Node,
}

impl std::str::FromStr for AggregationMode {
    type Err = NgfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hierarchical" => Ok(AggregationMode::Hierarchical),
            "edge-max" => Ok(AggregationMode::EdgeMax),
            "edge-avg" => Ok(AggregationMode::EdgeAvg),
            "node" => Ok(AggregationMode::Node),
            other => Err(NgfError::Config(format!("unknown aggregation mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AggregationMode::Hierarchical => "hierarchical",
            AggregationMode::EdgeMax => "edge-max",
            AggregationMode::EdgeAvg => "edge-avg",
            AggregationMode::Node => "node",
        };
        f.write_str(s)
    }
}

/// Network architecture. The defaults are the published layout: 512-d
/// inputs, edge layers of width 128 then 256, a 1024-wide node map, global
/// max+mean pooling to 2048, and a (512, 256, 7) head whose outputs split
/// into 1 compatibility logit and 6 style logits.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphNetConfig {
    pub input_dim: usize,
    /// Width of h() and g() in each edge-aggregation layer.
    pub layer_widths: Vec<usize>,
    pub node_map_width: usize,
    pub head_hidden: Vec<usize>,
    pub mode: AggregationMode,
    /// Focal-loss focusing exponent for the style head.
    pub gamma: f64,
    pub style_head: bool,
    pub activation: Activation,
    /// Symmetric pair pooling assembling an edge feature from its two
    /// transformed endpoints.
    pub pair_pool: Vec<PoolKind>,
}

impl Default for GraphNetConfig {
    fn default() -> Self {
        Self {
            input_dim: 512,
            layer_widths: vec![128, 256],
            node_map_width: 1024,
            head_hidden: vec![512, 256],
            mode: AggregationMode::Hierarchical,
            gamma: 0.5,
            style_head: true,
            activation: Activation::Relu,
            pair_pool: vec![PoolKind::Min, PoolKind::Max, PoolKind::Mean],
        }
    }
}

impl GraphNetConfig {
    /// A small layout for tests, gradient checks and desk-scale corpora.
    pub fn compact(input_dim: usize, mode: AggregationMode) -> Self {
        Self {
            input_dim,
            layer_widths: vec![16, 32],
            node_map_width: 64,
            head_hidden: vec![64, 32],
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.node_map_width == 0
            || self.layer_widths.is_empty()
            || self.layer_widths.contains(&0)
            || self.head_hidden.contains(&0)
        {
            return Err(NgfError::Config("network widths must be positive".into()));
        }
        if self.pair_pool.is_empty() {
            return Err(NgfError::Config("pair_pool needs at least one pooling".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(NgfError::Config(format!("gamma {} must be >= 0", self.gamma)));
        }
        Ok(())
    }

    /// Node feature dimension entering each layer (index 0 is the input),
    /// plus the final dimension after the last layer.
    pub fn node_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        for &w in &self.layer_widths {
            let out = match self.mode {
                AggregationMode::Hierarchical => 2 * w,
                AggregationMode::EdgeMax | AggregationMode::EdgeAvg | AggregationMode::Node => w,
            };
            dims.push(out);
        }
        dims
    }

    /// Width of the pooled feature feeding the head.
    pub fn pooled_width(&self) -> usize {
        2 * self.node_map_width
    }
}

/// Scores of one garment set: a compatibility probability and a
/// distribution over the six styles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkOutput {
    pub compatibility: f64,
    pub style_distribution: [f64; STYLE_COUNT],
}

impl NetworkOutput {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.compatibility) {
            return Err(NgfError::Numeric(format!(
                "compatibility {} outside [0, 1]",
                self.compatibility
            )));
        }
        let sum: f64 = self.style_distribution.iter().sum();
        if self.style_distribution.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() >= 1e-9 {
            return Err(NgfError::Numeric(format!(
                "style distribution not on the simplex (sum {sum})"
            )));
        }
        Ok(())
    }

    /// Predicted style: argmax of the distribution, ties to the lowest
    /// index.
    pub fn predicted_style(&self) -> crate::styles::StyleLabel {
        let mut best = 0;
        for i in 1..STYLE_COUNT {
            if self.style_distribution[i] > self.style_distribution[best] {
                best = i;
            }
        }
        crate::styles::StyleLabel::from_index(best).unwrap()
    }
}

/// Anything that can score a garment set given its member embeddings.
/// Implemented by the trained network and by test scorers.
pub trait SetScorer: Sync {
    fn score_set(&self, embeddings: &[&[f64]]) -> Result<NetworkOutput>;
}
