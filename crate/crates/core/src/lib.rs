//! Neural graph filtering for garment-set compatibility.
//!
//! The crate scores variable-size garment sets with an edge-centric graph
//! network, learns item embeddings by triplet metric learning, classifies
//! set style under class imbalance with a focal loss, labels sets with a
//! color-theory style taxonomy, and generates style-conditioned outfits by
//! greedy item selection. Everything runs on a small self-contained
//! reverse-mode autodiff engine in 64-bit floats.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod metric;
pub mod optim;
pub mod styles;

pub use error::{NgfError, Result};
