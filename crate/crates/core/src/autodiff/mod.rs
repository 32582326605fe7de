//! Minimal dense-tensor algebra with reverse-mode differentiation.
//!
//! Covers exactly what the garment-set networks need: affine maps,
//! rectifier/sigmoid/softmax nonlinearities, concatenation, axis-wise
//! min/max/mean reductions, elementwise pair pooling, and scalar losses.
//! No broadcasting beyond bias rows, no higher-order derivatives.

mod finite_diff;
mod tape;
mod tensor;

pub use finite_diff::{finite_diff_check, CoordCheck, GradCheckReport};
pub use tape::{ReduceKind, Tape, VarId};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
