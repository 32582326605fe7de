//! Dense row-major tensors with optional gradient buffers.

use crate::error::{NgfError, Result};

/// A dense tensor of `f64` values in row-major order.
///
/// Gradients live alongside the values; they are populated by
/// [`Tape::backward`](super::Tape::backward) for leaves created with
/// `requires_grad` set, and accumulate across repeated backward calls until
/// [`Tensor::zero_grad`] resets them.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Checked construction: extents must be positive, the value count must
    /// match the shape product, and every value must be finite.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(NgfError::Contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(NgfError::Shape(format!(
                "shape {shape:?} implies {numel} values, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(NgfError::Numeric(format!(
                "non-finite value {bad} rejected at tensor construction"
            )));
        }
        Ok(Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    /// Unchecked construction for internal op outputs (shape is trusted,
    /// values may be non-finite mid-computation).
    pub(crate) fn from_parts(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(vec![1], vec![v])
    }

    /// Identity matrix of order `n`.
    pub fn eye(n: usize) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        Self::from_parts(vec![n, n], values)
    }

    /// 2-D tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(NgfError::Contract("from_rows needs at least one row".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NgfError::Shape("ragged rows in from_rows".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            values.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], values)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Gradient buffer, present once backward has reached this leaf.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.values.len());
        match &mut self.grad {
            Some(buf) => {
                for (b, gi) in buf.iter_mut().zip(g) {
                    *b += gi;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }
}
