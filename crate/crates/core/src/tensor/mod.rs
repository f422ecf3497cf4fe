//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation executed during a forward pass. Calling
//! [`Graph::backward`] on a scalar result walks the record in reverse and
//! returns [`Gradients`] for every parameter that reached the loss. Graphs are
//! rebuilt from scratch for each example; nothing is cached between steps.
//!
//! Broadcasting is limited to equal shapes and scalar-vs-tensor. Row-vector
//! broadcasting has to be spelled out with [`Graph::repeat_rows`].

mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{finite_diff_check, GradCheckReport, ParamCheck};
pub use graph::{log_softmax_slice, softmax_slice, Graph, Var};
pub use params::{Gradients, ParamId, ParamSet};

use crate::scalar::Scalar;

/// Errors raised by tensor construction and graph operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("{op}: argument out of domain at index {index} (value {value})")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{op}: produced a non-finite value at index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("id {id} at position {position} is out of range for a table of {rows} rows")]
    IndexOutOfRange {
        id: usize,
        position: usize,
        rows: usize,
    },
    #[error("backward: {0}")]
    Backward(String),
    #[error("gradient check: {0}")]
    GradCheck(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense array with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "rank must be at least 1".into(),
        });
    }
    if shape.contains(&0) {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "extents must be positive".into(),
        });
    }
    Ok(())
}

pub(crate) fn check_finite<S: Scalar>(op: &'static str, data: &[S]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TensorError::NonFinite { op, index }),
        None => Ok(()),
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        check_shape(&shape)?;
        if numel(&shape) != data.len() {
            return Err(TensorError::InvalidShape {
                reason: format!("{} elements supplied", data.len()),
                shape,
            });
        }
        check_finite("tensor", &data)?;
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        assert!(n > 0, "zero-sized tensor {shape:?}");
        Self {
            shape,
            data: vec![S::zero(); n],
            grad: None,
        }
    }

    pub fn filled(shape: Vec<usize>, value: S) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    /// Column vector `[n×1]`.
    pub fn column(data: Vec<S>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n, 1], data)
    }

    /// Matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::InvalidShape {
                shape: vec![rows.len(), cols],
                reason: "ragged rows".into(),
            });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    /// Identity matrix `[n×n]`.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<S>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "set_grad",
                left: self.shape.clone(),
                right: vec![grad.len()],
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Element `(r, c)` of a 2-D tensor.
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.shape[1] + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        let cols = self.shape[1..].iter().product::<usize>();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn fill(&mut self, value: S) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
