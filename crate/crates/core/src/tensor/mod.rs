//! Dense double-precision tensors and a tape-based reverse-mode autodiff core.
//!
//! Values live in a [`Graph`]: every primitive op appends a node holding its
//! output tensor and whatever it saved for the backward pass. Nodes are
//! addressed by [`Var`] handles. [`Graph::backward`] walks the tape in reverse
//! recorded order and accumulates (`+=`) gradients into every node created
//! with `requires_grad`.
//!
//! ```
//! use nial_core::tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

mod gradcheck;
mod graph;
pub(crate) mod ops;

pub use gradcheck::{grad_check, grad_check_many, relative_error};
pub use graph::{Graph, Var};
pub use ops::{conv_out_len, pool_out_len};

use crate::error::{NialError, Result};

/// Row-major dense array of `f64` with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(NialError::Dimension(format!(
                "shape {shape:?} has a zero-sized dimension"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NialError::Dimension(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(!shape.contains(&0), "zero-sized dimension in {shape:?}");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    /// Builds a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(NialError::Dimension("ragged rows".into()));
        }
        Self::from_vec(vec![m, n], rows.concat())
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Replaces the stored gradient (e.g. to drive an optimizer directly).
    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(NialError::Dimension(format!(
                "gradient has {} values for a tensor of {}",
                grad.len(),
                self.data.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub(crate) fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.data.len());
        match self.grad.as_mut() {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape.to_vec(), self.data.clone())
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
