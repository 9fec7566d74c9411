use super::ops::Op;
use super::Tensor;
use crate::error::{NialError, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
}

/// The gradient tape: primitive ops in execution order.
///
/// A graph and its tensors are a single-threaded unit of work. Build a fresh
/// graph per forward pass.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    pub fn take_value(self, v: Var) -> Tensor {
        let mut nodes = self.nodes;
        nodes.swap_remove(v.0).value
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let rg = op.inputs().iter().any(|v| self.requires_grad(*v));
        self.nodes.push(Node {
            value: value.with_requires_grad(rg),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Gradients are added to whatever each `requires_grad` node already
    /// holds, so two calls without [`Graph::zero_grad`] double them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let out = &self.nodes[loss.0].value;
        if out.numel() != 1 {
            return Err(NialError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                out.shape()
            )));
        }
        if !out.requires_grad() {
            return Ok(());
        }
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adjoints[i].take() else {
                continue;
            };
            let contributions = self.nodes[i].op.backward(&self.nodes, i, &g);
            for (input, delta) in contributions {
                if !self.nodes[input.0].value.requires_grad() {
                    continue;
                }
                match adjoints[input.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    None => adjoints[input.0] = Some(delta),
                }
            }
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }
}
