//! Wengert tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and, when any of
//! its inputs needs a gradient, a closure computing vector-Jacobian products
//! for its inputs. Nodes are stored in insertion order, which is a
//! topological order of the graph, so [`Tape::backward`] only has to walk the
//! node list once from the end.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Arguments handed to a backward closure.
pub struct BackwardCtx<'a> {
    /// Gradient of the final output with respect to this node's value.
    pub grad: &'a Tensor,
    /// Forward values of the node's inputs, in the order they were recorded.
    pub inputs: Vec<&'a Tensor>,
    /// Forward value of the node itself.
    pub output: &'a Tensor,
    /// Whether each input needs a gradient; closures may skip the others.
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    op: &'static str,
    value: Tensor,
    parents: Vec<Var>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
    grad: Option<Tensor>,
}

/// Records a computation for later differentiation.
///
/// A tape is confined to one thread; build a fresh one per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. Leaves with `requires_grad` receive a gradient
    /// on every backward pass that reaches the tape's output.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: "leaf",
            value,
            parents: Vec::new(),
            requires_grad,
            backward: None,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated into a leaf by the last backward pass.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    /// Copies the value of `v` into a new constant leaf, cutting the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub(crate) fn push<F>(
        &mut self,
        op: &'static str,
        value: Tensor,
        parents: &[Var],
        backward: F,
    ) -> Result<Var>
    where
        F: Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>> + 'static,
    {
        #[cfg(debug_assertions)]
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            parents: parents.to_vec(),
            requires_grad,
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn),
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Propagates d(output)/d(node) from a single-element `output` back to
    /// every leaf that requires a gradient.
    ///
    /// Leaves that require a gradient but do not influence `output` receive
    /// an all-zero gradient. Gradients from earlier calls are overwritten.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let out_shape = self.nodes[output.0].value.shape().to_vec();
        if self.nodes[output.0].value.len() != 1 {
            return Err(TensorError::NonScalarOutput(out_shape));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut pending: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        pending[output.0] = Some(Tensor::ones(out_shape)?);

        for i in (0..=output.0).rev() {
            let Some(grad) = pending[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = node.backward.as_ref() else {
                self.nodes[i].grad = Some(grad);
                continue;
            };
            let ctx = BackwardCtx {
                grad: &grad,
                inputs: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                output: &node.value,
                needs: node
                    .parents
                    .iter()
                    .map(|p| self.nodes[p.0].requires_grad)
                    .collect(),
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "op {}", node.op);
            for (parent, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(
                    g.shape(),
                    self.nodes[parent.0].value.shape(),
                    "gradient shape from op {}",
                    node.op
                );
                match &mut pending[parent.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }

        for node in &mut self.nodes {
            if node.requires_grad && node.backward.is_none() && node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.shape().to_vec())?);
            }
        }
        Ok(())
    }
}
