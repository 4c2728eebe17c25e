//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value, its inputs and a backward rule. [`Tape::backward`]
//! walks the nodes in reverse and accumulates gradients into the leaves
//! created with [`Tape::param`].
//!
//! Operations are methods on `Tape`, split by family across the
//! submodules. Operators whose gradient is not the derivative of their
//! forward (straight-through rounding, threshold quantizers) plug in through
//! [`Tape::register_custom_grad`].

mod conv;
mod elementwise;
mod linalg;
mod nn;
mod reduce;

pub use elementwise::{BinaryOp, UnaryOp};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule: `(input values, output value, upstream gradient)` to one
/// optional gradient per input.
pub type BackwardFn =
    Box<dyn Fn(&[&Tensor], &Tensor, &Tensor) -> Result<Vec<Option<Tensor>>>>;

struct Node {
    op: String,
    value: Tensor,
    requires_grad: bool,
    inputs: Vec<Var>,
    backward: Option<BackwardFn>,
    /// Accumulated gradient; only populated for leaves.
    grad: Option<Tensor>,
}

/// A user-defined operation whose backward rule bypasses differentiation of
/// its forward.
pub struct CustomGradNode {
    pub name: String,
    /// Declared output shape; the forward result is checked against it.
    pub output_shape: Vec<usize>,
    pub forward: Box<dyn FnOnce(&[&Tensor]) -> Result<Tensor>>,
    pub backward: BackwardFn,
}

impl CustomGradNode {
    pub fn new(
        name: impl Into<String>,
        output_shape: Vec<usize>,
        forward: impl FnOnce(&[&Tensor]) -> Result<Tensor> + 'static,
        backward: impl Fn(&[&Tensor], &Tensor, &Tensor) -> Result<Vec<Option<Tensor>>> + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            output_shape,
            forward: Box::new(forward),
            backward: Box::new(backward),
        }
    }
}

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

    fn leaf(&mut self, op: &str, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: op.to_string(),
            value,
            requires_grad,
            inputs: Vec::new(),
            backward: None,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf("param", value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf("constant", value, false)
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

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn op_name(&self, v: Var) -> &str {
        &self.nodes[v.0].op
    }

    /// Records a node. The backward rule is dropped when no input needs a
    /// gradient. Non-finite outputs are rejected here so that a NaN can
    /// always be traced to the operation that produced it.
    pub(crate) fn push(
        &mut self,
        op: &str,
        value: Tensor,
        inputs: &[Var],
        backward: BackwardFn,
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(op.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op: op.to_string(),
            value,
            requires_grad,
            inputs: inputs.to_vec(),
            backward: requires_grad.then_some(backward),
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an operation with a caller-supplied gradient rule.
    pub fn register_custom_grad(&mut self, node: CustomGradNode, inputs: &[Var]) -> Result<Var> {
        let CustomGradNode {
            name,
            output_shape,
            forward,
            backward,
        } = node;
        let out = {
            let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
            forward(&vals)?
        };
        if out.shape() != output_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "custom forward",
                lhs: out.shape().to_vec(),
                rhs: output_shape,
            });
        }
        self.push(&name, out, inputs, backward)
    }

    /// Back-propagates from a scalar `loss`, adding into the gradient of
    /// every leaf that requires one. Leaves the loss does not depend on get
    /// a zero gradient. Calling it twice accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.backward {
                Some(bw) => {
                    let vals: Vec<&Tensor> =
                        node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let grads = bw(&vals, &node.value, &g)?;
                    if grads.len() != node.inputs.len() {
                        return Err(Error::GradContract {
                            op: node.op.clone(),
                            expected: node.inputs.len(),
                            got: grads.len(),
                        });
                    }
                    for (inp, gi) in node.inputs.iter().zip(grads) {
                        let Some(gi) = gi else { continue };
                        if !gi.all_finite() {
                            return Err(Error::NonFinite(format!("{} (backward)", node.op)));
                        }
                        if gi.shape() != self.nodes[inp.0].value.shape() {
                            return Err(Error::GradContract {
                                op: node.op.clone(),
                                expected: node.inputs.len(),
                                got: node.inputs.len(),
                            });
                        }
                        if !self.nodes[inp.0].requires_grad {
                            continue;
                        }
                        match &mut adj[inp.0] {
                            Some(a) => a.add_assign(&gi),
                            slot => *slot = Some(gi),
                        }
                    }
                }
                None => adj[i] = Some(g),
            }
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            if !node.requires_grad || !node.inputs.is_empty() {
                continue;
            }
            let g = adj
                .get_mut(i)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros_like(&node.value));
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }
}
