//! Reverse-mode differentiation over a linear tape of tensor primitives.
//!
//! Every forward primitive appends one node whose inputs all have smaller
//! ids, so the node list is already in topological order. [`Tape::backward`]
//! walks it once in reverse, visiting each node exactly once.
//!
//! A tape is single-threaded and single-use: backward may be run once, after
//! which further calls are rejected with [`TensorError::TapeConsumed`].
//! Parameter gradients are returned in a fresh [`Gradients`] value; callers
//! that accumulate over several tapes add them up and zero their own buffers
//! between optimizer steps.

mod kernels;
mod ops;

use std::cell::{Cell, Ref, RefCell};

pub(crate) use ops::Op;
pub use ops::{concat_rows, gelu_scalar, LAYER_NORM_EPS};


use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Recording of executed primitives.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a tensor recorded on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    /// Records a tensor whose gradient is tracked.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Records a tensor treated as a constant input.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let inputs = op.inputs();
        debug_assert!(inputs.iter().all(|&i| i < nodes.len()), "inputs precede outputs");
        debug_assert!(
            !inputs.iter().all(|&i| nodes[i].value.is_finite()) || value.is_finite(),
            "{} produced a non-finite value from finite inputs",
            op.name()
        );
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node<T>>> {
        self.nodes.borrow()
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>, TensorError> {
        if self.consumed.replace(true) {
            return Err(TensorError::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            self.consumed.set(false);
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.id] = Some(Tensor::ones(root.value.shape()));
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            ops::backward_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        self.value().data()[0]
    }
}

/// Result of one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `var`; `None` when `var` does not
    /// require a gradient or did not reach the loss.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient with zeros substituted for unreached tensors.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}
