//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value. Nodes whose
//! inputs require gradients also carry a backward rule, so node order is
//! always a valid topological order and backward is a single reverse sweep.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// What a backward rule sees: upstream gradient, input and output values,
/// and which inputs actually need a gradient.
pub struct BackwardCtx<'a, T> {
    pub grad: &'a Tensor<T>,
    pub inputs: &'a [&'a Tensor<T>],
    pub output: &'a Tensor<T>,
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Recorded<T> {
    name: &'static str,
    inputs: Vec<usize>,
    backward: BackwardFn<T>,
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Option<Recorded<T>>,
}

pub struct Tape<T> {
    id: u32,
    nodes: Vec<Node<T>>,
    consumed: bool,
    retain_graph: bool,
    check_finite: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
            retain_graph: false,
            check_finite: false,
        }
    }

    /// Allow repeated [`Tape::backward`] calls on the same recording.
    pub fn retain_graph(mut self, retain: bool) -> Self {
        self.retain_graph = retain;
        self
    }

    /// Fail any op whose output contains NaN or infinity.
    pub fn check_finite(mut self, check: bool) -> Self {
        self.check_finite = check;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node<T>) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(node);
        Var {
            tape: self.id,
            index,
        }
    }

    /// Trainable input: gradients are reported for it.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(Node {
            value,
            requires_grad: true,
            op: None,
        })
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Node {
            value,
            requires_grad: false,
            op: None,
        })
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        assert_eq!(var.tape, self.id, "variable from another tape");
        &self.nodes[var.index()].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.index()].requires_grad
    }

    /// Record an op output. The backward rule is kept only when some input
    /// requires a gradient.
    pub(crate) fn record(
        &mut self,
        name: &'static str,
        inputs: &[Var],
        value: Tensor<T>,
        backward: impl Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        debug_assert!(inputs.iter().all(|v| v.tape == self.id));
        let requires_grad = inputs.iter().any(|v| self.nodes[v.index()].requires_grad);
        let op = requires_grad.then(|| Recorded {
            name,
            inputs: inputs.iter().map(|v| v.index()).collect(),
            backward: Box::new(backward),
        });
        Ok(self.push(Node {
            value,
            requires_grad,
            op,
        }))
    }

    /// Propagate d(root)/d(leaf) to every reachable leaf.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>> {
        if root.tape != self.id || root.index() >= self.nodes.len() {
            return Err(Error::DetachedRoot);
        }
        let root_node = &self.nodes[root.index()];
        if root_node.value.numel() != 1 {
            return Err(Error::NonScalarRoot(root_node.value.shape().to_vec()));
        }
        if !root_node.requires_grad {
            return Err(Error::DetachedRoot);
        }
        if self.consumed && !self.retain_graph {
            return Err(Error::AlreadyBackpropagated);
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.index()).map(|_| None).collect();
        grads[root.index()] = Some(Tensor::ones(root_node.value.shape().to_vec()));
        let mut leaves: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..=root.index()).rev() {
            let Some(grad) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let Some(op) = &node.op else {
                if node.requires_grad {
                    leaves[i] = Some(grad);
                }
                continue;
            };
            let inputs: Vec<&Tensor<T>> = op.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let needs: Vec<bool> = op.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
            let ctx = BackwardCtx {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            };
            let input_grads = (op.backward)(&ctx);
            debug_assert_eq!(input_grads.len(), op.inputs.len(), "{}", op.name);
            for ((&j, g), need) in op.inputs.iter().zip(input_grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[j].value.shape(), "{} grad shape", op.name);
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: leaves,
        })
    }

    /// Names of recorded ops, in order; constants and leaves are skipped.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .filter_map(|n| n.op.as_ref().map(|o| o.name))
            .collect()
    }
}

/// Gradients of a scalar root with respect to the tape's leaves.
pub struct Gradients<T> {
    tape: u32,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf; `None` when the leaf is unreachable from the root
    /// or does not require gradients.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index()).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index()).and_then(Option::take)
    }

    /// Gradient of a leaf, or zeros of the leaf's shape when unreachable.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }
}
