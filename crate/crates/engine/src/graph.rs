//! Define-by-run computation record and the reverse sweep over it.

use std::rc::Rc;

use crate::error::{EngineError, Result};
use crate::ops::{self, BinaryKind, UnaryKind};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Binary { kind: BinaryKind, a: Var, b: Var },
    Unary { kind: UnaryKind, x: Var },
    Matmul { a: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Depthwise { x: Var, w: Var, b: Option<Var>, pad: usize },
    Gather { x: Var, index: Rc<[usize]> },
    Reshape { x: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    Upsample { x: Var },
    AvgPool { x: Var, k: usize },
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Sum { x: Var },
    Mean { x: Var },
    L1 { x: Var },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, eps: f64 },
    SelectiveScan { x: Var, delta: Var, a: Var, b: Var, c: Var, d: Var },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Gradient accumulator handed to the per-op backward rules.
pub(crate) struct Grads<'a, T> {
    slots: &'a mut [Option<Vec<T>>],
    nodes: &'a [Node<T>],
}

impl<T: Real> Grads<'_, T> {
    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Runs `f` on the (zero-initialised on first use) gradient buffer of `v`.
    pub fn with(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.numel();
        let slot = self.slots[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(slot);
    }

    pub fn add(&mut self, v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.slots[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

/// Records primitives as they execute and replays them in reverse.
///
/// A graph belongs to one forward/backward pass: after `backward` it must be
/// cleared (or dropped) before recording the next iteration.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backpropagated: bool,
    params: Vec<Var>,
    check_finite: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            backpropagated: false,
            params: Vec::new(),
            check_finite: true,
        }
    }

    /// Disables the per-op finiteness check (on by default).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node, saved value and gradient.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.params.clear();
        self.backpropagated = false;
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that accumulates a gradient during `backward`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(T::of(v)))
    }

    /// Registers every parameter of `store` as a gradient leaf, in id order.
    pub fn bind_params(&mut self, store: &ParamStore<T>) {
        self.params = store.iter().map(|(_, t)| t.clone()).map(|t| self.leaf(t)).collect();
    }

    /// The leaf bound to `id` by the last [`Graph::bind_params`] call.
    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    ///
    /// `None` before `backward` or for values that never required a
    /// gradient; zeros for gradient leaves the loss does not depend on.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        match self.grads.get(v.0)? {
            Some(g) => Some(Tensor::from_parts(node.value.shape().to_vec(), g.clone())),
            None if node.requires_grad && matches!(node.op, Op::Leaf) => Some(Tensor::zeros(node.value.shape().to_vec())),
            None => None,
        }
    }

    /// Gradients of all bound parameters, zero for parameters the loss does
    /// not depend on.
    pub fn param_grads(&self) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .map(|&v| self.grad(v).unwrap_or_else(|| Tensor::zeros(self.shape(v).to_vec())))
            .collect()
    }

    pub(crate) fn node_value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub(crate) fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(EngineError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        self.backpropagated = false;
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// A second call errors unless new operations were recorded in between.
    /// Gradients of leaves reachable from `loss` are accumulated by summation
    /// over every path; intermediate gradients are released as soon as they
    /// have been propagated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backpropagated {
            return Err(EngineError::BackwardTwice);
        }
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(EngineError::NotScalar { shape: lv.shape().to_vec() });
        }
        self.backpropagated = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            let (before, rest) = self.nodes.split_at(i);
            let node = &rest[0];
            let mut grads = Grads { slots: &mut self.grads[..i], nodes: before };
            ops::backward(before, node, &g, &mut grads);
        }
        if self.check_finite && self.grads.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(EngineError::NonFinite { op: "backward" });
        }
        Ok(())
    }
}
