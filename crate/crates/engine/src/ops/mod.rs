//! Differentiable primitives. Forward passes live on `Graph` as methods;
//! the matching backward rules are dispatched from here.

mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod scan;
mod shape;

pub use elementwise::{sigmoid, sign, softplus, BinaryKind, UnaryKind};
pub use shape::{permute_index, ZERO_INDEX};

use crate::graph::{Grads, Node, Op};
use crate::real::Real;

pub(crate) fn backward<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut Grads<'_, T>) {
    let val = |v: crate::graph::Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Binary { kind, a, b } => elementwise::binary_backward(*kind, val(*a), val(*b), (*a, *b), g, grads),
        Op::Unary { kind, x } => elementwise::unary_backward(*kind, val(*x), &node.value, *x, g, grads),
        Op::Matmul { a, b } => linalg::matmul_backward(val(*a), val(*b), (*a, *b), g, grads),
        Op::Conv2d { x, w, b, stride, pad } => {
            linalg::conv2d_backward(val(*x), val(*w), (*x, *w, *b), *stride, *pad, g, grads)
        }
        Op::Depthwise { x, w, b, pad } => linalg::depthwise_backward(val(*x), val(*w), (*x, *w, *b), *pad, g, grads),
        Op::Gather { x, index } => shape::gather_backward(index, *x, g, grads),
        Op::Reshape { x } => grads.with(*x, |gx| gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b)),
        Op::Concat { inputs, axis } => {
            let shapes: Vec<Vec<usize>> = inputs.iter().map(|&v| val(v).shape().to_vec()).collect();
            shape::concat_backward(&shapes, inputs, *axis, g, grads)
        }
        Op::Upsample { x } => shape::upsample_backward(val(*x).shape(), node.value.shape(), *x, g, grads),
        Op::AvgPool { x, k } => shape::avg_pool_backward(val(*x).shape(), *k, *x, g, grads),
        Op::Softmax { x, axis } => reduce::softmax_backward(&node.value, *axis, false, *x, g, grads),
        Op::LogSoftmax { x, axis } => reduce::softmax_backward(&node.value, *axis, true, *x, g, grads),
        Op::Sum { x } => reduce::sum_backward(T::one(), *x, g, grads),
        Op::Mean { x } => reduce::sum_backward(T::one() / T::of(val(*x).numel() as f64), *x, g, grads),
        Op::L1 { x } => reduce::l1_backward(val(*x), *x, g, grads),
        Op::GroupNorm { x, gamma, beta, groups, eps } => {
            norm::group_norm_backward(val(*x), val(*gamma), (*x, *gamma, *beta), *groups, *eps, g, grads)
        }
        Op::SelectiveScan { x, delta, a, b, c, d } => scan::selective_scan_backward(
            scan::ScanInputs { x: val(*x), delta: val(*delta), a: val(*a), b: val(*b), c: val(*c), d: val(*d) },
            [*x, *delta, *a, *b, *c, *d],
            g,
            grads,
        ),
    }
}
