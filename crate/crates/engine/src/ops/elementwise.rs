use crate::error::{EngineError, Result};
use crate::graph::{Grads, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }

    #[inline]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Neg,
    Scale(f64),
    AddScalar(f64),
    Square,
    Sigmoid,
    Silu,
    Relu,
    /// `(1/beta) ln(1 + exp(beta x))`
    Softplus(f64),
    Abs,
    /// Zero gradient everywhere; `sign(0) = 0`.
    Sign,
    Exp,
    Log,
}

impl UnaryKind {
    fn name(self) -> &'static str {
        match self {
            UnaryKind::Neg => "neg",
            UnaryKind::Scale(_) => "scale",
            UnaryKind::AddScalar(_) => "add_scalar",
            UnaryKind::Square => "square",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Silu => "silu",
            UnaryKind::Relu => "relu",
            UnaryKind::Softplus(_) => "softplus",
            UnaryKind::Abs => "abs",
            UnaryKind::Sign => "sign",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `(1/beta) ln(1 + exp(beta x))`.
#[inline]
pub fn softplus<T: Real>(x: T, beta: T) -> T {
    x.max(T::zero()) + (-(beta * x).abs()).exp().ln_1p() / beta
}

#[inline]
pub fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn unary_value<T: Real>(kind: UnaryKind, x: T) -> T {
    match kind {
        UnaryKind::Neg => -x,
        UnaryKind::Scale(s) => x * T::of(s),
        UnaryKind::AddScalar(s) => x + T::of(s),
        UnaryKind::Square => x * x,
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Silu => x * sigmoid(x),
        UnaryKind::Relu => x.max(T::zero()),
        UnaryKind::Softplus(beta) => softplus(x, T::of(beta)),
        UnaryKind::Abs => x.abs(),
        UnaryKind::Sign => sign(x),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log => x.ln(),
    }
}

/// Derivative given input `x` and output `y`.
#[inline]
fn unary_deriv<T: Real>(kind: UnaryKind, x: T, y: T) -> T {
    match kind {
        UnaryKind::Neg => -T::one(),
        UnaryKind::Scale(s) => T::of(s),
        UnaryKind::AddScalar(_) => T::one(),
        UnaryKind::Square => x + x,
        UnaryKind::Sigmoid => y * (T::one() - y),
        UnaryKind::Silu => {
            let s = sigmoid(x);
            s * (T::one() + x * (T::one() - s))
        }
        UnaryKind::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        UnaryKind::Softplus(beta) => sigmoid(T::of(beta) * x),
        UnaryKind::Abs => sign(x),
        UnaryKind::Sign => T::zero(),
        UnaryKind::Exp => y,
        UnaryKind::Log => T::one() / x,
    }
}

/// Broadcast layout of a binary op, numpy rules (trailing dimensions aligned).
pub(crate) struct Broadcast {
    pub out: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
}

fn strides_for(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

impl Broadcast {
    pub fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let nd = a.len().max(b.len());
        let mut out = vec![0; nd];
        for i in 0..nd {
            let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
            let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
            out[i] = match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return Err(EngineError::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() }),
            };
        }
        let sa = strides_for(a, &out);
        let sb = strides_for(b, &out);
        Ok(Broadcast { out, sa, sb })
    }

    /// Calls `f(out_index, a_index, b_index)` in row-major output order.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = numel(&self.out);
        if n == 0 {
            return;
        }
        let nd = self.out.len();
        if nd == 0 {
            f(0, 0, 0);
            return;
        }
        let inner = self.out[nd - 1];
        let (ia_step, ib_step) = (self.sa[nd - 1], self.sb[nd - 1]);
        let mut idx = vec![0usize; nd];
        let (mut base_a, mut base_b) = (0usize, 0usize);
        let mut o = 0;
        while o < n {
            let (mut ia, mut ib) = (base_a, base_b);
            for _ in 0..inner {
                f(o, ia, ib);
                o += 1;
                ia += ia_step;
                ib += ib_step;
            }
            // advance the outer odometer
            let mut d = nd - 1;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                idx[d] += 1;
                base_a += self.sa[d];
                base_b += self.sb[d];
                if idx[d] < self.out[d] {
                    break;
                }
                base_a -= self.sa[d] * idx[d];
                base_b -= self.sb[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
}

impl<T: Real> Graph<T> {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let name = kind.name();
        let (ta, tb) = (self.node_value(a), self.node_value(b));
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| kind.apply(x, y)).collect();
            Tensor::from_parts(ta.shape().to_vec(), data)
        } else {
            let bc = Broadcast::new(name, ta.shape(), tb.shape())?;
            let mut data = vec![T::zero(); numel(&bc.out)];
            let (da, db) = (ta.data(), tb.data());
            bc.for_each(|o, i, j| data[o] = kind.apply(da[i], db[j]));
            Tensor::from_parts(bc.out, data)
        };
        self.push(name, value, Op::Binary { kind, a, b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let t = self.node_value(x);
        if let UnaryKind::Softplus(beta) = kind {
            if beta <= 0.0 {
                return Err(EngineError::InvalidArgument(format!("softplus: beta must be positive, got {beta}")));
            }
        }
        let data = t.data().iter().map(|&v| unary_value(kind, v)).collect();
        let value = Tensor::from_parts(t.shape().to_vec(), data);
        self.push(kind.name(), value, Op::Unary { kind, x }, &[x])
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(UnaryKind::Scale(s), x)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(UnaryKind::AddScalar(s), x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Square, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Silu, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn softplus(&mut self, x: Var, beta: f64) -> Result<Var> {
        self.unary(UnaryKind::Softplus(beta), x)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, x)
    }

    pub fn sign(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sign, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }
}

pub(crate) fn binary_backward<T: Real>(
    kind: BinaryKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
    (va, vb): (Var, Var),
    g: &[T],
    grads: &mut Grads<'_, T>,
) {
    let (da, db) = (a.data(), b.data());
    if a.shape() == b.shape() {
        match kind {
            BinaryKind::Add => {
                grads.with(va, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                grads.with(vb, |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
            }
            BinaryKind::Sub => {
                grads.with(va, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
                grads.with(vb, |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
            }
            BinaryKind::Mul => {
                grads.with(va, |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * db[i];
                    }
                });
                grads.with(vb, |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * da[i];
                    }
                });
            }
            BinaryKind::Div => {
                grads.with(va, |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] / db[i];
                    }
                });
                grads.with(vb, |gb| {
                    for i in 0..g.len() {
                        gb[i] -= g[i] * da[i] / (db[i] * db[i]);
                    }
                });
            }
        }
        return;
    }
    let bc = Broadcast::new(kind.name(), a.shape(), b.shape()).expect("validated in forward");
    grads.with(va, |ga| {
        bc.for_each(|o, i, j| {
            ga[i] += match kind {
                BinaryKind::Add | BinaryKind::Sub => g[o],
                BinaryKind::Mul => g[o] * db[j],
                BinaryKind::Div => g[o] / db[j],
            }
        })
    });
    grads.with(vb, |gb| {
        bc.for_each(|o, i, j| {
            gb[j] += match kind {
                BinaryKind::Add => g[o],
                BinaryKind::Sub => -g[o],
                BinaryKind::Mul => g[o] * da[i],
                BinaryKind::Div => -g[o] * da[i] / (db[j] * db[j]),
            }
        })
    });
}

pub(crate) fn unary_backward<T: Real>(
    kind: UnaryKind,
    x: &Tensor<T>,
    y: &Tensor<T>,
    vx: Var,
    g: &[T],
    grads: &mut Grads<'_, T>,
) {
    if kind == UnaryKind::Sign {
        return;
    }
    let (dx, dy) = (x.data(), y.data());
    grads.with(vx, |gx| {
        for i in 0..g.len() {
            gx[i] += g[i] * unary_deriv(kind, dx[i], dy[i]);
        }
    });
}
