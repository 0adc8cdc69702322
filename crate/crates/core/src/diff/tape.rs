use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

use crate::math::{self, Special};
use crate::real::Real;

/// Elementwise nonlinearities recorded on the tape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
    Acos,
    Relu,
    Softplus,
    Sigmoid,
    /// Piecewise-quadratic smoothed ReLU with width `d`.
    SmoothRelu(f64),
    /// Derivative of [`Unary::SmoothRelu`].
    SmoothReluGrad(f64),
    Special(Special, u8),
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sqrt => math::sqrt(x),
            Unary::Exp => math::exp(x),
            Unary::Ln => math::ln(x),
            Unary::Sin => math::sin(x),
            Unary::Cos => math::cos(x),
            Unary::Acos => math::acos(x),
            Unary::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Unary::Softplus => math::softplus(x),
            Unary::Sigmoid => math::sigmoid(x),
            Unary::SmoothRelu(d) => smooth_relu(x, d),
            Unary::SmoothReluGrad(d) => smooth_relu_grad(x, d),
            Unary::Special(f, o) => f.eval(x, o),
        }
    }

    /// Derivative at `x`, given the forward output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sqrt => {
                if y == 0.0 {
                    0.0
                } else {
                    0.5 / y
                }
            }
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Sin => math::cos(x),
            Unary::Cos => -math::sin(x),
            Unary::Acos => -1.0 / math::sqrt(1.0 - x * x),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Softplus => math::sigmoid(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::SmoothRelu(d) => smooth_relu_grad(x, d),
            Unary::SmoothReluGrad(d) => {
                if x > 0.0 && x < d {
                    1.0 / d
                } else {
                    0.0
                }
            }
            Unary::Special(f, o) => f.eval(x, o + 1),
        }
    }
}

/// `0` for `x ≤ 0`, `x²/(2d)` on `(0, d)`, `x − d/2` beyond.
pub fn smooth_relu(x: f64, d: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < d {
        x * x / (2.0 * d)
    } else {
        x - 0.5 * d
    }
}

pub fn smooth_relu_grad(x: f64, d: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < d {
        x / d
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    AddC(u32),
    MulC(u32, f64),
    /// Matrix (rows × cols) times vector (cols).
    MatVec(u32, u32),
    /// Transposed matrix times vector (rows).
    MatTVec(u32, u32),
    Dot(u32, u32),
    Sum(u32),
    Index(u32, u32),
    /// Range into the link table.
    Concat(u32, u32),
    Slice(u32, u32),
    Unary(u32, Unary),
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    off: usize,
    len: usize,
    rows: usize,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    vals: Vec<f64>,
    links: Vec<u32>,
}

/// Append-only record of a computation over vectors and matrices.
///
/// Nodes are created through [`Var`] operations and are always stored after
/// their inputs, so a single reverse sweep propagates adjoints.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DiffError {
    RootNotScalar(usize),
}

impl fmt::Display for DiffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffError::RootNotScalar(n) => write!(f, "backward root must be scalar, got length {n}"),
        }
    }
}

impl core::error::Error for DiffError {}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: u32,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.values())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, rows: usize, vals: impl IntoIterator<Item = f64>) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let off = inner.vals.len();
        inner.vals.extend(vals);
        let len = inner.vals.len() - off;
        let id = inner.nodes.len() as u32;
        inner.nodes.push(Node { op, off, len, rows });
        Var { tape: self, id }
    }

    /// Register a node whose values were already appended at `off`.
    fn record(&self, op: Op, rows: usize, off: usize) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let len = inner.vals.len() - off;
        let id = inner.nodes.len() as u32;
        inner.nodes.push(Node { op, off, len, rows });
        Var { tape: self, id }
    }

    fn push_scalar(&self, op: Op, v: f64) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let off = inner.vals.len();
        inner.vals.push(v);
        let id = inner.nodes.len() as u32;
        inner.nodes.push(Node { op, off, len: 1, rows: 1 });
        Var { tape: self, id }
    }

    /// Vector leaf.
    pub fn leaf(&self, v: &[f64]) -> Var<'_> {
        self.push(Op::Leaf, v.len(), v.iter().copied())
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.push_scalar(Op::Leaf, v)
    }

    /// Row-major matrix leaf.
    pub fn matrix(&self, rows: usize, cols: usize, data: &[f64]) -> Var<'_> {
        assert_eq!(rows * cols, data.len(), "matrix leaf shape mismatch");
        self.push(Op::Leaf, rows, data.iter().copied())
    }

    /// Concatenate vectors (or scalars) into one vector.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        let vals: Vec<f64> = {
            let inner = self.inner.borrow();
            parts
                .iter()
                .flat_map(|p| {
                    let n = inner.nodes[p.id as usize];
                    inner.vals[n.off..n.off + n.len].to_vec()
                })
                .collect()
        };
        let start = {
            let mut inner = self.inner.borrow_mut();
            let start = inner.links.len() as u32;
            inner.links.extend(parts.iter().map(|p| p.id));
            start
        };
        let n = vals.len();
        self.push(Op::Concat(start, parts.len() as u32), n, vals)
    }

    /// Reverse sweep from a scalar root. The tape is left untouched, so it
    /// can be swept again.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients, DiffError> {
        let inner = self.inner.borrow();
        let rn = inner.nodes[root.id as usize];
        if rn.len != 1 {
            return Err(DiffError::RootNotScalar(rn.len));
        }
        let mut adj = vec![0.0; inner.vals.len()];
        let mut live = vec![false; inner.nodes.len()];
        adj[rn.off] = 1.0;
        live[root.id as usize] = true;
        let vals = &inner.vals;

        for id in (0..=root.id as usize).rev() {
            if !live[id] {
                continue;
            }
            let node = inner.nodes[id];
            let (off, len) = (node.off, node.len);
            let mut mark = |i: u32| live[i as usize] = true;
            match node.op {
                Op::Leaf => {}
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    mark(a);
                    mark(b);
                    let na = inner.nodes[a as usize];
                    let nb = inner.nodes[b as usize];
                    for k in 0..len {
                        let g = adj[off + k];
                        adj[na.off + if na.len == 1 { 0 } else { k }] += g;
                        adj[nb.off + if nb.len == 1 { 0 } else { k }] += sign * g;
                    }
                }
                Op::Mul(a, b) => {
                    mark(a);
                    mark(b);
                    let na = inner.nodes[a as usize];
                    let nb = inner.nodes[b as usize];
                    for k in 0..len {
                        let g = adj[off + k];
                        let ia = na.off + if na.len == 1 { 0 } else { k };
                        let ib = nb.off + if nb.len == 1 { 0 } else { k };
                        adj[ia] += g * vals[ib];
                        adj[ib] += g * vals[ia];
                    }
                }
                Op::Div(a, b) => {
                    mark(a);
                    mark(b);
                    let na = inner.nodes[a as usize];
                    let nb = inner.nodes[b as usize];
                    for k in 0..len {
                        let g = adj[off + k];
                        let ia = na.off + if na.len == 1 { 0 } else { k };
                        let ib = nb.off + if nb.len == 1 { 0 } else { k };
                        let bv = vals[ib];
                        adj[ia] += g / bv;
                        adj[ib] -= g * vals[off + k] / bv;
                    }
                }
                Op::Neg(a) => {
                    mark(a);
                    let na = inner.nodes[a as usize];
                    for k in 0..len {
                        adj[na.off + k] -= adj[off + k];
                    }
                }
                Op::AddC(a) => {
                    mark(a);
                    let na = inner.nodes[a as usize];
                    for k in 0..len {
                        adj[na.off + k] += adj[off + k];
                    }
                }
                Op::MulC(a, c) => {
                    mark(a);
                    let na = inner.nodes[a as usize];
                    for k in 0..len {
                        adj[na.off + k] += c * adj[off + k];
                    }
                }
                Op::MatVec(w, x) => {
                    mark(w);
                    mark(x);
                    let nw = inner.nodes[w as usize];
                    let nx = inner.nodes[x as usize];
                    let cols = nx.len;
                    for r in 0..len {
                        let g = adj[off + r];
                        if g == 0.0 {
                            continue;
                        }
                        let row = nw.off + r * cols;
                        for c in 0..cols {
                            adj[row + c] += g * vals[nx.off + c];
                            adj[nx.off + c] += g * vals[row + c];
                        }
                    }
                }
                Op::MatTVec(w, y) => {
                    mark(w);
                    mark(y);
                    let nw = inner.nodes[w as usize];
                    let ny = inner.nodes[y as usize];
                    let cols = len;
                    for r in 0..ny.len {
                        let yr = vals[ny.off + r];
                        let row = nw.off + r * cols;
                        let mut acc = 0.0;
                        for c in 0..cols {
                            let g = adj[off + c];
                            adj[row + c] += yr * g;
                            acc += vals[row + c] * g;
                        }
                        adj[ny.off + r] += acc;
                    }
                }
                Op::Dot(a, b) => {
                    mark(a);
                    mark(b);
                    let g = adj[off];
                    let na = inner.nodes[a as usize];
                    let nb = inner.nodes[b as usize];
                    for k in 0..na.len {
                        adj[na.off + k] += g * vals[nb.off + k];
                        adj[nb.off + k] += g * vals[na.off + k];
                    }
                }
                Op::Sum(a) => {
                    mark(a);
                    let g = adj[off];
                    let na = inner.nodes[a as usize];
                    for k in 0..na.len {
                        adj[na.off + k] += g;
                    }
                }
                Op::Index(a, i) => {
                    mark(a);
                    let na = inner.nodes[a as usize];
                    adj[na.off + i as usize] += adj[off];
                }
                Op::Slice(a, start) => {
                    mark(a);
                    let na = inner.nodes[a as usize];
                    for k in 0..len {
                        adj[na.off + start as usize + k] += adj[off + k];
                    }
                }
                Op::Concat(start, count) => {
                    let mut pos = off;
                    for j in 0..count {
                        let p = inner.links[(start + j) as usize];
                        mark(p);
                        let np = inner.nodes[p as usize];
                        for k in 0..np.len {
                            adj[np.off + k] += adj[pos + k];
                        }
                        pos += np.len;
                    }
                }
                Op::Unary(a, u) => {
                    mark(a);
                    let na = inner.nodes[a as usize];
                    for k in 0..len {
                        let g = adj[off + k];
                        if g != 0.0 {
                            adj[na.off + k] += g * u.derivative(vals[na.off + k], vals[off + k]);
                        }
                    }
                }
            }
        }
        let layout = inner.nodes.iter().map(|n| (n.off, n.len)).collect();
        Ok(Gradients { adj, layout })
    }
}

/// Adjoints of every node after a backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    adj: Vec<f64>,
    layout: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> &[f64] {
        let (off, len) = self.layout[v.id as usize];
        &self.adj[off..off + len]
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn len(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id as usize].len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id as usize].rows
    }

    pub fn values(&self) -> Vec<f64> {
        let inner = self.tape.inner.borrow();
        let n = inner.nodes[self.id as usize];
        inner.vals[n.off..n.off + n.len].to_vec()
    }

    fn with_vals<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        let inner = self.tape.inner.borrow();
        let n = inner.nodes[self.id as usize];
        f(&inner.vals[n.off..n.off + n.len])
    }

    fn binary(self, o: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        let mut inner = self.tape.inner.borrow_mut();
        let a = inner.nodes[self.id as usize];
        let b = inner.nodes[o.id as usize];
        assert!(a.len == b.len || a.len == 1 || b.len == 1, "elementwise shape mismatch: {} vs {}", a.len, b.len);
        let n = a.len.max(b.len);
        let (sa, sb) = (usize::from(a.len != 1), usize::from(b.len != 1));
        let off = inner.vals.len();
        inner.vals.reserve(n);
        for k in 0..n {
            let v = f(inner.vals[a.off + sa * k], inner.vals[b.off + sb * k]);
            inner.vals.push(v);
        }
        drop(inner);
        self.tape.record(op, n, off)
    }

    /// Elementwise image of `self` under `f`, keeping its shape.
    fn unary_with(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let mut inner = self.tape.inner.borrow_mut();
        let a = inner.nodes[self.id as usize];
        let off = inner.vals.len();
        inner.vals.reserve(a.len);
        for k in 0..a.len {
            let v = f(inner.vals[a.off + k]);
            inner.vals.push(v);
        }
        drop(inner);
        self.tape.record(op, a.rows, off)
    }

    pub fn map(self, u: Unary) -> Var<'t> {
        self.unary_with(Op::Unary(self.id, u), |x| u.apply(x))
    }

    /// Matrix-vector product; `self` is the matrix.
    pub fn matvec(self, x: Var<'t>) -> Var<'t> {
        let mut inner = self.tape.inner.borrow_mut();
        let w = inner.nodes[self.id as usize];
        let xn = inner.nodes[x.id as usize];
        let cols = xn.len;
        assert_eq!(w.rows * cols, w.len, "matvec shape mismatch");
        let off = inner.vals.len();
        inner.vals.reserve(w.rows);
        for r in 0..w.rows {
            let vals = &inner.vals;
            let row = &vals[w.off + r * cols..w.off + (r + 1) * cols];
            let v = row.iter().zip(&vals[xn.off..xn.off + cols]).map(|(a, b)| a * b).sum::<f64>();
            inner.vals.push(v);
        }
        drop(inner);
        self.tape.record(Op::MatVec(self.id, x.id), w.rows, off)
    }

    /// Transposed matrix-vector product; `self` is the matrix.
    pub fn matvec_t(self, y: Var<'t>) -> Var<'t> {
        let vals = {
            let inner = self.tape.inner.borrow();
            let w = inner.nodes[self.id as usize];
            let yn = inner.nodes[y.id as usize];
            assert_eq!(w.rows, yn.len, "matvec_t shape mismatch");
            let cols = w.len / w.rows;
            let mut out = vec![0.0; cols];
            for r in 0..w.rows {
                let yr = inner.vals[yn.off + r];
                let row = &inner.vals[w.off + r * cols..w.off + (r + 1) * cols];
                for (o, a) in out.iter_mut().zip(row) {
                    *o += a * yr;
                }
            }
            out
        };
        let n = vals.len();
        self.tape.push(Op::MatTVec(self.id, y.id), n, vals)
    }

    pub fn dot(self, o: Var<'t>) -> Var<'t> {
        let v = {
            let inner = self.tape.inner.borrow();
            let a = inner.nodes[self.id as usize];
            let b = inner.nodes[o.id as usize];
            assert_eq!(a.len, b.len, "dot shape mismatch");
            (0..a.len).map(|k| inner.vals[a.off + k] * inner.vals[b.off + k]).sum::<f64>()
        };
        self.tape.push_scalar(Op::Dot(self.id, o.id), v)
    }

    pub fn sum(self) -> Var<'t> {
        let v = self.with_vals(|v| v.iter().sum::<f64>());
        self.tape.push_scalar(Op::Sum(self.id), v)
    }

    pub fn index(self, i: usize) -> Var<'t> {
        let v = self.with_vals(|v| v[i]);
        self.tape.push_scalar(Op::Index(self.id, i as u32), v)
    }

    pub fn slice(self, start: usize, len: usize) -> Var<'t> {
        let v = self.with_vals(|v| v[start..start + len].to_vec());
        self.tape.push(Op::Slice(self.id, start as u32), len, v)
    }

    /// Split a vector node into scalar nodes.
    pub fn split(self) -> Vec<Var<'t>> {
        (0..self.len()).map(|i| self.index(i)).collect()
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Self) -> Self {
        self.binary(o, Op::Add(self.id, o.id), |a, b| a + b)
    }
}
impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Self) -> Self {
        self.binary(o, Op::Sub(self.id, o.id), |a, b| a - b)
    }
}
impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Self) -> Self {
        self.binary(o, Op::Mul(self.id, o.id), |a, b| a * b)
    }
}
impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Self) -> Self {
        self.binary(o, Op::Div(self.id, o.id), |a, b| a / b)
    }
}
impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary_with(Op::Neg(self.id), |x| -x)
    }
}
impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Self {
        self.unary_with(Op::AddC(self.id), |x| x + c)
    }
}
impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Self {
        self.unary_with(Op::AddC(self.id), |x| x - c)
    }
}
impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Self {
        self.unary_with(Op::MulC(self.id, c), |x| x * c)
    }
}
impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Self {
        let inv = 1.0 / c;
        self.unary_with(Op::MulC(self.id, inv), |x| x / c)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.with_vals(|v| {
            debug_assert_eq!(v.len(), 1, "value() on a non-scalar node");
            v[0]
        })
    }
    fn lift(self, v: f64) -> Self {
        self.tape.scalar(v)
    }
    fn sqrt(self) -> Self {
        self.map(Unary::Sqrt)
    }
    fn exp(self) -> Self {
        self.map(Unary::Exp)
    }
    fn ln(self) -> Self {
        self.map(Unary::Ln)
    }
    fn sin(self) -> Self {
        self.map(Unary::Sin)
    }
    fn cos(self) -> Self {
        self.map(Unary::Cos)
    }
    fn acos(self) -> Self {
        self.map(Unary::Acos)
    }
    fn relu(self) -> Self {
        self.map(Unary::Relu)
    }
    fn special(self, f: Special, order: u8) -> Self {
        self.map(Unary::Special(f, order))
    }
}
