use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::scalar::{fold_axpy, fold_dot, Scalar};

/// Primitive tag stored with every recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Powi,
    Sin,
    Cos,
    Tanh,
    Abs,
    Dot,
    LinComb,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TapeError {
    #[error("non-finite value produced by `{op}` at node {node}")]
    NonFinite { node: usize, op: Op },
    #[error("non-finite adjoint reached `{op}` at node {node} during the reverse sweep")]
    NonFiniteAdjoint { node: usize, op: Op },
    #[error("backward needs a single scalar root, got {0} outputs")]
    NonScalarRoot(usize),
    #[error("root variable was recorded on a different tape")]
    ForeignVar,
}

#[derive(Default)]
struct Inner {
    ops: Vec<Op>,
    // (first edge, edge count) per node; parents always precede children
    spans: Vec<(u32, u32)>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    leaves: Vec<u32>,
    non_finite: Option<(usize, Op)>,
}

/// Reverse-accumulation tape over scalar nodes.
///
/// Parameters are registered with [`Tape::variable`]; any arithmetic on the
/// returned [`Var`]s is recorded eagerly. [`Tape::backward`] returns the
/// adjoint of a scalar root with respect to every registered variable, in
/// registration order.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Adjoints of a scalar root with respect to each registered variable.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    adjoints: Vec<f64>,
}

impl GradientMap {
    pub fn zeros(len: usize) -> Self {
        Self { adjoints: vec![0.0; len] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.adjoints
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.adjoints
    }

    pub fn len(&self) -> usize {
        self.adjoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjoints.is_empty()
    }

    /// Adds `other` element-wise; merging in a fixed order keeps results
    /// reproducible.
    pub fn accumulate(&mut self, other: &GradientMap) {
        for (a, b) in self.adjoints.iter_mut().zip(&other.adjoints) {
            *a += b;
        }
    }
}

impl std::ops::Index<usize> for GradientMap {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.adjoints[i]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a differentiable input.
    pub fn variable(&self, value: f64) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.ops.len() as u32;
        inner.leaves.push(idx);
        let start = inner.parents.len() as u32;
        inner.ops.push(Op::Leaf);
        inner.spans.push((start, 0));
        if !value.is_finite() && inner.non_finite.is_none() {
            inner.non_finite = Some((idx as usize, Op::Leaf));
        }
        Var { tape: Some(self), idx, val: value }
    }

    pub fn variables(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.variable(v)).collect()
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.inner.borrow().ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_variables(&self) -> usize {
        self.inner.borrow().leaves.len()
    }

    /// Allocated edge capacity; stays flat across resets at a fixed workload.
    pub fn edge_capacity(&self) -> usize {
        self.inner.borrow().parents.capacity()
    }

    /// Forgets every node while keeping the allocations for reuse.
    pub fn reset(&mut self) {
        let inner = self.inner.get_mut();
        inner.ops.clear();
        inner.spans.clear();
        inner.parents.clear();
        inner.partials.clear();
        inner.leaves.clear();
        inner.non_finite = None;
    }

    fn push(&self, op: Op, val: f64, edges: impl IntoIterator<Item = (u32, f64)>) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.ops.len() as u32;
        let start = inner.parents.len() as u32;
        for (p, d) in edges {
            inner.parents.push(p);
            inner.partials.push(d);
        }
        let len = inner.parents.len() as u32 - start;
        inner.ops.push(op);
        inner.spans.push((start, len));
        if !val.is_finite() && inner.non_finite.is_none() {
            inner.non_finite = Some((idx as usize, op));
        }
        Var { tape: Some(self), idx, val }
    }

    /// Reverse sweep from `root`. Variables the root does not depend on get a
    /// zero adjoint; a constant root yields all zeros.
    pub fn backward(&self, root: Var<'_>) -> Result<GradientMap, TapeError> {
        self.gradient(&[root])
    }

    /// Like [`Tape::backward`] but validates that exactly one output is given.
    pub fn gradient(&self, outputs: &[Var<'_>]) -> Result<GradientMap, TapeError> {
        let root = match outputs {
            [root] => *root,
            _ => return Err(TapeError::NonScalarRoot(outputs.len())),
        };
        let inner = self.inner.borrow();
        let mut grads = GradientMap::zeros(inner.leaves.len());
        let Some(tape) = root.tape else {
            return Ok(grads);
        };
        if !std::ptr::eq(tape, self) {
            return Err(TapeError::ForeignVar);
        }
        if let Some((node, op)) = inner.non_finite {
            if node <= root.idx as usize {
                return Err(TapeError::NonFinite { node, op });
            }
        }

        let n = root.idx as usize + 1;
        let mut adj = vec![0.0f64; n];
        adj[n - 1] = 1.0;
        for i in (0..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            if !a.is_finite() {
                return Err(TapeError::NonFiniteAdjoint { node: i, op: inner.ops[i] });
            }
            let (start, len) = inner.spans[i];
            let range = start as usize..(start + len) as usize;
            for (&p, &d) in inner.parents[range.clone()].iter().zip(&inner.partials[range]) {
                adj[p as usize] += a * d;
            }
        }
        for (g, &leaf) in grads.adjoints.iter_mut().zip(&inner.leaves) {
            if (leaf as usize) < n {
                *g = adj[leaf as usize];
            }
        }
        Ok(grads)
    }
}

/// A scalar that is either a constant or a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tape {
            Some(_) => write!(f, "Var(#{} = {})", self.idx, self.val),
            None => write!(f, "Const({})", self.val),
        }
    }
}

impl<'t> Var<'t> {
    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    /// Node index on the owning tape, if any.
    pub fn node(&self) -> Option<usize> {
        self.tape.map(|_| self.idx as usize)
    }

    fn unary(self, op: Op, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(t) => t.push(op, val, [(self.idx, d)]),
        }
    }

    fn binary(a: Self, b: Self, op: Op, val: f64, da: f64, db: f64) -> Self {
        match (a.tape, b.tape) {
            (None, None) => Var::constant(val),
            (Some(t), None) => t.push(op, val, [(a.idx, da)]),
            (None, Some(t)) => t.push(op, val, [(b.idx, db)]),
            (Some(t), Some(_)) => t.push(op, val, [(a.idx, da), (b.idx, db)]),
        }
    }
}

fn first_tape<'t>(xs: &[Var<'t>]) -> Option<&'t Tape> {
    xs.iter().find_map(|x| x.tape)
}

impl<'t> Scalar for Var<'t> {
    fn constant(v: f64) -> Self {
        Var { tape: None, idx: 0, val: v }
    }

    #[inline]
    fn value(self) -> f64 {
        self.val
    }

    fn sin(self) -> Self {
        self.unary(Op::Sin, self.val.sin(), self.val.cos())
    }

    fn cos(self) -> Self {
        self.unary(Op::Cos, self.val.cos(), -self.val.sin())
    }

    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(Op::Tanh, t, 1.0 - t * t)
    }

    fn abs(self) -> Self {
        let d = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(Op::Abs, self.val.abs(), d)
    }

    fn powi(self, k: i32) -> Self {
        match k {
            0 => Var::constant(1.0),
            1 => self,
            _ => self.unary(Op::Powi, self.val.powi(k), k as f64 * self.val.powi(k - 1)),
        }
    }

    fn dot(a: &[Self], b: &[Self]) -> Self {
        assert_eq!(a.len(), b.len(), "dot operands differ in length");
        let val = fold_dot(a.iter().map(|x| x.val), b.iter().map(|x| x.val));
        match first_tape(a).or_else(|| first_tape(b)) {
            None => Var::constant(val),
            Some(t) => {
                let edges = a.iter().zip(b).flat_map(|(x, y)| {
                    let ex = x.tape.map(|_| (x.idx, y.val));
                    let ey = y.tape.map(|_| (y.idx, x.val));
                    ex.into_iter().chain(ey)
                });
                t.push(Op::Dot, val, edges)
            }
        }
    }

    fn dot_const(w: &[f64], x: &[Self]) -> Self {
        assert_eq!(w.len(), x.len(), "dot operands differ in length");
        let val = fold_dot(w.iter().copied(), x.iter().map(|v| v.val));
        match first_tape(x) {
            None => Var::constant(val),
            Some(t) => t.push(
                Op::Dot,
                val,
                w.iter()
                    .zip(x)
                    .filter(|(&wi, xi)| wi != 0.0 && xi.tape.is_some())
                    .map(|(&wi, xi)| (xi.idx, wi)),
            ),
        }
    }

    fn axpy_sum(base: Self, h: f64, w: &[f64], k: &[Self]) -> Self {
        assert_eq!(w.len(), k.len(), "weight and stage counts differ");
        let val = fold_axpy(base.val, h, w, k.iter().map(|v| v.val));
        match base.tape.or_else(|| first_tape(k)) {
            None => Var::constant(val),
            Some(t) => {
                let head = base.tape.map(|_| (base.idx, 1.0));
                let rest = w
                    .iter()
                    .zip(k)
                    .filter(|(&wj, kj)| wj != 0.0 && kj.tape.is_some())
                    .map(|(&wj, kj)| (kj.idx, h * wj));
                t.push(Op::LinComb, val, head.into_iter().chain(rest))
            }
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        Var::binary(self, rhs, Op::Add, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        Var::binary(self, rhs, Op::Sub, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        Var::binary(self, rhs, Op::Mul, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        Var::binary(self, rhs, Op::Div, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(Op::Neg, -self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.unary(Op::Add, self.val + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.unary(Op::Sub, self.val - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.unary(Op::Mul, self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.unary(Op::Div, self.val / rhs, 1.0 / rhs)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}
