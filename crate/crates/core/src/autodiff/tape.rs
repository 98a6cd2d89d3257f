use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Linear { input: Var, weight: Var, bias: Var },
    LeakyRelu { x: Var, slope: T },
    Sigmoid { x: Var },
    GroupedMaxPool { x: Var, argmax: Vec<usize> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    BroadcastMulRow { a: Var, b: Var },
    L1Distance { a: Var, b: Var },
    Sum { x: Var },
    Scale { x: Var, factor: T },
    Exp { x: Var },
    GatherRows { src: Var, index: Vec<usize> },
    ConcatLast { a: Var, b: Var },
    Reshape { x: Var },
}

impl<T> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Linear {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::LeakyRelu { x, .. }
            | Op::Sigmoid { x }
            | Op::GroupedMaxPool { x, .. }
            | Op::Sum { x }
            | Op::Scale { x, .. }
            | Op::Exp { x }
            | Op::Reshape { x } => vec![*x],
            Op::Add { a, b }
            | Op::Mul { a, b }
            | Op::BroadcastMulRow { a, b }
            | Op::L1Distance { a, b }
            | Op::ConcatLast { a, b } => vec![*a, *b],
            Op::GatherRows { src, .. } => vec![*src],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// Append-only record of a computation, replayed in reverse by
/// [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Gradients are collected for it iff it
    /// `requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    /// Records a learnable input.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_grad())
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Gradient written by the last [`Tape::backward`] call, for leaves that
    /// require one.
    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.nodes[var.0].value.grad()
    }

    pub(crate) fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(op.inputs().iter().all(|v| v.0 < self.nodes.len()));
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a one-element root. Every leaf that requires a
    /// gradient ends up holding dloss/dleaf (zero when unreachable).
    /// Calling it again recomputes the same gradients from scratch.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(Error::NonScalarRoot {
                shape: root.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
        }

        for (id, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() {
                let g = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                node.value.set_grad(g);
            }
        }
        Ok(())
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], var: Var) -> Option<&'a mut Vec<T>> {
        if !self.nodes[var.0].needs_grad {
            return None;
        }
        let len = self.nodes[var.0].value.len();
        Some(grads[var.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backprop_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (rows, cin) = (x.rows(), x.cols());
                let cout = w.cols();
                let (xd, wd) = (x.data(), w.data());
                if let Some(dx) = self.slot(grads, *input) {
                    for i in 0..rows {
                        let gi = &g[i * cout..(i + 1) * cout];
                        let dxi = &mut dx[i * cin..(i + 1) * cin];
                        for (k, d) in dxi.iter_mut().enumerate() {
                            let wk = &wd[k * cout..(k + 1) * cout];
                            *d += dot(gi, wk);
                        }
                    }
                }
                if let Some(dw) = self.slot(grads, *weight) {
                    for i in 0..rows {
                        let gi = &g[i * cout..(i + 1) * cout];
                        let xi = &xd[i * cin..(i + 1) * cin];
                        for (k, &a) in xi.iter().enumerate() {
                            axpy(a, gi, &mut dw[k * cout..(k + 1) * cout]);
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *bias) {
                    for gi in g.chunks_exact(cout) {
                        axpy(T::one(), gi, db);
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xd = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xd) {
                        *d += if xi >= T::zero() { gi } else { gi * *slope };
                    }
                }
            }
            Op::Sigmoid { x } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gi), &s) in dx.iter_mut().zip(g).zip(out) {
                        *d += gi * s * (T::one() - s);
                    }
                }
            }
            Op::GroupedMaxPool { x, argmax } => {
                let shape = self.shape(*x);
                let (k, c) = (shape[1], shape[2]);
                if let Some(dx) = self.slot(grads, *x) {
                    for (slot, (&gi, &row)) in g.iter().zip(argmax).enumerate() {
                        let (j, ch) = (slot / c, slot % c);
                        dx[(j * k + row) * c + ch] += gi;
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = self.slot(grads, v) {
                        axpy(T::one(), g, d);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(bd) {
                        *d += gi * bi;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, &gi), &ai) in db.iter_mut().zip(g).zip(ad) {
                        *d += gi * ai;
                    }
                }
            }
            Op::BroadcastMulRow { a, b } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let c = bd.len();
                if let Some(da) = self.slot(grads, *a) {
                    for (drow, grow) in da.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                        for ((d, &gi), &bi) in drow.iter_mut().zip(grow).zip(bd) {
                            *d += gi * bi;
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for (arow, grow) in ad.chunks_exact(c).zip(g.chunks_exact(c)) {
                        for ((d, &gi), &ai) in db.iter_mut().zip(grow).zip(arow) {
                            *d += gi * ai;
                        }
                    }
                }
            }
            Op::L1Distance { a, b } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let sign = |x: T, y: T| {
                    if x > y {
                        T::one()
                    } else if x < y {
                        -T::one()
                    } else {
                        T::zero()
                    }
                };
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &x), &y) in da.iter_mut().zip(ad).zip(bd) {
                        *d += g[0] * sign(x, y);
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, &x), &y) in db.iter_mut().zip(ad).zip(bd) {
                        *d -= g[0] * sign(x, y);
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Reshape { x } => {
                if let Some(dx) = self.slot(grads, *x) {
                    axpy(T::one(), g, dx);
                }
            }
            Op::Scale { x, factor } => {
                if let Some(dx) = self.slot(grads, *x) {
                    axpy(*factor, g, dx);
                }
            }
            Op::Exp { x } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gi), &e) in dx.iter_mut().zip(g).zip(out) {
                        *d += gi * e;
                    }
                }
            }
            Op::GatherRows { src, index } => {
                let c = self.value(*src).cols();
                if let Some(ds) = self.slot(grads, *src) {
                    for (grow, &row) in g.chunks_exact(c).zip(index) {
                        axpy(T::one(), grow, &mut ds[row * c..(row + 1) * c]);
                    }
                }
            }
            Op::ConcatLast { a, b } => {
                let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                let width = ca + cb;
                if let Some(da) = self.slot(grads, *a) {
                    for (drow, grow) in da.chunks_exact_mut(ca).zip(g.chunks_exact(width)) {
                        axpy(T::one(), &grow[..ca], drow);
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for (drow, grow) in db.chunks_exact_mut(cb).zip(g.chunks_exact(width)) {
                        axpy(T::one(), &grow[ca..], drow);
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// y += alpha * x
#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
