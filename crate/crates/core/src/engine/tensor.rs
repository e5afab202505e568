//! Tape-based reverse-mode differentiation over 2-D real matrices.
//!
//! A [`Tape`] records every operation of one forward pass. [`Tensor`] is a
//! cheap handle to a node on the tape. Nodes are appended in evaluation
//! order, so walking the tape backwards is a topological order and each node
//! is visited once. A tape can be differentiated a single time.

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use super::sparse::SparseConst;
use super::EngineError;

/// Log-probabilities are floored at `ln(LOG_FLOOR)`.
pub const LOG_FLOOR: f64 = 1e-12;

enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    SpMM(SparseConst, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Dropout(usize, Array2<f64>),
    ConcatRows(usize, usize),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Sum(usize),
    SquaredSum(usize),
    SoftmaxCrossEntropy { logits: usize, targets: Rc<Vec<(usize, usize)>>, probs: Array2<f64> },
    BceWithLogits { logits: usize, targets: Rc<Vec<f64>>, weights: Rc<Vec<f64>> },
    PairDot(usize, Rc<Vec<(usize, usize)>>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    spent: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor(#{}, {:?})", self.id, self.shape())
    }
}

/// Gradients of a scalar with respect to the trainable leaves of a tape.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of `t`; `None` when `t` is not a leaf reached by the loss.
    pub fn get(&self, t: &Tensor<'_>) -> Option<&Array2<f64>> {
        self.grads.get(t.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `t`, or zeros of its shape when the loss ignores it.
    pub fn get_or_zeros(&self, t: &Tensor<'_>) -> Array2<f64> {
        self.get(t).cloned().unwrap_or_else(|| Array2::zeros(t.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Tensor { tape: self, id: nodes.len() - 1 }
    }

    /// Trainable leaf.
    pub fn leaf(&self, value: Array2<f64>) -> Tensor<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable input.
    pub fn constant(&self, value: Array2<f64>) -> Tensor<'_> {
        self.push(value, Op::Constant, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn value_of(&self, id: usize) -> Ref<'_, Array2<f64>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Differentiates the scalar `loss` with respect to every trainable leaf.
    pub fn backward(&self, loss: &Tensor<'_>) -> Result<Gradients, EngineError> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(EngineError::ForeignTensor);
        }
        if self.spent.replace(true) {
            return Err(EngineError::AlreadyBackpropagated);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.dim() != (1, 1) {
            return Err(EngineError::NotScalar(root.value.dim()));
        }
        if !root.requires_grad {
            return Err(EngineError::Detached);
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Array2::ones((1, 1)));

        fn accumulate(grads: &mut [Option<Array2<f64>>], nodes: &[Node], id: usize, g: Array2<f64>) {
            if !nodes[id].requires_grad {
                return;
            }
            match &mut grads[id] {
                Some(acc) => *acc += &g,
                slot => *slot = Some(g),
            }
        }

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf | Op::Constant => unreachable!(),
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        accumulate(&mut grads, &nodes, *a, g.dot(&val(*b).t()));
                    }
                    if nodes[*b].requires_grad {
                        accumulate(&mut grads, &nodes, *b, val(*a).t().dot(&g));
                    }
                }
                Op::SpMM(m, x) => accumulate(&mut grads, &nodes, *x, m.backward.matmul(&g)),
                Op::AddBias(x, b) => {
                    if nodes[*b].requires_grad {
                        accumulate(&mut grads, &nodes, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    accumulate(&mut grads, &nodes, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, &nodes, *a, g.clone());
                    accumulate(&mut grads, &nodes, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, &nodes, *b, -&g);
                    accumulate(&mut grads, &nodes, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * val(*b);
                    let gb = &g * val(*a);
                    accumulate(&mut grads, &nodes, *a, ga);
                    accumulate(&mut grads, &nodes, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, &nodes, *a, g * *c),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(val(*a)).for_each(|gi, &x| {
                        if x <= 0.0 {
                            *gi = 0.0;
                        }
                    });
                    accumulate(&mut grads, &nodes, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = &g * &node.value.mapv(|s| s * (1.0 - s));
                    accumulate(&mut grads, &nodes, *a, ga);
                }
                Op::Dropout(a, mask) => accumulate(&mut grads, &nodes, *a, g * mask),
                Op::ConcatRows(a, b) => {
                    let ra = val(*a).nrows();
                    accumulate(&mut grads, &nodes, *a, g.slice(s![..ra, ..]).to_owned());
                    accumulate(&mut grads, &nodes, *b, g.slice(s![ra.., ..]).to_owned());
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(val(*a).dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads, &nodes, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(val(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, &nodes, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(val(*a).dim(), g[[0, 0]]);
                    accumulate(&mut grads, &nodes, *a, ga);
                }
                Op::SquaredSum(a) => {
                    let ga = val(*a) * (2.0 * g[[0, 0]]);
                    accumulate(&mut grads, &nodes, *a, ga);
                }
                Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                    let scale = g[[0, 0]] / targets.len() as f64;
                    let mut ga = Array2::zeros(probs.dim());
                    for &(r, c) in targets.iter() {
                        if probs[[r, c]] <= LOG_FLOOR {
                            continue;
                        }
                        let mut row = ga.row_mut(r);
                        row.scaled_add(scale, &probs.row(r));
                        row[c] -= scale;
                    }
                    accumulate(&mut grads, &nodes, *logits, ga);
                }
                Op::BceWithLogits { logits, targets, weights } => {
                    let x = val(*logits);
                    let mut ga = Array2::zeros(x.dim());
                    for (k, (gi, &xi)) in ga.iter_mut().zip(x.iter()).enumerate() {
                        let y = targets[k];
                        let sig = sigmoid(xi);
                        let mut d = 0.0;
                        if y != 0.0 && softplus(-xi) < -LOG_FLOOR.ln() {
                            d += y * (sig - 1.0);
                        }
                        if y != 1.0 && softplus(xi) < -LOG_FLOOR.ln() {
                            d += (1.0 - y) * sig;
                        }
                        *gi = g[[0, 0]] * weights[k] * d;
                    }
                    accumulate(&mut grads, &nodes, *logits, ga);
                }
                Op::PairDot(z, pairs) => {
                    let zv = val(*z);
                    let mut gz = Array2::zeros(zv.dim());
                    for (k, &(i, j)) in pairs.iter().enumerate() {
                        let gk = g[[k, 0]];
                        gz.row_mut(i).scaled_add(gk, &zv.row(j));
                        gz.row_mut(j).scaled_add(gk, &zv.row(i));
                    }
                    accumulate(&mut grads, &nodes, *z, gz);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Row-wise softmax.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

impl<'t> Tensor<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Array2<f64>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().dim()
    }

    /// The single entry of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "item() on a non-scalar tensor");
        v[[0, 0]]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs(self.id)
    }

    fn unary(&self, value: Array2<f64>, op: Op) -> Tensor<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Tensor<'t>, value: Array2<f64>, op: Op) -> Tensor<'t> {
        assert!(std::ptr::eq(self.tape, other.tape), "tensors from different tapes");
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn matmul(&self, rhs: &Tensor<'t>) -> Tensor<'t> {
        let v = {
            let (a, b) = (self.value(), rhs.value());
            assert_eq!(a.ncols(), b.nrows(), "matmul {:?} x {:?}", a.dim(), b.dim());
            a.dot(&*b)
        };
        self.binary(rhs, v, Op::MatMul(self.id, rhs.id))
    }

    /// `m * self` for a constant sparse `m`.
    pub fn spmm_left(&self, m: &SparseConst) -> Tensor<'t> {
        let v = m.forward.matmul(&self.value());
        self.unary(v, Op::SpMM(m.clone(), self.id))
    }

    /// Adds a `1 x k` row vector to every row.
    pub fn add_bias(&self, bias: &Tensor<'t>) -> Tensor<'t> {
        let v = {
            let (x, b) = (self.value(), bias.value());
            assert_eq!(b.nrows(), 1, "bias must be a row vector");
            &*x + &*b
        };
        self.binary(bias, v, Op::AddBias(self.id, bias.id))
    }

    pub fn add(&self, other: &Tensor<'t>) -> Tensor<'t> {
        let v = {
            let (a, b) = (self.value(), other.value());
            assert_eq!(a.dim(), b.dim(), "add shape mismatch");
            &*a + &*b
        };
        self.binary(other, v, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Tensor<'t>) -> Tensor<'t> {
        let v = {
            let (a, b) = (self.value(), other.value());
            assert_eq!(a.dim(), b.dim(), "sub shape mismatch");
            &*a - &*b
        };
        self.binary(other, v, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Tensor<'t>) -> Tensor<'t> {
        let v = {
            let (a, b) = (self.value(), other.value());
            assert_eq!(a.dim(), b.dim(), "mul shape mismatch");
            &*a * &*b
        };
        self.binary(other, v, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, c: f64) -> Tensor<'t> {
        let v = &*self.value() * c;
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn relu(&self) -> Tensor<'t> {
        let v = self.value().mapv(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Tensor<'t> {
        let v = self.value().mapv(sigmoid);
        self.unary(v, Op::Sigmoid(self.id))
    }

    /// Multiplies by a fixed mask (already scaled for inverted dropout).
    pub fn dropout_with(&self, mask: Array2<f64>) -> Tensor<'t> {
        let v = &*self.value() * &mask;
        self.unary(v, Op::Dropout(self.id, mask))
    }

    pub fn concat_rows(&self, other: &Tensor<'t>) -> Tensor<'t> {
        let v = {
            let (a, b) = (self.value(), other.value());
            ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("concat_rows column mismatch")
        };
        self.binary(other, v, Op::ConcatRows(self.id, other.id))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor<'t> {
        let v = self.value().slice(s![start..end, ..]).to_owned();
        self.unary(v, Op::SliceRows(self.id, start))
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor<'t> {
        let v = self.value().slice(s![.., start..end]).to_owned();
        self.unary(v, Op::SliceCols(self.id, start))
    }

    pub fn sum(&self) -> Tensor<'t> {
        let v = Array2::from_elem((1, 1), self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    /// Sum of squared entries.
    pub fn squared_sum(&self) -> Tensor<'t> {
        let v = Array2::from_elem((1, 1), self.value().iter().map(|x| x * x).sum());
        self.unary(v, Op::SquaredSum(self.id))
    }

    /// Mean over `targets` of `-ln softmax(self[row])[class]`, each term
    /// capped at `-ln(1e-12)`.
    pub fn softmax_cross_entropy(&self, targets: Rc<Vec<(usize, usize)>>) -> Tensor<'t> {
        assert!(!targets.is_empty(), "cross-entropy over no targets");
        let probs = softmax_rows(&self.value());
        let cap = -LOG_FLOOR.ln();
        let total: f64 = targets.iter().map(|&(r, c)| (-probs[[r, c]].ln()).min(cap)).sum();
        let v = Array2::from_elem((1, 1), total / targets.len() as f64);
        self.unary(v, Op::SoftmaxCrossEntropy { logits: self.id, targets, probs })
    }

    /// `sum_k w_k * BCE(sigmoid(x_k), y_k)` over all entries in row-major
    /// order, with both log arguments floored at 1e-12.
    pub fn bce_with_logits(&self, targets: Rc<Vec<f64>>, weights: Rc<Vec<f64>>) -> Tensor<'t> {
        let cap = -LOG_FLOOR.ln();
        let total: f64 = {
            let x = self.value();
            assert_eq!(x.len(), targets.len(), "one target per logit");
            assert_eq!(x.len(), weights.len(), "one weight per logit");
            x.iter()
                .enumerate()
                .map(|(k, &xi)| {
                    let y = targets[k];
                    let pos = if y != 0.0 { y * softplus(-xi).min(cap) } else { 0.0 };
                    let neg = if y != 1.0 { (1.0 - y) * softplus(xi).min(cap) } else { 0.0 };
                    weights[k] * (pos + neg)
                })
                .sum()
        };
        let v = Array2::from_elem((1, 1), total);
        self.unary(v, Op::BceWithLogits { logits: self.id, targets, weights })
    }

    /// Column vector of `self[i] . self[j]` for every pair.
    pub fn pair_dot(&self, pairs: Rc<Vec<(usize, usize)>>) -> Tensor<'t> {
        let v = {
            let z = self.value();
            let mut out = Array2::zeros((pairs.len(), 1));
            for (k, &(i, j)) in pairs.iter().enumerate() {
                out[[k, 0]] = z.row(i).dot(&z.row(j));
            }
            out
        };
        self.unary(v, Op::PairDot(self.id, pairs))
    }
}
