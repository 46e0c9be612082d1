//! Reverse-mode differentiation over a small set of matrix operations.
//!
//! A [`Graph`] is recorded once through its builder methods, then evaluated
//! with [`Graph::forward`] against a [`ParamSet`] and a set of named input
//! bindings. [`Graph::backward`] propagates the gradient of the scalar root
//! back into the parameter gradient buffers, accumulating over every use of
//! a node.
//!
//! Nodes are appended after their operands, so insertion order is a
//! topological order.
//!
//! ```
//! use contsurv::autodiff::{Graph, Inputs, ParamSet};
//! use contsurv::matrix::Matrix;
//!
//! let mut params = ParamSet::new();
//! let w = params.insert("w", Matrix::scalar(3.0)).unwrap();
//! let mut g = Graph::new();
//! let x = g.input("x");
//! let wn = g.param(w);
//! let y = g.mul(x, wn);
//! g.sum(y);
//!
//! let mut inputs = Inputs::new();
//! inputs.bind("x", Matrix::scalar(2.0));
//! assert_eq!(g.forward(&params, &inputs).unwrap().as_scalar(), Some(6.0));
//! g.backward(&mut params).unwrap();
//! assert_eq!(params.grad(w).data(), &[2.0]);
//! ```

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matrix::{gemm_new, Matrix};

/// Variance floor used by batch normalization.
pub const BATCH_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    value: Matrix,
    grad: Matrix,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn grad(&self) -> &Matrix {
        &self.grad
    }
}

/// Named learnable tensors, each with a gradient buffer of the same shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Input(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, value, grad });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].grad
    }

    /// Mutable access to a value and its gradient at once.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Matrix, &Matrix) {
        let p = &mut self.params[id.0];
        (&mut p.value, &p.grad)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Replaces a value, keeping the shape.
    pub fn set_value(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::dim(
                format!("parameter `{}`", p.name),
                format!("expected shape {:?}, got {:?}", p.value.shape(), value.shape()),
            ));
        }
        p.value = value;
        Ok(())
    }
}

/// Named input values bound for one forward evaluation.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    values: HashMap<String, Matrix>,
}

impl Inputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: impl Into<String>, value: Matrix) -> &mut Self {
        self.values.insert(name.into(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.values.get(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub enum NormMode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with fixed running statistics.
    Inference { mean: Vec<f64>, var: Vec<f64> },
}

#[derive(Debug, Clone)]
enum Op {
    Input(String),
    Constant(Matrix),
    Param(ParamId),
    /// `x · wᵀ` for `x: n × in`, `w: out × in`.
    Linear(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    GatherRows(NodeId, Vec<usize>),
    Relu(NodeId),
    Sin(NodeId),
    Ln(NodeId),
    Softplus(NodeId),
    Neg(NodeId),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: NormMode,
    },
    Sum(NodeId),
    Mean(NodeId),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Constant(_) => "constant",
            Op::Param(_) => "param",
            Op::Linear(..) => "linear",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Concat(_) => "concat",
            Op::SliceCols(..) => "slice",
            Op::GatherRows(..) => "gather",
            Op::Relu(_) => "relu",
            Op::Sin(_) => "sin",
            Op::Ln(_) => "ln",
            Op::Softplus(_) => "softplus",
            Op::Neg(_) => "neg",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Constant(_) | Op::Param(_) => vec![],
            Op::Linear(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Concat(xs) => xs.clone(),
            Op::SliceCols(x, ..)
            | Op::GatherRows(x, _)
            | Op::Relu(x)
            | Op::Sin(x)
            | Op::Ln(x)
            | Op::Softplus(x)
            | Op::Neg(x)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    needs_grad: bool,
    value: Option<Matrix>,
    grad: Option<Matrix>,
    norm: Option<NormCache>,
}

/// A recorded computation over matrices.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    root: Option<NodeId>,
    evaluated: bool,
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let needs_grad = match &op {
            Op::Param(_) => true,
            Op::Input(_) | Op::Constant(_) => false,
            other => other.operands().iter().any(|o| self.nodes[o.0].needs_grad),
        };
        for o in op.operands() {
            assert!(o.0 < self.nodes.len(), "operand from another graph");
        }
        self.nodes.push(Node {
            op,
            needs_grad,
            value: None,
            grad: None,
            norm: None,
        });
        self.evaluated = false;
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Input(name.into()))
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.push(Op::Param(id))
    }

    /// Batched matrix-vector product `x · wᵀ`.
    pub fn linear(&mut self, x: NodeId, w: NodeId) -> NodeId {
        self.push(Op::Linear(x, w))
    }

    /// Elementwise sum; `b` may also be a single row broadcast over `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    /// Elementwise product; `b` may also be a single row broadcast over `a`.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::Concat(parts.to_vec()))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        self.push(Op::SliceCols(x, start, end))
    }

    pub fn gather_rows(&mut self, x: NodeId, rows: Vec<usize>) -> NodeId {
        self.push(Op::GatherRows(x, rows))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x))
    }

    pub fn sin(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sin(x))
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Ln(x))
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Softplus(x))
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Neg(x))
    }

    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, mode: NormMode) -> NodeId {
        self.push(Op::BatchNorm { x, gamma, beta, mode })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean(x))
    }

    /// Sets the node returned by `forward` and differentiated by `backward`.
    /// Defaults to the most recently added node.
    pub fn set_root(&mut self, node: NodeId) {
        self.root = Some(node);
    }

    pub fn root(&self) -> Option<NodeId> {
        self.root.or_else(|| self.nodes.len().checked_sub(1).map(NodeId))
    }

    pub fn value(&self, node: NodeId) -> Option<&Matrix> {
        self.nodes.get(node.0)?.value.as_ref()
    }

    /// Gradient of the root with respect to `node`, populated by `backward`
    /// for every node that depends on a parameter.
    pub fn grad(&self, node: NodeId) -> Option<&Matrix> {
        self.nodes.get(node.0)?.grad.as_ref()
    }

    /// Batch mean and (biased) variance computed by a training-mode
    /// batch-norm node during the last forward pass.
    pub fn batch_statistics(&self, node: NodeId) -> Option<(&[f64], &[f64])> {
        let n = self.nodes.get(node.0)?;
        match (&n.op, &n.norm) {
            (
                Op::BatchNorm {
                    mode: NormMode::Train, ..
                },
                Some(c),
            ) => Some((&c.mean, &c.var)),
            _ => None,
        }
    }

    fn label(&self, i: usize) -> String {
        format!("node #{i} ({})", self.nodes[i].op.kind())
    }

    fn val(&self, id: NodeId) -> &Matrix {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("operands are evaluated before their consumers")
    }

    /// Evaluates every node and returns the root value.
    pub fn forward(&mut self, params: &ParamSet, inputs: &Inputs) -> Result<&Matrix> {
        self.evaluated = false;
        for node in &mut self.nodes {
            node.value = None;
            node.grad = None;
            node.norm = None;
        }
        for i in 0..self.nodes.len() {
            let (value, norm) = self.eval_node(i, params, inputs)?;
            let node = &mut self.nodes[i];
            node.value = Some(value);
            node.norm = norm;
        }
        self.evaluated = true;
        let root = self
            .root()
            .ok_or_else(|| Error::State("forward on an empty graph".into()))?;
        Ok(self.val(root))
    }

    fn eval_node(&self, i: usize, params: &ParamSet, inputs: &Inputs) -> Result<(Matrix, Option<NormCache>)> {
        let label = || self.label(i);
        let out = match &self.nodes[i].op {
            Op::Input(name) => inputs
                .get(name)
                .cloned()
                .ok_or_else(|| Error::State(format!("{}: input `{name}` is not bound", label())))?,
            Op::Constant(m) => m.clone(),
            Op::Param(id) => {
                if id.0 >= params.len() {
                    return Err(Error::State(format!("{}: unknown parameter id {}", label(), id.0)));
                }
                params.value(*id).clone()
            }
            Op::Linear(x, w) => {
                let (x, w) = (self.val(*x), self.val(*w));
                if x.cols() != w.cols() {
                    return Err(Error::dim(
                        label(),
                        format!("input {:?} against weights {:?}", x.shape(), w.shape()),
                    ));
                }
                gemm_new(x, false, w, true)
            }
            Op::Add(a, b) | Op::Mul(a, b) => {
                let is_add = matches!(self.nodes[i].op, Op::Add(..));
                let (a, b) = (self.val(*a), self.val(*b));
                let broadcast = check_broadcast(a, b).map_err(|d| Error::dim(label(), d))?;
                let mut out = a.clone();
                let cols = a.cols();
                let f = |x: &mut f64, y: f64| if is_add { *x += y } else { *x *= y };
                if broadcast {
                    for r in 0..a.rows() {
                        for (x, &y) in out.row_mut(r).iter_mut().zip(b.data()) {
                            f(x, y);
                        }
                    }
                } else {
                    for (x, &y) in out.data_mut().iter_mut().zip(b.data()) {
                        f(x, y);
                    }
                }
                debug_assert_eq!(out.cols(), cols);
                out
            }
            Op::Concat(parts) => {
                let vals: Vec<&Matrix> = parts.iter().map(|p| self.val(*p)).collect();
                let rows = vals.first().map_or(0, |m| m.rows());
                if let Some(bad) = vals.iter().find(|m| m.rows() != rows) {
                    return Err(Error::dim(
                        label(),
                        format!("cannot concatenate {} rows with {rows} rows", bad.rows()),
                    ));
                }
                let cols: usize = vals.iter().map(|m| m.cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for m in &vals {
                        data.extend_from_slice(m.row(r));
                    }
                }
                Matrix::from_vec(rows, cols, data)?
            }
            Op::SliceCols(x, start, end) => {
                let x = self.val(*x);
                if start >= end || *end > x.cols() {
                    return Err(Error::dim(
                        label(),
                        format!("columns {start}..{end} out of range for {:?}", x.shape()),
                    ));
                }
                let mut data = Vec::with_capacity(x.rows() * (end - start));
                for r in 0..x.rows() {
                    data.extend_from_slice(&x.row(r)[*start..*end]);
                }
                Matrix::from_vec(x.rows(), end - start, data)?
            }
            Op::GatherRows(x, rows) => {
                let x = self.val(*x);
                if let Some(&bad) = rows.iter().find(|&&r| r >= x.rows()) {
                    return Err(Error::dim(
                        label(),
                        format!("row {bad} out of range for {:?}", x.shape()),
                    ));
                }
                x.select_rows(rows)
            }
            Op::Relu(x) => self.val(*x).map(|v| v.max(0.0)),
            Op::Sin(x) => self.val(*x).map(f64::sin),
            Op::Softplus(x) => self.val(*x).map(softplus),
            Op::Neg(x) => self.val(*x).map(|v| -v),
            Op::Ln(x) => {
                let x = self.val(*x);
                if let Some(bad) = x.data().iter().find(|v| !(**v > 0.0)) {
                    return Err(Error::Domain(format!("{}: log of non-positive value {bad}", label())));
                }
                x.map(f64::ln)
            }
            Op::Sum(x) => Matrix::scalar(self.val(*x).data().iter().sum()),
            Op::Mean(x) => {
                let x = self.val(*x);
                if x.is_empty() {
                    return Err(Error::dim(label(), "mean of an empty matrix"));
                }
                Matrix::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
            }
            Op::BatchNorm { x, gamma, beta, mode } => {
                let (x, gamma, beta) = (self.val(*x), self.val(*gamma), self.val(*beta));
                let c = x.cols();
                if gamma.shape() != (1, c) || beta.shape() != (1, c) {
                    return Err(Error::dim(
                        label(),
                        format!(
                            "input {:?} with scale {:?} and shift {:?}",
                            x.shape(),
                            gamma.shape(),
                            beta.shape()
                        ),
                    ));
                }
                let (mean, var) = match mode {
                    NormMode::Train => {
                        if x.rows() == 0 {
                            return Err(Error::dim(label(), "batch norm over an empty batch"));
                        }
                        column_moments(x)
                    }
                    NormMode::Inference { mean, var } => {
                        if mean.len() != c || var.len() != c {
                            return Err(Error::dim(label(), "running statistics width"));
                        }
                        (mean.clone(), var.clone())
                    }
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
                let mut xhat = x.clone();
                for r in 0..x.rows() {
                    for ((v, m), s) in xhat.row_mut(r).iter_mut().zip(&mean).zip(&inv_std) {
                        *v = (*v - m) * s;
                    }
                }
                let (gd, bd) = (gamma.data(), beta.data());
                let mut data = Vec::with_capacity(x.len());
                for row in xhat.data().chunks_exact(c.max(1)) {
                    data.extend(row.iter().zip(gd).zip(bd).map(|((v, g), b)| g * v + b));
                }
                let out = Matrix::from_vec(x.rows(), c, data)?;
                let norm = NormCache {
                    xhat,
                    inv_std,
                    mean,
                    var,
                };
                return Ok((out, Some(norm)));
            }
        };
        Ok((out, None))
    }

    /// Propagates d(root)/d(node) back through the graph, adding parameter
    /// gradients into `params`.
    pub fn backward(&mut self, params: &mut ParamSet) -> Result<()> {
        if !self.evaluated {
            return Err(Error::State("backward called before a successful forward".into()));
        }
        let root = self.root().expect("evaluated graphs are non-empty");
        let root_shape = self.val(root).shape();
        if root_shape != (1, 1) {
            return Err(Error::State(format!(
                "backward needs a scalar root, got shape {root_shape:?}"
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[root.0].needs_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(Matrix::scalar(1.0));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(dy) = self.nodes[i].grad.take() else {
                continue;
            };
            self.backprop_node(i, &dy, params);
            self.nodes[i].grad = Some(dy);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, g: Matrix) {
        let node = &mut self.nodes[id.0];
        if !node.needs_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn backprop_node(&mut self, i: usize, dy: &Matrix, params: &mut ParamSet) {
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Input(String::new()));
        self.backprop_op(i, &op, dy, params);
        self.nodes[i].op = op;
    }

    fn backprop_op(&mut self, i: usize, op: &Op, dy: &Matrix, params: &mut ParamSet) {
        match *op {
            Op::Input(_) | Op::Constant(_) => {}
            Op::Param(id) => params.params[id.0].grad.add_assign(dy),
            Op::Linear(x, w) => {
                if self.needs(x) {
                    let wv = self.val(w);
                    let dx = gemm_new(dy, false, wv, false);
                    self.accumulate(x, dx);
                }
                if self.needs(w) {
                    let xv = self.val(x);
                    let dw = gemm_new(dy, true, xv, false);
                    self.accumulate(w, dw);
                }
            }
            Op::Add(a, b) => {
                let broadcast = self.val(a).shape() != self.val(b).shape();
                if self.needs(a) {
                    self.accumulate(a, dy.clone());
                }
                if self.needs(b) {
                    let db = if broadcast { dy.column_sums() } else { dy.clone() };
                    self.accumulate(b, db);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(a), self.val(b));
                let broadcast = av.shape() != bv.shape();
                let da = self.needs(a).then(|| {
                    let mut da = dy.clone();
                    if broadcast {
                        for r in 0..da.rows() {
                            for (d, &y) in da.row_mut(r).iter_mut().zip(bv.data()) {
                                *d *= y;
                            }
                        }
                    } else {
                        for (d, &y) in da.data_mut().iter_mut().zip(bv.data()) {
                            *d *= y;
                        }
                    }
                    da
                });
                let db = self.needs(b).then(|| {
                    let mut prod = dy.clone();
                    for (d, &x) in prod.data_mut().iter_mut().zip(av.data()) {
                        *d *= x;
                    }
                    if broadcast {
                        prod.column_sums()
                    } else {
                        prod
                    }
                });
                if let Some(da) = da {
                    self.accumulate(a, da);
                }
                if let Some(db) = db {
                    self.accumulate(b, db);
                }
            }
            Op::Concat(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.val(p).cols();
                    if self.needs(p) {
                        let mut g = Matrix::zeros(dy.rows(), cols);
                        for r in 0..dy.rows() {
                            g.row_mut(r).copy_from_slice(&dy.row(r)[offset..offset + cols]);
                        }
                        self.accumulate(p, g);
                    }
                    offset += cols;
                }
            }
            Op::SliceCols(x, start, end) => {
                let (rows, cols) = self.val(x).shape();
                let mut g = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    g.row_mut(r)[start..end].copy_from_slice(dy.row(r));
                }
                self.accumulate(x, g);
            }
            Op::GatherRows(x, ref rows) => {
                let (nr, nc) = self.val(x).shape();
                let mut g = Matrix::zeros(nr, nc);
                for (k, &r) in rows.iter().enumerate() {
                    for (d, s) in g.row_mut(r).iter_mut().zip(dy.row(k)) {
                        *d += s;
                    }
                }
                self.accumulate(x, g);
            }
            Op::Relu(x) => {
                let g = zip_map(dy, self.val(x), |d, v| if v > 0.0 { d } else { 0.0 });
                self.accumulate(x, g);
            }
            Op::Sin(x) => {
                let g = zip_map(dy, self.val(x), |d, v| d * v.cos());
                self.accumulate(x, g);
            }
            Op::Ln(x) => {
                let g = zip_map(dy, self.val(x), |d, v| d / v);
                self.accumulate(x, g);
            }
            Op::Softplus(x) => {
                let g = zip_map(dy, self.val(x), |d, v| d * sigmoid(v));
                self.accumulate(x, g);
            }
            Op::Neg(x) => self.accumulate(x, dy.map(|d| -d)),
            Op::Sum(x) => {
                let (r, c) = self.val(x).shape();
                self.accumulate(x, Matrix::filled(r, c, dy.data()[0]));
            }
            Op::Mean(x) => {
                let (r, c) = self.val(x).shape();
                self.accumulate(x, Matrix::filled(r, c, dy.data()[0] / (r * c) as f64));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                ref mode,
            } => {
                let cache = self.nodes[i].norm.as_ref().expect("batch-norm cache from forward");
                let gv = self.val(gamma);
                let (n, c) = dy.shape();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for r in 0..n {
                    let (dr, xr) = (dy.row(r), cache.xhat.row(r));
                    for j in 0..c {
                        dbeta[j] += dr[j];
                        dgamma[j] += dr[j] * xr[j];
                    }
                }
                let dx = self.needs(x).then(|| {
                    let mut dx = Matrix::zeros(n, c);
                    match mode {
                        NormMode::Inference { .. } => {
                            for r in 0..n {
                                let (dr, out) = (dy.row(r), dx.row_mut(r));
                                for j in 0..c {
                                    out[j] = dr[j] * gv.data()[j] * cache.inv_std[j];
                                }
                            }
                        }
                        NormMode::Train => {
                            // dxhat = dy·γ, so Σdxhat = γ·dβ and Σ dxhat·xhat = γ·dγ.
                            let nf = n as f64;
                            for r in 0..n {
                                let (dr, xr, out) = (dy.row(r), cache.xhat.row(r), dx.row_mut(r));
                                for j in 0..c {
                                    let g = gv.data()[j];
                                    out[j] =
                                        cache.inv_std[j] / nf * (nf * dr[j] * g - g * dbeta[j] - xr[j] * g * dgamma[j]);
                                }
                            }
                        }
                    }
                    dx
                });
                if let Some(dx) = dx {
                    self.accumulate(x, dx);
                }
                self.accumulate(gamma, Matrix::row_vector(dgamma));
                self.accumulate(beta, Matrix::row_vector(dbeta));
            }
        }
    }

    /// Sign pattern of every ReLU input, used to detect kink crossings.
    fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.val(x).data().iter().map(|&v| v > 0.0));
            }
        }
        out
    }
}

fn check_broadcast(a: &Matrix, b: &Matrix) -> std::result::Result<bool, String> {
    if a.shape() == b.shape() {
        Ok(false)
    } else if b.rows() == 1 && b.cols() == a.cols() {
        Ok(true)
    } else {
        Err(format!("operands {:?} and {:?} are incompatible", a.shape(), b.shape()))
    }
}

fn column_moments(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mut mean = x.column_sums().into_data();
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((v, &xv), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            let d = xv - m;
            *v += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

fn zip_map(dy: &Matrix, x: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = dy.data().iter().zip(x.data()).map(|(&d, &v)| f(d, v)).collect();
    Matrix::from_vec(dy.rows(), dy.cols(), data).expect("same shape")
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// Largest `|a − b| / max(|a|, |b|, 1e−8)` over checked coordinates.
    pub max_relative_error: f64,
    /// Name and element index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a ReLU kink at every step size tried.
    pub skipped: usize,
}

/// Compares `backward` against central differences for every parameter
/// element.
///
/// A coordinate whose perturbation flips the sign of any ReLU input is
/// retried with a step ten and a hundred times smaller; if it still
/// crosses a kink it is skipped and counted in [`FdReport::skipped`].
pub fn finite_difference_check(
    graph: &mut Graph,
    params: &mut ParamSet,
    inputs: &Inputs,
    epsilon: f64,
) -> Result<FdReport> {
    if !(epsilon > 0.0) {
        return Err(Error::Input(format!("epsilon must be positive, got {epsilon}")));
    }
    graph.forward(params, inputs)?;
    params.zero_grad();
    graph.backward(params)?;
    let analytic: Vec<Matrix> = params.iter().map(|p| p.grad().clone()).collect();
    let baseline = graph.relu_pattern();

    let eval = |graph: &mut Graph, params: &ParamSet| -> Result<(f64, bool)> {
        let v = graph.forward(params, inputs)?.as_scalar().expect("scalar root");
        Ok((v, graph.relu_pattern() == baseline))
    };

    let mut report = FdReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        for e in 0..params.value(id).len() {
            let original = params.value(id).data()[e];
            let mut numeric = None;
            for step in [epsilon, epsilon * 0.1, epsilon * 0.01] {
                params.value_mut(id).data_mut()[e] = original + step;
                let (plus, same_plus) = eval(graph, params)?;
                params.value_mut(id).data_mut()[e] = original - step;
                let (minus, same_minus) = eval(graph, params)?;
                params.value_mut(id).data_mut()[e] = original;
                if same_plus && same_minus {
                    numeric = Some((plus - minus) / (2.0 * step));
                    break;
                }
            }
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            let a = analytic[id.0].data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((params.name(id).to_string(), e));
            }
        }
    }
    // leave the graph holding values for the unperturbed parameters
    graph.forward(params, inputs)?;
    Ok(report)
}
