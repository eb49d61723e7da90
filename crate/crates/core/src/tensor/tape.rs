use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;

use super::{Result, Tensor, TensorError};

type NodeId = usize;

/// The differentiable operations a [`Tape`] can record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    MatMul,
    /// Same-shape addition, or a matrix plus a broadcast bias row.
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Tanh,
    /// Row-wise softmax.
    Softmax,
    /// Row-wise log-softmax.
    LogSoftmax,
    Log,
    Exp,
    Sum,
    Mean,
    SliceRows { start: usize, end: usize },
    ConcatRows,
    Scale(f64),
    AddScalar(f64),
    Clamp { lo: f64, hi: f64 },
    /// Gradient reversal: identity forward, gradient times `-coeff` backward.
    Grl(f64),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::Log => "log",
            OpKind::Exp => "exp",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SliceRows { .. } => "slice_rows",
            OpKind::ConcatRows => "concat_rows",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::Clamp { .. } => "clamp",
            OpKind::Grl(_) => "grl",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SliceRows(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Clamp(NodeId, f64, f64),
    Grl(NodeId, f64),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    // Only recorded when some input requires a gradient.
    op: Option<Op>,
}

/// Append-only record of a forward computation.
///
/// Node ids are assigned in creation order, so the node list is already a
/// topological order. A tape supports exactly one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("consumed", &self.consumed.get())
            .finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a backward pass, keyed by leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(&var.id)
    }

    /// Gradient of `var`, or zeros of its shape if the root does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.grads
            .get(&var.id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, true, None)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, false, None)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, requires_grad: bool, op: Option<Op>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, name: &'static str, value: Tensor, inputs: &[NodeId], op: Op) -> Result<Var<'_>> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push(value, requires_grad, requires_grad.then_some(op)))
    }

    fn value(&self, id: NodeId) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Dispatches `kind` over `inputs`.
    pub fn apply<'t>(&'t self, kind: OpKind, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => Some(2),
            OpKind::ConcatRows => None,
            _ => Some(1),
        };
        if let Some(n) = arity {
            if inputs.len() != n {
                return Err(TensorError::Contract {
                    op: kind.name(),
                    detail: format!("expected {n} inputs, got {}", inputs.len()),
                });
            }
        }
        for v in inputs {
            if !std::ptr::eq(v.tape, self) {
                return Err(TensorError::Contract {
                    op: kind.name(),
                    detail: "input belongs to a different tape".into(),
                });
            }
        }
        let x = inputs.first().copied().ok_or_else(|| TensorError::Contract {
            op: kind.name(),
            detail: "no inputs".into(),
        })?;
        match kind {
            OpKind::MatMul => x.matmul(inputs[1]),
            OpKind::Add => x.add(inputs[1]),
            OpKind::Sub => x.sub(inputs[1]),
            OpKind::Mul => x.mul(inputs[1]),
            OpKind::Relu => x.relu(),
            OpKind::Sigmoid => x.sigmoid(),
            OpKind::Tanh => x.tanh(),
            OpKind::Softmax => x.softmax(),
            OpKind::LogSoftmax => x.log_softmax(),
            OpKind::Log => x.log(),
            OpKind::Exp => x.exp(),
            OpKind::Sum => x.sum(),
            OpKind::Mean => x.mean(),
            OpKind::SliceRows { start, end } => x.slice_rows(start, end),
            OpKind::ConcatRows => self.concat_rows(inputs),
            OpKind::Scale(c) => x.scale(c),
            OpKind::AddScalar(c) => x.add_scalar(c),
            OpKind::Clamp { lo, hi } => x.clamp(lo, hi),
            OpKind::Grl(c) => x.grl(c),
        }
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| TensorError::Contract {
            op: "concat_rows",
            detail: "no inputs".into(),
        })?;
        let cols = first.value().cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = p.value();
            let (r, c) = matrix_dims("concat_rows", &v)?;
            if c != cols {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    lhs: vec![cols],
                    rhs: vec![c],
                });
            }
            rows += r;
            data.extend_from_slice(v.data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        self.record("concat_rows", value, &ids, Op::ConcatRows(ids.clone()))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        self.backward_all(&[root])
    }

    /// Reverse pass from several scalar roots; leaf gradients are summed.
    pub fn backward_all(&self, roots: &[Var<'_>]) -> Result<Gradients> {
        if self.consumed.replace(true) {
            return Err(TensorError::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        for r in roots {
            let v = &nodes[r.id].value;
            if !v.is_scalar() {
                self.consumed.set(false);
                return Err(TensorError::NonScalarRoot(v.shape().to_vec()));
            }
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let mut top = None;
        for r in roots.iter().filter(|r| nodes[r.id].requires_grad) {
            accumulate(&nodes, &mut grads, r.id, vec![1.0]);
            top = top.max(Some(r.id));
        }
        let mut out = Gradients::default();
        let Some(top) = top else {
            return Ok(out);
        };
        for id in (0..=top).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                None => {
                    out.grads
                        .insert(id, Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Some(op) => propagate(&nodes, &mut grads, op, &node.value, g),
            }
        }
        Ok(out)
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], op: &Op, out: &Tensor, g: Vec<f64>) {
    let val = |id: NodeId| &nodes[id].value;
    match *op {
        Op::MatMul(a, b) => {
            let (av, bv) = (val(a), val(b));
            let (n, k) = (av.rows(), av.cols());
            let m = bv.cols();
            if nodes[a].requires_grad {
                // dA = G · Bᵀ
                let mut da = vec![0.0; n * k];
                for i in 0..n {
                    let gi = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let bp = &bv.data()[p * m..(p + 1) * m];
                        da[i * k + p] = gi.iter().zip(bp).map(|(x, y)| x * y).sum();
                    }
                }
                accumulate(nodes, grads, a, da);
            }
            if nodes[b].requires_grad {
                // dB = Aᵀ · G
                let mut db = vec![0.0; k * m];
                for i in 0..n {
                    let gi = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let aip = av.data()[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let row = &mut db[p * m..(p + 1) * m];
                        row.iter_mut().zip(gi).for_each(|(d, x)| *d += aip * x);
                    }
                }
                accumulate(nodes, grads, b, db);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, b, g.clone());
            accumulate(nodes, grads, a, g);
        }
        Op::AddRow(a, b) => {
            let cols = val(b).len();
            let mut db = vec![0.0; cols];
            for row in g.chunks(cols) {
                db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
            }
            accumulate(nodes, grads, b, db);
            accumulate(nodes, grads, a, g);
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, b, g.iter().map(|x| -x).collect());
            accumulate(nodes, grads, a, g);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(a).data(), val(b).data());
            let ga = g.iter().zip(bv).map(|(x, y)| x * y).collect();
            let gb = g.iter().zip(av).map(|(x, y)| x * y).collect();
            accumulate(nodes, grads, a, ga);
            accumulate(nodes, grads, b, gb);
        }
        Op::Relu(a) => {
            let d = g
                .iter()
                .zip(val(a).data())
                .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
                .collect();
            accumulate(nodes, grads, a, d);
        }
        Op::Sigmoid(a) => {
            let d = g.iter().zip(out.data()).map(|(x, y)| x * y * (1.0 - y)).collect();
            accumulate(nodes, grads, a, d);
        }
        Op::Tanh(a) => {
            let d = g.iter().zip(out.data()).map(|(x, y)| x * (1.0 - y * y)).collect();
            accumulate(nodes, grads, a, d);
        }
        Op::Softmax(a) => {
            let cols = out.cols();
            let mut d = vec![0.0; g.len()];
            for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(out.data().chunks(cols)) {
                let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                for ((di, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                    *di = yi * (gi - dot);
                }
            }
            accumulate(nodes, grads, a, d);
        }
        Op::LogSoftmax(a) => {
            let cols = out.cols();
            let mut d = vec![0.0; g.len()];
            for ((dr, gr), yr) in d.chunks_mut(cols).zip(g.chunks(cols)).zip(out.data().chunks(cols)) {
                let total: f64 = gr.iter().sum();
                for ((di, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                    *di = gi - yi.exp() * total;
                }
            }
            accumulate(nodes, grads, a, d);
        }
        Op::Log(a) => {
            let d = g.iter().zip(val(a).data()).map(|(x, v)| x / v).collect();
            accumulate(nodes, grads, a, d);
        }
        Op::Exp(a) => {
            let d = g.iter().zip(out.data()).map(|(x, y)| x * y).collect();
            accumulate(nodes, grads, a, d);
        }
        Op::Sum(a) => {
            let n = val(a).len();
            accumulate(nodes, grads, a, vec![g[0]; n]);
        }
        Op::Mean(a) => {
            let n = val(a).len();
            accumulate(nodes, grads, a, vec![g[0] / n as f64; n]);
        }
        Op::SliceRows(a, start) => {
            let av = val(a);
            let cols = av.cols();
            let mut d = vec![0.0; av.len()];
            d[start * cols..start * cols + g.len()].copy_from_slice(&g);
            accumulate(nodes, grads, a, d);
        }
        Op::ConcatRows(ref parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = val(p).len();
                accumulate(nodes, grads, p, g[offset..offset + n].to_vec());
                offset += n;
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, a, g.iter().map(|x| x * c).collect()),
        Op::AddScalar(a) => accumulate(nodes, grads, a, g),
        Op::Clamp(a, lo, hi) => {
            let d = g
                .iter()
                .zip(val(a).data())
                .map(|(x, &v)| if (lo..=hi).contains(&v) { *x } else { 0.0 })
                .collect();
            accumulate(nodes, grads, a, d);
        }
        Op::Grl(a, c) => accumulate(nodes, grads, a, g.iter().map(|x| -c * x).collect()),
    }
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| TensorError::Contract {
        op,
        detail: format!("expected at most 2 dimensions, got {:?}", t.shape()),
    })
}

fn same_tape(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    if std::ptr::eq(a.tape, b.tape) {
        Ok(())
    } else {
        Err(TensorError::Contract {
            op,
            detail: "operands belong to different tapes".into(),
        })
    }
}

fn zip_map(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

fn row_softmax(x: &Tensor, log: bool) -> Result<Tensor> {
    let (rows, cols) = matrix_dims(if log { "log_softmax" } else { "softmax" }, x)?;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        if log {
            let lz = z.ln();
            data.extend(row.iter().map(|v| v - max - lz));
        } else {
            data.extend(row.iter().map(|v| (v - max).exp() / z));
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// The value of a scalar node.
    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    /// Same value as a constant; gradients stop here.
    pub fn detach(&self) -> Var<'t> {
        let v = self.value().clone();
        self.tape.constant(v)
    }

    fn unary(self, name: &'static str, value: Tensor, op: Op) -> Result<Var<'t>> {
        self.tape.record(name, value, &[self.id], op)
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        same_tape("matmul", &self, &rhs)?;
        let value = {
            let (a, b) = (self.value(), rhs.value());
            match (a.shape(), b.shape()) {
                ([n, k], [k2, m]) if k == k2 => {
                    let (n, k, m) = (*n, *k, *m);
                    let mut c = vec![0.0; n * m];
                    for i in 0..n {
                        let ci = &mut c[i * m..(i + 1) * m];
                        for p in 0..k {
                            let aip = a.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let bp = &b.data()[p * m..(p + 1) * m];
                            ci.iter_mut().zip(bp).for_each(|(x, y)| *x += aip * y);
                        }
                    }
                    Tensor::matrix(n, m, c)?
                }
                (l, r) => {
                    return Err(TensorError::Shape {
                        op: "matmul",
                        lhs: l.to_vec(),
                        rhs: r.to_vec(),
                    })
                }
            }
        };
        self.tape.record("matmul", value, &[self.id, rhs.id], Op::MatMul(self.id, rhs.id))
    }

    /// Elementwise sum. A `[n, m]` matrix plus a `[m]` or `[1, m]` row
    /// broadcasts the row over every matrix row.
    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        same_tape("add", &self, &rhs)?;
        let (value, op) = {
            let (a, b) = (self.value(), rhs.value());
            let bias_row = match (a.shape(), b.shape()) {
                ([_, m], [m2]) | ([_, m], [1, m2]) => m == m2 && a.shape() != b.shape(),
                _ => false,
            };
            if bias_row {
                let m = b.len();
                let data = a
                    .data()
                    .chunks(m)
                    .flat_map(|row| row.iter().zip(b.data()).map(|(x, y)| x + y))
                    .collect();
                (Tensor::new(a.shape().to_vec(), data)?, Op::AddRow(self.id, rhs.id))
            } else {
                (zip_map("add", &a, &b, |x, y| x + y)?, Op::Add(self.id, rhs.id))
            }
        };
        self.tape.record("add", value, &[self.id, rhs.id], op)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        same_tape("sub", &self, &rhs)?;
        let value = zip_map("sub", &self.value(), &rhs.value(), |x, y| x - y)?;
        self.tape.record("sub", value, &[self.id, rhs.id], Op::Sub(self.id, rhs.id))
    }

    /// Elementwise product.
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        same_tape("mul", &self, &rhs)?;
        let value = zip_map("mul", &self.value(), &rhs.value(), |x, y| x * y)?;
        self.tape.record("mul", value, &[self.id, rhs.id], Op::Mul(self.id, rhs.id))
    }

    pub fn relu(self) -> Result<Var<'t>> {
        let v = self.value().map(|x| x.max(0.0));
        self.unary("relu", v, Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        let v = self.value().map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        self.unary("sigmoid", v, Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        let v = self.value().map(f64::tanh);
        self.unary("tanh", v, Op::Tanh(self.id))
    }

    pub fn softmax(self) -> Result<Var<'t>> {
        let v = row_softmax(&self.value(), false)?;
        self.unary("softmax", v, Op::Softmax(self.id))
    }

    pub fn log_softmax(self) -> Result<Var<'t>> {
        let v = row_softmax(&self.value(), true)?;
        self.unary("log_softmax", v, Op::LogSoftmax(self.id))
    }

    pub fn log(self) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0) {
                return Err(TensorError::Domain {
                    op: "log",
                    detail: format!("non-positive input {bad}"),
                });
            }
            x.map(f64::ln)
        };
        self.unary("log", v, Op::Log(self.id))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        let v = self.value().map(f64::exp);
        self.unary("exp", v, Op::Exp(self.id))
    }

    /// Sum of all entries, as a zero-dimensional tensor.
    pub fn sum(self) -> Result<Var<'t>> {
        let v = Tensor::scalar(self.value().data().iter().sum());
        self.unary("sum", v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let v = {
            let x = self.value();
            if x.is_empty() {
                return Err(TensorError::Contract {
                    op: "mean",
                    detail: "empty tensor".into(),
                });
            }
            Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
        };
        self.unary("mean", v, Op::Mean(self.id))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.value().slice_rows(start, end)?;
        self.unary("slice_rows", v, Op::SliceRows(self.id, start))
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        let v = self.value().map(|x| c * x);
        self.unary("scale", v, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        let v = self.value().map(|x| x + c);
        self.unary("add_scalar", v, Op::AddScalar(self.id))
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(self) -> Result<Var<'t>> {
        self.scale(-1.0)?.add_scalar(1.0)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside that range.
    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>> {
        let v = self.value().map(|x| x.clamp(lo, hi));
        self.unary("clamp", v, Op::Clamp(self.id, lo, hi))
    }

    /// Gradient reversal layer.
    pub fn grl(self, coeff: f64) -> Result<Var<'t>> {
        if !(coeff >= 0.0) {
            return Err(TensorError::Domain {
                op: "grl",
                detail: format!("coefficient {coeff} must be >= 0"),
            });
        }
        let v = self.value().clone();
        self.unary("grl", v, Op::Grl(self.id, coeff))
    }
}
