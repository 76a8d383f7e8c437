//! Dynamic tape. Every op evaluates eagerly and records enough state for
//! its vector-Jacobian product; [`Graph::backward`] replays the records in
//! reverse insertion order, which is a valid topological order because an
//! op can only reference nodes that already exist.

use std::sync::Arc;

use crate::tensor::{matmul_at_into, matmul_bt_into, matmul_into};
use crate::{ParamId, ParamSet, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Op tag without payload, used to compare graph structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Input,
    Param,
    Add,
    Sub,
    Mul,
    AddRow,
    Scale,
    MatMul,
    Transpose,
    Concat,
    SliceRows,
    SliceCols,
    Gather,
    StackRows,
    Sum,
    Softmax,
    Log,
    LogSoftmax,
    CrossEntropy,
    LayerNorm,
    Attention,
    Gelu,
    Maximum,
    ComplexMul,
    ComplexConj,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Input,
    Leaf(Option<ParamId>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Concat(Vec<NodeId>, Axis),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    Gather(NodeId, Vec<usize>),
    StackRows(Vec<(NodeId, usize)>),
    Sum(NodeId),
    Softmax(NodeId),
    Log(NodeId),
    LogSoftmax(NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        probs: Vec<f64>,
        scale: f64,
    },
    Gelu(NodeId),
    Maximum(NodeId, NodeId),
    ComplexMul(NodeId, NodeId),
    ComplexConj(NodeId),
    Pow(NodeId, f64),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input => OpKind::Input,
            Op::Leaf(_) => OpKind::Param,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Concat(..) => OpKind::Concat,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::Gather(..) => OpKind::Gather,
            Op::StackRows(..) => OpKind::StackRows,
            Op::Sum(..) => OpKind::Sum,
            Op::Softmax(..) => OpKind::Softmax,
            Op::Log(..) => OpKind::Log,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Attention { .. } => OpKind::Attention,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Maximum(..) => OpKind::Maximum,
            Op::ComplexMul(..) => OpKind::ComplexMul,
            Op::ComplexConj(..) => OpKind::ComplexConj,
            Op::Pow(..) => OpKind::Pow,
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Arc<Tensor>,
    needs_grad: bool,
}

/// Compute graph recorded in topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

const LN_EPS: f64 = 1e-5;

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

    /// Op sequence, for structural comparison of two graphs.
    pub fn op_kinds(&self) -> Vec<OpKind> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient of the last backward root with respect to `id`.
    pub fn grad(&self, id: NodeId) -> Option<Tensor> {
        let g = self.grads.get(id.0)?.as_ref()?;
        Some(Tensor::new(self.shape(id).to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn check_finite(&self) -> Result<()> {
        for n in &self.nodes {
            if !n.value.is_finite() {
                return Err(TensorError::NonFinite(op_name(n.op.kind())));
            }
        }
        Ok(())
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        let needs_grad = match &op {
            Op::Input | Op::Leaf(_) => unreachable!("leaves are pushed directly"),
            other => self.inputs_of(other).iter().any(|i| self.nodes[i.0].needs_grad),
        };
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(TensorError::NonFinite(op_name(op.kind())));
        }
        self.nodes.push(Node {
            op,
            value: Arc::new(value),
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, param: Option<ParamId>, value: Arc<Tensor>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf(param),
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn inputs_of(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Input | Op::Leaf(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Maximum(a, b) | Op::ComplexMul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::Gather(a, _)
            | Op::Sum(a)
            | Op::Softmax(a)
            | Op::Log(a)
            | Op::LogSoftmax(a)
            | Op::Gelu(a)
            | Op::ComplexConj(a)
            | Op::Pow(a, _) => vec![*a],
            Op::Concat(v, _) => v.clone(),
            Op::StackRows(v) => v.iter().map(|(n, _)| *n).collect(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(TensorError::UnknownNode(id.0));
        }
        Ok(())
    }

    // ---- leaves ----------------------------------------------------------

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.input_shared(Arc::new(t))
    }

    /// Constant input that shares storage with the caller.
    pub fn input_shared(&mut self, t: Arc<Tensor>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Input,
            value: t,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Free variable that receives a gradient but is not tied to a parameter.
    pub fn variable(&mut self, t: Tensor) -> NodeId {
        self.push_leaf(None, Arc::new(t), true)
    }

    /// Leaf bound to a parameter. Gradients flow back through
    /// [`Graph::accumulate_param_grads`] when the parameter is trainable.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        let p = params.get(id);
        self.push_leaf(Some(id), p.shared(), p.requires_grad)
    }

    // ---- elementwise -----------------------------------------------------

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let va = self.value(a);
        Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| f(*x)).collect()).expect("shape")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn maximum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("maximum", a, b)?;
        let v = self.zip_map(a, b, f64::max);
        self.push(Op::Maximum(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.check(a)?;
        let v = self.map(a, |x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    /// Add a row vector (numel = cols) to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(row)?;
        let cols = self.value(a).cols();
        if self.value(row).numel() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let mut v = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for chunk in v.data_mut().chunks_mut(cols) {
            for (x, y) in chunk.iter_mut().zip(&r) {
                *x += y;
            }
        }
        self.push(Op::AddRow(a, row), v)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = self.map(a, f64::ln);
        self.push(Op::Log(a), v)
    }

    /// Elementwise `a^p`; `a` must be non-negative when `p` is fractional.
    pub fn pow(&mut self, a: NodeId, p: f64) -> Result<NodeId> {
        self.check(a)?;
        let v = self.map(a, |x| x.powf(p));
        self.push(Op::Pow(a, p), v)
    }

    /// tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = self.map(a, |x| gelu_fwd(x).0);
        self.push(Op::Gelu(a), v)
    }

    // ---- complex (rows split as [re | im]) -------------------------------

    fn complex_shape(&self, op: &'static str, a: NodeId) -> Result<usize> {
        let c = self.value(a).cols();
        if c % 2 != 0 {
            return Err(TensorError::BadShape {
                op,
                shape: self.shape(a).to_vec(),
                msg: "last dimension must be even".into(),
            });
        }
        Ok(c / 2)
    }

    /// Elementwise complex product of rows laid out as `[re | im]`.
    pub fn complex_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("complex_mul", a, b)?;
        let h = self.complex_shape("complex_mul", a)?;
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Tensor::zeros(va.shape().to_vec());
        let c = 2 * h;
        for r in 0..va.rows() {
            let (x, y) = (&va.data()[r * c..(r + 1) * c], &vb.data()[r * c..(r + 1) * c]);
            let o = out.row_slice_mut(r);
            for d in 0..h {
                let (ar, ai, br, bi) = (x[d], x[h + d], y[d], y[h + d]);
                o[d] = ar * br - ai * bi;
                o[h + d] = ar * bi + ai * br;
            }
        }
        self.push(Op::ComplexMul(a, b), out)
    }

    pub fn complex_conj(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let h = self.complex_shape("complex_conj", a)?;
        let mut v = self.value(a).clone();
        let c = 2 * h;
        for chunk in v.data_mut().chunks_mut(c) {
            for x in &mut chunk[h..] {
                *x = -*x;
            }
        }
        self.push(Op::ComplexConj(a), v)
    }

    // ---- linear algebra and layout ---------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    /// Stack matrices on top of each other (equal column counts).
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.concat(parts, Axis::Rows)
    }

    /// Place matrices side by side (equal row counts).
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.concat(parts, Axis::Cols)
    }

    fn concat(&mut self, parts: &[NodeId], axis: Axis) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::BadShape {
                op: "concat",
                shape: vec![],
                msg: "no inputs".into(),
            });
        };
        for p in parts {
            self.check(*p)?;
        }
        let (r0, c0) = (self.value(first).rows(), self.value(first).cols());
        for &p in &parts[1..] {
            let (r, c) = (self.value(p).rows(), self.value(p).cols());
            let ok = match axis {
                Axis::Rows => c == c0,
                Axis::Cols => r == r0,
            };
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let v = match axis {
            Axis::Rows => {
                let rows: usize = parts.iter().map(|p| self.value(*p).rows()).sum();
                let mut data = Vec::with_capacity(rows * c0);
                for p in parts {
                    data.extend_from_slice(self.value(*p).data());
                }
                Tensor::new(vec![rows, c0], data)?
            }
            Axis::Cols => {
                let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for r in 0..r0 {
                    for p in parts {
                        data.extend_from_slice(self.value(*p).row_slice(r));
                    }
                }
                Tensor::new(vec![r0, cols], data)?
            }
        };
        self.push(Op::Concat(parts.to_vec(), axis), v)
    }

    /// Rows `lo..hi`.
    pub fn slice_rows(&mut self, a: NodeId, lo: usize, hi: usize) -> Result<NodeId> {
        self.check(a)?;
        let t = self.value(a);
        if lo >= hi || hi > t.rows() {
            return Err(TensorError::BadShape {
                op: "slice_rows",
                shape: t.shape().to_vec(),
                msg: format!("range {lo}..{hi}"),
            });
        }
        let c = t.cols();
        let v = Tensor::new(vec![hi - lo, c], t.data()[lo * c..hi * c].to_vec())?;
        self.push(Op::SliceRows(a, lo), v)
    }

    /// Columns `lo..hi`.
    pub fn slice_cols(&mut self, a: NodeId, lo: usize, hi: usize) -> Result<NodeId> {
        self.check(a)?;
        let t = self.value(a);
        if lo >= hi || hi > t.cols() {
            return Err(TensorError::BadShape {
                op: "slice_cols",
                shape: t.shape().to_vec(),
                msg: format!("range {lo}..{hi}"),
            });
        }
        let mut data = Vec::with_capacity(t.rows() * (hi - lo));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[lo..hi]);
        }
        let v = Tensor::new(vec![t.rows(), hi - lo], data)?;
        self.push(Op::SliceCols(a, lo), v)
    }

    /// Embedding lookup: rows of `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        self.check(table)?;
        let t = self.value(table);
        let c = t.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= t.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: t.rows(),
                });
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let v = Tensor::new(vec![ids.len(), c], data)?;
        self.push(Op::Gather(table, ids.to_vec()), v)
    }

    /// Assemble a matrix from individual rows of (possibly different) nodes.
    pub fn stack_rows(&mut self, rows: &[(NodeId, usize)]) -> Result<NodeId> {
        let Some(&(first, _)) = rows.first() else {
            return Err(TensorError::BadShape {
                op: "stack_rows",
                shape: vec![],
                msg: "no rows".into(),
            });
        };
        self.check(first)?;
        let c = self.value(first).cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &(n, r) in rows {
            self.check(n)?;
            let t = self.value(n);
            if t.cols() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            if r >= t.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "stack_rows",
                    index: r,
                    len: t.rows(),
                });
            }
            data.extend_from_slice(t.row_slice(r));
        }
        let v = Tensor::new(vec![rows.len(), c], data)?;
        self.push(Op::StackRows(rows.to_vec()), v)
    }

    // ---- reductions and normalizations -----------------------------------

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let t = self.value(a);
        let c = t.cols();
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(Op::Softmax(a), out)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let t = self.value(a);
        let c = t.cols();
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(c) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(Op::LogSoftmax(a), out)
    }

    /// Mean over rows of `-log softmax(logits)[row, target]`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        self.check(logits)?;
        let t = self.value(logits);
        let (r, c) = (t.rows(), t.cols());
        if targets.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for (i, row) in probs.chunks_mut(c).enumerate() {
            let tgt = targets[i];
            if tgt >= c {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: tgt,
                    len: c,
                });
            }
            let lse = log_sum_exp(row);
            loss += lse - row[tgt];
            row.iter_mut().for_each(|x| *x = (*x - lse).exp());
        }
        let v = Tensor::scalar(loss / r as f64);
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            v,
        )
    }

    /// Per-row layer normalization with learned gain and bias (numel = cols).
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(gain)?;
        self.check(bias)?;
        let t = self.value(x);
        let c = t.cols();
        for p in [gain, bias] {
            if self.value(p).numel() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: t.shape().to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = t.data().to_vec();
        let mut rstd = Vec::with_capacity(t.rows());
        let mut out = Tensor::zeros(t.shape().to_vec());
        for (r, row) in xhat.chunks_mut(c).enumerate() {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(rs);
            let o = out.row_slice_mut(r);
            for j in 0..c {
                row[j] = (row[j] - mean) * rs;
                o[j] = row[j] * g[j] + b[j];
            }
        }
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            out,
        )
    }

    /// Single-head scaled dot-product attention `softmax(q kᵀ / √d) v`.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
        self.check(q)?;
        self.check(k)?;
        self.check(v)?;
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (n, d, m, dv) = (tq.rows(), tq.cols(), tk.rows(), tv.cols());
        if tk.cols() != d || tv.rows() != m {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                lhs: tq.shape().to_vec(),
                rhs: tk.shape().to_vec(),
            });
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut probs = vec![0.0; n * m];
        matmul_bt_into(tq.data(), tk.data(), &mut probs, n, d, m);
        for row in probs.chunks_mut(m) {
            row.iter_mut().for_each(|x| *x *= scale);
            softmax_in_place(row);
        }
        let mut out = vec![0.0; n * dv];
        matmul_into(&probs, tv.data(), &mut out, n, m, dv);
        let out = Tensor::new(vec![n, dv], out)?;
        self.push(
            Op::Attention {
                q,
                k,
                v,
                probs,
                scale,
            },
            out,
        )
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar root. Gradients from a previous call are
    /// discarded.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        self.check(root)?;
        if self.value(root).numel() != 1 {
            return Err(TensorError::NonScalarRoot(self.shape(root).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Add leaf gradients into their parameters' accumulators.
    pub fn accumulate_param_grads(&self, params: &mut ParamSet) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf(Some(pid)) = node.op {
                if !node.needs_grad {
                    continue;
                }
                if let Some(Some(g)) = self.grads.get(i) {
                    params.get_mut(pid).accumulate_grad(g);
                }
            }
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[id.0].needs_grad {
                return;
            }
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].value.numel()]);
            f(slot);
        };
        let val = |id: NodeId| -> &Tensor { &nodes[id.0].value };
        match &node.op {
            Op::Input | Op::Leaf(_) => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * vb[j];
                    }
                });
                acc(*b, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * va[j];
                    }
                });
            }
            Op::Maximum(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        if va[j] >= vb[j] {
                            s[j] += g[j];
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for j in 0..s.len() {
                        if va[j] < vb[j] {
                            s[j] += g[j];
                        }
                    }
                });
            }
            Op::AddRow(a, row) => {
                acc(*a, &mut |s| add_into(s, g));
                let c = val(*row).numel();
                acc(*row, &mut |s| {
                    for chunk in g.chunks(c) {
                        add_into(s, chunk);
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
            }
            Op::Log(a) => {
                let va = val(*a).data();
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] / va[j];
                    }
                });
            }
            Op::Pow(a, p) => {
                let va = val(*a).data();
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        if va[j] != 0.0 || *p >= 1.0 {
                            s[j] += g[j] * p * va[j].powf(p - 1.0);
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let va = val(*a).data();
                acc(*a, &mut |s| {
                    for j in 0..s.len() {
                        s[j] += g[j] * gelu_fwd(va[j]).1;
                    }
                });
            }
            Op::ComplexMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let c = ta.cols();
                let h = c / 2;
                let (va, vb) = (ta.data(), tb.data());
                acc(*a, &mut |s| {
                    for r in 0..ta.rows() {
                        let o = r * c;
                        for d in 0..h {
                            let (gr, gi) = (g[o + d], g[o + h + d]);
                            let (br, bi) = (vb[o + d], vb[o + h + d]);
                            s[o + d] += gr * br + gi * bi;
                            s[o + h + d] += -gr * bi + gi * br;
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for r in 0..ta.rows() {
                        let o = r * c;
                        for d in 0..h {
                            let (gr, gi) = (g[o + d], g[o + h + d]);
                            let (ar, ai) = (va[o + d], va[o + h + d]);
                            s[o + d] += gr * ar + gi * ai;
                            s[o + h + d] += -gr * ai + gi * ar;
                        }
                    }
                });
            }
            Op::ComplexConj(a) => {
                let c = val(*a).cols();
                let h = c / 2;
                acc(*a, &mut |s| {
                    for (sc, gc) in s.chunks_mut(c).zip(g.chunks(c)) {
                        for d in 0..c {
                            sc[d] += if d < h { gc[d] } else { -gc[d] };
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |s| matmul_bt_into(g, tb.data(), s, n, m, k));
                acc(*b, &mut |s| matmul_at_into(ta.data(), g, s, n, k, m));
            }
            Op::Transpose(a) => {
                let ta = val(*a);
                let (r, c) = (ta.rows(), ta.cols());
                acc(*a, &mut |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => match axis {
                Axis::Rows => {
                    let mut off = 0;
                    for p in parts {
                        let n = val(*p).numel();
                        acc(*p, &mut |s| add_into(s, &g[off..off + n]));
                        off += n;
                    }
                }
                Axis::Cols => {
                    let total = node.value.cols();
                    let mut off = 0;
                    for p in parts {
                        let c = val(*p).cols();
                        acc(*p, &mut |s| {
                            for (r, sr) in s.chunks_mut(c).enumerate() {
                                add_into(sr, &g[r * total + off..r * total + off + c]);
                            }
                        });
                        off += c;
                    }
                }
            },
            Op::SliceRows(a, lo) => {
                let c = val(*a).cols();
                acc(*a, &mut |s| add_into(&mut s[lo * c..lo * c + g.len()], g));
            }
            Op::SliceCols(a, lo) => {
                let c = val(*a).cols();
                let w = node.value.cols();
                acc(*a, &mut |s| {
                    for (r, gr) in g.chunks(w).enumerate() {
                        add_into(&mut s[r * c + lo..r * c + lo + w], gr);
                    }
                });
            }
            Op::Gather(table, ids) => {
                let c = val(*table).cols();
                acc(*table, &mut |s| {
                    for (k, &id) in ids.iter().enumerate() {
                        add_into(&mut s[id * c..(id + 1) * c], &g[k * c..(k + 1) * c]);
                    }
                });
            }
            Op::StackRows(rows) => {
                let c = node.value.cols();
                for (k, &(n, r)) in rows.iter().enumerate() {
                    acc(n, &mut |s| add_into(&mut s[r * c..(r + 1) * c], &g[k * c..(k + 1) * c]));
                }
            }
            Op::Sum(a) => {
                acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                acc(*a, &mut |s| {
                    for ((sr, yr), gr) in s.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            sr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                acc(*a, &mut |s| {
                    for ((sr, yr), gr) in s.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            sr[j] += gr[j] - yr[j].exp() * total;
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = val(*logits).cols();
                let scale = g[0] / targets.len() as f64;
                acc(*logits, &mut |s| {
                    for (r, (sr, pr)) in s.chunks_mut(c).zip(probs.chunks(c)).enumerate() {
                        for j in 0..c {
                            sr[j] += scale * pr[j];
                        }
                        sr[targets[r]] -= scale;
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let c = node.value.cols();
                let gv = val(*gain).data();
                acc(*x, &mut |s| {
                    for (r, (sr, gr)) in s.chunks_mut(c).zip(g.chunks(c)).enumerate() {
                        let xr = &xhat[r * c..(r + 1) * c];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let d = gr[j] * gv[j];
                            m1 += d;
                            m2 += d * xr[j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            sr[j] += rstd[r] * (gr[j] * gv[j] - m1 - xr[j] * m2);
                        }
                    }
                });
                acc(*gain, &mut |s| {
                    for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            s[j] += gr[j] * xr[j];
                        }
                    }
                });
                acc(*bias, &mut |s| {
                    for gr in g.chunks(c) {
                        add_into(s, gr);
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                probs,
                scale,
            } => {
                let (tq, tk, tv) = (val(*q), val(*k), val(*v));
                let (n, d, m, dv) = (tq.rows(), tq.cols(), tk.rows(), tv.cols());
                // dP = dO · Vᵀ, dS = P ⊙ (dP − rowsum(dP ⊙ P)) · scale
                let mut ds = vec![0.0; n * m];
                matmul_bt_into(g, tv.data(), &mut ds, n, dv, m);
                for (dr, pr) in ds.chunks_mut(m).zip(probs.chunks(m)) {
                    let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                    for j in 0..m {
                        dr[j] = pr[j] * (dr[j] - dot) * scale;
                    }
                }
                acc(*v, &mut |s| matmul_at_into(probs, g, s, n, m, dv));
                acc(*q, &mut |s| matmul_into(&ds, tk.data(), s, n, m, d));
                acc(*k, &mut |s| matmul_at_into(&ds, tq.data(), s, n, m, d));
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (x, y) in dst.iter_mut().zip(src) {
        *x += y;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu_fwd(x: f64) -> (f64, f64) {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    (y, 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
}

fn op_name(k: OpKind) -> &'static str {
    match k {
        OpKind::Input => "input",
        OpKind::Param => "param",
        OpKind::Add => "add",
        OpKind::Sub => "sub",
        OpKind::Mul => "mul",
        OpKind::AddRow => "add_row",
        OpKind::Scale => "scale",
        OpKind::MatMul => "matmul",
        OpKind::Transpose => "transpose",
        OpKind::Concat => "concat",
        OpKind::SliceRows => "slice_rows",
        OpKind::SliceCols => "slice_cols",
        OpKind::Gather => "gather_rows",
        OpKind::StackRows => "stack_rows",
        OpKind::Sum => "sum",
        OpKind::Softmax => "softmax",
        OpKind::Log => "log",
        OpKind::LogSoftmax => "log_softmax",
        OpKind::CrossEntropy => "cross_entropy",
        OpKind::LayerNorm => "layer_norm",
        OpKind::Attention => "attention",
        OpKind::Gelu => "gelu",
        OpKind::Maximum => "maximum",
        OpKind::ComplexMul => "complex_mul",
        OpKind::ComplexConj => "complex_conj",
        OpKind::Pow => "pow",
    }
}
