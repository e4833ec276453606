//! Arena-backed computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in execution order, so the arena is already a
//! topological order and `backward` is a single reverse sweep.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddRow(NodeId, NodeId),
    ScaleRows(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Softmax {
        x: NodeId,
        axis: usize,
    },
    NormalizeRows(NodeId),
    Gather {
        table: NodeId,
        ids: Vec<Option<usize>>,
    },
    SelectColumn(NodeId, usize),
    RowBlockDot(NodeId, NodeId),
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Sum(NodeId),
    Mean(NodeId),
    Nll {
        probs: NodeId,
        targets: Vec<usize>,
        scale: f64,
        clamp: f64,
    },
    Bce {
        probs: NodeId,
        targets: Vec<f64>,
        clamp: f64,
    },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Constant | Input | Param(_) => vec![],
            MatMul(a, b) | MatMulBt(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b)
            | ScaleRows(a, b) | RowBlockDot(a, b) => vec![*a, *b],
            Scale(x, _) | Sigmoid(x) | Tanh(x) | Relu(x) | NormalizeRows(x) | SelectColumn(x, _)
            | Sum(x) | Mean(x) => vec![*x],
            Concat { inputs, .. } => inputs.clone(),
            Softmax { x, .. } | Dropout { x, .. } => vec![*x],
            Gather { table, .. } => vec![*table],
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Nll { probs, .. } | Bce { probs, .. } => vec![*probs],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<NodeId, Vec<f64>>,
    params: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    /// Gradient with respect to an input or parameter node.
    pub fn wrt(&self, node: NodeId) -> Option<&[f64]> {
        self.leaves.get(&node).map(Vec::as_slice)
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Vec<f64>> {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).map(Vec::as_slice)
    }
}

/// A recorded forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    buffer_updates: Vec<(ParamId, Tensor)>,
    clamp_events: usize,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.matrix_dims().ok_or_else(|| TensorError::Shape {
        op,
        left: t.shape().to_vec(),
        right: vec![],
    })
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Batchnorm running-statistic updates recorded in train mode.
    pub fn buffer_updates(&self) -> &[(ParamId, Tensor)] {
        &self.buffer_updates
    }

    /// Number of probabilities clamped inside loss nodes.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let needs_grad = match op {
            Op::Constant => false,
            Op::Input | Op::Param(_) => true,
            ref other => other.inputs().iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Node that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// Free leaf that receives a gradient (handy for checking ops directly).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Node bound to a stored parameter. Repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let p = store.param(id);
        let op = if p.trainable {
            Op::Param(id)
        } else {
            Op::Constant
        };
        let n = self.push(p.value.clone(), op);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (k2, n)) = (dims("matmul", ta)?, dims("matmul", tb)?);
        if k != k2 || ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = kernels::matmul(ta.data(), tb.data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((m, k), (n, k2)) = (dims("matmul_bt", ta)?, dims("matmul_bt", tb)?);
        if k != k2 || ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(shape_err("matmul_bt", ta, tb));
        }
        let out = kernels::matmul_bt(ta.data(), tb.data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulBt(a, b)))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (shape, data) = if ta.shape() == tb.shape() {
            let d = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            (ta.shape().to_vec(), d)
        } else if tb.is_scalar() {
            let y = tb.data()[0];
            (ta.shape().to_vec(), ta.data().iter().map(|&x| f(x, y)).collect())
        } else if ta.is_scalar() {
            let x = ta.data()[0];
            (tb.shape().to_vec(), tb.data().iter().map(|&y| f(x, y)).collect())
        } else {
            return Err(shape_err(name, ta, tb));
        };
        Tensor::new(shape, data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * factor).collect())
            .expect("same shape");
        self.push(t, Op::Scale(x, factor))
    }

    /// `x[B×d] + bias[d]`, the bias repeated on every row.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, d) = dims("add_row", tx)?;
        if tb.len() != d || tx.shape().len() != 2 {
            return Err(shape_err("add_row", tx, tb));
        }
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(d) {
            add_into(row, tb.data());
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(t, Op::AddRow(x, bias)))
    }

    /// Multiplies row `i` of `x[B×d]` by `s[i]`, with `s` of shape `[B, 1]` or `[B]`.
    pub fn scale_rows(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (tx, ts) = (self.value(x), self.value(s));
        let (b, d) = dims("scale_rows", tx)?;
        if ts.len() != b || tx.shape().len() != 2 {
            return Err(shape_err("scale_rows", tx, ts));
        }
        let mut out = tx.data().to_vec();
        for (row, &f) in out.chunks_mut(d.max(1)).zip(ts.data()) {
            row.iter_mut().for_each(|v| *v *= f);
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(t, Op::ScaleRows(x, s)))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect())
            .expect("same shape")
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let t = self.unary(x, sigmoid);
        self.push(t, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let t = self.unary(x, f64::tanh);
        self.push(t, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let t = self.unary(x, |a| a.max(0.0));
        self.push(t, Op::Relu(x))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = self.value(*inputs.first().ok_or_else(|| {
            TensorError::Config("concat of zero tensors".into())
        })?);
        let rank = first.shape().len();
        if axis >= rank {
            return Err(TensorError::Config(format!("concat axis {axis} for rank {rank}")));
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for &i in inputs {
            let t = self.value(i);
            let compatible = t.shape().len() == rank
                && t.shape().iter().enumerate().all(|(d, &s)| d == axis || s == first.shape()[d]);
            if !compatible {
                return Err(shape_err("concat", first, t));
            }
            shape[axis] += t.shape()[axis];
        }
        let outer: usize = shape[..axis].iter().product();
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &i in inputs {
                let t = self.value(i);
                let chunk: usize = t.shape()[axis..].iter().product();
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let tx = self.value(x);
        if !tx.is_finite() {
            return Err(TensorError::Numeric("softmax input".into()));
        }
        let (outer, len, inner) = axis_layout(tx.shape(), axis)?;
        let mut out = vec![0.0; tx.len()];
        let data = tx.data();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| data[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in 0..len {
                    let e = (data[idx(l)] - max).exp();
                    out[idx(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    out[idx(l)] /= total;
                }
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(t, Op::Softmax { x, axis }))
    }

    /// Divides each row by its sum. Rows must have a positive sum.
    pub fn normalize_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let (_, c) = dims("normalize_rows", tx)?;
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            let s: f64 = row.iter().sum();
            if !s.is_finite() || s <= 0.0 {
                return Err(TensorError::Numeric("normalize_rows row sum".into()));
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(t, Op::NormalizeRows(x)))
    }

    /// Gathers rows of `table[N×d]`.
    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let ids: Vec<Option<usize>> = ids.iter().map(|&i| Some(i)).collect();
        self.gather(table, ids)
    }

    /// Like [`Graph::embedding_lookup`]; `None` yields a zero row.
    pub fn embedding_lookup_padded(&mut self, table: NodeId, ids: &[Option<usize>]) -> Result<NodeId> {
        self.gather(table, ids.to_vec())
    }

    fn gather(&mut self, table: NodeId, ids: Vec<Option<usize>>) -> Result<NodeId> {
        let tt = self.value(table);
        let (n, d) = dims("embedding_lookup", tt)?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for id in &ids {
            match *id {
                Some(i) if i >= n => {
                    return Err(TensorError::Index {
                        op: "embedding_lookup",
                        index: i,
                        len: n,
                    })
                }
                Some(i) => out.extend_from_slice(&tt.data()[i * d..(i + 1) * d]),
                None => out.extend(std::iter::repeat_n(0.0, d)),
            }
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(t, Op::Gather { table, ids }))
    }

    /// Column `j` of `x[B×n]` as a `[B, 1]` tensor.
    pub fn select_column(&mut self, x: NodeId, j: usize) -> Result<NodeId> {
        let tx = self.value(x);
        let (b, n) = dims("select_column", tx)?;
        if j >= n {
            return Err(TensorError::Index {
                op: "select_column",
                index: j,
                len: n,
            });
        }
        let out = (0..b).map(|i| tx.data()[i * n + j]).collect();
        let t = Tensor::new(vec![b, 1], out)?;
        Ok(self.push(t, Op::SelectColumn(x, j)))
    }

    /// For `m[B×(n·q)]` and `y[B×q]`: `out[b,i] = Σ_r m[b, i·q + r]·y[b, r]`.
    /// Together with a matmul this gives a bilinear form per output unit.
    pub fn row_block_dot(&mut self, m: NodeId, y: NodeId) -> Result<NodeId> {
        let (tm, ty) = (self.value(m), self.value(y));
        let ((b, nq), (b2, q)) = (dims("row_block_dot", tm)?, dims("row_block_dot", ty)?);
        if b != b2 || q == 0 || nq % q != 0 {
            return Err(shape_err("row_block_dot", tm, ty));
        }
        let n = nq / q;
        let mut out = vec![0.0; b * n];
        for r in 0..b {
            let yr = &ty.data()[r * q..(r + 1) * q];
            for i in 0..n {
                let block = &tm.data()[r * nq + i * q..r * nq + (i + 1) * q];
                out[r * n + i] = block.iter().zip(yr).map(|(a, c)| a * c).sum();
            }
        }
        let t = Tensor::new(vec![b, n], out)?;
        Ok(self.push(t, Op::RowBlockDot(m, y)))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`; identity in eval mode.
    pub fn dropout(&mut self, x: NodeId, p: f64, mode: Mode, rng: &mut RngState) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Config(format!("dropout probability {p} not in [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let tx = self.value(x);
        let out = tx.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(t, Op::Dropout { x, mask }))
    }

    /// Batch normalization over the rows of `x[B×d]`.
    ///
    /// `running` is a `[2, d]` buffer holding the running mean and variance.
    /// Train mode normalizes with batch statistics and records an updated
    /// buffer in [`Graph::buffer_updates`]; eval mode reads `running` only.
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_id: ParamId,
        running: &Tensor,
        mode: Mode,
    ) -> Result<NodeId> {
        let tx = self.value(x);
        let (b, d) = dims("batchnorm", tx)?;
        if self.value(gamma).len() != d || self.value(beta).len() != d || running.len() != 2 * d {
            return Err(shape_err("batchnorm", tx, running));
        }
        let data = tx.data();
        let mut pending = None;
        let (mean, var) = match mode {
            Mode::Train => {
                if b < 2 {
                    return Err(TensorError::BatchSize(b));
                }
                let mut mean = vec![0.0; d];
                for row in data.chunks(d) {
                    add_into(&mut mean, row);
                }
                mean.iter_mut().for_each(|m| *m /= b as f64);
                let mut var = vec![0.0; d];
                for row in data.chunks(d) {
                    for j in 0..d {
                        let c = row[j] - mean[j];
                        var[j] += c * c;
                    }
                }
                let mut updated = running.clone();
                {
                    let buf = updated.data_mut();
                    for j in 0..d {
                        let unbiased = var[j] / (b - 1) as f64;
                        buf[j] = (1.0 - BATCHNORM_MOMENTUM) * buf[j] + BATCHNORM_MOMENTUM * mean[j];
                        buf[d + j] =
                            (1.0 - BATCHNORM_MOMENTUM) * buf[d + j] + BATCHNORM_MOMENTUM * unbiased;
                    }
                }
                pending = Some((running_id, updated));
                var.iter_mut().for_each(|v| *v /= b as f64);
                (mean, var)
            }
            Mode::Eval => (running.data()[..d].to_vec(), running.data()[d..].to_vec()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; b * d];
        let mut out = vec![0.0; b * d];
        for r in 0..b {
            for j in 0..d {
                let h = (data[r * d + j] - mean[j]) * inv_std[j];
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + be[j];
            }
        }
        let t = Tensor::new(vec![b, d], out)?;
        self.buffer_updates.extend(pending);
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.sum() / v.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// `scale · Σ_b −ln p[b, target_b]`, probabilities floored at `clamp`.
    pub fn nll(&mut self, probs: NodeId, targets: &[usize], scale: f64, clamp: f64) -> Result<NodeId> {
        let tp = self.value(probs);
        let (b, n) = dims("nll", tp)?;
        if targets.len() != b {
            return Err(TensorError::Shape {
                op: "nll",
                left: tp.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut total = 0.0;
        let mut clamped = 0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(TensorError::Index {
                    op: "nll",
                    index: t,
                    len: n,
                });
            }
            let p = tp.data()[r * n + t];
            if p < clamp {
                clamped += 1;
            }
            total -= p.max(clamp).ln();
        }
        self.clamp_events += clamped;
        Ok(self.push(
            Tensor::scalar(scale * total),
            Op::Nll {
                probs,
                targets: targets.to_vec(),
                scale,
                clamp,
            },
        ))
    }

    /// Mean binary cross-entropy over every element of `probs`.
    pub fn bce(&mut self, probs: NodeId, targets: &Tensor, clamp: f64) -> Result<NodeId> {
        let tp = self.value(probs);
        if tp.shape() != targets.shape() {
            return Err(shape_err("bce", tp, targets));
        }
        let n = tp.len().max(1) as f64;
        let mut total = 0.0;
        for (&p, &y) in tp.data().iter().zip(targets.data()) {
            let p = p.clamp(clamp, 1.0 - clamp);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::Bce {
                probs,
                targets: targets.data().to_vec(),
                clamp,
            },
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::Shape {
                op: "backward",
                left: lv.shape().to_vec(),
                right: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            match node.op {
                Op::Param(pid) => {
                    out.params.insert(pid, g.clone());
                    out.leaves.insert(NodeId(idx), g);
                }
                Op::Input => {
                    out.leaves.insert(NodeId(idx), g);
                }
                _ => {}
            }
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            let target = &self.nodes[id.0];
            if !target.needs_grad {
                return;
            }
            let buf = grads[id.0].get_or_insert_with(|| vec![0.0; target.value.len()]);
            f(buf);
        };
        let y = node.value.data();
        match &node.op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.matrix_dims().unwrap();
                let n = tb.shape()[1];
                acc(*a, &mut |buf| add_into(buf, &kernels::matmul_bt(g, tb.data(), m, n, k)));
                acc(*b, &mut |buf| add_into(buf, &kernels::matmul_at(ta.data(), g, m, k, n)));
            }
            Op::MatMulBt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.matrix_dims().unwrap();
                let n = tb.shape()[0];
                acc(*a, &mut |buf| add_into(buf, &kernels::matmul(g, tb.data(), m, n, k)));
                acc(*b, &mut |buf| add_into(buf, &kernels::matmul_at(g, ta.data(), m, n, k)));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                for (id, s) in [(*a, 1.0), (*b, sign)] {
                    let broadcast = self.value(id).len() != g.len();
                    acc(id, &mut |buf| {
                        if broadcast {
                            buf[0] += s * g.iter().sum::<f64>();
                        } else {
                            buf.iter_mut().zip(g).for_each(|(d, v)| *d += s * v);
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                for (id, other) in [(*a, *b), (*b, *a)] {
                    let ov = self.value(other).data();
                    let broadcast = self.value(id).len() != g.len();
                    acc(id, &mut |buf| {
                        if broadcast {
                            buf[0] += g.iter().zip(ov).map(|(x, o)| x * o).sum::<f64>();
                        } else if ov.len() == 1 {
                            buf.iter_mut().zip(g).for_each(|(d, v)| *d += v * ov[0]);
                        } else {
                            for ((d, v), o) in buf.iter_mut().zip(g).zip(ov) {
                                *d += v * o;
                            }
                        }
                    });
                }
            }
            Op::Scale(x, f) => acc(*x, &mut |buf| {
                buf.iter_mut().zip(g).for_each(|(d, v)| *d += v * f)
            }),
            Op::AddRow(x, bias) => {
                acc(*x, &mut |buf| add_into(buf, g));
                let d = self.value(*bias).len();
                acc(*bias, &mut |buf| {
                    for row in g.chunks(d) {
                        add_into(buf, row);
                    }
                });
            }
            Op::ScaleRows(x, s) => {
                let (tx, ts) = (self.value(*x), self.value(*s));
                let d = tx.matrix_dims().unwrap().1.max(1);
                acc(*x, &mut |buf| {
                    for ((brow, grow), &f) in buf.chunks_mut(d).zip(g.chunks(d)).zip(ts.data()) {
                        brow.iter_mut().zip(grow).for_each(|(b, v)| *b += v * f);
                    }
                });
                acc(*s, &mut |buf| {
                    for ((b, grow), xrow) in buf.iter_mut().zip(g.chunks(d)).zip(tx.data().chunks(d)) {
                        *b += grow.iter().zip(xrow).map(|(u, v)| u * v).sum::<f64>();
                    }
                });
            }
            Op::Sigmoid(x) => acc(*x, &mut |buf| {
                for ((d, v), s) in buf.iter_mut().zip(g).zip(y) {
                    *d += v * s * (1.0 - s);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |buf| {
                for ((d, v), t) in buf.iter_mut().zip(g).zip(y) {
                    *d += v * (1.0 - t * t);
                }
            }),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |buf| {
                    for ((d, v), a) in buf.iter_mut().zip(g).zip(xv) {
                        if *a > 0.0 {
                            *d += v;
                        }
                    }
                })
            }
            Op::Concat { inputs, axis } => {
                let outer: usize = node.value.shape()[..*axis].iter().product();
                let total: usize = node.value.shape()[*axis..].iter().product();
                let mut offset = 0;
                for &i in inputs {
                    let chunk: usize = self.value(i).shape()[*axis..].iter().product();
                    acc(i, &mut |buf| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            add_into(&mut buf[o * chunk..(o + 1) * chunk], src);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_layout(node.value.shape(), *axis).unwrap();
                acc(*x, &mut |buf| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |l: usize| (o * len + l) * inner + i;
                            let dot: f64 = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                            for l in 0..len {
                                buf[idx(l)] += y[idx(l)] * (g[idx(l)] - dot);
                            }
                        }
                    }
                });
            }
            Op::NormalizeRows(x) => {
                let tx = self.value(*x);
                let c = tx.matrix_dims().unwrap().1.max(1);
                acc(*x, &mut |buf| {
                    for ((brow, grow), xrow) in buf.chunks_mut(c).zip(g.chunks(c)).zip(tx.data().chunks(c)) {
                        let s: f64 = xrow.iter().sum();
                        let gx: f64 = grow.iter().zip(xrow).map(|(a, b)| a * b).sum();
                        for (b, gv) in brow.iter_mut().zip(grow) {
                            *b += gv / s - gx / (s * s);
                        }
                    }
                });
            }
            Op::Gather { table, ids } => {
                let d = self.value(*table).matrix_dims().unwrap().1;
                acc(*table, &mut |buf| {
                    for (r, id) in ids.iter().enumerate() {
                        if let Some(i) = id {
                            add_into(&mut buf[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                        }
                    }
                });
            }
            Op::SelectColumn(x, j) => {
                let n = self.value(*x).matrix_dims().unwrap().1;
                acc(*x, &mut |buf| {
                    for (r, v) in g.iter().enumerate() {
                        buf[r * n + j] += v;
                    }
                });
            }
            Op::RowBlockDot(m, yv) => {
                let (tm, ty) = (self.value(*m), self.value(*yv));
                let (b, nq) = tm.matrix_dims().unwrap();
                let q = ty.matrix_dims().unwrap().1;
                let n = nq / q;
                acc(*m, &mut |buf| {
                    for r in 0..b {
                        for i in 0..n {
                            let gv = g[r * n + i];
                            for c in 0..q {
                                buf[r * nq + i * q + c] += gv * ty.data()[r * q + c];
                            }
                        }
                    }
                });
                acc(*yv, &mut |buf| {
                    for r in 0..b {
                        for i in 0..n {
                            let gv = g[r * n + i];
                            for c in 0..q {
                                buf[r * q + c] += gv * tm.data()[r * nq + i * q + c];
                            }
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |buf| {
                for ((d, v), m) in buf.iter_mut().zip(g).zip(mask) {
                    *d += v * m;
                }
            }),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let d = inv_std.len();
                let b = g.len() / d.max(1);
                let gam = self.value(*gamma).data();
                acc(*beta, &mut |buf| {
                    for row in g.chunks(d) {
                        add_into(buf, row);
                    }
                });
                acc(*gamma, &mut |buf| {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            buf[j] += grow[j] * hrow[j];
                        }
                    }
                });
                acc(*x, &mut |buf| {
                    if *batch_stats {
                        let mut sum_g = vec![0.0; d];
                        let mut sum_gh = vec![0.0; d];
                        for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                            for j in 0..d {
                                let gh = grow[j] * gam[j];
                                sum_g[j] += gh;
                                sum_gh[j] += gh * hrow[j];
                            }
                        }
                        let bf = b as f64;
                        for r in 0..b {
                            for j in 0..d {
                                let gh = g[r * d + j] * gam[j];
                                buf[r * d + j] += inv_std[j] / bf
                                    * (bf * gh - sum_g[j] - xhat[r * d + j] * sum_gh[j]);
                            }
                        }
                    } else {
                        for r in 0..b {
                            for j in 0..d {
                                buf[r * d + j] += g[r * d + j] * gam[j] * inv_std[j];
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |buf| buf.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len().max(1) as f64;
                acc(*x, &mut |buf| buf.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::Nll {
                probs,
                targets,
                scale,
                clamp,
            } => {
                let tp = self.value(*probs);
                let n = tp.matrix_dims().unwrap().1;
                acc(*probs, &mut |buf| {
                    for (r, &t) in targets.iter().enumerate() {
                        let p = tp.data()[r * n + t];
                        if p >= *clamp {
                            buf[r * n + t] -= g[0] * scale / p;
                        }
                    }
                });
            }
            Op::Bce {
                probs,
                targets,
                clamp,
            } => {
                let tp = self.value(*probs);
                let n = tp.len().max(1) as f64;
                acc(*probs, &mut |buf| {
                    for ((d, &p), &yv) in buf.iter_mut().zip(tp.data()).zip(targets) {
                        if p > *clamp && p < 1.0 - clamp {
                            *d += g[0] * (-yv / p + (1.0 - yv) / (1.0 - p)) / n;
                        }
                    }
                });
            }
        }
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

fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::Config(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}
