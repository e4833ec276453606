//! Embeddings, bidirectional GRU encoders, shared additive attention and the
//! relevance head.

use ndtensor::{xavier_uniform, Graph, Mode, NodeId, ParamId, ParamStore, RngState, Tensor};
use serde::{Deserialize, Serialize};

use crate::datasets::SequenceBatch;
use crate::Result;

/// How `g` is formed for the attribute-aware variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `g = [f_v; ĉ] W_g + b_g`.
    #[default]
    Eq4Concat,
    /// `g_k = f_vᵀ W_k f_c + b_k`, one bilinear form per output unit.
    BilinearFc,
}

pub(crate) fn add_matrix(store: &mut ParamStore, name: &str, shape: [usize; 2], rng: &mut RngState) -> Result<ParamId> {
    Ok(store.add(name, xavier_uniform(&shape, rng))?)
}

pub(crate) fn add_bias(store: &mut ParamStore, name: &str, n: usize) -> Result<ParamId> {
    Ok(store.add(name, Tensor::zeros(&[n]))?)
}

/// Weights of one GRU direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_n: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_n: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_n: ParamId,
}

impl GruParams {
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut RngState) -> Result<Self> {
        let m = |store: &mut ParamStore, n: &str, rows: usize, rng: &mut RngState| {
            add_matrix(store, &format!("{prefix}.{n}"), [rows, hidden], rng)
        };
        Ok(Self {
            w_z: m(store, "w_z", input, rng)?,
            w_r: m(store, "w_r", input, rng)?,
            w_n: m(store, "w_n", input, rng)?,
            u_z: m(store, "u_z", hidden, rng)?,
            u_r: m(store, "u_r", hidden, rng)?,
            u_n: m(store, "u_n", hidden, rng)?,
            b_z: add_bias(store, &format!("{prefix}.b_z"), hidden)?,
            b_r: add_bias(store, &format!("{prefix}.b_r"), hidden)?,
            b_n: add_bias(store, &format!("{prefix}.b_n"), hidden)?,
        })
    }

    /// One step from `h` (`None` is the zero state):
    /// `z = σ(xW_z + hU_z + b_z)`, `r = σ(xW_r + hU_r + b_r)`,
    /// `n = tanh(xW_n + (r⊙h)U_n + b_n)`, `h' = h + z⊙(n − h)`.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: NodeId, h: Option<NodeId>) -> Result<NodeId> {
        let p = |g: &mut Graph, id| g.param(store, id);
        let gate = |g: &mut Graph, w, u, b, h: Option<NodeId>| -> Result<NodeId> {
            let (w, b) = (p(g, w), p(g, b));
            let mut a = g.matmul(x, w)?;
            if let Some(h) = h {
                let u = p(g, u);
                let hu = g.matmul(h, u)?;
                a = g.add(a, hu)?;
            }
            Ok(g.add_row(a, b)?)
        };
        let z = gate(g, self.w_z, self.u_z, self.b_z, h)?;
        let z = g.sigmoid(z);
        let rh = match h {
            Some(h) => {
                let r = gate(g, self.w_r, self.u_r, self.b_r, Some(h))?;
                let r = g.sigmoid(r);
                Some(g.mul(r, h)?)
            }
            None => None,
        };
        let n = gate(g, self.w_n, self.u_n, self.b_n, rh)?;
        let n = g.tanh(n);
        match h {
            Some(h) => {
                let diff = g.sub(n, h)?;
                let upd = g.mul(z, diff)?;
                Ok(g.add(h, upd)?)
            }
            None => Ok(g.mul(z, n)?),
        }
    }
}

/// Forward and backward GRUs whose outputs are concatenated per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiGru {
    pub fwd: GruParams,
    pub bwd: GruParams,
}

impl BiGru {
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            fwd: GruParams::register(store, &format!("{prefix}.fwd"), input, hidden, rng)?,
            bwd: GruParams::register(store, &format!("{prefix}.bwd"), input, hidden, rng)?,
        })
    }

    /// Encodes `xs` (one `[B×in]` node per step) into `[B×2h]` per step.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, xs: &[NodeId]) -> Result<Vec<NodeId>> {
        let mut fwd = Vec::with_capacity(xs.len());
        let mut h = None;
        for &x in xs {
            let next = self.fwd.step(g, store, x, h)?;
            fwd.push(next);
            h = Some(next);
        }
        let mut bwd = vec![fwd[0]; xs.len()];
        let mut h = None;
        for t in (0..xs.len()).rev() {
            let next = self.bwd.step(g, store, xs[t], h)?;
            bwd[t] = next;
            h = Some(next);
        }
        fwd.iter()
            .zip(&bwd)
            .map(|(&f, &b)| Ok(g.concat(&[f, b], 1)?))
            .collect()
    }
}

/// Additive attention weights `W_q`, `W_k` (`2h×2h`) and `W_p` (`2h×1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_p: ParamId,
}

/// Attention output: `f_v`, optional `f_c`, and `α` as a `[B×T]` node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalPreference {
    pub f_v: NodeId,
    pub f_c: Option<NodeId>,
    pub alpha: NodeId,
}

impl AttentionParams {
    pub fn register(store: &mut ParamStore, width: usize, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            w_q: add_matrix(store, "attention.w_q", [width, width], rng)?,
            w_k: add_matrix(store, "attention.w_k", [width, width], rng)?,
            w_p: add_matrix(store, "attention.w_p", [width, 1], rng)?,
        })
    }

    /// `α_j = softmax_j(tanh(h_T W_q + h_j W_k) W_p)`, `f_v = Σ α_j h_{v_j}`
    /// and `f_c = Σ α_j h_{c_j}` with the same `α`.
    pub fn attend(&self, g: &mut Graph, store: &ParamStore, h_v: &[NodeId], h_c: Option<&[NodeId]>) -> Result<GlobalPreference> {
        let (w_q, w_k, w_p) = (g.param(store, self.w_q), g.param(store, self.w_k), g.param(store, self.w_p));
        let last = *h_v.last().expect("at least one step");
        let q = g.matmul(last, w_q)?;
        let mut scores = Vec::with_capacity(h_v.len());
        for &h in h_v {
            let k = g.matmul(h, w_k)?;
            let s = g.add(q, k)?;
            let s = g.tanh(s);
            scores.push(g.matmul(s, w_p)?);
        }
        let e = g.concat(&scores, 1)?;
        let alpha = g.softmax(e, 1)?;
        let pool = |g: &mut Graph, hs: &[NodeId]| -> Result<NodeId> {
            let mut acc = None;
            for (j, &h) in hs.iter().enumerate() {
                let a = g.select_column(alpha, j)?;
                let term = g.scale_rows(h, a)?;
                acc = Some(match acc {
                    None => term,
                    Some(prev) => g.add(prev, term)?,
                });
            }
            Ok(acc.expect("at least one step"))
        };
        let f_v = pool(g, h_v)?;
        let f_c = match h_c {
            Some(hc) => Some(pool(g, hc)?),
            None => None,
        };
        Ok(GlobalPreference { f_v, f_c, alpha })
    }
}

/// Item embeddings `v_t` and summed attribute embeddings `c_t` for each step,
/// each `[B×d]`. Padding steps get zero rows. Dropout is applied in train mode.
#[allow(clippy::too_many_arguments)]
pub fn embed_steps(
    g: &mut Graph,
    item_table: NodeId,
    attr_table: Option<NodeId>,
    batch: &SequenceBatch,
    n_attrs: usize,
    dropout: f64,
    mode: Mode,
    rng: &mut RngState,
) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
    let mut vs = Vec::with_capacity(batch.steps);
    let mut cs = Vec::with_capacity(batch.steps);
    for t in 0..batch.steps {
        let v = g.embedding_lookup_padded(item_table, &batch.step_items(t))?;
        vs.push(g.dropout(v, dropout, mode, rng)?);
        if let Some(table) = attr_table {
            let c = multi_hot_embedding(g, table, &batch.step_attrs(t), n_attrs)?;
            cs.push(g.dropout(c, dropout, mode, rng)?);
        }
    }
    Ok((vs, cs))
}

/// Rows of `Σ_{a∈set} table[a]` computed as `multi_hot · table`.
pub fn multi_hot_embedding(g: &mut Graph, table: NodeId, sets: &[&[u32]], n_attrs: usize) -> Result<NodeId> {
    let mut m = vec![0.0; sets.len() * n_attrs];
    for (r, set) in sets.iter().enumerate() {
        for &a in *set {
            m[r * n_attrs + a as usize] += 1.0;
        }
    }
    let m = g.constant(Tensor::new(vec![sets.len(), n_attrs], m)?);
    Ok(g.matmul(m, table)?)
}

/// Relevance head weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadParams {
    /// `g = x W + b` for a concatenated or plain input `x`.
    Linear { w: ParamId, b: ParamId },
    /// `g_k = f_vᵀ W_k f_c + b_k` with `W` stored as `[2h, d_v·2h]`.
    Bilinear { w: ParamId, b: ParamId },
}

impl HeadParams {
    pub fn register_linear(store: &mut ParamStore, input: usize, d_v: usize, rng: &mut RngState) -> Result<Self> {
        Ok(HeadParams::Linear {
            w: add_matrix(store, "head.w", [input, d_v], rng)?,
            b: add_bias(store, "head.b", d_v)?,
        })
    }

    pub fn register_bilinear(store: &mut ParamStore, width: usize, d_v: usize, rng: &mut RngState) -> Result<Self> {
        // fan computed as if it were a width x width map per output unit
        let bound = ndtensor::init::xavier_bound(&[width, width]);
        let n = width * d_v * width;
        let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
        Ok(HeadParams::Bilinear {
            w: store.add("head.w", Tensor::new(vec![width, d_v * width], data)?)?,
            b: add_bias(store, "head.b", d_v)?,
        })
    }

    /// Produces `g` from the head inputs: for `Linear`, `inputs` are
    /// concatenated along columns; for `Bilinear`, `inputs = [f_v, f_c]`.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, inputs: &[NodeId]) -> Result<NodeId> {
        match *self {
            HeadParams::Linear { w, b } => {
                let x = if inputs.len() == 1 { inputs[0] } else { g.concat(inputs, 1)? };
                let (w, b) = (g.param(store, w), g.param(store, b));
                let y = g.matmul(x, w)?;
                Ok(g.add_row(y, b)?)
            }
            HeadParams::Bilinear { w, b } => {
                let (w, b) = (g.param(store, w), g.param(store, b));
                let m = g.matmul(inputs[0], w)?;
                let y = g.row_block_dot(m, inputs[1])?;
                Ok(g.add_row(y, b)?)
            }
        }
    }
}

/// Logits `g · Eᵀ` against the item table and their softmax.
pub fn relevance_scores(g: &mut Graph, gvec: NodeId, item_table: NodeId) -> Result<(NodeId, NodeId)> {
    let logits = g.matmul_bt(gvec, item_table)?;
    let s_rel = g.softmax(logits, 1)?;
    Ok((logits, s_rel))
}
