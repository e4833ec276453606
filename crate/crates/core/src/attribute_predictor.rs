//! Next-attribute preference network and the preference-weighted attribute
//! embedding.

use ndtensor::{Graph, Mode, NodeId, ParamId, ParamStore, RngState, Tensor};
use serde::{Deserialize, Serialize};

use crate::encoder::{add_bias, add_matrix};
use crate::{AdsrError, Result};

/// How raw sigmoid scores become a distribution over attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApNormalization {
    /// `raw / Σ raw`.
    #[default]
    Sum,
    /// Softmax of the pre-sigmoid logits.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApParams {
    pub w_h: ParamId,
    pub b_h: ParamId,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    pub bn_running: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

/// Graph nodes of one AP forward pass, each `[B×|C|]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApNodes {
    pub raw: NodeId,
    pub normalized: NodeId,
}

impl ApParams {
    pub fn register(store: &mut ParamStore, input: usize, hidden: usize, n_attrs: usize, rng: &mut RngState) -> Result<Self> {
        let w_h = add_matrix(store, "ap.w_h", [input, hidden], rng)?;
        let b_h = add_bias(store, "ap.b_h", hidden)?;
        let bn_gamma = store.add("ap.bn.gamma", Tensor::full(&[hidden], 1.0))?;
        let bn_beta = add_bias(store, "ap.bn.beta", hidden)?;
        let mut running = Tensor::zeros(&[2, hidden]);
        running.data_mut()[hidden..].iter_mut().for_each(|v| *v = 1.0);
        let bn_running = store.add_buffer("ap.bn.running", running)?;
        let w_out = add_matrix(store, "ap.w_out", [hidden, n_attrs], rng)?;
        let b_out = add_bias(store, "ap.b_out", n_attrs)?;
        Ok(Self {
            w_h,
            b_h,
            bn_gamma,
            bn_beta,
            bn_running,
            w_out,
            b_out,
        })
    }

    /// `raw = σ(W_out · relu(bn(W_h [f_v; f_c] + b_h)) + b_out)` plus its
    /// normalized form.
    pub fn predict(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        f_v: NodeId,
        f_c: NodeId,
        mode: Mode,
        normalization: ApNormalization,
    ) -> Result<ApNodes> {
        let x = g.concat(&[f_v, f_c], 1)?;
        let (w_h, b_h) = (g.param(store, self.w_h), g.param(store, self.b_h));
        let h = g.matmul(x, w_h)?;
        let h = g.add_row(h, b_h)?;
        let (gamma, beta) = (g.param(store, self.bn_gamma), g.param(store, self.bn_beta));
        let h = g.batchnorm(h, gamma, beta, self.bn_running, store.value(self.bn_running), mode)?;
        let h = g.relu(h);
        let (w_out, b_out) = (g.param(store, self.w_out), g.param(store, self.b_out));
        let logits = g.matmul(h, w_out)?;
        let logits = g.add_row(logits, b_out)?;
        let raw = g.sigmoid(logits);
        let normalized = match normalization {
            ApNormalization::Sum => g.normalize_rows(raw)?,
            ApNormalization::Softmax => g.softmax(logits, 1)?,
        };
        Ok(ApNodes { raw, normalized })
    }
}

/// `ĉ = Σ_j P(c_j) c_j` for each row of `pref[B×|C|]` against `table[|C|×d_c]`.
pub fn weighted_attribute_embedding(g: &mut Graph, pref: NodeId, table: NodeId) -> Result<NodeId> {
    Ok(g.matmul(pref, table)?)
}

/// Preference scores for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributePreference {
    /// Sigmoid outputs in `(0, 1)`.
    pub raw: Vec<f64>,
    /// A probability vector over attributes.
    pub normalized: Vec<f64>,
}

impl AttributePreference {
    /// Builds the sum-normalized form from raw scores.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        let s: f64 = raw.iter().sum();
        if raw.is_empty() || !s.is_finite() || s <= 0.0 || raw.iter().any(|&v| v < 0.0) {
            return Err(AdsrError::Contract("preference scores must be nonnegative with a positive sum".into()));
        }
        let normalized = raw.iter().map(|v| v / s).collect();
        Ok(Self { raw, normalized })
    }

    /// Index of the highest raw score, lowest index on ties.
    pub fn top_attribute(&self) -> usize {
        argmax(&self.raw)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
