//! The four model variants assembled from the encoder and attribute predictor.

use std::fmt;
use std::str::FromStr;

use ndtensor::{Graph, Mode, NodeId, ParamStore, Precision, RngState, Tensor};
use serde::{Deserialize, Serialize};

use crate::attribute_predictor::{weighted_attribute_embedding, ApNodes, ApNormalization, ApParams};
use crate::datasets::SequenceBatch;
use crate::encoder::{embed_steps, relevance_scores, AttentionParams, BiGru, GlobalPreference, HeadKind, HeadParams};
use crate::{AdsrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    /// Item sequence only.
    Bsr,
    /// Attribute-aware encoder without the attribute predictor.
    Anam,
    /// Attribute-aware encoder with the attribute predictor.
    Mtasr,
    /// As `Mtasr`, ranked by the diversification decoder.
    Adsr,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Bsr, Variant::Anam, Variant::Mtasr, Variant::Adsr];

    pub fn uses_attributes(self) -> bool {
        self != Variant::Bsr
    }

    pub fn has_ap(self) -> bool {
        matches!(self, Variant::Mtasr | Variant::Adsr)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Bsr => "BSR",
            Variant::Anam => "ANAM",
            Variant::Mtasr => "MTASR",
            Variant::Adsr => "ADSR",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = AdsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BSR" => Ok(Variant::Bsr),
            "ANAM" => Ok(Variant::Anam),
            "MTASR" => Ok(Variant::Mtasr),
            "ADSR" => Ok(Variant::Adsr),
            other => Err(AdsrError::Config(format!("unknown variant {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_items: usize,
    pub n_attrs: usize,
    pub d_v: usize,
    pub d_c: usize,
    pub d_gru: usize,
    pub d_ap: usize,
    pub dropout: f64,
    pub head: HeadKind,
    pub ap_normalization: ApNormalization,
}

impl ModelConfig {
    /// Equal embedding and GRU widths `d`, AP width `2d`.
    pub fn with_dims(variant: Variant, n_items: usize, n_attrs: usize, d: usize) -> Self {
        Self {
            variant,
            n_items,
            n_attrs,
            d_v: d,
            d_c: d,
            d_gru: d,
            d_ap: 2 * d,
            dropout: 0.5,
            head: HeadKind::Eq4Concat,
            ap_normalization: ApNormalization::Sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.n_items, self.n_attrs, self.d_v, self.d_c, self.d_gru, self.d_ap].contains(&0) {
            return Err(AdsrError::Config("model sizes must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(AdsrError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelParams {
    pub item_embedding: ndtensor::ParamId,
    pub attr_embedding: Option<ndtensor::ParamId>,
    pub attr_gru: Option<BiGru>,
    pub item_gru: BiGru,
    pub attention: AttentionParams,
    pub head: HeadParams,
    pub ap: Option<ApParams>,
}

/// Graph nodes produced by [`Model::forward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOutput {
    pub logits: NodeId,
    /// `[B×|V|]` relevance distribution.
    pub s_rel: NodeId,
    pub global: GlobalPreference,
    pub ap: Option<ApNodes>,
    pub c_hat: Option<NodeId>,
}

/// Eval-mode outputs as plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub s_rel: Tensor,
    pub pref_raw: Option<Tensor>,
    pub pref_normalized: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, precision: Precision, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new(precision);
        let item_embedding = store.add("item_embedding", ndtensor::xavier_uniform(&[c.n_items, c.d_v], rng))?;
        let width = 2 * c.d_gru;
        let (attr_embedding, attr_gru, item_input) = if c.variant.uses_attributes() {
            let e = store.add("attr_embedding", ndtensor::xavier_uniform(&[c.n_attrs, c.d_c], rng))?;
            let gru = BiGru::register(&mut store, "attr_gru", c.d_c + c.d_v, c.d_gru, rng)?;
            (Some(e), Some(gru), c.d_v + width)
        } else {
            (None, None, c.d_v)
        };
        let item_gru = BiGru::register(&mut store, "item_gru", item_input, c.d_gru, rng)?;
        let attention = AttentionParams::register(&mut store, width, rng)?;
        let head = match (c.variant.has_ap(), c.head) {
            (false, _) => HeadParams::register_linear(&mut store, width, c.d_v, rng)?,
            (true, HeadKind::Eq4Concat) => HeadParams::register_linear(&mut store, width + c.d_c, c.d_v, rng)?,
            (true, HeadKind::BilinearFc) => HeadParams::register_bilinear(&mut store, width, c.d_v, rng)?,
        };
        let ap = if c.variant.has_ap() {
            Some(ApParams::register(&mut store, 2 * width, c.d_ap, c.n_attrs, rng)?)
        } else {
            None
        };
        Ok(Self {
            config,
            store,
            params: ModelParams {
                item_embedding,
                attr_embedding,
                attr_gru,
                item_gru,
                attention,
                head,
                ap,
            },
        })
    }

    /// Rebuilds the parameter layout for `config` and copies values from `store`.
    pub fn from_store(config: ModelConfig, store: &ParamStore) -> Result<Self> {
        let mut m = Self::new(config, store.precision(), &mut RngState::new(0))?;
        m.store.load_values_from(store)?;
        Ok(m)
    }

    pub fn forward(&self, g: &mut Graph, batch: &SequenceBatch, mode: Mode, rng: &mut RngState) -> Result<ForwardOutput> {
        let c = &self.config;
        let p = &self.params;
        let s = &self.store;
        let items = g.param(s, p.item_embedding);
        let attrs = p.attr_embedding.map(|id| g.param(s, id));
        let (vs, cs) = embed_steps(g, items, attrs, batch, c.n_attrs, c.dropout, mode, rng)?;

        let (h_v, h_c) = match p.attr_gru {
            Some(attr_gru) => {
                let mut xs = Vec::with_capacity(vs.len());
                for (&cv, &v) in cs.iter().zip(&vs) {
                    xs.push(g.concat(&[cv, v], 1)?);
                }
                let mut h_c = Vec::with_capacity(xs.len());
                for h in attr_gru.encode(g, s, &xs)? {
                    h_c.push(g.dropout(h, c.dropout, mode, rng)?);
                }
                let mut qs = Vec::with_capacity(vs.len());
                for (&v, &h) in vs.iter().zip(&h_c) {
                    qs.push(g.concat(&[v, h], 1)?);
                }
                (p.item_gru.encode(g, s, &qs)?, Some(h_c))
            }
            None => (p.item_gru.encode(g, s, &vs)?, None),
        };
        let mut h_v_d = Vec::with_capacity(h_v.len());
        for h in h_v {
            h_v_d.push(g.dropout(h, c.dropout, mode, rng)?);
        }
        let global = p.attention.attend(g, s, &h_v_d, h_c.as_deref())?;

        let (ap, c_hat, gvec) = match p.ap {
            Some(ap_params) => {
                let f_c = global.f_c.expect("attribute variants produce f_c");
                let ap = ap_params.predict(g, s, global.f_v, f_c, mode, c.ap_normalization)?;
                let table = attrs.expect("attribute variants have an attribute table");
                let c_hat = weighted_attribute_embedding(g, ap.normalized, table)?;
                let gvec = match c.head {
                    HeadKind::Eq4Concat => p.head.project(g, s, &[global.f_v, c_hat])?,
                    HeadKind::BilinearFc => p.head.project(g, s, &[global.f_v, f_c])?,
                };
                (Some(ap), Some(c_hat), gvec)
            }
            None => (None, None, p.head.project(g, s, &[global.f_v])?),
        };
        let (logits, s_rel) = relevance_scores(g, gvec, items)?;
        Ok(ForwardOutput {
            logits,
            s_rel,
            global,
            ap,
            c_hat,
        })
    }

    /// Eval-mode forward pass.
    pub fn predict(&self, batch: &SequenceBatch) -> Result<Predictions> {
        let mut g = Graph::new();
        // eval mode never draws from the rng
        let mut rng = RngState::new(0);
        let out = self.forward(&mut g, batch, Mode::Eval, &mut rng)?;
        Ok(Predictions {
            s_rel: g.value(out.s_rel).clone(),
            pref_raw: out.ap.map(|a| g.value(a.raw).clone()),
            pref_normalized: out.ap.map(|a| g.value(a.normalized).clone()),
        })
    }
}
