//! Losses, the multi-task training loop, validation-based selection and
//! evaluation with the re-rankers.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndtensor::{Adam, AdamConfig, Graph, Mode, NodeId, Precision, RngState, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribute_predictor::{argmax, ApNormalization};
use crate::checkpoint::{BestInfo, Checkpoint};
use crate::datasets::{BatchIterator, ItemAttributeTable, SequenceBatch, Split, SplitDataset};
use crate::diversifier::{add_rerank_pool, mmr_rerank_pool, AddMode, CandidatePool};
use crate::encoder::HeadKind;
use crate::error::io_err;
use crate::metrics::{EvalRecord, MetricsReport};
use crate::model::{ForwardOutput, Model, ModelConfig, Variant};
use crate::{AdsrError, Result};

/// Probability floor inside the loss terms.
pub const LOSS_CLAMP: f64 = 1e-12;

/// Scaling of the item cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossScale {
    /// Mean over the batch.
    #[default]
    Standard,
    /// Mean over the batch, further divided by the number of items.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub variant: Variant,
    pub d_v: usize,
    pub d_c: usize,
    pub d_gru: usize,
    pub d_ap: usize,
    pub lambda_mt: f64,
    pub lambda_s: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
    pub precision: Precision,
    pub loss_scale: LossScale,
    pub head: HeadKind,
    pub ap_normalization: ApNormalization,
    pub add_mode: AddMode,
    pub pool_size: usize,
    pub eval_ks: Vec<usize>,
    pub eval_batch_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Adsr,
            d_v: 128,
            d_c: 128,
            d_gru: 128,
            d_ap: 256,
            lambda_mt: 0.9,
            lambda_s: 0.25,
            learning_rate: 0.01,
            batch_size: 1024,
            epochs: 60,
            dropout: 0.5,
            seed: 0,
            precision: Precision::F32,
            loss_scale: LossScale::Standard,
            head: HeadKind::Eq4Concat,
            ap_normalization: ApNormalization::Sum,
            add_mode: AddMode::Literal,
            pool_size: 100,
            eval_ks: vec![10, 20],
            eval_batch_size: 512,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_mt", self.lambda_mt), ("lambda_s", self.lambda_s)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(AdsrError::Config(format!("{name} {v} not in [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(AdsrError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if [self.d_v, self.d_c, self.d_gru, self.d_ap, self.batch_size, self.eval_batch_size].contains(&0) {
            return Err(AdsrError::Config("dimensions and batch sizes must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(AdsrError::Config("learning_rate must be positive".into()));
        }
        let max_k = self.eval_ks.iter().copied().max().unwrap_or(0);
        if self.eval_ks.iter().any(|&k| k < 2) || max_k == 0 {
            return Err(AdsrError::Config("eval_ks must be nonempty with every k >= 2".into()));
        }
        if self.pool_size < max_k.max(SELECTION_K) {
            return Err(AdsrError::Config(format!(
                "pool_size {} below the largest cut-off {}",
                self.pool_size,
                max_k.max(SELECTION_K)
            )));
        }
        Ok(())
    }

    pub fn model_config(&self, n_items: usize, n_attrs: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            n_items,
            n_attrs,
            d_v: self.d_v,
            d_c: self.d_c,
            d_gru: self.d_gru,
            d_ap: self.d_ap,
            dropout: self.dropout,
            head: self.head,
            ap_normalization: self.ap_normalization,
        }
    }

    /// Hex SHA-256 of the JSON encoding (field order is fixed by the struct).
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn eval_options(&self, reranker: Reranker) -> EvalOptions {
        EvalOptions {
            reranker,
            lambda_s: self.lambda_s,
            add_mode: self.add_mode,
            pool_size: self.pool_size,
            ks: self.eval_ks.clone(),
            batch_size: self.eval_batch_size,
        }
    }
}

/// Cut-off used for model selection.
pub const SELECTION_K: usize = 20;

/// Item cross-entropy node.
pub fn ae_loss_node(g: &mut Graph, s_rel: NodeId, targets: &[usize], scale: LossScale) -> Result<NodeId> {
    let n_items = g.value(s_rel).matrix_dims().map_or(1, |d| d.1);
    let b = targets.len().max(1) as f64;
    let factor = match scale {
        LossScale::Standard => 1.0 / b,
        LossScale::Paper => 1.0 / (b * n_items as f64),
    };
    Ok(g.nll(s_rel, targets, factor, LOSS_CLAMP)?)
}

/// Attribute binary cross-entropy node, averaged over batch and attributes.
pub fn ap_loss_node(g: &mut Graph, raw: NodeId, targets: &Tensor) -> Result<NodeId> {
    Ok(g.bce(raw, targets, LOSS_CLAMP)?)
}

/// `λ·ae + (1−λ)·ap`, or `ae` alone without an attribute term.
pub fn total_loss_node(g: &mut Graph, ae: NodeId, ap: Option<NodeId>, lambda_mt: f64) -> Result<NodeId> {
    match ap {
        None => Ok(ae),
        Some(ap) => {
            let a = g.scale(ae, lambda_mt);
            let b = g.scale(ap, 1.0 - lambda_mt);
            Ok(g.add(a, b)?)
        }
    }
}

/// Cross-entropy on plain rows of probabilities.
pub fn loss_ae(probs: &[Vec<f64>], targets: &[usize], scale: LossScale) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(row, &t)| -row[t].max(LOSS_CLAMP).ln())
        .sum();
    let b = targets.len().max(1) as f64;
    match scale {
        LossScale::Standard => total / b,
        LossScale::Paper => total / (b * probs.first().map_or(1, |r| r.len()) as f64),
    }
}

/// Binary cross-entropy on plain rows; `targets` hold 0/1 per attribute.
pub fn loss_ap(raw: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (row, y) in raw.iter().zip(targets) {
        for (&p, &y) in row.iter().zip(y) {
            let p = p.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            n += 1;
        }
    }
    total / n.max(1) as f64
}

pub fn loss_total(l_ae: f64, l_ap: f64, lambda_mt: f64) -> f64 {
    lambda_mt * l_ae + (1.0 - lambda_mt) * l_ap
}

/// Loss nodes for one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub forward: ForwardOutput,
    pub total: NodeId,
    pub ae: NodeId,
    pub ap: Option<NodeId>,
}

/// Forward pass plus the variant's training loss.
pub fn batch_loss(
    model: &Model,
    g: &mut Graph,
    batch: &SequenceBatch,
    lambda_mt: f64,
    scale: LossScale,
    mode: Mode,
    rng: &mut RngState,
) -> Result<LossNodes> {
    let forward = model.forward(g, batch, mode, rng)?;
    let ae = ae_loss_node(g, forward.s_rel, &batch.targets, scale)?;
    let ap = match forward.ap {
        Some(ap) => {
            let y = Tensor::new(vec![batch.size, model.config.n_attrs], batch.target_attrs.clone())?;
            Some(ap_loss_node(g, ap.raw, &y)?)
        }
        None => None,
    };
    let total = total_loss_node(g, ae, ap, lambda_mt)?;
    Ok(LossNodes { forward, total, ae, ap })
}

/// One row of the training log. Epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: Option<f64>,
    pub loss_ae: Option<f64>,
    pub loss_ap: Option<f64>,
    pub val_mrr20: Option<f64>,
    pub val_recall20: Option<f64>,
    pub clamp_events: usize,
}

pub const TRAIN_LOG_COLUMNS: [&str; 8] = [
    "epoch",
    "loss",
    "loss_ae",
    "loss_ap",
    "val_mrr20",
    "val_recall20",
    "clamp_events",
    "config_hash",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

impl EpochLog {
    pub fn csv_row(&self, hash: &str) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            fmt_opt(self.loss),
            fmt_opt(self.loss_ae),
            fmt_opt(self.loss_ap),
            fmt_opt(self.val_mrr20),
            fmt_opt(self.val_recall20),
            self.clamp_events.to_string(),
            hash.to_string(),
        ]
    }
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        write!(
            f,
            "epoch {:>3}  loss {}  ae {}  ap {}  val MRR@20 {}  Recall@20 {}",
            self.epoch,
            o(self.loss),
            o(self.loss_ae),
            o(self.loss_ap),
            o(self.val_mrr20),
            o(self.val_recall20)
        )
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub best: Model,
    pub last: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    /// Seconds spent per logged epoch (not part of any deterministic output).
    pub wall_seconds: Vec<f64>,
}

fn param_norms(model: &Model) -> String {
    model
        .store
        .iter()
        .map(|(_, p)| {
            let n: f64 = p.value.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            format!("{}={n:.4e}", p.name)
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn selection_metrics(model: &Model, ds: &SplitDataset, cfg: &TrainingConfig) -> Result<(Option<f64>, Option<f64>)> {
    if ds.valid.is_empty() {
        return Ok((None, None));
    }
    let opts = EvalOptions {
        reranker: Reranker::None,
        lambda_s: 1.0,
        add_mode: cfg.add_mode,
        pool_size: cfg.pool_size,
        ks: vec![SELECTION_K],
        batch_size: cfg.eval_batch_size,
    };
    let (report, _) = evaluate(model, ds, Split::Valid, &opts)?;
    let c = report.at(SELECTION_K).expect("selection cut-off evaluated");
    Ok((Some(c.mrr), Some(c.recall)))
}

fn is_better(mrr: Option<f64>, recall: Option<f64>, best: &BestInfo) -> bool {
    match (mrr, best.val_mrr20) {
        (Some(m), Some(bm)) => m > bm || (m == bm && recall.unwrap_or(0.0) > best.val_recall20.unwrap_or(0.0)),
        // without validation data the latest epoch wins
        _ => true,
    }
}

/// Files written by [`train`] into its output directory.
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOG_CSV: &str = "train_log.csv";
pub const TRAIN_LOG_TXT: &str = "train_log.txt";

fn write_logs(dir: &Path, hash: &str, history: &[EpochLog], wall: &[f64]) -> Result<()> {
    let csv_path = dir.join(TRAIN_LOG_CSV);
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(TRAIN_LOG_COLUMNS)?;
    for h in history {
        w.write_record(h.csv_row(hash))?;
    }
    w.flush().map_err(io_err(&csv_path))?;
    let txt_path = dir.join(TRAIN_LOG_TXT);
    let mut text = String::new();
    for (h, s) in history.iter().zip(wall) {
        text.push_str(&format!("{h}  wall {s:.1}s\n"));
    }
    std::fs::write(&txt_path, text).map_err(io_err(&txt_path))
}

/// Trains `cfg.variant` on the training windows.
///
/// With `out_dir`, writes `last.ckpt` and `best.ckpt` after every epoch plus
/// the CSV and text logs. With `resume`, continues from `last.ckpt` when it
/// exists; its configuration must match `cfg` apart from `epochs`.
pub fn train(cfg: &TrainingConfig, ds: &SplitDataset, out_dir: Option<&Path>, resume: bool) -> Result<TrainResult> {
    cfg.validate()?;
    if ds.train.is_empty() {
        return Err(AdsrError::EmptyDataset("training split".into()));
    }
    let hash = cfg.config_hash();
    let mc = cfg.model_config(ds.vocab.n_items(), ds.vocab.n_attrs());
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }

    let resumed = match out_dir {
        Some(dir) if resume && dir.join(LAST_CHECKPOINT).exists() => {
            let last = Checkpoint::load(&dir.join(LAST_CHECKPOINT))?;
            // the epoch budget may grow between runs; everything else must match
            let same = TrainingConfig { epochs: cfg.epochs, ..last.training.clone() } == *cfg;
            if !same {
                return Err(AdsrError::Config(format!(
                    "{} was written for a different configuration",
                    dir.join(LAST_CHECKPOINT).display()
                )));
            }
            let best = Checkpoint::load(&dir.join(BEST_CHECKPOINT))?;
            Some((last, best))
        }
        _ => None,
    };

    let mut wall = Vec::new();
    let (mut model, mut adam, mut rng, mut history, mut best, mut best_model, start) = match resumed {
        Some((last, best_ck)) => {
            let rng = RngState::restore(last.rng.ok_or_else(|| AdsrError::Contract("checkpoint lacks rng state".into()))?);
            let adam = last
                .optimizer
                .ok_or_else(|| AdsrError::Contract("checkpoint lacks optimizer state".into()))?;
            log::info!("resuming after epoch {}", last.epoch);
            wall.resize(last.history.len(), 0.0);
            (last.model, adam, rng, last.history, last.best, best_ck.model, last.epoch + 1)
        }
        None => {
            let mut rng = RngState::new(cfg.seed);
            let mut init_rng = rng.fork();
            let model = Model::new(mc, cfg.precision, &mut init_rng)?;
            let adam = Adam::new(
                AdamConfig {
                    lr: cfg.learning_rate,
                    ..AdamConfig::default()
                },
                &model.store,
            );
            let t0 = Instant::now();
            let (m, r) = selection_metrics(&model, ds, cfg)?;
            let log0 = EpochLog {
                epoch: 0,
                loss: None,
                loss_ae: None,
                loss_ap: None,
                val_mrr20: m,
                val_recall20: r,
                clamp_events: 0,
            };
            log::info!("{log0}");
            wall.push(t0.elapsed().as_secs_f64());
            let best = BestInfo {
                epoch: 0,
                val_mrr20: m,
                val_recall20: r,
            };
            (model.clone(), adam, rng, vec![log0], best, model, 1)
        }
    };

    let has_bn = model.config.variant.has_ap();
    for epoch in start..=cfg.epochs {
        let t0 = Instant::now();
        let batches: Vec<Vec<usize>> = BatchIterator::new(ds.train.len(), cfg.batch_size, Some(&mut rng)).collect();
        let (mut sum_total, mut sum_ae, mut sum_ap, mut seen) = (0.0, 0.0, 0.0, 0usize);
        let mut clamp_events = 0;
        for (bi, idx) in batches.iter().enumerate() {
            if has_bn && idx.len() < 2 {
                log::debug!("epoch {epoch}: skipping a trailing batch of one window");
                continue;
            }
            let batch = SequenceBatch::from_windows(&ds.train, idx, &ds.attributes);
            let mut g = Graph::new();
            let nodes = batch_loss(&model, &mut g, &batch, cfg.lambda_mt, cfg.loss_scale, Mode::Train, &mut rng)?;
            let total = g.value(nodes.total).data()[0];
            if !total.is_finite() {
                return Err(AdsrError::Diverged(format!(
                    "non-finite loss at epoch {epoch}, batch {bi}; parameter norms: {}",
                    param_norms(&model)
                )));
            }
            let grads = g.backward(nodes.total)?;
            model.store.zero_grad();
            model.store.accumulate(grads.params());
            model.store.apply_buffer_updates(g.buffer_updates());
            adam.step(&mut model.store).map_err(|e| {
                AdsrError::Diverged(format!(
                    "{e} at epoch {epoch}, batch {bi}; parameter norms: {}",
                    param_norms(&model)
                ))
            })?;
            let n = idx.len() as f64;
            sum_total += total * n;
            sum_ae += g.value(nodes.ae).data()[0] * n;
            if let Some(ap) = nodes.ap {
                sum_ap += g.value(ap).data()[0] * n;
            }
            seen += idx.len();
            clamp_events += g.clamp_events();
        }
        let seen_f = seen.max(1) as f64;
        let (m, r) = selection_metrics(&model, ds, cfg)?;
        let entry = EpochLog {
            epoch,
            loss: Some(sum_total / seen_f),
            loss_ae: Some(sum_ae / seen_f),
            loss_ap: has_bn.then_some(sum_ap / seen_f),
            val_mrr20: m,
            val_recall20: r,
            clamp_events,
        };
        if clamp_events > 0 {
            log::warn!("epoch {epoch}: {clamp_events} probabilities clamped in the loss");
        }
        log::info!("{entry}");
        history.push(entry);
        wall.push(t0.elapsed().as_secs_f64());

        let improved = best.epoch == 0 || is_better(m, r, &best);
        if improved {
            best = BestInfo {
                epoch,
                val_mrr20: m,
                val_recall20: r,
            };
            best_model = model.clone();
        }
        if let Some(dir) = out_dir {
            let ck = Checkpoint {
                training: cfg.clone(),
                model: model.clone(),
                optimizer: Some(adam.clone()),
                rng: Some(rng.snapshot()),
                epoch,
                val_mrr20: m,
                val_recall20: r,
                config_hash: hash.clone(),
                best,
                history: history.clone(),
            };
            ck.save(&dir.join(LAST_CHECKPOINT))?;
            if improved {
                Checkpoint {
                    model: best_model.clone(),
                    optimizer: None,
                    rng: None,
                    ..ck
                }
                .save(&dir.join(BEST_CHECKPOINT))?;
            }
            write_logs(dir, &hash, &history, &wall)?;
        }
    }
    if let Some(dir) = out_dir {
        if cfg.epochs == 0 || !dir.join(BEST_CHECKPOINT).exists() {
            Checkpoint {
                training: cfg.clone(),
                model: best_model.clone(),
                optimizer: None,
                rng: None,
                epoch: best.epoch,
                val_mrr20: best.val_mrr20,
                val_recall20: best.val_recall20,
                config_hash: hash.clone(),
                best,
                history: history.clone(),
            }
            .save(&dir.join(BEST_CHECKPOINT))?;
            write_logs(dir, &hash, &history, &wall)?;
        }
    }
    Ok(TrainResult {
        best: best_model,
        last: model,
        best_epoch: best.epoch,
        history,
        wall_seconds: wall,
    })
}

/// List construction at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reranker {
    /// Top-k by relevance.
    None,
    /// Attribute-aware diversification decoder.
    Add,
    /// Maximal marginal relevance.
    Mmr,
}

impl FromStr for Reranker {
    type Err = AdsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Reranker::None),
            "add" => Ok(Reranker::Add),
            "mmr" => Ok(Reranker::Mmr),
            other => Err(AdsrError::Config(format!("unknown reranker {other}"))),
        }
    }
}

impl fmt::Display for Reranker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reranker::None => "none",
            Reranker::Add => "add",
            Reranker::Mmr => "mmr",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub reranker: Reranker,
    pub lambda_s: f64,
    pub add_mode: AddMode,
    pub pool_size: usize,
    pub ks: Vec<usize>,
    pub batch_size: usize,
}

/// Model outputs for one window, reduced to what the re-rankers need.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredWindow {
    pub window: usize,
    pub target: usize,
    pub target_attrs: Vec<u32>,
    pub pool: CandidatePool,
    pub pref_raw: Option<Vec<f64>>,
    pub pref_normalized: Option<Vec<f64>>,
}

/// Runs the model in eval mode over a split, keeping the `pool_size` most
/// relevant items per window.
pub fn score_windows(model: &Model, ds: &SplitDataset, split: Split, pool_size: usize, batch_size: usize) -> Result<Vec<ScoredWindow>> {
    let set = ds.split(split);
    let batches: Vec<Vec<usize>> = BatchIterator::new(set.len(), batch_size.max(1), None).collect();
    let per_batch: Vec<Vec<ScoredWindow>> = batches
        .par_iter()
        .map(|idx| {
            let batch = SequenceBatch::from_windows(set, idx, &ds.attributes);
            let pred = model.predict(&batch)?;
            let n_items = model.config.n_items;
            let n_attrs = model.config.n_attrs;
            Ok(idx
                .iter()
                .enumerate()
                .map(|(r, &w)| {
                    let row = &pred.s_rel.data()[r * n_items..(r + 1) * n_items];
                    let attr_row = |t: &Tensor| t.data()[r * n_attrs..(r + 1) * n_attrs].to_vec();
                    ScoredWindow {
                        window: w,
                        target: batch.targets[r],
                        target_attrs: batch.target_attr_sets[r].clone(),
                        pool: CandidatePool::from_scores(row, pool_size),
                        pref_raw: pred.pref_raw.as_ref().map(attr_row),
                        pref_normalized: pred.pref_normalized.as_ref().map(attr_row),
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_batch.into_iter().flatten().collect())
}

/// Builds ranked lists for scored windows.
pub fn rank_windows(scored: &[ScoredWindow], table: &ItemAttributeTable, opts: &EvalOptions) -> Result<Vec<EvalRecord>> {
    let l = opts.ks.iter().copied().max().ok_or_else(|| AdsrError::Config("no cut-offs".into()))?;
    if l > opts.pool_size {
        return Err(AdsrError::Config(format!("cut-off {l} exceeds pool size {}", opts.pool_size)));
    }
    scored
        .par_iter()
        .map(|w| {
            let pool = if w.pool.len() > opts.pool_size {
                w.pool.truncated(opts.pool_size)
            } else {
                w.pool.clone()
            };
            let ranked = match opts.reranker {
                Reranker::None => pool.items().iter().take(l).copied().collect(),
                Reranker::Add => {
                    let u = w.pref_normalized.as_ref().ok_or_else(|| {
                        AdsrError::Contract("the add re-ranker needs a model with an attribute predictor".into())
                    })?;
                    add_rerank_pool(&pool, u, table, opts.lambda_s, l, opts.add_mode)?.items()
                }
                Reranker::Mmr => mmr_rerank_pool(&pool, table, opts.lambda_s, l)?.items(),
            };
            Ok(EvalRecord {
                window: w.window,
                ranked,
                target: w.target,
                target_attrs: w.target_attrs.clone(),
                ap_top: w.pref_raw.as_ref().map(|r| argmax(r)),
            })
        })
        .collect()
}

/// Evaluates `model` on `split`; returns the aggregated report and per-window records.
pub fn evaluate(model: &Model, ds: &SplitDataset, split: Split, opts: &EvalOptions) -> Result<(MetricsReport, Vec<EvalRecord>)> {
    if opts.reranker == Reranker::Add && !model.config.variant.has_ap() {
        return Err(AdsrError::Contract(format!(
            "{} has no attribute predictor, so it cannot use the add re-ranker",
            model.config.variant
        )));
    }
    let scored = score_windows(model, ds, split, opts.pool_size, opts.batch_size)?;
    let records = rank_windows(&scored, &ds.attributes, opts)?;
    let report = MetricsReport::from_records(&records, &ds.attributes, &opts.ks)?;
    Ok((report, records))
}

/// Item popularity as the number of training windows targeting each item.
pub fn popularity_scores(ds: &SplitDataset) -> Vec<f64> {
    let mut counts = vec![0.0; ds.vocab.n_items()];
    for w in ds.train.iter() {
        counts[w.target() as usize] += 1.0;
    }
    counts
}

/// Ranks every window by global popularity.
pub fn evaluate_popularity(ds: &SplitDataset, split: Split, ks: &[usize]) -> Result<MetricsReport> {
    let l = ks.iter().copied().max().unwrap_or(0);
    let ranked = crate::diversifier::top_k(&popularity_scores(ds), l);
    let records: Vec<EvalRecord> = ds
        .split(split)
        .iter()
        .enumerate()
        .map(|(i, w)| EvalRecord {
            window: i,
            ranked: ranked.clone(),
            target: w.target() as usize,
            target_attrs: w.target_attrs(&ds.attributes).to_vec(),
            ap_top: None,
        })
        .collect();
    MetricsReport::from_records(&records, &ds.attributes, ks)
}
