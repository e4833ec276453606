//! Experiment runner behind the command-line interface: dataset preparation,
//! training of the variant set, evaluation, λ sweeps and offline re-ranking.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndtensor::RngState;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::datasets::cache::{content_key, load_if_fresh, write_cache};
use crate::datasets::synthetic::{generate_planted, PlantedConfig};
use crate::datasets::{
    filter_min_interactions, load_movielens, load_tmall, split_and_window, DatasetStats, InteractionEvent, ItemAttributeTable,
    Split, SplitDataset, TmallColumns, WindowConfig,
};
use crate::diversifier::{add_rerank_pool, mmr_rerank_pool, AddMode, CandidatePool, RecommendationList};
use crate::error::io_err;
use crate::metrics::MetricsReport;
use crate::model::Variant;
use crate::trainer::{evaluate, rank_windows, score_windows, train, EvalOptions, Reranker, TrainingConfig, BEST_CHECKPOINT};
use crate::{AdsrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Ml1m,
    Tmall,
    /// Generated planted-preference data.
    Planted,
}

impl FromStr for DatasetKind {
    type Err = AdsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml1m" | "movielens" => Ok(DatasetKind::Ml1m),
            "tmall" => Ok(DatasetKind::Tmall),
            "planted" | "synthetic" => Ok(DatasetKind::Planted),
            other => Err(AdsrError::Config(format!("unknown dataset {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Directory holding `ratings.dat` and `movies.dat`.
    pub ml1m_dir: Option<PathBuf>,
    pub tmall_log: Option<PathBuf>,
    pub tmall_columns: TmallColumns,
    pub tmall_action: String,
    pub min_interactions: usize,
    pub window: WindowConfig,
    /// Keep this many users (seeded sample) after filtering.
    pub max_users: Option<usize>,
    pub sample_seed: u64,
    pub planted: PlantedConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Ml1m,
            ml1m_dir: None,
            tmall_log: None,
            tmall_columns: TmallColumns::default(),
            tmall_action: "buy".into(),
            min_interactions: 20,
            window: WindowConfig::default(),
            max_users: None,
            sample_seed: 0,
            planted: PlantedConfig::default(),
        }
    }
}

impl DatasetSpec {
    fn input_files(&self) -> Result<Vec<PathBuf>> {
        let need = |p: &Option<PathBuf>, what: &str| {
            p.clone()
                .ok_or_else(|| AdsrError::Config(format!("dataset path for {what} not set")))
        };
        let files = match self.kind {
            DatasetKind::Ml1m => {
                let dir = need(&self.ml1m_dir, "ml1m")?;
                vec![dir.join("ratings.dat"), dir.join("movies.dat")]
            }
            DatasetKind::Tmall => vec![need(&self.tmall_log, "tmall")?],
            DatasetKind::Planted => Vec::new(),
        };
        for f in &files {
            if !f.is_file() {
                return Err(AdsrError::Io {
                    path: f.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                });
            }
        }
        Ok(files)
    }

    fn load_events(&self, files: &[PathBuf]) -> Result<Vec<InteractionEvent>> {
        match self.kind {
            DatasetKind::Ml1m => load_movielens(&files[0], &files[1]),
            DatasetKind::Tmall => load_tmall(&files[0], &self.tmall_columns, &self.tmall_action),
            DatasetKind::Planted => Ok(generate_planted(&self.planted)?.events),
        }
    }
}

/// Size presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-size settings.
    Paper,
    /// d=32, batch 256, 10 epochs, 300 sampled users.
    Desk,
}

impl FromStr for Profile {
    type Err = AdsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(AdsrError::Config(format!("unknown profile {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    pub training: TrainingConfig,
    pub variants: Vec<Variant>,
    pub sweep_grid: Vec<f64>,
    pub out: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            training: TrainingConfig::default(),
            variants: Variant::ALL.to_vec(),
            sweep_grid: default_grid(),
            out: PathBuf::from("runs"),
        }
    }
}

/// 0.0 to 1.0 in steps of 0.05.
pub fn default_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

impl ExperimentSpec {
    pub fn apply_profile(&mut self, profile: Profile) {
        match profile {
            Profile::Paper => {
                let seed = self.training.seed;
                self.training = TrainingConfig {
                    seed,
                    ..TrainingConfig::default()
                };
                self.dataset.max_users = None;
            }
            Profile::Desk => {
                let t = &mut self.training;
                t.d_v = 32;
                t.d_c = 32;
                t.d_gru = 32;
                t.d_ap = 64;
                t.batch_size = 256;
                t.epochs = 10;
                self.dataset.max_users = Some(300);
            }
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.training.seed = seed;
        self.dataset.sample_seed = seed;
        self.dataset.planted.seed = seed;
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.sweep_grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(AdsrError::Config("sweep grid values must lie in [0, 1]".into()));
        }
        if self.variants.is_empty() {
            return Err(AdsrError::Config("no variants selected".into()));
        }
        Ok(())
    }

    pub fn variant_dir(&self, v: Variant) -> PathBuf {
        self.out.join(v.name().to_ascii_lowercase())
    }
}

fn subsample(events: Vec<InteractionEvent>, max_users: usize, seed: u64) -> Vec<InteractionEvent> {
    let mut users: Vec<u64> = events
        .iter()
        .map(|e| e.user)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if users.len() <= max_users {
        return events;
    }
    RngState::new(seed).shuffle(&mut users);
    let keep: std::collections::HashSet<u64> = users.into_iter().take(max_users).collect();
    events.into_iter().filter(|e| keep.contains(&e.user)).collect()
}

/// Writes `rows` as `<stem>.csv` (with header) and `<stem>.json` (array of objects).
pub fn write_table(stem: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let csv_path = stem.with_extension("csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(io_err(&csv_path))?;
    let objects: Vec<serde_json::Map<String, serde_json::Value>> = rows
        .iter()
        .map(|r| {
            header
                .iter()
                .zip(r)
                .map(|(h, v)| {
                    let value = match v.parse::<f64>() {
                        Ok(x) if x.is_finite() => serde_json::json!(x),
                        _ if v.is_empty() => serde_json::Value::Null,
                        _ => serde_json::Value::String(v.clone()),
                    };
                    (h.clone(), value)
                })
                .collect()
        })
        .collect();
    let json_path = stem.with_extension("json");
    fs::write(&json_path, serde_json::to_string_pretty(&objects)? + "\n").map_err(io_err(&json_path))
}

pub const STATS_COLUMNS: [&str; 7] = ["users", "items", "train", "valid", "test", "attributes", "dataset_hash"];

/// Result of [`cmd_prepare`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: SplitDataset,
    pub key: String,
    pub cache_hit: bool,
}

/// Loads, filters, splits and windows the configured dataset, reusing
/// `<out>/dataset.bin` when its key matches; writes `stats.csv`/`stats.json`.
pub fn cmd_prepare(spec: &DatasetSpec, out: &Path) -> Result<Prepared> {
    let files = spec.input_files()?;
    let refs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    let key = content_key(&refs, spec)?;
    let cache = out.join("dataset.bin");
    let (dataset, cache_hit) = match load_if_fresh(&cache, &key)? {
        Some(ds) => (ds, true),
        None => {
            let events = spec.load_events(&files)?;
            let events = filter_min_interactions(events, spec.min_interactions)?;
            let events = match spec.max_users {
                Some(n) => subsample(events, n, spec.sample_seed),
                None => events,
            };
            let ds = split_and_window(&events, &spec.window)?;
            write_cache(&cache, &key, &ds)?;
            (ds, false)
        }
    };
    let s = dataset.stats();
    write_table(
        &out.join("stats"),
        &STATS_COLUMNS.map(String::from),
        &[vec![
            s.users.to_string(),
            s.items.to_string(),
            s.train.to_string(),
            s.valid.to_string(),
            s.test.to_string(),
            s.attributes.to_string(),
            key.clone(),
        ]],
    )?;
    Ok(Prepared {
        dataset,
        key,
        cache_hit,
    })
}

/// Per-variant training outcome.
#[derive(Debug, Clone)]
pub struct TrainedVariant {
    pub variant: Variant,
    pub best_checkpoint: PathBuf,
    pub best_epoch: usize,
}

/// Trains every requested variant into `<out>/<variant>/`. MTASR and ADSR
/// share one training run since they differ only at inference time.
pub fn cmd_train(spec: &ExperimentSpec, resume: bool) -> Result<Vec<TrainedVariant>> {
    spec.validate()?;
    let prepared = cmd_prepare(&spec.dataset, &spec.out)?;
    let ds = &prepared.dataset;
    let mut out = Vec::new();
    let mut shared: Option<PathBuf> = None;
    for &v in &spec.variants {
        let dir = spec.variant_dir(v);
        let cfg = TrainingConfig {
            variant: v,
            ..spec.training.clone()
        };
        if let (true, Some(src)) = (v.has_ap(), shared.as_ref()) {
            let best_epoch = relabel_run(src, &dir, v)?;
            out.push(TrainedVariant {
                variant: v,
                best_checkpoint: dir.join(BEST_CHECKPOINT),
                best_epoch,
            });
            continue;
        }
        log::info!("training {v} into {}", dir.display());
        let result = train(&cfg, ds, Some(&dir), resume)?;
        if v.has_ap() {
            shared = Some(dir.clone());
        }
        out.push(TrainedVariant {
            variant: v,
            best_checkpoint: dir.join(BEST_CHECKPOINT),
            best_epoch: result.best_epoch,
        });
    }
    Ok(out)
}

/// Copies the checkpoints and logs of `src` into `dst` under variant `v`.
fn relabel_run(src: &Path, dst: &Path, v: Variant) -> Result<usize> {
    fs::create_dir_all(dst).map_err(io_err(dst))?;
    let mut best_epoch = 0;
    let mut last = None;
    for name in [BEST_CHECKPOINT, crate::trainer::LAST_CHECKPOINT] {
        let path = src.join(name);
        if !path.exists() {
            continue;
        }
        let mut ck = Checkpoint::load(&path)?;
        ck.training.variant = v;
        ck.model.config.variant = v;
        ck.config_hash = ck.training.config_hash();
        ck.save(&dst.join(name))?;
        best_epoch = ck.best.epoch;
        last = Some(ck);
    }
    let txt = crate::trainer::TRAIN_LOG_TXT;
    if src.join(txt).exists() {
        fs::copy(src.join(txt), dst.join(txt)).map_err(io_err(dst.join(txt)))?;
    }
    if let Some(ck) = last {
        let csv_path = dst.join(crate::trainer::TRAIN_LOG_CSV);
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(crate::trainer::TRAIN_LOG_COLUMNS)?;
        for h in &ck.history {
            w.write_record(h.csv_row(&ck.config_hash))?;
        }
        w.flush().map_err(io_err(&csv_path))?;
    }
    Ok(best_epoch)
}

/// Default re-ranker for a variant's headline row.
pub fn default_reranker(v: Variant) -> Reranker {
    if v == Variant::Adsr {
        Reranker::Add
    } else {
        Reranker::None
    }
}

pub fn eval_header(report: &MetricsReport) -> Vec<String> {
    let mut h: Vec<String> = ["model", "reranker", "lambda_s", "add_mode", "split", "records"]
        .map(String::from)
        .to_vec();
    h.extend(report.column_names());
    h.push("config_hash".into());
    h
}

pub fn eval_row(model: &str, opts: &EvalOptions, split: Split, report: &MetricsReport, hash: &str) -> Vec<String> {
    let mut r = vec![
        model.to_string(),
        opts.reranker.to_string(),
        format!("{}", opts.lambda_s),
        opts.add_mode.to_string(),
        format!("{split:?}").to_ascii_lowercase(),
        report.records.to_string(),
    ];
    r.extend(report.values().into_iter().map(|v| v.map_or_else(String::new, |x| format!("{x}"))));
    r.push(hash.to_string());
    r
}

/// Evaluates one checkpoint and writes one wide metrics row to `<stem>.csv/json`.
pub fn cmd_eval(ds: &SplitDataset, checkpoint: &Path, split: Split, opts: &EvalOptions, stem: &Path) -> Result<MetricsReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let (report, _) = evaluate(&ck.model, ds, split, opts)?;
    let name = match opts.reranker {
        Reranker::Mmr => format!("{}+MMR", ck.model.config.variant),
        _ => ck.model.config.variant.to_string(),
    };
    write_table(stem, &eval_header(&report), &[eval_row(&name, opts, split, &report, &ck.config_hash)])?;
    Ok(report)
}

pub const SWEEP_COLUMNS: [&str; 6] = ["lambda_s", "MRR@10", "Recall@10", "ILD@10", "Dis@10", "config_hash"];

/// One evaluation per grid value, sharing a single forward pass.
pub fn sweep(
    ds: &SplitDataset,
    ck: &Checkpoint,
    split: Split,
    base: &EvalOptions,
    grid: &[f64],
) -> Result<Vec<(f64, MetricsReport)>> {
    if base.reranker == Reranker::Add && !ck.model.config.variant.has_ap() {
        return Err(AdsrError::Contract(format!(
            "{} has no attribute predictor, so it cannot use the add re-ranker",
            ck.model.config.variant
        )));
    }
    let scored = score_windows(&ck.model, ds, split, base.pool_size, base.batch_size)?;
    grid.iter()
        .map(|&lambda| {
            let opts = EvalOptions {
                lambda_s: lambda,
                ..base.clone()
            };
            let records = rank_windows(&scored, &ds.attributes, &opts)?;
            Ok((lambda, MetricsReport::from_records(&records, &ds.attributes, &opts.ks)?))
        })
        .collect()
}

/// Runs [`sweep`] and writes `<stem>.csv/json` with one row per grid value.
pub fn cmd_sweep(
    ds: &SplitDataset,
    checkpoint: &Path,
    split: Split,
    base: &EvalOptions,
    grid: &[f64],
    stem: &Path,
) -> Result<Vec<(f64, MetricsReport)>> {
    if !base.ks.contains(&10) {
        return Err(AdsrError::Config("the sweep reports @10 metrics; include 10 in the cut-offs".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let rows = sweep(ds, &ck, split, base, grid)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|(l, r)| {
            let c = r.at(10).expect("k=10 evaluated");
            vec![
                format!("{l}"),
                format!("{}", c.mrr),
                format!("{}", c.recall),
                format!("{}", c.ild),
                format!("{}", c.dis),
                ck.config_hash.clone(),
            ]
        })
        .collect();
    write_table(stem, &SWEEP_COLUMNS.map(String::from), &table)?;
    Ok(rows)
}

/// Options of the offline re-ranker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOptions {
    pub method: Reranker,
    pub lambda_s: f64,
    pub length: usize,
    pub pool_size: usize,
    pub add_mode: AddMode,
}

pub const RERANK_COLUMNS: [&str; 6] = ["window_id", "rank", "item", "relevance", "diversity", "score"];

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| AdsrError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
    let got: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(AdsrError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header {}", header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| AdsrError::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec));
    }
    Ok(rows)
}

fn field<T: FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| AdsrError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("bad {name}"),
    })
}

/// Re-ranks externally produced scores.
///
/// Inputs are CSV files with headers: scores `window_id,item,relevance`;
/// preferences `window_id,attribute,score` (required for `add`); item
/// attributes `item,attribute`. Item and attribute columns are dense indices.
/// Output columns are [`RERANK_COLUMNS`].
pub fn cmd_rerank(
    scores: &Path,
    prefs: Option<&Path>,
    item_attrs: &Path,
    opts: &RerankOptions,
    out: &Path,
) -> Result<BTreeMap<usize, RecommendationList>> {
    if opts.length > opts.pool_size {
        return Err(AdsrError::Config(format!(
            "list length {} exceeds candidate pool {}",
            opts.length, opts.pool_size
        )));
    }
    let mut attr_sets: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    let mut n_attrs = 0usize;
    for (line, rec) in read_rows(item_attrs, &["item", "attribute"])? {
        let item: usize = field(item_attrs, line, &rec, 0, "item")?;
        let a: u32 = field(item_attrs, line, &rec, 1, "attribute")?;
        n_attrs = n_attrs.max(a as usize + 1);
        attr_sets.entry(item).or_default().push(a);
    }
    let n_items = attr_sets.keys().next_back().map_or(0, |&m| m + 1);
    let table = ItemAttributeTable::new(n_attrs, (0..n_items).map(|i| attr_sets.remove(&i).unwrap_or_default()).collect())?;

    let mut pools: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for (line, rec) in read_rows(scores, &["window_id", "item", "relevance"])? {
        let w: usize = field(scores, line, &rec, 0, "window_id")?;
        let item: usize = field(scores, line, &rec, 1, "item")?;
        let rel: f64 = field(scores, line, &rec, 2, "relevance")?;
        if item >= n_items {
            return Err(AdsrError::Parse {
                path: scores.to_path_buf(),
                line,
                message: format!("item {item} has no attribute row"),
            });
        }
        pools.entry(w).or_default().push((item, rel));
    }

    let mut prefs_by_window: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    match (opts.method, prefs) {
        (Reranker::Add, None) => {
            return Err(AdsrError::Contract("the add re-ranker needs a preference file".into()));
        }
        (_, Some(path)) => {
            for (line, rec) in read_rows(path, &["window_id", "attribute", "score"])? {
                let w: usize = field(path, line, &rec, 0, "window_id")?;
                let a: usize = field(path, line, &rec, 1, "attribute")?;
                let s: f64 = field(path, line, &rec, 2, "score")?;
                if a >= n_attrs {
                    return Err(AdsrError::Parse {
                        path: path.to_path_buf(),
                        line,
                        message: format!("attribute {a} out of range"),
                    });
                }
                prefs_by_window.entry(w).or_insert_with(|| vec![0.0; n_attrs])[a] = s;
            }
        }
        _ => {}
    }

    let mut lists = BTreeMap::new();
    let mut rows = Vec::new();
    for (w, pairs) in pools {
        let pool = CandidatePool::from_pairs(pairs)?.truncated(opts.pool_size);
        let list = match opts.method {
            Reranker::None => add_rerank_pool(&pool, &[], &table, 1.0, opts.length, opts.add_mode)?,
            Reranker::Mmr => mmr_rerank_pool(&pool, &table, opts.lambda_s, opts.length)?,
            Reranker::Add => {
                let raw = prefs_by_window
                    .get(&w)
                    .ok_or_else(|| AdsrError::Contract(format!("no preferences for window {w}")))?;
                let pref = crate::attribute_predictor::AttributePreference::from_raw(raw.clone())?;
                add_rerank_pool(&pool, &pref.normalized, &table, opts.lambda_s, opts.length, opts.add_mode)?
            }
        };
        for (rank, s) in list.steps.iter().enumerate() {
            rows.push(vec![
                w.to_string(),
                (rank + 1).to_string(),
                s.item.to_string(),
                format!("{}", s.relevance),
                format!("{}", s.diversity),
                format!("{}", s.score),
            ]);
        }
        lists.insert(w, list);
    }
    write_table(out, &RERANK_COLUMNS.map(String::from), &rows)?;
    Ok(lists)
}

/// Stats of a prepared dataset in table order.
pub fn stats_row(s: &DatasetStats) -> [usize; 6] {
    [s.users, s.items, s.train, s.valid, s.test, s.attributes]
}
