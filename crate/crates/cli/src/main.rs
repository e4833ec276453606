use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adsr_core::checkpoint::Checkpoint;
use adsr_core::datasets::synthetic::generate_planted;
use adsr_core::datasets::{write_movielens, Split, WindowPolicy};
use adsr_core::diversifier::AddMode;
use adsr_core::encoder::HeadKind;
use adsr_core::experiment::{
    cmd_eval, cmd_prepare, cmd_rerank, cmd_sweep, cmd_train, default_reranker, DatasetKind, ExperimentSpec, Profile,
    RerankOptions,
};
use adsr_core::model::Variant;
use adsr_core::trainer::{LossScale, Reranker};
use adsr_core::Result;
use clap::{Args, Parser, Subcommand};
use ndtensor::Precision;

/// Attribute-aware diversified sequential recommendation.
#[derive(Parser)]
#[command(name = "adsr", version)]
struct Cli {
    /// JSON experiment file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `desk` or `paper`.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct DataArgs {
    /// ml1m, tmall or planted.
    #[arg(long)]
    dataset: Option<DatasetKind>,
    /// Directory with ratings.dat and movies.dat.
    #[arg(long)]
    ml1m_dir: Option<PathBuf>,
    #[arg(long)]
    tmall_log: Option<PathBuf>,
    #[arg(long)]
    max_users: Option<usize>,
    /// strict or padded.
    #[arg(long)]
    window_policy: Option<String>,
}

#[derive(Args, Default)]
struct TrainArgs {
    /// Comma-separated list of BSR, ANAM, MTASR, ADSR.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Sets every embedding and GRU width (AP width becomes twice this).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lambda_mt: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// eq4_concat or bilinear_fc.
    #[arg(long)]
    head: Option<String>,
    /// standard or paper.
    #[arg(long)]
    loss_scale: Option<String>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Args)]
struct RankArgs {
    /// none, add or mmr; defaults to add for ADSR and none otherwise.
    #[arg(long)]
    reranker: Option<Reranker>,
    #[arg(long)]
    lambda_s: Option<f64>,
    /// literal or classic.
    #[arg(long)]
    add_mode: Option<AddMode>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// train, valid or test.
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess a dataset and write the cache and stats table.
    Prepare {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train the selected variants.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Continue from last.ckpt when present.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        rank: RankArgs,
    },
    /// Evaluate a checkpoint over a grid of λ_s values.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        rank: RankArgs,
        /// Explicit grid values; defaults to 0.0..=1.0 in steps of 0.05.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Re-rank externally produced scores.
    Rerank {
        /// CSV with window_id,item,relevance.
        #[arg(long)]
        scores: PathBuf,
        /// CSV with window_id,attribute,score.
        #[arg(long)]
        prefs: Option<PathBuf>,
        /// CSV with item,attribute.
        #[arg(long)]
        item_attrs: PathBuf,
        /// none, add or mmr.
        #[arg(long, default_value = "add")]
        method: Reranker,
        #[arg(long, default_value_t = 0.25)]
        lambda_s: f64,
        #[arg(long, default_value_t = 20)]
        length: usize,
        #[arg(long, default_value_t = 100)]
        pool_size: usize,
        #[arg(long, default_value = "literal")]
        add_mode: AddMode,
    },
    /// Write planted synthetic data in MovieLens-1M layout.
    Synth {
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        events_per_user: Option<usize>,
    },
}

fn parse_choice<T>(value: &str, choices: &[(&str, T)]) -> Result<T>
where
    T: Copy,
{
    choices
        .iter()
        .find(|(n, _)| *n == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| adsr_core::AdsrError::Config(format!("unexpected value {value}")))
}

fn base_spec(cli: &Cli) -> Result<ExperimentSpec> {
    let mut spec = match &cli.config {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(p) = cli.profile {
        spec.apply_profile(p);
    }
    if let Some(o) = &cli.out {
        spec.out = o.clone();
    }
    if let Some(s) = cli.seed {
        spec.set_seed(s);
    }
    Ok(spec)
}

fn apply_data(spec: &mut ExperimentSpec, d: &DataArgs) -> Result<()> {
    let ds = &mut spec.dataset;
    if let Some(k) = d.dataset {
        ds.kind = k;
    }
    if let Some(p) = &d.ml1m_dir {
        ds.ml1m_dir = Some(p.clone());
    }
    if let Some(p) = &d.tmall_log {
        ds.tmall_log = Some(p.clone());
    }
    if d.max_users.is_some() {
        ds.max_users = d.max_users;
    }
    if let Some(w) = &d.window_policy {
        ds.window.policy = parse_choice(w, &[("strict", WindowPolicy::Strict), ("padded", WindowPolicy::Padded)])?;
    }
    Ok(())
}

fn apply_train(spec: &mut ExperimentSpec, a: &TrainArgs) -> Result<()> {
    if let Some(v) = &a.variants {
        spec.variants = v.clone();
    }
    let t = &mut spec.training;
    if let Some(e) = a.epochs {
        t.epochs = e;
    }
    if let Some(b) = a.batch_size {
        t.batch_size = b;
    }
    if let Some(d) = a.dim {
        t.d_v = d;
        t.d_c = d;
        t.d_gru = d;
        t.d_ap = 2 * d;
    }
    if let Some(l) = a.lambda_mt {
        t.lambda_mt = l;
    }
    if let Some(l) = a.learning_rate {
        t.learning_rate = l;
    }
    if let Some(p) = a.dropout {
        t.dropout = p;
    }
    if let Some(h) = &a.head {
        t.head = parse_choice(h, &[("eq4_concat", HeadKind::Eq4Concat), ("bilinear_fc", HeadKind::BilinearFc)])?;
    }
    if let Some(s) = &a.loss_scale {
        t.loss_scale = parse_choice(s, &[("standard", LossScale::Standard), ("paper", LossScale::Paper)])?;
    }
    if let Some(p) = &a.precision {
        t.precision = parse_choice(p, &[("f32", Precision::F32), ("f64", Precision::F64)])?;
    }
    Ok(())
}

fn eval_options(spec: &ExperimentSpec, ck: &Checkpoint, r: &RankArgs) -> adsr_core::trainer::EvalOptions {
    let mut o = ck.training.eval_options(r.reranker.unwrap_or(default_reranker(ck.model.config.variant)));
    o.lambda_s = r.lambda_s.unwrap_or(spec.training.lambda_s);
    if let Some(m) = r.add_mode {
        o.add_mode = m;
    }
    if let Some(p) = r.pool_size {
        o.pool_size = p;
    }
    if let Some(ks) = &r.ks {
        o.ks = ks.clone();
    }
    o
}

fn file_stem(out: &Path, prefix: &str, ck: &Checkpoint, reranker: Reranker) -> PathBuf {
    out.join(format!(
        "{prefix}_{}_{}",
        ck.model.config.variant.name().to_ascii_lowercase(),
        reranker
    ))
}

fn run(cli: Cli) -> Result<()> {
    let mut spec = base_spec(&cli)?;
    match &cli.command {
        Command::Prepare { data } => {
            apply_data(&mut spec, data)?;
            let p = cmd_prepare(&spec.dataset, &spec.out)?;
            let s = p.dataset.stats();
            println!(
                "users {}  items {}  train {}  valid {}  test {}  attributes {}  ({})",
                s.users,
                s.items,
                s.train,
                s.valid,
                s.test,
                s.attributes,
                if p.cache_hit { "cache hit" } else { "fresh" }
            );
        }
        Command::Train { data, train, resume } => {
            apply_data(&mut spec, data)?;
            apply_train(&mut spec, train)?;
            std::fs::create_dir_all(&spec.out).map_err(|e| adsr_core::AdsrError::Io {
                path: spec.out.clone(),
                source: e,
            })?;
            let spec_path = spec.out.join("experiment.json");
            std::fs::write(&spec_path, serde_json::to_string_pretty(&spec)? + "\n").map_err(|e| {
                adsr_core::AdsrError::Io {
                    path: spec_path.clone(),
                    source: e,
                }
            })?;
            for t in cmd_train(&spec, *resume)? {
                println!("{}: best epoch {} -> {}", t.variant, t.best_epoch, t.best_checkpoint.display());
            }
        }
        Command::Eval { checkpoint, data, rank } => {
            apply_data(&mut spec, data)?;
            let ds = cmd_prepare(&spec.dataset, &spec.out)?.dataset;
            let ck = Checkpoint::load(checkpoint)?;
            let opts = eval_options(&spec, &ck, rank);
            let stem = file_stem(&spec.out, "eval", &ck, opts.reranker);
            let report = cmd_eval(&ds, checkpoint, rank.split, &opts, &stem)?;
            for (name, v) in report.column_names().iter().zip(report.values()) {
                println!("{name:>10}  {}", v.map_or_else(|| "-".into(), |x| format!("{x:.4}")));
            }
            println!("wrote {}", stem.with_extension("csv").display());
        }
        Command::Sweep {
            checkpoint,
            data,
            rank,
            grid,
        } => {
            apply_data(&mut spec, data)?;
            let ds = cmd_prepare(&spec.dataset, &spec.out)?.dataset;
            let ck = Checkpoint::load(checkpoint)?;
            let mut opts = eval_options(&spec, &ck, rank);
            if rank.reranker.is_none() {
                opts.reranker = if ck.model.config.variant.has_ap() { Reranker::Add } else { Reranker::Mmr };
            }
            let grid = grid.clone().unwrap_or_else(|| spec.sweep_grid.clone());
            let stem = file_stem(&spec.out, "sweep", &ck, opts.reranker);
            let rows = cmd_sweep(&ds, checkpoint, rank.split, &opts, &grid, &stem)?;
            for (l, r) in &rows {
                let c = r.at(10).expect("k=10");
                println!(
                    "lambda_s {l:.2}  MRR@10 {:.4}  Recall@10 {:.4}  ILD@10 {:.4}  Dis@10 {:.3}",
                    c.mrr, c.recall, c.ild, c.dis
                );
            }
            println!("wrote {}", stem.with_extension("csv").display());
        }
        Command::Rerank {
            scores,
            prefs,
            item_attrs,
            method,
            lambda_s,
            length,
            pool_size,
            add_mode,
        } => {
            let opts = RerankOptions {
                method: *method,
                lambda_s: *lambda_s,
                length: *length,
                pool_size: *pool_size,
                add_mode: *add_mode,
            };
            let stem = spec.out.join("reranked");
            let lists = cmd_rerank(scores, prefs.as_deref(), item_attrs, &opts, &stem)?;
            println!("{} lists -> {}", lists.len(), stem.with_extension("csv").display());
        }
        Command::Synth { users, events_per_user } => {
            let mut cfg = spec.dataset.planted.clone();
            if let Some(u) = users {
                cfg.users = *u;
            }
            if let Some(e) = events_per_user {
                cfg.events_per_user = *e;
            }
            let data = generate_planted(&cfg)?;
            write_movielens(&spec.out, &data.events)?;
            println!("{} events -> {}", data.events.len(), spec.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
