//! Checkpoint files: parameters, optimizer and RNG state in the tensor
//! archive format, with training metadata in its JSON header.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndtensor::archive::{read_archive, write_archive};
use ndtensor::{Adam, RngSnapshot};
use serde::{Deserialize, Serialize};

use crate::error::io_err;
use crate::model::{Model, ModelConfig};
use crate::trainer::{EpochLog, TrainingConfig};
use crate::{AdsrError, Result};

const FORMAT: &str = "adsr-checkpoint-1";

/// The epoch selected so far and its validation scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestInfo {
    pub epoch: usize,
    pub val_mrr20: Option<f64>,
    pub val_recall20: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub training: TrainingConfig,
    pub model: Model,
    pub optimizer: Option<Adam>,
    pub rng: Option<RngSnapshot>,
    pub epoch: usize,
    pub val_mrr20: Option<f64>,
    pub val_recall20: Option<f64>,
    pub config_hash: String,
    pub best: BestInfo,
    pub history: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    format: String,
    training: TrainingConfig,
    model: ModelConfig,
    epoch: usize,
    val_mrr20: Option<f64>,
    val_recall20: Option<f64>,
    config_hash: String,
    best: BestInfo,
    history: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = Metadata {
            format: FORMAT.into(),
            training: self.training.clone(),
            model: self.model.config.clone(),
            epoch: self.epoch,
            val_mrr20: self.val_mrr20,
            val_recall20: self.val_recall20,
            config_hash: self.config_hash.clone(),
            best: self.best,
            history: self.history.clone(),
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        // write to a sibling file first so an interrupted save never leaves a torn checkpoint
        let tmp = path.with_extension("tmp");
        let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(file);
        write_archive(&mut w, &self.model.store, self.optimizer.as_ref(), self.rng, &serde_json::to_value(&meta)?)?;
        w.flush().map_err(io_err(&tmp))?;
        drop(w);
        fs::rename(&tmp, path).map_err(io_err(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let archive = read_archive(&mut BufReader::new(file))?;
        let meta: Metadata = serde_json::from_value(archive.metadata)?;
        if meta.format != FORMAT {
            return Err(AdsrError::DataIntegrity(format!(
                "{}: unsupported checkpoint format {}",
                path.display(),
                meta.format
            )));
        }
        let model = Model::from_store(meta.model, &archive.params)?;
        Ok(Self {
            training: meta.training,
            model,
            optimizer: archive.optimizer,
            rng: archive.rng,
            epoch: meta.epoch,
            val_mrr20: meta.val_mrr20,
            val_recall20: meta.val_recall20,
            config_hash: meta.config_hash,
            best: meta.best,
            history: meta.history,
        })
    }
}
