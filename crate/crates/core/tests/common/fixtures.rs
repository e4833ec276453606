// Small datasets and models shared by the integration tests.
#![allow(dead_code)]

use adsr_core::datasets::synthetic::{generate_planted, PlantedConfig};
use adsr_core::datasets::{filter_min_interactions, split_and_window, ItemAttributeTable, SequenceBatch, SplitDataset, WindowConfig, WindowSet};
use adsr_core::encoder::HeadKind;
use adsr_core::model::{Model, ModelConfig, Variant};
use adsr_core::trainer::{batch_loss, LossScale};
use ndtensor::{grad_check, GradCheckReport, Graph, Mode, Precision, RngState, TensorError};

/// Seven items over three attributes; item 6 has two.
pub fn toy_table() -> ItemAttributeTable {
    ItemAttributeTable::new(3, vec![vec![0], vec![1], vec![2], vec![0], vec![1], vec![2], vec![0, 2]]).unwrap()
}

/// Two windows of three inputs and a target.
pub fn toy_batch() -> SequenceBatch {
    let mut set = WindowSet::new(4);
    set.push(0, &[0, 1, 6, 2]);
    set.push(1, &[3, 5, 4, 6]);
    SequenceBatch::from_windows(&set, &[0, 1], &toy_table())
}

pub fn toy_model(variant: Variant, head: HeadKind) -> Model {
    let mut cfg = ModelConfig::with_dims(variant, 7, 3, 4);
    cfg.dropout = 0.0;
    cfg.d_ap = 4;
    cfg.head = head;
    Model::new(cfg, Precision::F64, &mut RngState::new(3)).unwrap()
}

/// Finite-difference check of the full training loss on the toy batch.
pub fn toy_grad_check(variant: Variant, head: HeadKind) -> GradCheckReport {
    let mut model = toy_model(variant, head);
    let batch = toy_batch();
    let (config, params) = (model.config.clone(), model.params);
    grad_check(&mut model.store, 1e-5, usize::MAX, &mut RngState::new(0), |store| {
        let m = Model { config: config.clone(), store: store.clone(), params };
        let mut g = Graph::new();
        let nodes = batch_loss(&m, &mut g, &batch, 0.9, LossScale::Standard, Mode::Train, &mut RngState::new(1))
            .map_err(|e| TensorError::Config(e.to_string()))?;
        Ok((g, nodes.total))
    })
    .unwrap()
}

/// The default planted dataset after the standard preprocessing.
pub fn planted_dataset() -> SplitDataset {
    let data = generate_planted(&PlantedConfig::default()).unwrap();
    let events = filter_min_interactions(data.events, 20).unwrap();
    split_and_window(&events, &WindowConfig::default()).unwrap()
}

/// A smaller planted dataset for quick training tests.
pub fn small_planted_dataset() -> SplitDataset {
    let cfg = PlantedConfig { users: 60, events_per_user: 60, items: 20, ..PlantedConfig::default() };
    let data = generate_planted(&cfg).unwrap();
    split_and_window(&data.events, &WindowConfig::default()).unwrap()
}
