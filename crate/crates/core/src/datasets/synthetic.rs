//! Planted-preference generator: each user draws items from a few preferred
//! attributes, staying on the current attribute with a fixed probability.

use std::sync::Arc;

use ndtensor::RngState;
use serde::{Deserialize, Serialize};

use super::InteractionEvent;
use crate::{AdsrError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub attributes: usize,
    pub preferred_per_user: usize,
    pub events_per_user: usize,
    /// Probability that the next event keeps the previous event's attribute.
    pub stay_probability: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            users: 200,
            items: 50,
            attributes: 5,
            preferred_per_user: 2,
            events_per_user: 60,
            stay_probability: 0.9,
            seed: 7,
        }
    }
}

/// Generated events plus the ground truth used to build them.
#[derive(Debug, Clone)]
pub struct PlantedData {
    pub events: Vec<InteractionEvent>,
    /// Preferred attribute indices per user (user ids are `1..=users`).
    pub preferred: Vec<Vec<usize>>,
}

/// Item `i` (external id `i + 1`) carries the single attribute `i % attributes`.
pub fn planted_attribute(item_external: u64, attributes: usize) -> usize {
    ((item_external - 1) % attributes as u64) as usize
}

pub fn attribute_name(a: usize) -> String {
    format!("attr{a}")
}

pub fn generate_planted(cfg: &PlantedConfig) -> Result<PlantedData> {
    if cfg.attributes == 0 || cfg.items < cfg.attributes {
        return Err(AdsrError::Config("need at least one item per attribute".into()));
    }
    if cfg.preferred_per_user == 0 || cfg.preferred_per_user > cfg.attributes {
        return Err(AdsrError::Config("preferred_per_user must lie in [1, attributes]".into()));
    }
    if !(0.0..=1.0).contains(&cfg.stay_probability) {
        return Err(AdsrError::Config("stay_probability must lie in [0, 1]".into()));
    }
    let mut rng = RngState::new(cfg.seed);
    let names: Vec<Arc<[String]>> = (0..cfg.attributes)
        .map(|a| Arc::from(vec![attribute_name(a)]))
        .collect();
    let by_attr: Vec<Vec<u64>> = (0..cfg.attributes)
        .map(|a| {
            (1..=cfg.items as u64)
                .filter(|&i| planted_attribute(i, cfg.attributes) == a)
                .collect()
        })
        .collect();

    let mut events = Vec::with_capacity(cfg.users * cfg.events_per_user);
    let mut preferred = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let mut attrs: Vec<usize> = (0..cfg.attributes).collect();
        rng.shuffle(&mut attrs);
        attrs.truncate(cfg.preferred_per_user);
        attrs.sort_unstable();
        let mut current = attrs[rng.below(attrs.len())];
        for t in 0..cfg.events_per_user {
            if t > 0 && attrs.len() > 1 && rng.uniform() >= cfg.stay_probability {
                let others: Vec<usize> = attrs.iter().copied().filter(|&a| a != current).collect();
                current = others[rng.below(others.len())];
            }
            let pool = &by_attr[current];
            let item = pool[rng.below(pool.len())];
            events.push(InteractionEvent {
                user: u as u64 + 1,
                item,
                timestamp: t as i64,
                attributes: names[current].clone(),
            });
        }
        preferred.push(attrs);
    }
    Ok(PlantedData { events, preferred })
}
