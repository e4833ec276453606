use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{InteractionEvent, ItemAttributeTable, SplitDataset, Vocabulary, WindowSet, PAD};
use crate::{AdsrError, Result};

/// How windows are cut from each user's sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowPolicy {
    /// Full windows of consecutive events inside a region; nothing crosses the
    /// train/held-out boundary and short regions yield no windows.
    #[default]
    Strict,
    /// Every event after a user's first is a target. Missing context is left
    /// padded with [`PAD`], and held-out targets may draw context from the
    /// training region.
    Padded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    /// Window length including the target.
    pub window: usize,
    pub train_fraction: f64,
    pub policy: WindowPolicy,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window: 10,
            train_fraction: 0.8,
            policy: WindowPolicy::Strict,
        }
    }
}

impl WindowConfig {
    fn train_len(&self, n: usize) -> usize {
        ((n as f64 * self.train_fraction) + 1e-9).floor().min(n as f64) as usize
    }
}

/// Windows ending at each target position in `targets`, as positions into the
/// user's sequence (`None` for padding).
fn window_positions(cfg: &WindowConfig, region: std::ops::Range<usize>) -> Vec<Vec<Option<usize>>> {
    let w = cfg.window;
    match cfg.policy {
        WindowPolicy::Strict => {
            if region.len() < w {
                return Vec::new();
            }
            (region.start..=region.end - w)
                .map(|s| (s..s + w).map(Some).collect())
                .collect()
        }
        WindowPolicy::Padded => region
            .filter(|&t| t >= 1)
            .map(|t| (0..w).map(|k| (t + k + 1).checked_sub(w)).collect())
            .collect(),
    }
}

/// Per-user chronological split followed by windowing and the unseen-item
/// filter. `events` must be grouped by user in chronological order (as the
/// loaders return them).
pub fn split_and_window(events: &[InteractionEvent], cfg: &WindowConfig) -> Result<SplitDataset> {
    if cfg.window < 2 {
        return Err(AdsrError::Config("window must hold at least one input and a target".into()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0) {
        return Err(AdsrError::Config("train_fraction must lie in (0, 1]".into()));
    }
    let mut by_user: BTreeMap<u64, Vec<&InteractionEvent>> = BTreeMap::new();
    for e in events {
        by_user.entry(e.user).or_default().push(e);
    }
    for seq in by_user.values_mut() {
        seq.sort_by_key(|e| e.timestamp);
    }

    struct UserWindows<'a> {
        seq: &'a [&'a InteractionEvent],
        train: Vec<Vec<Option<usize>>>,
        held: Vec<Vec<Option<usize>>>,
    }
    let per_user: Vec<UserWindows> = by_user
        .values()
        .map(|seq| {
            let cut = cfg.train_len(seq.len());
            UserWindows {
                seq,
                train: window_positions(cfg, 0..cut),
                held: window_positions(cfg, cut..seq.len()),
            }
        })
        .collect();

    let mut item_ids = BTreeSet::new();
    for u in &per_user {
        for w in &u.train {
            item_ids.extend(w.iter().flatten().map(|&p| u.seq[p].item));
        }
    }
    if item_ids.is_empty() {
        return Err(AdsrError::EmptyDataset("windowing (no training windows)".into()));
    }
    let mut item_attrs: BTreeMap<u64, &[String]> = BTreeMap::new();
    for u in &per_user {
        for e in u.seq.iter() {
            if item_ids.contains(&e.item) {
                let prev = item_attrs.insert(e.item, &e.attributes);
                if prev.is_some_and(|p| p != &*e.attributes) {
                    return Err(AdsrError::DataIntegrity(format!(
                        "item {} appears with different attribute sets",
                        e.item
                    )));
                }
            }
        }
    }
    let attr_names: BTreeSet<&String> = item_attrs.values().flat_map(|a| a.iter()).collect();
    let vocab = Vocabulary::new(
        item_ids.into_iter().collect(),
        attr_names.into_iter().cloned().collect(),
    );
    let table = ItemAttributeTable::new(
        vocab.n_attrs(),
        vocab
            .items()
            .iter()
            .map(|id| {
                item_attrs[id]
                    .iter()
                    .map(|a| vocab.attr_index(a).expect("attribute in vocabulary"))
                    .collect()
            })
            .collect(),
    )?;

    let mut train = WindowSet::new(cfg.window);
    let mut valid = WindowSet::new(cfg.window);
    let mut test = WindowSet::new(cfg.window);
    let mut buf = Vec::with_capacity(cfg.window);
    for (uidx, u) in per_user.iter().enumerate() {
        let uidx = uidx as u32;
        let encode = |w: &[Option<usize>], buf: &mut Vec<u32>| -> bool {
            buf.clear();
            for p in w {
                match p {
                    None => buf.push(PAD),
                    Some(p) => match vocab.item_index(u.seq[*p].item) {
                        Some(i) => buf.push(i),
                        None => return false,
                    },
                }
            }
            true
        };
        for w in &u.train {
            let ok = encode(w, &mut buf);
            debug_assert!(ok);
            train.push(uidx, &buf);
        }
        let mut held = Vec::new();
        for w in &u.held {
            if encode(w, &mut buf) {
                held.push(buf.clone());
            }
        }
        let half = held.len() / 2;
        for (k, w) in held.iter().enumerate() {
            if k < half {
                valid.push(uidx, w);
            } else {
                test.push(uidx, w);
            }
        }
    }

    Ok(SplitDataset {
        vocab,
        attributes: table,
        train,
        valid,
        test,
        n_users: by_user.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(user: u64, n: usize, item_of: impl Fn(usize) -> u64) -> Vec<InteractionEvent> {
        (0..n)
            .map(|t| InteractionEvent {
                user,
                item: item_of(t),
                timestamp: t as i64,
                attributes: vec![format!("g{}", item_of(t) % 3)].into(),
            })
            .collect()
    }

    #[test]
    fn thirty_events_give_fifteen_train_windows() {
        let ev = user(1, 30, |t| t as u64);
        let ds = split_and_window(&ev, &WindowConfig::default()).unwrap();
        assert_eq!(ds.train.len(), 15);
        assert_eq!(ds.valid.len() + ds.test.len(), 0);
    }

    #[test]
    fn hundred_events_give_seventy_one_train_windows() {
        let ev = user(1, 100, |t| (t % 40) as u64);
        let ds = split_and_window(&ev, &WindowConfig::default()).unwrap();
        assert_eq!(ds.train.len(), 71);
        // held-out region of 20 events gives 11 windows, all items seen
        assert_eq!(ds.valid.len(), 5);
        assert_eq!(ds.test.len(), 6);
    }

    #[test]
    fn unseen_items_drop_held_out_windows() {
        let ev = user(1, 100, |t| if t == 95 { 999 } else { (t % 40) as u64 });
        let ds = split_and_window(&ev, &WindowConfig::default()).unwrap();
        // windows starting 80..=90 cover position 95 when start >= 86
        assert_eq!(ds.valid.len() + ds.test.len(), 6);
        assert!(ds.vocab.item_index(999).is_none());
    }

    #[test]
    fn padded_windows_cover_every_target() {
        let ev = user(1, 30, |t| (t % 12) as u64);
        let cfg = WindowConfig {
            policy: WindowPolicy::Padded,
            ..WindowConfig::default()
        };
        let ds = split_and_window(&ev, &cfg).unwrap();
        assert_eq!(ds.train.len(), 23);
        assert_eq!(ds.valid.len() + ds.test.len(), 6);
        let first = ds.train.get(0);
        assert_eq!(first.inputs()[..8], [PAD; 8]);
        assert_eq!(ds.vocab.item_external(first.inputs()[8]), 0);
        assert_eq!(ds.vocab.item_external(first.target()), 1);
        // first held-out window takes its context from the training region
        let h = ds.valid.get(0);
        let ctx: Vec<u64> = h.inputs().iter().map(|&i| ds.vocab.item_external(i)).collect();
        assert_eq!(ctx, (15..24).map(|t| (t % 12) as u64).collect::<Vec<_>>());
    }
}
