//! Interaction loading, filtering, chronological splitting and windowing.

mod batch;
pub mod cache;
mod filter;
mod movielens;
mod split;
pub mod synthetic;
mod tmall;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use batch::{BatchIterator, SequenceBatch};
pub use filter::filter_min_interactions;
pub use movielens::{load_movielens, write_movielens};
pub use split::{split_and_window, WindowConfig, WindowPolicy};
pub use tmall::{load_tmall, TmallAction, TmallColumns};

/// Item index used for left padding in [`WindowPolicy::Padded`] windows.
pub const PAD: u32 = u32::MAX;

/// One user-item interaction with the item's attribute set.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionEvent {
    pub user: u64,
    pub item: u64,
    pub timestamp: i64,
    pub attributes: Arc<[String]>,
}

/// Dense index maps for items and attributes.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    items: Vec<u64>,
    attrs: Vec<String>,
    item_index: HashMap<u64, u32>,
    attr_index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds the maps; indices follow the order of the given lists.
    pub fn new(items: Vec<u64>, attrs: Vec<String>) -> Self {
        let item_index = items.iter().enumerate().map(|(i, &v)| (v, i as u32)).collect();
        let attr_index = attrs.iter().enumerate().map(|(i, a)| (a.clone(), i as u32)).collect();
        Self {
            items,
            attrs,
            item_index,
            attr_index,
        }
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_attrs(&self) -> usize {
        self.attrs.len()
    }

    pub fn item_index(&self, external: u64) -> Option<u32> {
        self.item_index.get(&external).copied()
    }

    pub fn attr_index(&self, external: &str) -> Option<u32> {
        self.attr_index.get(external).copied()
    }

    pub fn item_external(&self, index: u32) -> u64 {
        self.items[index as usize]
    }

    pub fn attr_external(&self, index: u32) -> &str {
        &self.attrs[index as usize]
    }

    pub fn items(&self) -> &[u64] {
        &self.items
    }

    pub fn attrs(&self) -> &[String] {
        &self.attrs
    }
}

/// The binary item/attribute relation: sorted attribute indices per item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemAttributeTable {
    n_attrs: usize,
    attrs: Vec<Vec<u32>>,
}

impl ItemAttributeTable {
    pub fn new(n_attrs: usize, mut attrs: Vec<Vec<u32>>) -> crate::Result<Self> {
        for (item, list) in attrs.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if list.is_empty() {
                return Err(crate::AdsrError::DataIntegrity(format!("item {item} has no attribute")));
            }
            if let Some(&a) = list.iter().find(|&&a| a as usize >= n_attrs) {
                return Err(crate::AdsrError::DataIntegrity(format!(
                    "item {item} has attribute {a} outside [0, {n_attrs})"
                )));
            }
        }
        Ok(Self { n_attrs, attrs })
    }

    pub fn n_items(&self) -> usize {
        self.attrs.len()
    }

    pub fn n_attrs(&self) -> usize {
        self.n_attrs
    }

    pub fn attrs(&self, item: usize) -> &[u32] {
        &self.attrs[item]
    }

    pub fn has(&self, item: usize, attr: u32) -> bool {
        self.attrs[item].binary_search(&attr).is_ok()
    }

    /// Euclidean distance between the multi-hot attribute vectors of two items.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (x, y) = (&self.attrs[a], &self.attrs[b]);
        let (mut i, mut j, mut shared) = (0, 0, 0usize);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    shared += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        ((x.len() + y.len() - 2 * shared) as f64).sqrt()
    }

    pub fn multi_hot(&self, item: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_attrs];
        for &a in &self.attrs[item] {
            v[a as usize] = 1.0;
        }
        v
    }
}

/// Fixed-length windows stored contiguously; the last element of each
/// window is its target.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WindowSet {
    window: usize,
    users: Vec<u32>,
    items: Vec<u32>,
}

/// Borrowed view of one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSample<'a> {
    pub user: u32,
    items: &'a [u32],
}

impl<'a> WindowSample<'a> {
    /// Input item indices, oldest first; may contain [`PAD`].
    pub fn inputs(&self) -> &'a [u32] {
        &self.items[..self.items.len() - 1]
    }

    pub fn target(&self) -> u32 {
        self.items[self.items.len() - 1]
    }

    /// Attribute sets of the inputs (empty for padding).
    pub fn input_attrs(&self, table: &'a ItemAttributeTable) -> Vec<&'a [u32]> {
        self.inputs()
            .iter()
            .map(|&i| if i == PAD { &[][..] } else { table.attrs(i as usize) })
            .collect()
    }

    pub fn target_attrs(&self, table: &'a ItemAttributeTable) -> &'a [u32] {
        table.attrs(self.target() as usize)
    }
}

impl WindowSet {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            ..Self::default()
        }
    }

    pub(crate) fn from_parts(window: usize, users: Vec<u32>, items: Vec<u32>) -> crate::Result<Self> {
        if window < 2 || items.len() != users.len() * window {
            return Err(crate::AdsrError::DataIntegrity(format!(
                "window set of {} users and {} items does not tile windows of {window}",
                users.len(),
                items.len()
            )));
        }
        Ok(Self { window, users, items })
    }

    pub fn push(&mut self, user: u32, items: &[u32]) {
        assert_eq!(items.len(), self.window, "window length");
        self.users.push(user);
        self.items.extend_from_slice(items);
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn get(&self, i: usize) -> WindowSample<'_> {
        WindowSample {
            user: self.users[i],
            items: &self.items[i * self.window..(i + 1) * self.window],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WindowSample<'_>> {
        (0..self.len()).map(|i| self.get(i))
    }

    pub(crate) fn raw_users(&self) -> &[u32] {
        &self.users
    }

    pub(crate) fn raw_items(&self) -> &[u32] {
        &self.items
    }

    /// Keeps the windows whose index is listed, in the given order.
    pub fn select(&self, indices: &[usize]) -> WindowSet {
        let mut out = WindowSet::new(self.window);
        for &i in indices {
            let w = self.get(i);
            out.push(w.user, w.items);
        }
        out
    }
}

/// Counts reported after preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub attributes: usize,
}

#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub vocab: Vocabulary,
    pub attributes: ItemAttributeTable,
    pub train: WindowSet,
    pub valid: WindowSet,
    pub test: WindowSet,
    /// Users left after filtering.
    pub n_users: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = crate::AdsrError;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(crate::AdsrError::Config(format!("unknown split {other}"))),
        }
    }
}

impl SplitDataset {
    pub fn split(&self, split: Split) -> &WindowSet {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            users: self.n_users,
            items: self.vocab.n_items(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
            attributes: self.vocab.n_attrs(),
        }
    }
}
