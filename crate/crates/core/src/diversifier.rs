//! Greedy re-rankers: the attribute-aware diversification decoder and MMR.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::ItemAttributeTable;
use crate::{AdsrError, Result};

/// Importance update rule after each selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AddMode {
    /// `S_div = Σ_j U_j (1 − V(v|c_j))`; covered entries of `U` are zeroed and
    /// the vector passed through a softmax.
    #[default]
    Literal,
    /// `S_div = Σ_j U_j V(v|c_j)`, the marginal utility of covering the item's
    /// attributes; covered entries are zeroed and `U` renormalized by its sum.
    Classic,
}

impl FromStr for AddMode {
    type Err = AdsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(AddMode::Literal),
            "classic" => Ok(AddMode::Classic),
            other => Err(AdsrError::Config(format!("unknown add mode {other}"))),
        }
    }
}

impl fmt::Display for AddMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AddMode::Literal => "literal",
            AddMode::Classic => "classic",
        })
    }
}

/// One greedy selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub item: usize,
    pub relevance: f64,
    pub diversity: f64,
    pub score: f64,
    /// Attribute importance before this selection (empty for MMR and for the
    /// relevance-only shortcut).
    pub importance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecommendationList {
    pub steps: Vec<SelectionStep>,
}

impl RecommendationList {
    pub fn items(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.item).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Item indices ordered by relevance descending, ties to the lower index.
pub fn rank_by_relevance(s_rel: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..s_rel.len()).collect();
    idx.sort_by(|&a, &b| s_rel[b].total_cmp(&s_rel[a]).then(a.cmp(&b)));
    idx
}

/// The `k` most relevant items.
pub fn top_k(s_rel: &[f64], k: usize) -> Vec<usize> {
    if k >= s_rel.len() {
        return rank_by_relevance(s_rel);
    }
    if k == 0 {
        return Vec::new();
    }
    // partial selection keeps this cheap for large catalogues
    let mut idx: Vec<usize> = (0..s_rel.len()).collect();
    let cmp = |&a: &usize, &b: &usize| s_rel[b].total_cmp(&s_rel[a]).then(a.cmp(&b));
    idx.select_nth_unstable_by(k - 1, cmp);
    idx.truncate(k);
    idx.sort_by(cmp);
    idx
}

/// Candidate items with their relevance, most relevant first (ties to the
/// lower index).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidatePool {
    items: Vec<usize>,
    relevance: Vec<f64>,
}

impl CandidatePool {
    /// The `m` most relevant items of a dense score vector.
    pub fn from_scores(s_rel: &[f64], m: usize) -> Self {
        let items = top_k(s_rel, m);
        let relevance = items.iter().map(|&i| s_rel[i]).collect();
        Self { items, relevance }
    }

    /// Builds a pool from `(item, relevance)` pairs; duplicate items are an error.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Result<Self> {
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut seen = std::collections::HashSet::new();
        if let Some(p) = pairs.iter().find(|p| !seen.insert(p.0)) {
            return Err(AdsrError::Contract(format!("item {} listed twice", p.0)));
        }
        Ok(Self {
            items: pairs.iter().map(|p| p.0).collect(),
            relevance: pairs.iter().map(|p| p.1).collect(),
        })
    }

    /// Keeps the `m` most relevant entries.
    pub fn truncated(&self, m: usize) -> Self {
        Self {
            items: self.items.iter().take(m).copied().collect(),
            relevance: self.relevance.iter().take(m).copied().collect(),
        }
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn relevance(&self) -> &[f64] {
        &self.relevance
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn check_args(lambda: f64, l: usize, pool: &CandidatePool) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(AdsrError::Config(format!("lambda {lambda} not in [0, 1]")));
    }
    if l == 0 {
        return Err(AdsrError::Config("list length must be at least 1".into()));
    }
    if pool.is_empty() {
        return Err(AdsrError::Contract("empty candidate pool".into()));
    }
    Ok(())
}

fn check_pool_size(l: usize, pool_size: usize) -> Result<()> {
    if l > pool_size {
        return Err(AdsrError::Config(format!("list length {l} exceeds candidate pool {pool_size}")));
    }
    Ok(())
}

fn relevance_only(pool: &CandidatePool, l: usize) -> RecommendationList {
    RecommendationList {
        steps: pool
            .items
            .iter()
            .zip(&pool.relevance)
            .take(l)
            .map(|(&item, &rel)| SelectionStep {
                item,
                relevance: rel,
                diversity: 0.0,
                score: rel,
                importance: Vec::new(),
            })
            .collect(),
    }
}

/// Picks the best remaining slot; ties go to the lower item index.
fn pick(pool: &CandidatePool, taken: &[bool], mut score: impl FnMut(usize, usize, f64) -> f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (slot, (&item, &rel)) in pool.items.iter().zip(&pool.relevance).enumerate() {
        if taken[slot] {
            continue;
        }
        let s = score(slot, item, rel);
        let better = match best {
            None => true,
            Some((b_slot, b_s)) => s > b_s || (s == b_s && item < pool.items[b_slot]),
        };
        if better {
            best = Some((slot, s));
        }
    }
    best
}

/// Attribute-coverage diversity of `item` under importance `u`.
pub fn diversity_score(u: &[f64], table: &ItemAttributeTable, item: usize, mode: AddMode) -> f64 {
    match mode {
        AddMode::Literal => {
            let own = table.attrs(item);
            let mut s = 0.0;
            for (j, &w) in u.iter().enumerate() {
                if own.binary_search(&(j as u32)).is_err() {
                    s += w;
                }
            }
            s
        }
        AddMode::Classic => table.attrs(item).iter().map(|&j| u[j as usize]).sum(),
    }
}

/// Zeroes the attributes of `item` in `u` and applies the mode's renormalization.
pub fn update_importance(u: &mut [f64], table: &ItemAttributeTable, item: usize, mode: AddMode) {
    for &j in table.attrs(item) {
        u[j as usize] = 0.0;
    }
    match mode {
        AddMode::Literal => {
            let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in u.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            u.iter_mut().for_each(|v| *v /= total);
        }
        AddMode::Classic => {
            let total: f64 = u.iter().sum();
            if total > 0.0 {
                u.iter_mut().for_each(|v| *v /= total);
            }
        }
    }
}

/// Builds a list of length `l` by repeatedly taking
/// `argmax λ·S_rel + (1−λ)·S_div` over the `pool_size` most relevant items.
pub fn add_rerank(
    s_rel: &[f64],
    importance: &[f64],
    table: &ItemAttributeTable,
    lambda: f64,
    l: usize,
    mode: AddMode,
    pool_size: usize,
) -> Result<RecommendationList> {
    check_pool_size(l, pool_size)?;
    add_rerank_pool(&CandidatePool::from_scores(s_rel, pool_size), importance, table, lambda, l, mode)
}

/// [`add_rerank`] over a prepared candidate pool.
pub fn add_rerank_pool(
    pool: &CandidatePool,
    importance: &[f64],
    table: &ItemAttributeTable,
    lambda: f64,
    l: usize,
    mode: AddMode,
) -> Result<RecommendationList> {
    check_args(lambda, l, pool)?;
    if lambda == 1.0 {
        return Ok(relevance_only(pool, l));
    }
    if importance.len() != table.n_attrs() {
        return Err(AdsrError::Contract(format!(
            "importance has {} entries for {} attributes",
            importance.len(),
            table.n_attrs()
        )));
    }
    let mut u = importance.to_vec();
    let mut taken = vec![false; pool.len()];
    let mut list = RecommendationList::default();
    while list.len() < l {
        let Some((slot, score)) = pick(pool, &taken, |_, item, rel| {
            lambda * rel + (1.0 - lambda) * diversity_score(&u, table, item, mode)
        }) else {
            break;
        };
        taken[slot] = true;
        let item = pool.items[slot];
        list.steps.push(SelectionStep {
            item,
            relevance: pool.relevance[slot],
            diversity: diversity_score(&u, table, item, mode),
            score,
            importance: u.clone(),
        });
        update_importance(&mut u, table, item, mode);
    }
    Ok(list)
}

/// Maximal marginal relevance with distance `d` between attribute vectors:
/// `argmax λ·S_rel + (1−λ)·min_{j∈R} d(i, j)`, the first pick by relevance.
pub fn mmr_rerank(s_rel: &[f64], table: &ItemAttributeTable, lambda: f64, l: usize, pool_size: usize) -> Result<RecommendationList> {
    check_pool_size(l, pool_size)?;
    mmr_rerank_pool(&CandidatePool::from_scores(s_rel, pool_size), table, lambda, l)
}

/// [`mmr_rerank`] over a prepared candidate pool.
pub fn mmr_rerank_pool(pool: &CandidatePool, table: &ItemAttributeTable, lambda: f64, l: usize) -> Result<RecommendationList> {
    check_args(lambda, l, pool)?;
    if lambda == 1.0 {
        return Ok(relevance_only(pool, l));
    }
    let mut taken = vec![false; pool.len()];
    // running minimum distance to the selected set, per pool slot
    let mut min_dist = vec![0.0; pool.len()];
    let mut list = RecommendationList::default();
    while list.len() < l {
        let first = list.is_empty();
        let Some((slot, score)) = pick(pool, &taken, |k, _, rel| {
            if first {
                rel
            } else {
                lambda * rel + (1.0 - lambda) * min_dist[k]
            }
        }) else {
            break;
        };
        taken[slot] = true;
        let item = pool.items[slot];
        list.steps.push(SelectionStep {
            item,
            relevance: pool.relevance[slot],
            diversity: min_dist[slot],
            score,
            importance: Vec::new(),
        });
        for (k, &other) in pool.items.iter().enumerate() {
            let d = table.distance(item, other);
            min_dist[k] = if first { d } else { min_dist[k].min(d) };
        }
    }
    Ok(list)
}
