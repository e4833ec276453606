//! Ranking accuracy, list diversity and attribute-prediction accuracy.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::ItemAttributeTable;
use crate::{AdsrError, Result};

/// Cut-offs reported by default.
pub const DEFAULT_KS: [usize; 2] = [10, 20];

fn rank_of(list: &[usize], target: usize, k: usize) -> Option<usize> {
    list.iter().take(k).position(|&i| i == target).map(|p| p + 1)
}

/// `1/rank` when the target is within the top `k`, else 0.
pub fn mrr_at_k(list: &[usize], target: usize, k: usize) -> f64 {
    rank_of(list, target, k).map_or(0.0, |r| 1.0 / r as f64)
}

/// 1 when the target is within the top `k`, else 0.
pub fn recall_at_k(list: &[usize], target: usize, k: usize) -> f64 {
    rank_of(list, target, k).map_or(0.0, |_| 1.0)
}

/// Mean attribute distance over unordered pairs of the top `k`.
pub fn ild(list: &[usize], table: &ItemAttributeTable, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(AdsrError::Config(format!("ILD needs k >= 2, got {k}")));
    }
    let top = &list[..k.min(list.len())];
    let n = top.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += table.distance(top[i], top[j]);
        }
    }
    Ok(2.0 * total / (n * (n - 1)) as f64)
}

/// Number of distinct attributes covered by the top `k`.
pub fn dis(list: &[usize], table: &ItemAttributeTable, k: usize) -> usize {
    let mut seen = BTreeSet::new();
    for &i in list.iter().take(k) {
        seen.extend(table.attrs(i).iter().copied());
    }
    seen.len()
}

/// One evaluated window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub window: usize,
    pub ranked: Vec<usize>,
    pub target: usize,
    pub target_attrs: Vec<u32>,
    /// Attribute with the highest raw AP score, when the model has an AP.
    pub ap_top: Option<usize>,
}

/// Fraction of records whose predicted attribute is one of the target's.
/// Records without a prediction are skipped; `None` when none has one.
pub fn ap_accuracy(records: &[EvalRecord]) -> Option<f64> {
    let mut n = 0usize;
    let mut hit = 0usize;
    for r in records {
        if let Some(a) = r.ap_top {
            n += 1;
            hit += r.target_attrs.contains(&(a as u32)) as usize;
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub k: usize,
    pub mrr: f64,
    pub recall: f64,
    pub ild: f64,
    pub dis: f64,
}

/// Means over all records for each cut-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub records: usize,
    pub cutoffs: Vec<CutoffMetrics>,
    pub ap_accuracy: Option<f64>,
}

impl MetricsReport {
    pub fn from_records(records: &[EvalRecord], table: &ItemAttributeTable, ks: &[usize]) -> Result<Self> {
        if records.is_empty() {
            return Err(AdsrError::EmptyDataset("evaluation (no records)".into()));
        }
        let mut cutoffs = Vec::with_capacity(ks.len());
        for &k in ks {
            if k < 2 {
                return Err(AdsrError::Config(format!("cut-off {k} below 2")));
            }
            let per: Vec<[f64; 4]> = records
                .par_iter()
                .map(|r| {
                    Ok([
                        mrr_at_k(&r.ranked, r.target, k),
                        recall_at_k(&r.ranked, r.target, k),
                        ild(&r.ranked, table, k)?,
                        dis(&r.ranked, table, k) as f64,
                    ])
                })
                .collect::<Result<_>>()?;
            // sequential sum keeps the result independent of thread count
            let mut sums = [0.0; 4];
            for row in &per {
                for (s, v) in sums.iter_mut().zip(row) {
                    *s += v;
                }
            }
            let n = records.len() as f64;
            cutoffs.push(CutoffMetrics {
                k,
                mrr: sums[0] / n,
                recall: sums[1] / n,
                ild: sums[2] / n,
                dis: sums[3] / n,
            });
        }
        Ok(Self {
            records: records.len(),
            cutoffs,
            ap_accuracy: ap_accuracy(records),
        })
    }

    pub fn at(&self, k: usize) -> Option<&CutoffMetrics> {
        self.cutoffs.iter().find(|c| c.k == k)
    }

    /// Column names in output order: all MRR, then Recall, ILD, Dis, then AP_Acc.
    pub fn column_names(&self) -> Vec<String> {
        let mut cols = Vec::new();
        for name in ["MRR", "Recall", "ILD", "Dis"] {
            for c in &self.cutoffs {
                cols.push(format!("{name}@{}", c.k));
            }
        }
        cols.push("AP_Acc".into());
        cols
    }

    /// Values matching [`MetricsReport::column_names`]; a missing AP accuracy is `None`.
    pub fn values(&self) -> Vec<Option<f64>> {
        let mut out = Vec::new();
        for f in [
            |c: &CutoffMetrics| c.mrr,
            |c: &CutoffMetrics| c.recall,
            |c: &CutoffMetrics| c.ild,
            |c: &CutoffMetrics| c.dis,
        ] {
            out.extend(self.cutoffs.iter().map(|c| Some(f(c))));
        }
        out.push(self.ap_accuracy);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ItemAttributeTable {
        ItemAttributeTable::new(3, vec![vec![0], vec![0], vec![1], vec![2], vec![0, 1]]).unwrap()
    }

    #[test]
    fn reciprocal_rank_examples() {
        let list = [5, 6, 7, 8, 9];
        assert_eq!(mrr_at_k(&list, 5, 10), 1.0);
        assert_eq!(mrr_at_k(&list, 8, 10), 0.25);
        assert_eq!(mrr_at_k(&list, 9, 3), 0.0);
        assert_eq!(recall_at_k(&list, 9, 5), 1.0);
        assert_eq!(recall_at_k(&list, 4, 5), 0.0);
    }

    #[test]
    fn ild_examples() {
        let t = table();
        assert_eq!(ild(&[0, 1], &t, 2).unwrap(), 0.0);
        assert!((ild(&[0, 2], &t, 2).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!(ild(&[0, 2], &t, 1).is_err());
    }

    #[test]
    fn dis_examples() {
        let t = table();
        assert_eq!(dis(&[0, 1, 2, 3], &t, 4), 3);
        assert_eq!(dis(&[0, 1], &t, 2), 1);
        assert_eq!(dis(&[0, 2, 3], &t, 3), 3);
    }

    #[test]
    fn ap_accuracy_counts_membership() {
        let rec = |ap, attrs: Vec<u32>| EvalRecord {
            window: 0,
            ranked: vec![0, 1],
            target: 0,
            target_attrs: attrs,
            ap_top: Some(ap),
        };
        let r = [rec(1, vec![0, 1]), rec(2, vec![0]), rec(0, vec![0])];
        assert!((ap_accuracy(&r).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }
}
