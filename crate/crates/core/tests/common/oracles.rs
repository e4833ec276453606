// Naive reference implementations used to cross-check the library.
// They work on dense boolean attribute rows and recompute everything from
// scratch at every step.
#![allow(dead_code)]

/// Most relevant `m` items: repeatedly scan for the maximum, lowest index wins.
pub fn pool(rel: &[f64], m: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < m.min(rel.len()) {
        let mut best: Option<usize> = None;
        for i in 0..rel.len() {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|b| rel[i] > rel[b]) {
                best = Some(i);
            }
        }
        chosen.push(best.unwrap());
    }
    chosen
}

fn euclid(a: &[bool], b: &[bool]) -> f64 {
    let mut s = 0.0;
    for j in 0..a.len() {
        let d = a[j] as u8 as f64 - b[j] as u8 as f64;
        s += d * d;
    }
    s.sqrt()
}

/// Greedy attribute-aware selection. Returns `(item, score)` per step.
pub fn add(rel: &[f64], hot: &[Vec<bool>], u0: &[f64], lambda: f64, l: usize, m: usize, classic: bool) -> Vec<(usize, f64)> {
    let mut candidates = pool(rel, m);
    candidates.sort();
    let mut u = u0.to_vec();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for _ in 0..l {
        let mut best: Option<(usize, f64)> = None;
        for &i in &candidates {
            if out.iter().any(|&(s, _)| s == i) {
                continue;
            }
            let mut div = 0.0;
            for j in 0..u.len() {
                let v = hot[i][j] as u8 as f64;
                div += u[j] * if classic { v } else { 1.0 - v };
            }
            let score = lambda * rel[i] + (1.0 - lambda) * div;
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let Some((i, score)) = best else { break };
        out.push((i, score));
        for j in 0..u.len() {
            if hot[i][j] {
                u[j] = 0.0;
            }
        }
        if classic {
            let total: f64 = u.iter().sum();
            if total > 0.0 {
                for x in u.iter_mut() {
                    *x /= total;
                }
            }
        } else {
            let mx = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = u.iter().map(|x| (x - mx).exp()).collect();
            let total: f64 = e.iter().sum();
            u = e.iter().map(|x| x / total).collect();
        }
    }
    out
}

/// Greedy maximal marginal relevance; the first pick is by relevance alone.
pub fn mmr(rel: &[f64], hot: &[Vec<bool>], lambda: f64, l: usize, m: usize) -> Vec<(usize, f64)> {
    let mut candidates = pool(rel, m);
    candidates.sort();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for _ in 0..l {
        let mut best: Option<(usize, f64)> = None;
        for &i in &candidates {
            if out.iter().any(|&(s, _)| s == i) {
                continue;
            }
            let score = if out.is_empty() {
                rel[i]
            } else {
                let d = out.iter().map(|&(s, _)| euclid(&hot[i], &hot[s])).fold(f64::INFINITY, f64::min);
                lambda * rel[i] + (1.0 - lambda) * d
            };
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let Some(b) = best else { break };
        out.push(b);
    }
    out
}

/// Mean Euclidean distance over unordered pairs of the top `k`.
pub fn ild(list: &[usize], hot: &[Vec<bool>], k: usize) -> f64 {
    let top: Vec<usize> = list.iter().take(k).copied().collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..top.len() {
        for b in 0..top.len() {
            if a < b {
                total += euclid(&hot[top[a]], &hot[top[b]]);
                pairs += 1;
            }
        }
    }
    if pairs == 0 { 0.0 } else { total / pairs as f64 }
}

pub fn dis(list: &[usize], hot: &[Vec<bool>], k: usize) -> usize {
    let width = hot.first().map_or(0, |h| h.len());
    (0..width).filter(|&j| list.iter().take(k).any(|&i| hot[i][j])).count()
}

pub fn mrr(list: &[usize], target: usize, k: usize) -> f64 {
    for (pos, &i) in list.iter().enumerate() {
        if pos >= k {
            break;
        }
        if i == target {
            return 1.0 / (pos + 1) as f64;
        }
    }
    0.0
}

pub fn recall(list: &[usize], target: usize, k: usize) -> f64 {
    if list.iter().take(k).any(|&i| i == target) { 1.0 } else { 0.0 }
}

/// Converts dense rows to the library's sparse attribute lists.
pub fn sparse(hot: &[Vec<bool>]) -> Vec<Vec<u32>> {
    hot.iter()
        .map(|row| row.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j as u32).collect())
        .collect()
}
