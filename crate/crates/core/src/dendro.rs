//! Ward agglomerative clustering and the inconsistency-coefficient cut.
//!
//! Leaves are ids `0..n`; the merge at step `i` creates cluster `n + i`.
//! Heights follow the usual convention where two singletons merge at their
//! Euclidean distance.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DendroError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("points have inconsistent dimensions")]
    Ragged,
    #[error("inconsistency depth must be at least 1")]
    InvalidDepth,
    #[error("cut fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("merge record format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    leaves: usize,
    merges: Vec<Merge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inconsistency {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl ClusterAssignment {
    /// Relabels arbitrary ids to `0..k` in order of first appearance.
    pub fn from_raw(raw: &[usize]) -> Self {
        let mut map = HashMap::new();
        let labels: Vec<usize> = raw
            .iter()
            .map(|r| {
                let next = map.len();
                *map.entry(*r).or_insert(next)
            })
            .collect();
        Self { k: map.len(), labels }
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &c)| c == cluster).map(|(i, _)| i).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

impl Dendrogram {
    pub fn from_merges(leaves: usize, merges: Vec<Merge>) -> Result<Self, DendroError> {
        if leaves < 2 || merges.len() != leaves - 1 {
            return Err(DendroError::Format(format!("{} merges for {leaves} leaves", merges.len())));
        }
        for (i, m) in merges.iter().enumerate() {
            if m.left >= leaves + i || m.right >= leaves + i || m.left == m.right {
                return Err(DendroError::Format(format!("merge {i} references an unknown cluster")));
            }
        }
        Ok(Self { leaves, merges })
    }

    pub fn leaves(&self) -> usize {
        self.leaves
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    fn children(&self, merge: usize) -> [usize; 2] {
        [self.merges[merge].left, self.merges[merge].right]
    }

    /// Four columns per line: `left right height size`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.merges {
            let _ = writeln!(out, "{} {} {} {}", m.left, m.right, m.height, m.size);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DendroError> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || DendroError::Format(format!("line {}: expected `left right height size`", i + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            merges.push(Merge {
                left: f[0].parse().map_err(|_| bad())?,
                right: f[1].parse().map_err(|_| bad())?,
                height: f[2].parse().map_err(|_| bad())?,
                size: f[3].parse().map_err(|_| bad())?,
            });
        }
        Self::from_merges(merges.len() + 1, merges)
    }

    /// Leaf order of a left-to-right traversal (for plotting).
    pub fn leaf_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.leaves);
        let mut stack = vec![self.leaves + self.merges.len() - 1];
        while let Some(c) = stack.pop() {
            if c < self.leaves {
                out.push(c);
            } else {
                let [l, r] = self.children(c - self.leaves);
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    /// Plot coordinates of each merge: `(x_left, x_right, y_left, y_right, y)`,
    /// with leaves at integer x positions and y the chosen height per merge.
    pub fn plot_segments(&self, y_of_merge: &[f64]) -> Vec<[f64; 5]> {
        let mut x = vec![0.0; self.leaves + self.merges.len()];
        let mut y = vec![0.0; self.leaves + self.merges.len()];
        for (pos, leaf) in self.leaf_order().into_iter().enumerate() {
            x[leaf] = pos as f64;
        }
        let mut out = Vec::with_capacity(self.merges.len());
        for (i, m) in self.merges.iter().enumerate() {
            let id = self.leaves + i;
            x[id] = 0.5 * (x[m.left] + x[m.right]);
            y[id] = y_of_merge[i];
            out.push([x[m.left], x[m.right], y[m.left], y[m.right], y[id]]);
        }
        out
    }
}

/// Ward linkage on the rows of `points`.
///
/// Uses the Lance–Williams update on squared distances with a cached
/// nearest neighbor per active cluster. Among equal distances the pair with
/// the lowest `(smaller id, larger id)` wins.
pub fn ward_linkage(points: &[Vec<f64>]) -> Result<Dendrogram, DendroError> {
    let n = points.len();
    if n < 2 {
        return Err(DendroError::TooFewPoints(n));
    }
    let dim = points[0].len();
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(DendroError::Ragged);
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(DendroError::NonFinite(i));
        }
    }

    let mut d2 = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i * n + j] = s;
            d2[j * n + i] = s;
        }
    }
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];

    // (distance, low id, high id) ordering
    let key = |d: f64, a: usize, b: usize| (d, a.min(b), a.max(b));
    let less = |x: (f64, usize, usize), y: (f64, usize, usize)| match x.0.total_cmp(&y.0) {
        std::cmp::Ordering::Equal => (x.1, x.2) < (y.1, y.2),
        o => o == std::cmp::Ordering::Less,
    };

    let mut nn = vec![usize::MAX; n];
    let recompute = |i: usize, nn: &mut Vec<usize>, active: &[bool], id: &[usize], d2: &[f64]| {
        let mut best: Option<(f64, usize, usize)> = None;
        let mut arg = usize::MAX;
        for j in (0..n).filter(|&j| j != i && active[j]) {
            let k = key(d2[i * n + j], id[i], id[j]);
            if best.is_none_or(|b| less(k, b)) {
                best = Some(k);
                arg = j;
            }
        }
        nn[i] = arg;
    };
    for i in 0..n {
        recompute(i, &mut nn, &active, &id, &d2);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        let mut pair = (usize::MAX, usize::MAX);
        for i in (0..n).filter(|&i| active[i] && nn[i] != usize::MAX) {
            let k = key(d2[i * n + nn[i]], id[i], id[nn[i]]);
            if best.is_none_or(|b| less(k, b)) {
                best = Some(k);
                pair = (i, nn[i]);
            }
        }
        let (a, b) = pair;
        let dab = d2[a * n + b];
        let (na, nb) = (size[a] as f64, size[b] as f64);
        merges.push(Merge {
            left: id[a].min(id[b]),
            right: id[a].max(id[b]),
            height: dab.max(0.0).sqrt(),
            size: size[a] + size[b],
        });
        // merged cluster lives in slot a
        active[b] = false;
        for k in (0..n).filter(|&k| active[k] && k != a) {
            let nk = size[k] as f64;
            let v = ((na + nk) * d2[a * n + k] + (nb + nk) * d2[b * n + k] - nk * dab) / (na + nb + nk);
            d2[a * n + k] = v;
            d2[k * n + a] = v;
        }
        size[a] += size[b];
        id[a] = n + step;
        for i in (0..n).filter(|&i| active[i] && i != a) {
            if nn[i] == a || nn[i] == b {
                recompute(i, &mut nn, &active, &id, &d2);
            } else if less(key(d2[i * n + a], id[i], id[a]), key(d2[i * n + nn[i]], id[i], id[nn[i]])) {
                nn[i] = a;
            }
        }
        recompute(a, &mut nn, &active, &id, &d2);
    }
    Ok(Dendrogram { leaves: n, merges })
}

/// Inconsistency coefficient of every merge using the merges within
/// `depth` levels below it (the merge itself is level 1). The standard
/// deviation uses the `n - 1` denominator.
pub fn inconsistency(d: &Dendrogram, depth: usize) -> Result<Vec<Inconsistency>, DendroError> {
    if depth == 0 {
        return Err(DendroError::InvalidDepth);
    }
    let n = d.leaves;
    let mut out = Vec::with_capacity(d.merges.len());
    for (i, m) in d.merges.iter().enumerate() {
        let mut heights = Vec::new();
        let mut frontier = vec![i];
        for _ in 0..depth {
            let mut next = Vec::new();
            for &j in &frontier {
                heights.push(d.merges[j].height);
                next.extend(d.children(j).into_iter().filter(|&c| c >= n).map(|c| c - n));
            }
            frontier = next;
            if frontier.is_empty() {
                break;
            }
        }
        let count = heights.len();
        let mean = heights.iter().sum::<f64>() / count as f64;
        let std = if count > 1 {
            (heights.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        let value = if count > 1 && std > 0.0 { (m.height - mean) / std } else { 0.0 };
        out.push(Inconsistency { mean, std, count, value });
    }
    Ok(out)
}

/// Flat clusters from per-merge inconsistency values: a subtree becomes one
/// cluster when every merge in it has value `<= threshold`; leaves outside
/// any such subtree are singletons.
pub fn cut_at_threshold(d: &Dendrogram, values: &[f64], threshold: f64) -> ClusterAssignment {
    let n = d.leaves;
    let mut max_below = vec![0.0f64; d.merges.len()];
    for i in 0..d.merges.len() {
        let mut m = values[i];
        for c in d.children(i) {
            if c >= n {
                m = m.max(max_below[c - n]);
            }
        }
        max_below[i] = m;
    }
    let mut raw = vec![usize::MAX; n];
    let mut stack = vec![n + d.merges.len() - 1];
    let mut next_cluster = 0;
    while let Some(c) = stack.pop() {
        if c < n {
            raw[c] = next_cluster;
            next_cluster += 1;
        } else if max_below[c - n] <= threshold {
            let mut sub = vec![c];
            while let Some(s) = sub.pop() {
                if s < n {
                    raw[s] = next_cluster;
                } else {
                    sub.extend(d.children(s - n));
                }
            }
            next_cluster += 1;
        } else {
            stack.extend(d.children(c - n));
        }
    }
    ClusterAssignment::from_raw(&raw)
}

/// Inconsistency cut with threshold `fraction x max inconsistency` (depth 2).
pub fn cut_by_inconsistency(d: &Dendrogram, fraction: f64) -> Result<ClusterAssignment, DendroError> {
    cut_by_inconsistency_depth(d, fraction, 2)
}

pub fn cut_by_inconsistency_depth(d: &Dendrogram, fraction: f64, depth: usize) -> Result<ClusterAssignment, DendroError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DendroError::InvalidFraction(fraction));
    }
    let values: Vec<f64> = inconsistency(d, depth)?.iter().map(|r| r.value).collect();
    let max = values.iter().copied().fold(0.0, f64::max);
    Ok(cut_at_threshold(d, &values, fraction * max))
}

/// Cuts every merge above `fraction x max height` (distance criterion).
pub fn cut_by_height(d: &Dendrogram, fraction: f64) -> Result<ClusterAssignment, DendroError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DendroError::InvalidFraction(fraction));
    }
    let heights: Vec<f64> = d.merges.iter().map(|m| m.height).collect();
    let max = heights.iter().copied().fold(0.0, f64::max);
    Ok(cut_at_threshold(d, &heights, fraction * max))
}

/// Normalized mutual information with arithmetic-mean normalization.
pub fn normalized_mutual_information(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "label vectors differ in length");
    let n = a.len() as f64;
    if a.is_empty() {
        return 1.0;
    }
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut pa: HashMap<usize, f64> = HashMap::new();
    let mut pb: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *pa.entry(x).or_default() += 1.0;
        *pb.entry(y).or_default() += 1.0;
    }
    let entropy = |m: &HashMap<usize, f64>| -> f64 { m.values().map(|c| -(c / n) * (c / n).ln()).sum() };
    let (ha, hb) = (entropy(&pa), entropy(&pb));
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    let mi: f64 = joint.iter().map(|(&(x, y), &c)| (c / n) * ((c * n) / (pa[&x] * pb[&y])).ln()).sum();
    (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
}
