//! Second-order biased random walks (node2vec).
//!
//! A walk that just moved `t -> v` picks the next node `x` among the
//! neighbors of `v` with unnormalized weight `1/p` when `x == t`, `1` when
//! `x` is adjacent to `t`, and `1/q` otherwise. Sampling uses alias tables,
//! either precomputed per directed edge or built on the fly.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::citegraph::Adjacency;
use crate::rng::{self, streams};

#[derive(Debug, Error, PartialEq)]
pub enum WalkError {
    #[error("shortest-path distance d_tx must be 0, 1 or 2 (got {0})")]
    InvalidDistance(u8),
    #[error("alias table needs at least one positive, finite weight")]
    NoPositiveWeight,
    #[error("invalid walk parameters: {0}")]
    InvalidParams(String),
    #[error("graph has no nodes")]
    EmptyGraph,
}

/// Unnormalized transition weight for a candidate at distance `d_tx` from
/// the previous node.
pub fn transition_weight(d_tx: u8, p: f64, q: f64) -> Result<f64, WalkError> {
    match d_tx {
        0 => Ok(1.0 / p),
        1 => Ok(1.0),
        2 => Ok(1.0 / q),
        d => Err(WalkError::InvalidDistance(d)),
    }
}

/// Walker–Vose alias table over `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Result<Self, WalkError> {
        let total: f64 = weights.iter().filter(|w| w.is_finite() && **w > 0.0).sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || !(total > 0.0) {
            return Err(WalkError::NoPositiveWeight);
        }
        let n = weights.len();
        let mut prob: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut alias: Vec<usize> = (0..n).collect();
        let mut small: Vec<usize> = Vec::new();
        let mut large: Vec<usize> = Vec::new();
        for (i, &p) in prob.iter().enumerate() {
            if p < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            alias[s] = l;
            prob[l] -= 1.0 - prob[s];
            if prob[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers are 1 up to rounding
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
            alias[i] = i;
        }
        Ok(Self { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }

    /// Probability mass the table assigns to each index.
    pub fn distribution(&self) -> Vec<f64> {
        let n = self.prob.len() as f64;
        let mut out = vec![0.0; self.prob.len()];
        for (i, (&p, &a)) in self.prob.iter().zip(&self.alias).enumerate() {
            out[i] += p / n;
            out[a] += (1.0 - p) / n;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AliasMode {
    /// One alias table per directed edge, built up front.
    #[default]
    Precomputed,
    /// Weights computed at every step; no per-edge memory.
    OnTheFly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WalkParams {
    pub p: f64,
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub seed: u64,
    #[serde(default)]
    pub alias_mode: AliasMode,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self { p: 1.0, q: 0.5, walk_length: 80, walks_per_node: 10, seed: 0, alias_mode: AliasMode::Precomputed }
    }
}

impl WalkParams {
    pub fn validate(&self) -> Result<(), WalkError> {
        if !(self.p > 0.0 && self.p.is_finite()) || !(self.q > 0.0 && self.q.is_finite()) {
            return Err(WalkError::InvalidParams(format!("p and q must be positive (p={}, q={})", self.p, self.q)));
        }
        if self.walk_length < 2 {
            return Err(WalkError::InvalidParams("walk_length must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WalkCorpus {
    pub walks: Vec<Vec<usize>>,
}

impl WalkCorpus {
    pub fn len(&self) -> usize {
        self.walks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.walks.is_empty()
    }

    /// One walk per line, space-separated node ids.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for w in &self.walks {
            let line: Vec<String> = w.iter().map(usize::to_string).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Samples node2vec walks over an adjacency structure.
pub struct Walker<'a> {
    adj: &'a Adjacency,
    params: WalkParams,
    edge_tables: Option<Vec<AliasTable>>,
}

impl<'a> Walker<'a> {
    pub fn new(adj: &'a Adjacency, params: WalkParams) -> Result<Self, WalkError> {
        params.validate()?;
        let edge_tables = match params.alias_mode {
            AliasMode::OnTheFly => None,
            AliasMode::Precomputed => {
                let mut tables = Vec::with_capacity(adj.arc_count());
                for t in 0..adj.node_count() {
                    for &v in adj.neighbors(t) {
                        let w = step_weights(adj, t, v, params.p, params.q);
                        // a sink `v` (directed mode) has no successors
                        tables.push(AliasTable::new(&w).unwrap_or(AliasTable { prob: vec![], alias: vec![] }));
                    }
                }
                Some(tables)
            }
        };
        Ok(Self { adj, params, edge_tables })
    }

    pub fn params(&self) -> &WalkParams {
        &self.params
    }

    /// Normalized next-step distribution over `neighbors(v)` after `t -> v`.
    pub fn step_distribution(&self, t: usize, v: usize) -> Vec<f64> {
        let w = step_weights(self.adj, t, v, self.params.p, self.params.q);
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    /// Draws the successor of `v` given the previous node `t`.
    pub fn next_node<R: Rng + ?Sized>(&self, t: usize, v: usize, rng: &mut R) -> Option<usize> {
        let nbrs = self.adj.neighbors(v);
        if nbrs.is_empty() {
            return None;
        }
        let pick = match (&self.edge_tables, self.adj.edge_index(t, v)) {
            (Some(tables), Some(e)) => tables[e].sample(rng),
            _ => {
                let w = step_weights(self.adj, t, v, self.params.p, self.params.q);
                sample_linear(&w, rng)
            }
        };
        Some(nbrs[pick])
    }

    /// One walk from `start`; the first hop is uniform over neighbors.
    pub fn walk<R: Rng + ?Sized>(&self, start: usize, rng: &mut R) -> Vec<usize> {
        let mut walk = Vec::with_capacity(self.params.walk_length);
        walk.push(start);
        let first = self.adj.neighbors(start);
        if first.is_empty() {
            return walk;
        }
        walk.push(first[rng.random_range(0..first.len())]);
        while walk.len() < self.params.walk_length {
            let (t, v) = (walk[walk.len() - 2], walk[walk.len() - 1]);
            match self.next_node(t, v, rng) {
                Some(x) => walk.push(x),
                None => break,
            }
        }
        walk
    }

    /// `walks_per_node` passes; each pass visits every node in a shuffled
    /// order. Every walk owns the RNG stream keyed by `(pass, start)`, so the
    /// corpus is identical whether generated serially or in parallel.
    pub fn generate(&self) -> WalkCorpus {
        let n = self.adj.node_count();
        let seed = self.params.seed;
        let mut walks = Vec::with_capacity(n * self.params.walks_per_node);
        let mut isolated = 0usize;
        for pass in 0..self.params.walks_per_node {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::stream(seed, streams::WALK_ORDER, pass as u64));
            let batch: Vec<Vec<usize>> = order
                .par_iter()
                .map(|&start| {
                    let mut r = rng::stream(seed, streams::WALKS, rng::key2(pass as u64, start as u64));
                    self.walk(start, &mut r)
                })
                .collect();
            isolated += batch.iter().filter(|w| w.len() == 1).count();
            walks.extend(batch);
        }
        if isolated > 0 {
            log::info!("{isolated} walk(s) started at isolated nodes and have length 1");
        }
        WalkCorpus { walks }
    }
}

fn step_weights(adj: &Adjacency, t: usize, v: usize, p: f64, q: f64) -> Vec<f64> {
    adj.neighbors(v)
        .iter()
        .map(|&x| {
            let d = if x == t {
                0
            } else if adj.has_edge(t, x) || (adj.is_directed() && adj.has_edge(x, t)) {
                1
            } else {
                2
            };
            transition_weight(d, p, q).unwrap_or(0.0)
        })
        .collect()
}

fn sample_linear<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Convenience wrapper: build a [`Walker`] and generate its corpus.
pub fn generate_walks(adj: &Adjacency, params: &WalkParams) -> Result<WalkCorpus, WalkError> {
    if adj.node_count() == 0 {
        return Err(WalkError::EmptyGraph);
    }
    Ok(Walker::new(adj, params.clone())?.generate())
}
