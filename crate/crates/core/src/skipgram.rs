//! Skip-gram with negative sampling over a walk corpus.
//!
//! Every node has an input vector (the embedding) and a context vector.
//! For a center node `u` and a context node `v` inside the window the pair
//! loss is `-ln σ(u·v) - Σ ln σ(-u·n)` over `k` negatives `n` drawn from the
//! unigram distribution raised to 3/4.

use std::cell::Cell;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, streams};
use crate::walker::{AliasTable, WalkCorpus};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("walk corpus is empty")]
    EmptyCorpus,
    #[error("invalid embedding parameters: {0}")]
    InvalidParams(String),
    #[error("walk references node {node} but only {count} nodes exist")]
    NodeOutOfRange { node: usize, count: usize },
    #[error("embedding file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Single thread, bit-reproducible.
    #[default]
    Deterministic,
    /// Lock-free parallel updates; rows may be overwritten concurrently.
    Parallel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub dimension: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: TrainMode,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        Self { dimension: 128, window: 10, negatives: 5, epochs: 5, initial_lr: 0.025, seed: 0, mode: TrainMode::Deterministic }
    }
}

impl EmbeddingParams {
    fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dimension == 0 || self.window == 0 || self.negatives == 0 {
            return Err(EmbeddingError::InvalidParams("dimension, window and negatives must be at least 1".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(EmbeddingError::InvalidParams("initial_lr must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major `node_count x dimension` matrix of node vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    dimension: usize,
    data: Vec<f64>,
}

impl Embedding {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dimension = rows.first().map_or(0, Vec::len);
        Self { dimension, data: rows.iter().flatten().copied().collect() }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn node_count(&self) -> usize {
        self.data.len().checked_div(self.dimension).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dimension.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        let (x, y) = (self.row(a), self.row(b));
        let nx = dot(x, x).sqrt();
        let ny = dot(y, y).sqrt();
        if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            dot(x, y) / (nx * ny)
        }
    }

    /// Copy with every row scaled to unit length (zero rows untouched).
    pub fn normalized(&self) -> Embedding {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.dimension.max(1)) {
            let n = dot(row, row).sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        Embedding { dimension: self.dimension, data }
    }

    /// Text dump: `node_count dimension`, then `label v1 .. vd` per node.
    pub fn write_text<W: Write>(&self, labels: &[String], mut out: W) -> Result<(), EmbeddingError> {
        if labels.len() != self.node_count() {
            return Err(EmbeddingError::Format(format!("{} labels for {} rows", labels.len(), self.node_count())));
        }
        writeln!(out, "{} {}", self.node_count(), self.dimension)?;
        for (label, row) in labels.iter().zip(self.rows()) {
            write!(out, "{label}")?;
            for v in row {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Reads [`Embedding::write_text`] output; returns labels and rows.
    pub fn read_text<R: BufRead>(input: R) -> Result<(Vec<String>, Embedding), EmbeddingError> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| EmbeddingError::Format("missing header".into()))??;
        let mut it = header.split_whitespace().map(str::parse::<usize>);
        let (n, d) = match (it.next(), it.next()) {
            (Some(Ok(n)), Some(Ok(d))) => (n, d),
            _ => return Err(EmbeddingError::Format("header must be `node_count dimension`".into())),
        };
        let mut labels = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * d);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let label = parts.next().unwrap_or_default().to_string();
            let vals: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| EmbeddingError::Format(format!("line {}: {e}", lineno + 2)))?;
            if vals.len() != d {
                return Err(EmbeddingError::Format(format!("line {}: expected {d} values", lineno + 2)));
            }
            labels.push(label);
            data.extend(vals);
        }
        if labels.len() != n {
            return Err(EmbeddingError::Format(format!("expected {n} rows, found {}", labels.len())));
        }
        Ok((labels, Embedding { dimension: d, data }))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(x)`, computed without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    let x = x.clamp(-700.0, 700.0);
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Negative-sampling loss of one positive pair and its negatives.
pub fn pair_loss(u: &[f64], v: &[f64], negatives: &[&[f64]]) -> f64 {
    neg_log_sigmoid(dot(u, v)) + negatives.iter().map(|n| neg_log_sigmoid(-dot(u, n))).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Analytic gradient of [`pair_loss`].
pub fn pair_gradients(u: &[f64], v: &[f64], negatives: &[&[f64]]) -> PairGradients {
    let gpos = -sigmoid(-dot(u, v));
    let mut gu: Vec<f64> = v.iter().map(|x| gpos * x).collect();
    let gv: Vec<f64> = u.iter().map(|x| gpos * x).collect();
    let mut gn = Vec::with_capacity(negatives.len());
    for n in negatives {
        let s = sigmoid(dot(u, n));
        for (g, x) in gu.iter_mut().zip(n.iter()) {
            *g += s * x;
        }
        gn.push(u.iter().map(|x| s * x).collect());
    }
    PairGradients { u: gu, v: gv, negatives: gn }
}

/// Compares [`pair_gradients`] with central differences of step `h` on a
/// random `dimension`-dim pair with `k` negatives. Returns the max relative
/// error `|a - f| / max(|a|, |f|, 1e-8)` over all coordinates.
pub fn gradient_check(dimension: usize, k: usize, h: f64, seed: u64) -> f64 {
    let mut rng = rng::stream(seed, "gradcheck", 0);
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let mut vecs: Vec<Vec<f64>> = (0..k + 2).map(|_| draw(dimension)).collect();
    let analytic = {
        let negs: Vec<&[f64]> = vecs[2..].iter().map(Vec::as_slice).collect();
        pair_gradients(&vecs[0], &vecs[1], &negs)
    };
    let flat_analytic: Vec<f64> = analytic
        .u
        .iter()
        .chain(&analytic.v)
        .chain(analytic.negatives.iter().flatten())
        .copied()
        .collect();
    let loss = |vecs: &Vec<Vec<f64>>| {
        let negs: Vec<&[f64]> = vecs[2..].iter().map(Vec::as_slice).collect();
        pair_loss(&vecs[0], &vecs[1], &negs)
    };
    let mut worst: f64 = 0.0;
    for (flat, a) in flat_analytic.iter().enumerate() {
        let (which, coord) = (flat / dimension, flat % dimension);
        let orig = vecs[which][coord];
        vecs[which][coord] = orig + h;
        let up = loss(&vecs);
        vecs[which][coord] = orig - h;
        let down = loss(&vecs);
        vecs[which][coord] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

/// Draws negatives from the corpus unigram distribution raised to 3/4.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    table: AliasTable,
    nodes: Vec<usize>,
}

impl NegativeSampler {
    pub fn from_corpus(corpus: &WalkCorpus, node_count: usize) -> Option<Self> {
        let mut counts = vec![0u64; node_count];
        for w in &corpus.walks {
            for &n in w {
                counts[n] += 1;
            }
        }
        let nodes: Vec<usize> = (0..node_count).filter(|&i| counts[i] > 0).collect();
        let weights: Vec<f64> = nodes.iter().map(|&i| (counts[i] as f64).powf(0.75)).collect();
        let table = AliasTable::new(&weights).ok()?;
        Some(Self { table, nodes })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.nodes[self.table.sample(rng)]
    }

    /// `(node, probability)` pairs of the sampling distribution.
    pub fn distribution(&self) -> Vec<(usize, f64)> {
        self.nodes.iter().copied().zip(self.table.distribution()).collect()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean pair loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub pairs_per_epoch: usize,
}

/// Scalar storage for the two parameter matrices.
trait Store {
    fn get(&self, i: usize) -> f64;
    fn set(&self, i: usize, v: f64);
}

impl Store for [Cell<f64>] {
    fn get(&self, i: usize) -> f64 {
        self[i].get()
    }
    fn set(&self, i: usize, v: f64) {
        self[i].set(v)
    }
}

impl Store for [AtomicU64] {
    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self[i].load(Ordering::Relaxed))
    }
    fn set(&self, i: usize, v: f64) {
        self[i].store(v.to_bits(), Ordering::Relaxed)
    }
}

struct Kernel<'a> {
    dim: usize,
    negatives: usize,
    sampler: &'a NegativeSampler,
}

impl Kernel<'_> {
    /// One SGD step on the pair `(center, context)`; returns the pair loss.
    fn step<S: Store + ?Sized, R: Rng>(
        &self,
        input: &S,
        output: &S,
        center: usize,
        context: usize,
        lr: f64,
        rng: &mut R,
        u: &mut [f64],
        grad_u: &mut [f64],
    ) -> f64 {
        let d = self.dim;
        let ub = center * d;
        for j in 0..d {
            u[j] = input.get(ub + j);
        }
        grad_u.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for s in 0..=self.negatives {
            let (target, label) = if s == 0 {
                (context, 1.0)
            } else {
                let n = self.sampler.sample(rng);
                if n == context {
                    continue;
                }
                (n, 0.0)
            };
            let vb = target * d;
            let mut x = 0.0;
            for j in 0..d {
                x += u[j] * output.get(vb + j);
            }
            loss += if label > 0.0 { neg_log_sigmoid(x) } else { neg_log_sigmoid(-x) };
            let g = lr * (label - sigmoid(x));
            for j in 0..d {
                let v = output.get(vb + j);
                grad_u[j] += g * v;
                output.set(vb + j, v + g * u[j]);
            }
        }
        for j in 0..d {
            input.set(ub + j, u[j] + grad_u[j]);
        }
        loss
    }
}

fn pairs_in_walk(len: usize, window: usize) -> usize {
    (0..len).map(|i| i.min(window) + (len - 1 - i).min(window)).sum()
}

/// Trains input vectors for `node_count` nodes on `corpus`.
pub fn train(corpus: &WalkCorpus, node_count: usize, params: &EmbeddingParams) -> Result<(Embedding, TrainReport), EmbeddingError> {
    params.validate()?;
    if corpus.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    if let Some(&bad) = corpus.walks.iter().flatten().find(|&&n| n >= node_count) {
        return Err(EmbeddingError::NodeOutOfRange { node: bad, count: node_count });
    }
    let d = params.dimension;
    let mut init_rng = rng::stream(params.seed, streams::INIT, 0);
    let half = 0.5 / d as f64;
    let mut input: Vec<f64> = (0..node_count * d).map(|_| init_rng.random_range(-half..half)).collect();
    let mut output = vec![0.0; node_count * d];

    let pairs_per_epoch: usize = corpus.walks.iter().map(|w| pairs_in_walk(w.len(), params.window)).sum();
    let mut report = TrainReport { epoch_losses: Vec::new(), pairs_per_epoch };
    if params.epochs == 0 || pairs_per_epoch == 0 {
        return Ok((Embedding { dimension: d, data: input }, report));
    }
    let Some(sampler) = NegativeSampler::from_corpus(corpus, node_count) else {
        return Err(EmbeddingError::EmptyCorpus);
    };
    let kernel = Kernel { dim: d, negatives: params.negatives, sampler: &sampler };
    let total_pairs = (pairs_per_epoch * params.epochs) as f64;
    let lr0 = params.initial_lr;
    let lr_at = |done: usize| (lr0 * (1.0 - done as f64 / total_pairs)).max(lr0 * 1e-4);
    let w = params.window;

    match params.mode {
        TrainMode::Deterministic => {
            let inp = Cell::from_mut(input.as_mut_slice()).as_slice_of_cells();
            let out = Cell::from_mut(output.as_mut_slice()).as_slice_of_cells();
            let mut u = vec![0.0; d];
            let mut gu = vec![0.0; d];
            let mut done = 0usize;
            for epoch in 0..params.epochs {
                let mut rng = rng::stream(params.seed, streams::SGD, epoch as u64);
                let mut loss = 0.0;
                for walk in &corpus.walks {
                    for i in 0..walk.len() {
                        let lo = i.saturating_sub(w);
                        let hi = (i + w).min(walk.len() - 1);
                        for j in (lo..=hi).filter(|&j| j != i) {
                            loss += kernel.step(inp, out, walk[i], walk[j], lr_at(done), &mut rng, &mut u, &mut gu);
                            done += 1;
                        }
                    }
                }
                report.epoch_losses.push(loss / pairs_per_epoch as f64);
            }
        }
        TrainMode::Parallel => {
            let inp: Vec<AtomicU64> = input.iter().map(|x| AtomicU64::new(x.to_bits())).collect();
            let out: Vec<AtomicU64> = output.iter().map(|x| AtomicU64::new(x.to_bits())).collect();
            let done = AtomicUsize::new(0);
            let chunk = corpus.walks.len().div_ceil(rayon::current_num_threads().max(1) * 4).max(1);
            for epoch in 0..params.epochs {
                let loss: f64 = corpus
                    .walks
                    .par_chunks(chunk)
                    .enumerate()
                    .map(|(ci, walks)| {
                        let mut rng = rng::stream(params.seed, streams::SGD, rng::key2(epoch as u64, ci as u64));
                        let mut u = vec![0.0; d];
                        let mut gu = vec![0.0; d];
                        let mut loss = 0.0;
                        for walk in walks {
                            for i in 0..walk.len() {
                                let lo = i.saturating_sub(w);
                                let hi = (i + w).min(walk.len() - 1);
                                for j in (lo..=hi).filter(|&j| j != i) {
                                    let lr = lr_at(done.fetch_add(1, Ordering::Relaxed));
                                    loss += kernel.step(inp.as_slice(), out.as_slice(), walk[i], walk[j], lr, &mut rng, &mut u, &mut gu);
                                }
                            }
                        }
                        loss
                    })
                    .sum();
                report.epoch_losses.push(loss / pairs_per_epoch as f64);
            }
            input = inp.iter().map(|a| f64::from_bits(a.load(Ordering::Relaxed))).collect();
        }
    }
    if input.iter().any(|x| !x.is_finite()) {
        return Err(EmbeddingError::InvalidParams("training diverged (non-finite weights); lower initial_lr".into()));
    }
    Ok((Embedding { dimension: d, data: input }, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_at_zero_is_ln2() {
        let u = [0.0; 4];
        assert!((pair_loss(&u, &u, &[]) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_saturates_to_zero() {
        let u = [100.0, 100.0];
        let v = [100.0, 100.0];
        let n = [-100.0, -100.0];
        assert!(pair_loss(&u, &v, &[&n]) < 1e-300);
    }

    #[test]
    fn zero_vectors_gradient_is_half_v() {
        let u = [0.0; 3];
        let v = [0.3, -1.2, 2.0];
        let g = pair_gradients(&u, &v, &[]);
        for (a, b) in g.u.iter().zip(v.iter()) {
            assert_eq!(*a, -0.5 * b);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            assert!(gradient_check(8, 3, 1e-5, seed) < 1e-5);
        }
    }

    #[test]
    fn finite_difference_error_is_second_order() {
        let e1 = gradient_check(8, 3, 2e-2, 4);
        let e2 = gradient_check(8, 3, 1e-2, 4);
        let ratio = e1 / e2;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let corpus = WalkCorpus { walks: vec![vec![0, 1, 2, 1, 0]] };
        let params = EmbeddingParams { dimension: 16, epochs: 0, ..Default::default() };
        let (e, report) = train(&corpus, 3, &params).unwrap();
        assert!(report.epoch_losses.is_empty());
        let bound = 0.5 / 16.0;
        assert!(e.as_slice().iter().all(|x| x.abs() <= bound));
        assert!(e.as_slice().iter().any(|x| *x != 0.0));
    }

    #[test]
    fn deterministic_mode_is_reproducible() {
        let corpus = WalkCorpus { walks: vec![vec![0, 1, 2, 3, 2, 1], vec![3, 2, 1, 0, 1, 2]] };
        let params = EmbeddingParams { dimension: 8, window: 2, epochs: 3, seed: 5, ..Default::default() };
        let a = train(&corpus, 4, &params).unwrap().0;
        let b = train(&corpus, 4, &params).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        let params = EmbeddingParams::default();
        assert!(matches!(train(&WalkCorpus::default(), 3, &params), Err(EmbeddingError::EmptyCorpus)));
        let corpus = WalkCorpus { walks: vec![vec![0, 7]] };
        assert!(matches!(train(&corpus, 3, &params), Err(EmbeddingError::NodeOutOfRange { .. })));
        let bad = EmbeddingParams { dimension: 0, ..Default::default() };
        assert!(train(&WalkCorpus { walks: vec![vec![0, 1]] }, 2, &bad).is_err());
    }

    #[test]
    fn text_round_trip() {
        let e = Embedding::from_rows(&[vec![0.25, -1.5], vec![3.0, 1e-7]]);
        let labels = vec!["a".to_string(), "b".to_string()];
        let mut buf = Vec::new();
        e.write_text(&labels, &mut buf).unwrap();
        let (l2, e2) = Embedding::read_text(buf.as_slice()).unwrap();
        assert_eq!(l2, labels);
        assert_eq!(e2, e);
    }

    #[test]
    fn pair_count_matches_window() {
        assert_eq!(pairs_in_walk(5, 10), 20);
        assert_eq!(pairs_in_walk(5, 1), 8);
        assert_eq!(pairs_in_walk(1, 3), 0);
    }
}
