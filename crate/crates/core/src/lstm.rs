//! Single-layer LSTM forecaster trained from scratch.
//!
//! Gates use the hard sigmoid `max(0, min(1, 0.2 z + 0.5))`, the cell input
//! and cell output activations are ReLU, and a linear head maps the hidden
//! activation `m_t` to the output. Training uses exact backpropagation
//! through time, Adam, inverted dropout on the hidden activation feeding the
//! head, and a plateau schedule on the validation loss.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, streams};

#[derive(Debug, Error, PartialEq)]
pub enum LstmError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("series too short: need more than {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub units: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    /// Input window length (steps).
    pub window: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub stop_patience: usize,
    pub max_epochs: usize,
    /// Trailing share of windows held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            units: 128,
            batch_size: 32,
            dropout: 0.2,
            learning_rate: 1e-3,
            window: 12,
            plateau_patience: 3,
            plateau_factor: 0.1,
            stop_patience: 10,
            max_epochs: 100,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl LstmConfig {
    fn validate(&self) -> Result<(), LstmError> {
        if self.units == 0 || self.batch_size == 0 || self.window == 0 || self.max_epochs == 0 {
            return Err(LstmError::InvalidConfig("units, batch_size, window and max_epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LstmError::InvalidConfig(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.learning_rate > 0.0) || !(self.plateau_factor > 0.0) {
            return Err(LstmError::InvalidConfig("learning_rate and plateau_factor must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(LstmError::InvalidConfig("validation_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// All trainable tensors, row-major. `W_*x` are `units x input`, `W_*m` are
/// `units x units`, `W_ym` is `output x units`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights {
    pub input_dim: usize,
    pub units: usize,
    pub output_dim: usize,
    pub w_ix: Vec<f64>,
    pub w_im: Vec<f64>,
    pub w_fx: Vec<f64>,
    pub w_fm: Vec<f64>,
    pub w_cx: Vec<f64>,
    pub w_cm: Vec<f64>,
    pub w_ox: Vec<f64>,
    pub w_om: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
    pub w_ym: Vec<f64>,
    pub b_y: Vec<f64>,
}

pub const TENSOR_NAMES: [&str; 14] =
    ["w_ix", "w_im", "w_fx", "w_fm", "w_cx", "w_cm", "w_ox", "w_om", "b_i", "b_f", "b_c", "b_o", "w_ym", "b_y"];

impl LstmWeights {
    pub fn zeros(input_dim: usize, units: usize, output_dim: usize) -> Self {
        let (i, h, o) = (input_dim, units, output_dim);
        Self {
            input_dim,
            units,
            output_dim,
            w_ix: vec![0.0; h * i],
            w_im: vec![0.0; h * h],
            w_fx: vec![0.0; h * i],
            w_fm: vec![0.0; h * h],
            w_cx: vec![0.0; h * i],
            w_cm: vec![0.0; h * h],
            w_ox: vec![0.0; h * i],
            w_om: vec![0.0; h * h],
            b_i: vec![0.0; h],
            b_f: vec![0.0; h],
            b_c: vec![0.0; h],
            b_o: vec![0.0; h],
            w_ym: vec![0.0; o * h],
            b_y: vec![0.0; o],
        }
    }

    /// Glorot-uniform weights, zero biases except a forget bias of 1.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, units: usize, output_dim: usize, rng: &mut R) -> Self {
        let mut w = Self::zeros(input_dim, units, output_dim);
        let lim_x = (6.0 / (input_dim + units) as f64).sqrt();
        let lim_m = (6.0 / (2 * units) as f64).sqrt();
        let lim_y = (6.0 / (units + output_dim) as f64).sqrt();
        for t in [&mut w.w_ix, &mut w.w_fx, &mut w.w_cx, &mut w.w_ox] {
            t.iter_mut().for_each(|x| *x = rng.random_range(-lim_x..lim_x));
        }
        for t in [&mut w.w_im, &mut w.w_fm, &mut w.w_cm, &mut w.w_om] {
            t.iter_mut().for_each(|x| *x = rng.random_range(-lim_m..lim_m));
        }
        w.w_ym.iter_mut().for_each(|x| *x = rng.random_range(-lim_y..lim_y));
        w.b_f.iter_mut().for_each(|x| *x = 1.0);
        w
    }

    pub fn tensors(&self) -> [&Vec<f64>; 14] {
        [
            &self.w_ix, &self.w_im, &self.w_fx, &self.w_fm, &self.w_cx, &self.w_cm, &self.w_ox, &self.w_om,
            &self.b_i, &self.b_f, &self.b_c, &self.b_o, &self.w_ym, &self.b_y,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 14] {
        [
            &mut self.w_ix, &mut self.w_im, &mut self.w_fx, &mut self.w_fm, &mut self.w_cx, &mut self.w_cm,
            &mut self.w_ox, &mut self.w_om, &mut self.b_i, &mut self.b_f, &mut self.b_c, &mut self.b_o,
            &mut self.w_ym, &mut self.b_y,
        ]
    }

    /// `(rows, cols)` of each tensor in [`TENSOR_NAMES`] order.
    pub fn shapes(&self) -> [(usize, usize); 14] {
        let (i, h, o) = (self.input_dim, self.units, self.output_dim);
        [(h, i), (h, h), (h, i), (h, h), (h, i), (h, h), (h, i), (h, h), (h, 1), (h, 1), (h, 1), (h, 1), (o, h), (o, 1)]
    }

    fn check(&self) -> Result<(), LstmError> {
        for ((name, t), (r, c)) in TENSOR_NAMES.iter().zip(self.tensors()).zip(self.shapes()) {
            if t.len() != r * c {
                return Err(LstmError::Shape(format!("{name} has {} values, expected {r}x{c}", t.len())));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn add_scaled(&mut self, other: &LstmWeights, s: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub m: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(units: usize) -> Self {
        Self { m: vec![0.0; units], c: vec![0.0; units] }
    }
}

pub fn hard_sigmoid(z: f64) -> f64 {
    (0.2 * z + 0.5).clamp(0.0, 1.0)
}

fn hard_sigmoid_grad(z: f64) -> f64 {
    if z > -2.5 && z < 2.5 {
        0.2
    } else {
        0.0
    }
}

fn relu(z: f64) -> f64 {
    z.max(0.0)
}

fn relu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `out[r] = b[r] + Σ_c W[r, c] x[c] + Σ_c U[r, c] m[c]`.
fn affine(w: &[f64], x: &[f64], u: &[f64], m: &[f64], b: &[f64], out: &mut [f64]) {
    let (ni, nh) = (x.len(), m.len());
    for (r, o) in out.iter_mut().enumerate() {
        let wr = &w[r * ni..(r + 1) * ni];
        let ur = &u[r * nh..(r + 1) * nh];
        let mut s = b[r];
        for (a, v) in wr.iter().zip(x) {
            s += a * v;
        }
        for (a, v) in ur.iter().zip(m) {
            s += a * v;
        }
        *o = s;
    }
}

/// Everything one forward step produces, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub m_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub zi: Vec<f64>,
    pub zf: Vec<f64>,
    pub zc: Vec<f64>,
    pub zo: Vec<f64>,
    pub c: Vec<f64>,
    pub m: Vec<f64>,
    pub y: Vec<f64>,
}

fn step(x: &[f64], state: &CellState, w: &LstmWeights, head_mask: Option<&[f64]>) -> StepCache {
    let h = w.units;
    let mut zi = vec![0.0; h];
    let mut zf = vec![0.0; h];
    let mut zc = vec![0.0; h];
    let mut zo = vec![0.0; h];
    affine(&w.w_ix, x, &w.w_im, &state.m, &w.b_i, &mut zi);
    affine(&w.w_fx, x, &w.w_fm, &state.m, &w.b_f, &mut zf);
    affine(&w.w_cx, x, &w.w_cm, &state.m, &w.b_c, &mut zc);
    affine(&w.w_ox, x, &w.w_om, &state.m, &w.b_o, &mut zo);
    let mut c = vec![0.0; h];
    let mut m = vec![0.0; h];
    for k in 0..h {
        c[k] = hard_sigmoid(zf[k]) * state.c[k] + hard_sigmoid(zi[k]) * relu(zc[k]);
        m[k] = hard_sigmoid(zo[k]) * relu(c[k]);
    }
    let mut y = w.b_y.clone();
    for (r, yr) in y.iter_mut().enumerate() {
        let row = &w.w_ym[r * h..(r + 1) * h];
        *yr += match head_mask {
            Some(mask) => row.iter().zip(&m).zip(mask).map(|((a, v), k)| a * v * k).sum::<f64>(),
            None => row.iter().zip(&m).map(|(a, v)| a * v).sum::<f64>(),
        };
    }
    StepCache { x: x.to_vec(), m_prev: state.m.clone(), c_prev: state.c.clone(), zi, zf, zc, zo, c, m, y }
}

/// One LSTM step: returns the head output and the new state.
pub fn cell_forward(x: &[f64], state: &CellState, w: &LstmWeights) -> Result<(Vec<f64>, CellState), LstmError> {
    w.check()?;
    if x.len() != w.input_dim || state.m.len() != w.units || state.c.len() != w.units {
        return Err(LstmError::Shape(format!(
            "input {} / state {},{} vs weights ({}, {})",
            x.len(),
            state.m.len(),
            state.c.len(),
            w.input_dim,
            w.units
        )));
    }
    let s = step(x, state, w, None);
    Ok((s.y, CellState { m: s.m, c: s.c }))
}

/// A training sequence: one input vector per step and an optional target
/// per step (steps without a target do not contribute to the loss).
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Option<Vec<f64>>>,
}

impl Sequence {
    /// Many-to-one sample: only the last step has a target.
    pub fn many_to_one(inputs: Vec<Vec<f64>>, target: Vec<f64>) -> Self {
        let mut targets = vec![None; inputs.len()];
        if let Some(last) = targets.last_mut() {
            *last = Some(target);
        }
        Self { inputs, targets }
    }
}

/// Forward pass over a whole sequence from a zero state.
pub fn forward_sequence(seq: &Sequence, w: &LstmWeights, head_mask: Option<&[f64]>) -> Vec<StepCache> {
    let mut state = CellState::zeros(w.units);
    let mut caches = Vec::with_capacity(seq.inputs.len());
    for x in &seq.inputs {
        let s = step(x, &state, w, head_mask);
        state = CellState { m: s.m.clone(), c: s.c.clone() };
        caches.push(s);
    }
    caches
}

fn target_count(batch: &[Sequence]) -> usize {
    batch.iter().flat_map(|s| s.targets.iter().flatten()).map(Vec::len).sum()
}

/// Mean squared error over every provided target of the batch.
pub fn batch_loss(batch: &[Sequence], w: &LstmWeights) -> f64 {
    let count = target_count(batch).max(1) as f64;
    let sse: f64 = batch
        .iter()
        .map(|seq| {
            let caches = forward_sequence(seq, w, None);
            caches
                .iter()
                .zip(&seq.targets)
                .filter_map(|(c, t)| t.as_ref().map(|t| c.y.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
                .sum::<f64>()
        })
        .sum();
    sse / count
}

fn sequence_gradients(seq: &Sequence, w: &LstmWeights, head_mask: Option<&[f64]>, scale: f64) -> (f64, LstmWeights) {
    let caches = forward_sequence(seq, w, head_mask);
    let (ni, nh, no) = (w.input_dim, w.units, w.output_dim);
    let mut g = LstmWeights::zeros(ni, nh, no);
    let mut sse = 0.0;
    let mut dm_next = vec![0.0; nh];
    let mut dc_next = vec![0.0; nh];
    for (t, cache) in caches.iter().enumerate().rev() {
        let mut dm = dm_next.clone();
        if let Some(target) = &seq.targets[t] {
            for r in 0..no {
                let err = cache.y[r] - target[r];
                sse += err * err;
                let dy = 2.0 * err * scale;
                g.b_y[r] += dy;
                for k in 0..nh {
                    let mk = head_mask.map_or(1.0, |m| m[k]);
                    g.w_ym[r * nh + k] += dy * cache.m[k] * mk;
                    dm[k] += w.w_ym[r * nh + k] * dy * mk;
                }
            }
        }
        let mut dzi = vec![0.0; nh];
        let mut dzf = vec![0.0; nh];
        let mut dzc = vec![0.0; nh];
        let mut dzo = vec![0.0; nh];
        let mut dc_prev = vec![0.0; nh];
        for k in 0..nh {
            let (i, f, o) = (hard_sigmoid(cache.zi[k]), hard_sigmoid(cache.zf[k]), hard_sigmoid(cache.zo[k]));
            let gval = relu(cache.zc[k]);
            let hc = relu(cache.c[k]);
            let dc = dc_next[k] + dm[k] * o * relu_grad(cache.c[k]);
            dzo[k] = dm[k] * hc * hard_sigmoid_grad(cache.zo[k]);
            dzf[k] = dc * cache.c_prev[k] * hard_sigmoid_grad(cache.zf[k]);
            dzi[k] = dc * gval * hard_sigmoid_grad(cache.zi[k]);
            dzc[k] = dc * i * relu_grad(cache.zc[k]);
            dc_prev[k] = dc * f;
        }
        let mut dm_prev = vec![0.0; nh];
        let gates: [(&[f64], &mut Vec<f64>, &mut Vec<f64>, &mut Vec<f64>, &[f64]); 4] = [
            (&dzi, &mut g.w_ix, &mut g.w_im, &mut g.b_i, &w.w_im),
            (&dzf, &mut g.w_fx, &mut g.w_fm, &mut g.b_f, &w.w_fm),
            (&dzc, &mut g.w_cx, &mut g.w_cm, &mut g.b_c, &w.w_cm),
            (&dzo, &mut g.w_ox, &mut g.w_om, &mut g.b_o, &w.w_om),
        ];
        for (dz, gwx, gwm, gb, wm) in gates {
            for r in 0..nh {
                let d = dz[r];
                if d == 0.0 {
                    continue;
                }
                gb[r] += d;
                for c in 0..ni {
                    gwx[r * ni + c] += d * cache.x[c];
                }
                let row_g = &mut gwm[r * nh..(r + 1) * nh];
                let row_w = &wm[r * nh..(r + 1) * nh];
                for c in 0..nh {
                    row_g[c] += d * cache.m_prev[c];
                    dm_prev[c] += row_w[c] * d;
                }
            }
        }
        dm_next = dm_prev;
        dc_next = dc_prev;
    }
    (sse, g)
}

/// Exact gradients of `loss_scale x` [`batch_loss`] with respect to every
/// weight. `head_masks[b]` optionally applies a dropout mask to the hidden
/// activation feeding the head for sequence `b`. Per-sequence gradients are
/// computed in parallel and summed in sequence order.
pub fn bptt_gradients(
    batch: &[Sequence],
    w: &LstmWeights,
    head_masks: Option<&[Vec<f64>]>,
    loss_scale: f64,
) -> (f64, LstmWeights) {
    let count = target_count(batch).max(1) as f64;
    let parts: Vec<(f64, LstmWeights)> = batch
        .par_iter()
        .enumerate()
        .map(|(b, seq)| {
            let mask = head_masks.map(|m| m[b].as_slice());
            sequence_gradients(seq, w, mask, loss_scale / count)
        })
        .collect();
    let mut total = LstmWeights::zeros(w.input_dim, w.units, w.output_dim);
    let mut sse = 0.0;
    for (s, g) in &parts {
        sse += s;
        total.add_scaled(g, 1.0);
    }
    (loss_scale * sse / count, total)
}

/// Adam with the canonical `(0.9, 0.999, 1e-8)` constants.
#[derive(Debug, Clone)]
pub struct Adam {
    m: LstmWeights,
    v: LstmWeights,
    t: i32,
}

impl Adam {
    pub fn new(w: &LstmWeights) -> Self {
        let z = LstmWeights::zeros(w.input_dim, w.units, w.output_dim);
        Self { m: z.clone(), v: z, t: 0 }
    }

    pub fn step(&mut self, w: &mut LstmWeights, g: &LstmWeights, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for (((p, gr), m), v) in w.tensors_mut().into_iter().zip(g.tensors()).zip(self.m.tensors_mut()).zip(self.v.tensors_mut()) {
            for k in 0..p.len() {
                m[k] = B1 * m[k] + (1.0 - B1) * gr[k];
                v[k] = B2 * v[k] + (1.0 - B2) * gr[k] * gr[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + EPS);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleAction {
    Continue,
    ReducedLr,
    Stop,
}

/// Validation-loss plateau schedule: a loss above the previous one counts
/// as a deterioration; after `patience` consecutive deteriorations the rate
/// is multiplied by `factor` (and that counter restarts), and after
/// `stop_patience` consecutive deteriorations training stops. Any
/// non-increase resets both counters.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    pub lr: f64,
    factor: f64,
    patience: usize,
    stop_patience: usize,
    previous: Option<f64>,
    since_reduce: usize,
    consecutive: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, patience: usize, stop_patience: usize) -> Self {
        Self { lr, factor, patience, stop_patience, previous: None, since_reduce: 0, consecutive: 0 }
    }

    pub fn observe(&mut self, loss: f64) -> ScheduleAction {
        let worse = self.previous.is_some_and(|p| loss > p);
        self.previous = Some(loss);
        if !worse {
            self.since_reduce = 0;
            self.consecutive = 0;
            return ScheduleAction::Continue;
        }
        self.since_reduce += 1;
        self.consecutive += 1;
        if self.consecutive >= self.stop_patience {
            return ScheduleAction::Stop;
        }
        if self.since_reduce >= self.patience {
            self.since_reduce = 0;
            self.lr *= self.factor;
            return ScheduleAction::ReducedLr;
        }
        ScheduleAction::Continue
    }
}

/// Min-max scaling to `[0, 1]`; a constant range maps to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: f64,
    pub max: f64,
}

impl MinMaxScaler {
    pub fn fit(values: &[f64]) -> Self {
        let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Self { min, max }
    }

    fn span(&self) -> f64 {
        if self.max > self.min {
            self.max - self.min
        } else {
            1.0
        }
    }

    pub fn transform(&self, v: f64) -> f64 {
        (v - self.min) / self.span()
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.span() + self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedLstm {
    pub weights: LstmWeights,
    pub scaler: MinMaxScaler,
    pub window: usize,
    pub history: Vec<EpochRecord>,
}

fn windows(values: &[f64], window: usize) -> Vec<Sequence> {
    (0..values.len() - window)
        .map(|s| Sequence::many_to_one(values[s..s + window].iter().map(|v| vec![*v]).collect(), vec![values[s + window]]))
        .collect()
}

/// Trains on sliding windows of `series` predicting the next value.
pub fn train(series: &[f64], cfg: &LstmConfig) -> Result<TrainedLstm, LstmError> {
    cfg.validate()?;
    if series.len() <= cfg.window + 1 {
        return Err(LstmError::TooShort { needed: cfg.window + 1, got: series.len() });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(LstmError::InvalidConfig("series contains non-finite values".into()));
    }
    let total = series.len() - cfg.window;
    let n_val = ((total as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = if total - n_val == 0 { 0 } else { n_val };
    let n_train = total - n_val;
    let scaler = MinMaxScaler::fit(&series[..n_train + cfg.window]);
    let scaled: Vec<f64> = series.iter().map(|v| scaler.transform(*v)).collect();
    let all = windows(&scaled, cfg.window);
    let (train_set, val_set) = all.split_at(n_train);

    let mut weights = LstmWeights::init(1, cfg.units, 1, &mut rng::stream(cfg.seed, streams::INIT, 0));
    let mut adam = Adam::new(&weights);
    let mut schedule = PlateauSchedule::new(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience, cfg.stop_patience);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, weights.clone());
    let keep = 1.0 - cfg.dropout;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, "lstm-shuffle", epoch as u64));
        let mut drop_rng = rng::stream(cfg.seed, streams::DROPOUT, epoch as u64);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sequence> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let masks: Option<Vec<Vec<f64>>> = (cfg.dropout > 0.0).then(|| {
                batch
                    .iter()
                    .map(|_| (0..cfg.units).map(|_| if drop_rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect())
                    .collect()
            });
            let (loss, grads) = bptt_gradients(&batch, &weights, masks.as_deref(), 1.0);
            adam.step(&mut weights, &grads, schedule.lr);
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches.max(1) as f64;
        let val_loss = if val_set.is_empty() { batch_loss(train_set, &weights) } else { batch_loss(val_set, &weights) };
        if !val_loss.is_finite() {
            log::warn!("LSTM validation loss became non-finite at epoch {epoch}; stopping");
            break;
        }
        history.push(EpochRecord { epoch, train_loss, val_loss, lr: schedule.lr });
        if val_loss < best.0 {
            best = (val_loss, weights.clone());
        }
        match schedule.observe(val_loss) {
            ScheduleAction::Stop => break,
            ScheduleAction::ReducedLr => log::debug!("epoch {epoch}: learning rate reduced to {}", schedule.lr),
            ScheduleAction::Continue => {}
        }
    }
    Ok(TrainedLstm { weights: best.1, scaler, window: cfg.window, history })
}

impl TrainedLstm {
    /// Recursive multi-step forecast from the end of `series`, in original units.
    pub fn forecast(&self, series: &[f64], h: usize) -> Result<Vec<f64>, LstmError> {
        if h == 0 {
            return Ok(Vec::new());
        }
        if series.len() < self.window {
            return Err(LstmError::TooShort { needed: self.window, got: series.len() });
        }
        let mut hist: Vec<f64> = series[series.len() - self.window..].iter().map(|v| self.scaler.transform(*v)).collect();
        let mut out = Vec::with_capacity(h);
        for _ in 0..h {
            let seq = Sequence::many_to_one(hist[hist.len() - self.window..].iter().map(|v| vec![*v]).collect(), vec![0.0]);
            let caches = forward_sequence(&seq, &self.weights, None);
            let y = caches.last().map_or(0.0, |c| c.y[0]);
            hist.push(y);
            out.push(self.scaler.inverse(y));
        }
        Ok(out)
    }

    /// Versioned text checkpoint with a shape header per tensor.
    pub fn to_checkpoint(&self) -> String {
        let w = &self.weights;
        let mut out = String::from("citegrowth-lstm v1\n");
        let _ = writeln!(out, "dims {} {} {}", w.input_dim, w.units, w.output_dim);
        let _ = writeln!(out, "window {}", self.window);
        let _ = writeln!(out, "scaler {} {}", self.scaler.min, self.scaler.max);
        for ((name, t), (r, c)) in TENSOR_NAMES.iter().zip(w.tensors()).zip(w.shapes()) {
            let _ = writeln!(out, "tensor {name} {r} {c}");
            let vals: Vec<String> = t.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, LstmError> {
        let err = |m: &str| LstmError::Checkpoint(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("citegrowth-lstm v1") {
            return Err(err("unknown header"));
        }
        let nums = |line: Option<&str>, key: &str| -> Result<Vec<f64>, LstmError> {
            let line = line.ok_or_else(|| err("truncated"))?;
            let rest = line.strip_prefix(key).ok_or_else(|| err(&format!("expected `{key}`")))?;
            rest.split_whitespace().map(|v| v.parse::<f64>().map_err(|_| err("bad number"))).collect()
        };
        let dims = nums(lines.next(), "dims")?;
        let window = nums(lines.next(), "window")?;
        let scaler = nums(lines.next(), "scaler")?;
        if dims.len() != 3 || window.len() != 1 || scaler.len() != 2 {
            return Err(err("bad preamble"));
        }
        let mut w = LstmWeights::zeros(dims[0] as usize, dims[1] as usize, dims[2] as usize);
        let shapes = w.shapes();
        for ((name, t), (r, c)) in TENSOR_NAMES.iter().zip(w.tensors_mut()).zip(shapes) {
            let header = lines.next().ok_or_else(|| err("truncated"))?;
            if header != format!("tensor {name} {r} {c}") {
                return Err(err(&format!("expected tensor {name} {r}x{c}, found `{header}`")));
            }
            let vals = nums(lines.next(), "")?;
            if vals.len() != r * c {
                return Err(err(&format!("tensor {name}: wrong value count")));
            }
            *t = vals;
        }
        Ok(Self {
            weights: w,
            scaler: MinMaxScaler { min: scaler[0], max: scaler[1] },
            window: window[0] as usize,
            history: Vec::new(),
        })
    }

    /// `epoch,train_loss,val_loss,lr` rows.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.history {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let w = LstmWeights::zeros(1, 4, 1);
        let (y, s) = cell_forward(&[0.0], &CellState::zeros(4), &w).unwrap();
        assert_eq!(y, vec![0.0]);
        assert!(s.c.iter().all(|v| *v == 0.0) && s.m.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let mut w = LstmWeights::zeros(1, 3, 1);
        w.b_f = vec![10.0; 3];
        w.b_i = vec![-10.0; 3];
        let state = CellState { m: vec![0.0; 3], c: vec![0.3, 1.7, 4.0] };
        let (_, next) = cell_forward(&[0.0], &state, &w).unwrap();
        assert_eq!(next.c, state.c);
    }

    #[test]
    fn shape_mismatch() {
        let w = LstmWeights::zeros(2, 3, 1);
        assert!(cell_forward(&[0.0], &CellState::zeros(3), &w).is_err());
        let mut bad = w.clone();
        bad.w_im.pop();
        assert!(cell_forward(&[0.0, 0.0], &CellState::zeros(3), &bad).is_err());
    }

    #[test]
    fn schedule_reduces_then_stops() {
        let mut s = PlateauSchedule::new(1e-3, 0.1, 3, 10);
        let mut actions = Vec::new();
        for i in 0..11 {
            actions.push(s.observe(1.0 + 0.1 * i as f64));
            if i == 3 {
                assert!((s.lr - 1e-4).abs() < 1e-18);
            }
        }
        assert_eq!(actions[3], ScheduleAction::ReducedLr);
        assert_eq!(actions[10], ScheduleAction::Stop);
        assert!(actions[..10].iter().all(|a| *a != ScheduleAction::Stop));
    }

    #[test]
    fn schedule_resets_on_improvement() {
        let mut s = PlateauSchedule::new(1.0, 0.1, 3, 10);
        for l in [1.0, 1.1, 1.2, 1.0, 1.1, 1.2] {
            assert_eq!(s.observe(l), ScheduleAction::Continue);
        }
        assert_eq!(s.lr, 1.0);
    }

    #[test]
    fn scaler_handles_constant() {
        let s = MinMaxScaler::fit(&[3.0, 3.0]);
        assert_eq!(s.transform(3.0), 0.0);
        assert_eq!(s.inverse(0.0), 3.0);
    }

    #[test]
    fn too_short_series() {
        let cfg = LstmConfig::default();
        assert!(matches!(train(&[1.0; 13], &cfg), Err(LstmError::TooShort { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let w = LstmWeights::init(1, 3, 1, &mut rng::stream(1, "t", 0));
        let m = TrainedLstm { weights: w, scaler: MinMaxScaler { min: 1.5, max: 9.0 }, window: 4, history: vec![] };
        let back = TrainedLstm::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back, m);
        assert!(TrainedLstm::from_checkpoint("nope").is_err());
    }

    #[test]
    fn forecast_zero_horizon() {
        let w = LstmWeights::zeros(1, 2, 1);
        let m = TrainedLstm { weights: w, scaler: MinMaxScaler { min: 0.0, max: 1.0 }, window: 3, history: vec![] };
        assert!(m.forecast(&[1.0, 2.0, 3.0], 0).unwrap().is_empty());
    }
}
