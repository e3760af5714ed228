//! Univariate Hawkes process with exponential kernel `α e^{-β τ}`.
//!
//! The intensity starts at `λ0` and relaxes toward the base rate `μ`:
//!
//! `λ(t) = μ + (λ0 - μ) e^{-βt} + Σ_{t_i < t} α e^{-β(t - t_i)}`.
//!
//! Moments of the counting process come from the linear ODE system for
//! `E[λ]`, `E[N]`, `E[λ²]`, `E[Nλ]`, `E[N²]`; [`expected_count`] and
//! [`second_moment`] are its closed-form solution and
//! [`moments_by_matrix_exponential`] integrates the same system numerically.

use nalgebra::{SMatrix, SVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::rng::{self, streams};

#[derive(Debug, Error, PartialEq)]
pub enum HawkesError {
    #[error("event times must be non-decreasing and finite")]
    Unsorted,
    #[error("event times must be strictly increasing, finite and inside [0, {horizon}]")]
    InvalidSeries { horizon: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("supercritical process (alpha={alpha} >= beta={beta}); pass allow_supercritical to simulate anyway")]
    Supercritical { alpha: f64, beta: f64 },
    #[error("need at least {needed} events to fit, got {got}")]
    TooFewEvents { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda0: f64,
}

impl HawkesParams {
    pub fn new(mu: f64, alpha: f64, beta: f64, lambda0: f64) -> Result<Self, HawkesError> {
        let p = Self { mu, alpha, beta, lambda0 };
        p.validate()?;
        Ok(p)
    }

    /// Parameters with `λ0 = μ`.
    pub fn stationary_start(mu: f64, alpha: f64, beta: f64) -> Self {
        Self { mu, alpha, beta, lambda0: mu }
    }

    pub fn validate(&self) -> Result<(), HawkesError> {
        let ok = self.mu >= 0.0 && self.alpha >= 0.0 && self.beta > 0.0 && self.lambda0 >= 0.0;
        let finite = [self.mu, self.alpha, self.beta, self.lambda0].iter().all(|x| x.is_finite());
        if ok && finite {
            Ok(())
        } else {
            Err(HawkesError::InvalidParams(format!("{self:?}")))
        }
    }

    pub fn branching_ratio(&self) -> f64 {
        self.alpha / self.beta
    }

    pub fn is_stationary(&self) -> bool {
        self.alpha < self.beta
    }
}

/// Strictly increasing event times on the window `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSeries {
    times: Vec<f64>,
    horizon: f64,
}

impl EventSeries {
    pub fn new(times: Vec<f64>, horizon: f64) -> Result<Self, HawkesError> {
        let strict = times.windows(2).all(|w| w[0] < w[1]);
        let inside = times.iter().all(|t| t.is_finite() && *t >= 0.0 && *t <= horizon);
        if !strict || !inside || !horizon.is_finite() {
            return Err(HawkesError::InvalidSeries { horizon });
        }
        Ok(Self { times, horizon })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of events at or before `t`.
    pub fn count_until(&self, t: f64) -> usize {
        self.times.partition_point(|&x| x <= t)
    }
}

/// Spreads events that share a unit-time bin evenly across it.
///
/// A bin `[b, b + unit)` holding `m > 1` events gets times
/// `b + k/m * unit` for `k = 0..m`; bins with a single event keep it.
pub fn detie(times: &[f64], unit: f64) -> Result<Vec<f64>, HawkesError> {
    if times.windows(2).any(|w| !(w[0] <= w[1])) || times.iter().any(|t| !t.is_finite()) {
        return Err(HawkesError::Unsorted);
    }
    if !(unit > 0.0) {
        return Err(HawkesError::InvalidParams("unit must be positive".into()));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut i = 0;
    while i < times.len() {
        let bin = (times[i] / unit).floor();
        let mut j = i;
        while j < times.len() && (times[j] / unit).floor() == bin {
            j += 1;
        }
        let m = j - i;
        if m == 1 {
            out.push(times[i]);
        } else {
            let start = bin * unit;
            out.extend((0..m).map(|k| start + k as f64 / m as f64 * unit));
        }
        i = j;
    }
    Ok(out)
}

/// Intensity just before `t` (events at exactly `t` are excluded).
pub fn intensity(params: &HawkesParams, events: &[f64], t: f64) -> f64 {
    let mut excite = 0.0;
    let mut last = 0.0;
    for &ti in events.iter().take_while(|&&ti| ti < t) {
        excite = excite * (-params.beta * (ti - last)).exp() + 1.0;
        last = ti;
    }
    excite *= (-params.beta * (t - last)).exp();
    params.mu + (params.lambda0 - params.mu) * (-params.beta * t).exp() + params.alpha * excite
}

/// Intensity just after `t`, counting events at `t`.
pub fn intensity_after(params: &HawkesParams, events: &[f64], t: f64) -> f64 {
    let at = events.iter().filter(|&&x| x == t).count() as f64;
    intensity(params, events, t) + params.alpha * at
}

/// `∫_0^T λ(s) ds` in closed form.
pub fn compensator(params: &HawkesParams, events: &[f64], horizon: f64) -> f64 {
    let b = params.beta;
    let base = params.mu * horizon + (params.lambda0 - params.mu) * (1.0 - (-b * horizon).exp()) / b;
    let excite: f64 = events.iter().filter(|&&t| t < horizon).map(|&t| 1.0 - (-b * (horizon - t)).exp()).sum();
    base + params.alpha / b * excite
}

/// Point-process log-likelihood `Σ ln λ(t_i) - ∫_0^T λ`.
pub fn log_likelihood(params: &HawkesParams, events: &EventSeries) -> f64 {
    let (mu, a, b, l0) = (params.mu, params.alpha, params.beta, params.lambda0);
    let mut sum_log = 0.0;
    let mut excite = 0.0;
    let mut last = 0.0;
    for &t in events.times() {
        excite *= (-b * (t - last)).exp();
        let lam = mu + (l0 - mu) * (-b * t).exp() + a * excite;
        if !(lam > 0.0) {
            return f64::NEG_INFINITY;
        }
        sum_log += lam.ln();
        excite += 1.0;
        last = t;
    }
    sum_log - compensator(params, events.times(), events.horizon())
}

/// Ogata thinning on `[0, horizon]`.
pub fn simulate<R: Rng + ?Sized>(
    params: &HawkesParams,
    horizon: f64,
    allow_supercritical: bool,
    rng: &mut R,
) -> Result<EventSeries, HawkesError> {
    params.validate()?;
    if !params.is_stationary() && !allow_supercritical {
        return Err(HawkesError::Supercritical { alpha: params.alpha, beta: params.beta });
    }
    let (mu, a, b) = (params.mu, params.alpha, params.beta);
    let mut times = Vec::new();
    let mut t = 0.0;
    // λ(t) = mu + excess(t), excess decays at rate b
    let mut excess = params.lambda0 - mu;
    loop {
        let bound = mu + excess.max(0.0);
        if bound <= 0.0 {
            break;
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        let w = -u.ln() / bound;
        t += w;
        if t > horizon {
            break;
        }
        excess *= (-b * w).exp();
        let lam = mu + excess;
        if rng.random::<f64>() * bound <= lam {
            times.push(t);
            excess += a;
        }
    }
    EventSeries::new(times, horizon)
}

/// Seeded convenience wrapper around [`simulate`].
pub fn simulate_seeded(params: &HawkesParams, horizon: f64, seed: u64) -> Result<EventSeries, HawkesError> {
    simulate(params, horizon, false, &mut rng::stream(seed, streams::MC, 0))
}

/// Mean and standard error of `N_t` over `runs` simulated paths.
pub fn monte_carlo_count(params: &HawkesParams, t: f64, runs: usize, seed: u64) -> Result<(f64, f64), HawkesError> {
    params.validate()?;
    let counts: Vec<f64> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, streams::MC, r as u64);
            simulate(params, t, true, &mut g).map(|s| s.len() as f64)
        })
        .collect::<Result<_, _>>()?;
    let n = runs as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

const NEAR_CRITICAL: f64 = 1e-6;

/// `E[N_t]` in closed form.
pub fn expected_count(params: &HawkesParams, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let (mu, a, b, l0) = (params.mu, params.alpha, params.beta, params.lambda0);
    let k = a - b;
    if (k * t).abs() < NEAR_CRITICAL {
        return moments_by_matrix_exponential(params, t).0;
    }
    let c = l0 / k + b * mu / (k * k);
    c * (k * t).exp() - (b * mu / k) * t - c
}

/// `E[N_t²]` in closed form.
pub fn second_moment(params: &HawkesParams, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let (mu, a, b, l0) = (params.mu, params.alpha, params.beta, params.lambda0);
    let r = b - a;
    if (r * t).abs() < NEAR_CRITICAL {
        return moments_by_matrix_exponential(params, t).1;
    }
    let e = (-r * t).exp();
    let m_inf = b * mu / r;
    let dm = l0 - m_inf;
    let c1 = 2.0 * b * mu + a * a;
    // E[λ²] = c1 m_inf/(2r) + c1 dm/r e + kk e²
    let kk = l0 * l0 - c1 * m_inf / (2.0 * r) - c1 * dm / r;
    // E[Nλ] = g1/r t + bb + ge t e + hh e + dd e²
    let g1 = b * mu * m_inf;
    let g0 = b * mu * dm / r + c1 * m_inf / (2.0 * r) + a * m_inf;
    let ge = -b * mu * dm / r + c1 * dm / r + a * dm;
    let slope = g1 / r;
    let bb = (g0 - slope) / r;
    let dd = -kk / r;
    let hh = -bb - dd;
    // E[N²] = ∫ 2 E[Nλ] + E[λ]
    let int_te = (1.0 - e * (1.0 + r * t)) / (r * r);
    let int_e = (1.0 - e) / r;
    let int_e2 = (1.0 - e * e) / (2.0 * r);
    2.0 * (slope * t * t / 2.0 + bb * t + ge * int_te + hh * int_e + dd * int_e2) + m_inf * t + dm * int_e
}

/// Solves the moment ODE with a 6x6 matrix exponential. Returns
/// `(E[N_t], E[N_t²])`. Valid for every `α, β`, including `α = β`.
pub fn moments_by_matrix_exponential(params: &HawkesParams, t: f64) -> (f64, f64) {
    let (mu, a, b, l0) = (params.mu, params.alpha, params.beta, params.lambda0);
    // state: [1, E λ, E N, E λ², E Nλ, E N²]
    let mut g = SMatrix::<f64, 6, 6>::zeros();
    g[(1, 0)] = b * mu;
    g[(1, 1)] = a - b;
    g[(2, 1)] = 1.0;
    g[(3, 1)] = 2.0 * b * mu + a * a;
    g[(3, 3)] = 2.0 * (a - b);
    g[(4, 1)] = a;
    g[(4, 2)] = b * mu;
    g[(4, 3)] = 1.0;
    g[(4, 4)] = a - b;
    g[(5, 1)] = 1.0;
    g[(5, 4)] = 2.0;
    let x0 = SVector::<f64, 6>::from([1.0, l0, 0.0, l0 * l0, 0.0, 0.0]);
    let x = expm(&(g * t)) * x0;
    (x[2], x[5])
}

/// Scaling-and-squaring Taylor matrix exponential.
fn expm(m: &SMatrix<f64, 6, 6>) -> SMatrix<f64, 6, 6> {
    let norm = m.abs().row_sum().max();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = m / 2f64.powi(squarings as i32);
    let mut term = SMatrix::<f64, 6, 6>::identity();
    let mut sum = SMatrix::<f64, 6, 6>::identity();
    for k in 1..=30 {
        term = term * scaled / k as f64;
        sum += term;
        if term.abs().max() < 1e-18 * sum.abs().max() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Expected number of events in `(t0, t0 + h]` given the history up to `t0`.
///
/// The process is restarted at `t0` with `λ0 = λ(t0+)`, which is exact for
/// the exponential kernel.
pub fn forecast(params: &HawkesParams, events: &[f64], t0: f64, h: f64) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    let restarted = HawkesParams { lambda0: intensity_after(params, events, t0), ..*params };
    expected_count(&restarted, h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum Lambda0Mode {
    /// `λ0 = μ` throughout the fit.
    EqualsMu,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub starts: usize,
    pub lambda0: Lambda0Mode,
    pub min_events: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { starts: 8, lambda0: Lambda0Mode::EqualsMu, min_events: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HawkesFit {
    pub params: HawkesParams,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub stationary: bool,
}

/// Maximum-likelihood fit with multi-start Nelder–Mead over `ln μ, ln α, ln β`.
pub fn fit(events: &EventSeries, opts: &FitOptions) -> Result<HawkesFit, HawkesError> {
    if events.len() < opts.min_events {
        return Err(HawkesError::TooFewEvents { needed: opts.min_events, got: events.len() });
    }
    let horizon = events.horizon().max(events.times().last().copied().unwrap_or(0.0));
    let rate = events.len() as f64 / horizon.max(f64::MIN_POSITIVE);
    let to_params = |x: &[f64]| {
        let mu = x[0].exp();
        let lambda0 = match opts.lambda0 {
            Lambda0Mode::EqualsMu => mu,
            Lambda0Mode::Fixed(v) => v,
        };
        HawkesParams { mu, alpha: x[1].exp(), beta: x[2].exp(), lambda0 }
    };
    let objective = |x: &[f64]| {
        if x.iter().any(|v| !v.is_finite() || v.abs() > 50.0) {
            return f64::INFINITY;
        }
        -log_likelihood(&to_params(x), events)
    };
    let mut starts = Vec::new();
    for &ratio in &[0.2, 0.7] {
        for &beta_scale in &[0.3, 3.0] {
            for &mu_scale in &[0.6, 1.2] {
                let mu = rate * (1.0 - ratio) * mu_scale;
                let beta = beta_scale;
                starts.push([mu.max(1e-6).ln(), (ratio * beta).ln(), beta.ln()]);
            }
        }
    }
    let nm = NelderMeadOptions { initial_step: 0.5, ..Default::default() };
    let results: Vec<_> = starts
        .iter()
        .take(opts.starts.max(1))
        .map(|x0| {
            let first = nelder_mead(objective, x0, &nm);
            let second = nelder_mead(objective, &first.x, &NelderMeadOptions { initial_step: 0.1, ..nm.clone() });
            (second.x, second.f, first.iterations + second.iterations, second.converged)
        })
        .collect();
    let best = results
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one start");
    let params = to_params(&best.0);
    Ok(HawkesFit {
        params,
        log_likelihood: -best.1,
        converged: best.3,
        iterations: best.2,
        stationary: params.is_stationary(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detie_examples() {
        let d = detie(&[5.0, 5.0, 5.0], 1.0).unwrap();
        assert_eq!(d, vec![5.0, 5.0 + 1.0 / 3.0, 5.0 + 2.0 / 3.0]);
        assert_eq!(detie(&[1.0, 2.0, 3.0], 1.0).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(detie(&[], 1.0).unwrap().is_empty());
        assert!(detie(&[2.0, 1.0], 1.0).is_err());
        let mixed = detie(&[0.0, 0.0, 0.5, 3.0], 1.0).unwrap();
        assert!(mixed.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_history_intensity_is_mu() {
        let p = HawkesParams::stationary_start(0.7, 0.3, 1.0);
        for t in [0.0, 0.5, 10.0] {
            assert!((intensity(&p, &[], t) - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn single_event_intensity() {
        let p = HawkesParams::stationary_start(0.5, 0.8, 1.2);
        let t = 2.5;
        let direct = 0.5 + 0.8 * (-1.2f64 * t).exp();
        assert!((intensity(&p, &[0.0], t) - direct).abs() < 1e-15);
    }

    #[test]
    fn poisson_likelihood() {
        let p = HawkesParams::stationary_start(1.5, 0.0, 2.0);
        let ev = EventSeries::new(vec![0.3, 1.1, 2.0, 4.2], 5.0).unwrap();
        let expect = 4.0 * 1.5f64.ln() - 1.5 * 5.0;
        assert!((log_likelihood(&p, &ev) - expect).abs() < 1e-12);
    }

    #[test]
    fn poisson_moments() {
        let p = HawkesParams::stationary_start(0.8, 0.0, 1.3);
        let t = 7.0;
        assert!((expected_count(&p, t) - 5.6).abs() < 1e-10);
        assert!((second_moment(&p, t) - (5.6 + 5.6 * 5.6)).abs() < 1e-10);
        assert_eq!(expected_count(&p, 0.0), 0.0);
    }

    #[test]
    fn closed_forms_match_matrix_exponential() {
        for &(mu, a, b, l0) in &[(0.5, 0.8, 1.2, 0.5), (1.0, 0.3, 1.0, 2.0), (0.2, 0.7, 1.0, 0.0), (0.4, 1.5, 1.0, 0.4)] {
            let p = HawkesParams { mu, alpha: a, beta: b, lambda0: l0 };
            for t in [0.5, 3.0, 20.0] {
                let (m1, m2) = moments_by_matrix_exponential(&p, t);
                assert!((expected_count(&p, t) - m1).abs() < 1e-8 * m1.max(1.0), "{p:?} {t}");
                assert!((second_moment(&p, t) - m2).abs() < 1e-8 * m2.max(1.0), "{p:?} {t}");
            }
        }
    }

    #[test]
    fn critical_case_uses_limit() {
        let p = HawkesParams { mu: 0.5, alpha: 1.0, beta: 1.0, lambda0: 0.5 };
        // E λ = λ0 + βμ t, so E N = λ0 t + βμ t²/2
        let t = 4.0;
        assert!((expected_count(&p, t) - (0.5 * t + 0.25 * t * t)).abs() < 1e-9);
        assert!(second_moment(&p, t).is_finite());
    }

    #[test]
    fn forecast_edge_cases() {
        let p = HawkesParams::stationary_start(0.9, 0.0, 1.0);
        assert!((forecast(&p, &[1.0, 2.0], 3.0, 4.0) - 3.6).abs() < 1e-12);
        assert_eq!(forecast(&p, &[1.0], 3.0, 0.0), 0.0);
    }

    #[test]
    fn simulation_is_seeded() {
        let p = HawkesParams::stationary_start(0.5, 0.8, 1.2);
        assert_eq!(simulate_seeded(&p, 50.0, 3).unwrap(), simulate_seeded(&p, 50.0, 3).unwrap());
        let sup = HawkesParams::stationary_start(0.5, 2.0, 1.0);
        assert!(matches!(simulate_seeded(&sup, 5.0, 0), Err(HawkesError::Supercritical { .. })));
    }

    #[test]
    fn too_few_events() {
        let ev = EventSeries::new(vec![1.0, 2.0], 3.0).unwrap();
        assert!(matches!(fit(&ev, &FitOptions::default()), Err(HawkesError::TooFewEvents { .. })));
    }

    #[test]
    fn series_validation() {
        assert!(EventSeries::new(vec![1.0, 1.0], 2.0).is_err());
        assert!(EventSeries::new(vec![1.0, 3.0], 2.0).is_err());
        assert_eq!(EventSeries::new(vec![1.0, 1.5, 2.0], 2.0).unwrap().count_until(1.5), 2);
    }
}
