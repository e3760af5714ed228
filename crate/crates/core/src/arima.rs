//! ARIMA(p, d, q) by conditional sum of squares, AIC order search, and the
//! augmented Dickey–Fuller unit-root test.
//!
//! The ARMA recursion is
//! `y_t = c + Σ φ_i y_{t-i} + ε_t - Σ θ_j ε_{t-j}`,
//! with pre-sample `y` set to the series mean and pre-sample `ε` set to 0.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{nelder_mead_restarted, NelderMeadOptions};

#[derive(Debug, Error, PartialEq)]
pub enum ArimaError {
    #[error("series too short: need more than {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("differencing order must be 0, 1 or 2 (got {0})")]
    InvalidOrder(usize),
    #[error("regression is singular (constant or collinear series)")]
    Singular,
    #[error("unsupported significance level {0}; use 0.01, 0.05 or 0.10")]
    UnsupportedLevel(f64),
    #[error("every candidate model failed to fit")]
    AllFitsFailed,
}

/// Monthly values; `start_month` is a month index since 1970-01.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMonthly {
    pub start_month: i64,
    pub values: Vec<f64>,
}

impl SeriesMonthly {
    pub fn new(start_month: i64, values: Vec<f64>) -> Result<Self, ArimaError> {
        if values.is_empty() {
            return Err(ArimaError::TooShort { needed: 0, got: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ArimaError::NonFinite);
        }
        Ok(Self { start_month, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub intercept: f64,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub sigma2: f64,
    pub aic: f64,
    /// Observations entering the sum of squares.
    pub nobs: usize,
    pub converged: bool,
    pub stationary: bool,
    pub invertible: bool,
    /// Residual variance hit the numerical floor (constant series).
    pub degenerate: bool,
}

const SIGMA2_FLOOR: f64 = 1e-12;

/// `d`-th order forward differences.
pub fn difference(y: &[f64], d: usize) -> Result<Vec<f64>, ArimaError> {
    if y.len() <= d {
        return Err(ArimaError::TooShort { needed: d, got: y.len() });
    }
    let mut out = y.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(out)
}

/// Inverts [`difference`]: `heads[k]` is the first value of the `k`-times
/// differenced series, for `k = 0..d`.
pub fn undifference(diffs: &[f64], heads: &[f64]) -> Vec<f64> {
    let mut level = diffs.to_vec();
    for &head in heads.iter().rev() {
        let mut next = Vec::with_capacity(level.len() + 1);
        next.push(head);
        for v in &level {
            let last = *next.last().unwrap_or(&head);
            next.push(last + v);
        }
        level = next;
    }
    level
}

/// In-sample residuals of the ARMA recursion.
pub fn css_residuals(y: &[f64], intercept: f64, ar: &[f64], ma: &[f64]) -> Vec<f64> {
    let mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
    let mut e = vec![0.0; y.len()];
    for t in 0..y.len() {
        let mut pred = intercept;
        for (i, phi) in ar.iter().enumerate() {
            pred += phi * if t > i { y[t - i - 1] } else { mean };
        }
        for (j, theta) in ma.iter().enumerate() {
            if t > j {
                pred -= theta * e[t - j - 1];
            }
        }
        e[t] = y[t] - pred;
    }
    e
}

fn rss(y: &[f64], intercept: f64, ar: &[f64], ma: &[f64]) -> f64 {
    let r: f64 = css_residuals(y, intercept, ar, ma).iter().map(|e| e * e).sum();
    if r.is_finite() {
        r
    } else {
        f64::INFINITY
    }
}

/// True when every root of `1 - c_1 z - ... - c_k z^k` lies outside the
/// unit circle (step-down recursion: every partial autocorrelation of the
/// implied AR process has modulus below one).
pub fn roots_outside_unit_circle(coefs: &[f64]) -> bool {
    let mut a: Vec<f64> = coefs.to_vec();
    while let Some(&r) = a.last() {
        if !r.is_finite() || r.abs() >= 1.0 - 1e-9 {
            return false;
        }
        let m = a.len();
        let denom = 1.0 - r * r;
        let next: Vec<f64> = (0..m - 1).map(|j| (a[j] + r * a[m - 2 - j]) / denom).collect();
        a = next;
    }
    true
}

/// Least squares fit of `y` on `x`: coefficients, standard errors, RSS.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, f64), ArimaError> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(ArimaError::TooShort { needed: k, got: n });
    }
    let xtx = x.transpose() * x;
    let chol = xtx.clone().cholesky().ok_or(ArimaError::Singular)?;
    let diag = chol.l().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    if !(lo > 1e-7 * hi) {
        return Err(ArimaError::Singular);
    }
    let beta = chol.solve(&(x.transpose() * y));
    let resid = y - x * &beta;
    let rss = resid.dot(&resid);
    let s2 = rss / (n - k) as f64;
    let inv = chol.inverse();
    let se = DVector::from_iterator(k, (0..k).map(|i| (s2 * inv[(i, i)]).max(0.0).sqrt()));
    Ok((beta, se, rss))
}

/// OLS AR(p) with intercept, used as the starting point for CSS.
fn ar_start(y: &[f64], p: usize) -> (f64, Vec<f64>) {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    if p == 0 || y.len() <= 2 * p + 2 {
        return (mean, vec![0.0; p]);
    }
    let rows = y.len() - p;
    let x = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { 1.0 } else { y[r + p - c] });
    let yy = DVector::from_iterator(rows, y[p..].iter().copied());
    match ols(&x, &yy) {
        Ok((b, _, _)) if roots_outside_unit_circle(&b.as_slice()[1..]) => (b[0], b.as_slice()[1..].to_vec()),
        _ => (mean, vec![0.0; p]),
    }
}

/// Conditional-sum-of-squares ARMA(p, q) fit on `y` as given (no differencing).
pub fn fit_arma(y: &[f64], p: usize, q: usize) -> Result<ArimaModel, ArimaError> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ArimaError::NonFinite);
    }
    let k = p + q + 1;
    if y.len() <= k {
        return Err(ArimaError::TooShort { needed: k, got: y.len() });
    }
    if y.len() < 10 * k {
        log::warn!("ARMA({p},{q}) on {} points: fewer than 10 per parameter", y.len());
    }
    let (c0, ar0) = ar_start(y, p);
    let mut x0 = Vec::with_capacity(k);
    x0.push(c0);
    x0.extend(ar0);
    x0.extend(std::iter::repeat_n(0.0, q));
    let objective = |x: &[f64]| {
        let ma = &x[1 + p..];
        if !roots_outside_unit_circle(ma) {
            return f64::INFINITY;
        }
        rss(y, x[0], &x[1..1 + p], ma)
    };
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
    let opts = NelderMeadOptions { f_tol: 1e-10 * (1.0 + scale * scale), max_iter: 4000, initial_step: 0.1, ..Default::default() };
    let best = if k == 1 && p == 0 && q == 0 {
        // the mean is the exact minimizer
        let r = rss(y, c0, &[], &[]);
        crate::optim::Minimum { x: vec![c0], f: r, iterations: 0, converged: true }
    } else {
        nelder_mead_restarted(objective, &x0, &opts, 3)
    };
    let n = y.len();
    let raw_sigma2 = best.f / n as f64;
    let degenerate = !(raw_sigma2 > SIGMA2_FLOOR);
    let sigma2 = raw_sigma2.max(SIGMA2_FLOOR);
    let ar = best.x[1..1 + p].to_vec();
    let ma = best.x[1 + p..].to_vec();
    Ok(ArimaModel {
        p,
        d: 0,
        q,
        intercept: best.x[0],
        stationary: roots_outside_unit_circle(&ar),
        invertible: roots_outside_unit_circle(&ma),
        ar,
        ma,
        sigma2,
        aic: n as f64 * sigma2.ln() + 2.0 * k as f64,
        nobs: n,
        converged: best.converged,
        degenerate,
    })
}

/// ARIMA(p, d, q): differences `y` `d` times and fits the ARMA part.
pub fn fit_arima(y: &[f64], p: usize, d: usize, q: usize) -> Result<ArimaModel, ArimaError> {
    if d > 2 {
        return Err(ArimaError::InvalidOrder(d));
    }
    let yd = difference(y, d)?;
    Ok(ArimaModel { d, ..fit_arma(&yd, p, q)? })
}

/// Exhaustive AIC search over `p <= max_p`, `d <= max_d`, `q <= max_q`.
///
/// Every candidate is fit on its differenced series trimmed to the common
/// length `n - max_d`. Near-ties (relative 1e-9) prefer smaller `p + q`,
/// then smaller `d`.
pub fn select_order(y: &[f64], max_p: usize, max_d: usize, max_q: usize) -> Result<ArimaModel, ArimaError> {
    if max_d > 2 {
        return Err(ArimaError::InvalidOrder(max_d));
    }
    if y.len() <= max_d + max_p + max_q + 1 {
        return Err(ArimaError::TooShort { needed: max_d + max_p + max_q + 1, got: y.len() });
    }
    let mut series = Vec::new();
    for d in 0..=max_d {
        let yd = difference(y, d)?;
        series.push(yd[max_d - d..].to_vec());
    }
    let grid: Vec<(usize, usize, usize)> = (0..=max_d)
        .flat_map(|d| (0..=max_p).flat_map(move |p| (0..=max_q).map(move |q| (p, d, q))))
        .collect();
    let fits: Vec<ArimaModel> = grid
        .par_iter()
        .filter_map(|&(p, d, q)| fit_arma(&series[d], p, q).ok().map(|m| ArimaModel { d, ..m }))
        .filter(|m| m.aic.is_finite())
        .collect();
    let better = |a: &ArimaModel, b: &ArimaModel| {
        let tol = 1e-9 * a.aic.abs().max(b.aic.abs()).max(1.0);
        if (a.aic - b.aic).abs() > tol {
            return a.aic < b.aic;
        }
        (a.p + a.q, a.d, a.p) < (b.p + b.q, b.d, b.p)
    };
    let mut best: Option<&ArimaModel> = None;
    for m in &fits {
        if best.is_none_or(|b| better(m, b)) {
            best = Some(m);
        }
    }
    best.cloned().ok_or(ArimaError::AllFitsFailed)
}

/// `h`-step forecasts of the original series levels.
pub fn forecast(m: &ArimaModel, y: &[f64], h: usize) -> Result<Vec<f64>, ArimaError> {
    if h == 0 {
        return Ok(Vec::new());
    }
    let yd = difference(y, m.d)?;
    let resid = css_residuals(&yd, m.intercept, &m.ar, &m.ma);
    let mut hist = yd.clone();
    let mut errs = resid;
    let mut diffs = Vec::with_capacity(h);
    for _ in 0..h {
        let t = hist.len();
        let mut pred = m.intercept;
        for (i, phi) in m.ar.iter().enumerate() {
            if t > i {
                pred += phi * hist[t - i - 1];
            }
        }
        for (j, theta) in m.ma.iter().enumerate() {
            if t > j {
                pred -= theta * errs[t - j - 1];
            }
        }
        hist.push(pred);
        errs.push(0.0);
        diffs.push(pred);
    }
    // last value of each lower differencing level
    let mut last: Vec<f64> = (0..m.d).map(|k| *difference(y, k).expect("length checked").last().unwrap_or(&0.0)).collect();
    Ok(diffs
        .into_iter()
        .map(|f| {
            let mut v = f;
            for k in (0..m.d).rev() {
                last[k] += v;
                v = last[k];
            }
            v
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub lags: usize,
    pub nobs: usize,
    pub level: f64,
    pub critical_value: f64,
    pub reject: bool,
}

/// MacKinnon (2010) response-surface critical value, constant-only case.
pub fn adf_critical_value(level: f64, nobs: usize) -> Result<f64, ArimaError> {
    let coefs = if (level - 0.01).abs() < 1e-12 {
        [-3.43035, -6.5393, -16.786, -79.433]
    } else if (level - 0.05).abs() < 1e-12 {
        [-2.86154, -2.8903, -4.234, -40.040]
    } else if (level - 0.10).abs() < 1e-12 {
        [-2.56677, -1.5384, -2.809, 0.0]
    } else {
        return Err(ArimaError::UnsupportedLevel(level));
    };
    let t = nobs as f64;
    Ok(coefs[0] + coefs[1] / t + coefs[2] / (t * t) + coefs[3] / (t * t * t))
}

fn adf_regression(y: &[f64], dy: &[f64], lags: usize, first_row: usize) -> Result<(DVector<f64>, DVector<f64>, f64, usize), ArimaError> {
    let rows = dy.len() - first_row;
    let k = 2 + lags;
    let x = DMatrix::from_fn(rows, k, |r, c| {
        let t = first_row + r;
        match c {
            0 => 1.0,
            1 => y[t],
            _ => dy[t - (c - 1)],
        }
    });
    let target = DVector::from_iterator(rows, dy[first_row..].iter().copied());
    let (b, se, rss) = ols(&x, &target)?;
    Ok((b, se, rss, rows))
}

/// ADF test with a constant and no trend; lag order by AIC over
/// `0..=floor(12 (n/100)^{1/4})` on a common sample, then refit.
pub fn adf_test(y: &[f64], level: f64) -> Result<AdfResult, ArimaError> {
    if y.len() < 25 {
        return Err(ArimaError::TooShort { needed: 25, got: y.len() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(ArimaError::NonFinite);
    }
    adf_critical_value(level, 100)?;
    let n = y.len();
    let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    if dy.iter().all(|d| *d == 0.0) {
        return Err(ArimaError::Singular);
    }
    let max_lag = ((12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize).min(dy.len().saturating_sub(4) / 2);
    let mut best = (f64::INFINITY, 0usize);
    for lags in 0..=max_lag {
        let Ok((_, _, rss, rows)) = adf_regression(y, &dy, lags, max_lag) else { continue };
        let aic = rows as f64 * (rss / rows as f64).ln() + 2.0 * (2 + lags) as f64;
        if aic < best.0 {
            best = (aic, lags);
        }
    }
    let lags = best.1;
    let (b, se, _, rows) = adf_regression(y, &dy, lags, lags)?;
    if !(se[1] > 0.0) {
        return Err(ArimaError::Singular);
    }
    let statistic = b[1] / se[1];
    let critical_value = adf_critical_value(level, rows)?;
    Ok(AdfResult { statistic, lags, nobs: rows, level, critical_value, reject: statistic < critical_value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_examples() {
        assert_eq!(difference(&[1.0, 3.0, 6.0, 10.0], 1).unwrap(), vec![2.0, 3.0, 4.0]);
        assert_eq!(difference(&[1.0, 3.0, 6.0, 10.0], 2).unwrap(), vec![1.0, 1.0]);
        assert_eq!(difference(&[4.0, 2.0], 0).unwrap(), vec![4.0, 2.0]);
        assert!(difference(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn undifference_restores() {
        let y = [1.0, 3.0, 6.0, 10.0, 9.0];
        let heads = [y[0], difference(&y, 1).unwrap()[0]];
        assert_eq!(undifference(&difference(&y, 2).unwrap(), &heads), y.to_vec());
    }

    #[test]
    fn mean_model() {
        let y = [2.0, 4.0, 3.0, 5.0, 6.0, 1.0, 3.0, 4.0, 2.0, 5.0, 3.0, 4.0];
        let m = fit_arma(&y, 0, 0).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        assert!((m.intercept - mean).abs() < 1e-6);
        assert!((m.sigma2 - var).abs() < 1e-6);
        assert!(!m.degenerate);
    }

    #[test]
    fn constant_series_selects_white_noise_and_flags() {
        let y = vec![7.0; 60];
        let m = select_order(&y, 2, 1, 2).unwrap();
        assert_eq!((m.p, m.d, m.q), (0, 0, 0));
        assert!(m.degenerate);
    }

    #[test]
    fn mean_model_forecast_is_flat() {
        let m = ArimaModel {
            p: 0, d: 0, q: 0, intercept: 4.5, ar: vec![], ma: vec![], sigma2: 1.0, aic: 0.0,
            nobs: 3, converged: true, stationary: true, invertible: true, degenerate: false,
        };
        assert_eq!(forecast(&m, &[1.0, 2.0, 3.0], 4).unwrap(), vec![4.5; 4]);
        assert!(forecast(&m, &[1.0], 0).unwrap().is_empty());
    }

    #[test]
    fn random_walk_forecast_is_flat_continuation() {
        let m = ArimaModel {
            p: 0, d: 1, q: 0, intercept: 0.0, ar: vec![], ma: vec![], sigma2: 1.0, aic: 0.0,
            nobs: 3, converged: true, stationary: true, invertible: true, degenerate: false,
        };
        assert_eq!(forecast(&m, &[1.0, 5.0, 3.0, 8.0], 3).unwrap(), vec![8.0; 3]);
    }

    #[test]
    fn roots() {
        assert!(roots_outside_unit_circle(&[0.5]));
        assert!(!roots_outside_unit_circle(&[1.0]));
        assert!(roots_outside_unit_circle(&[0.5, 0.3]));
        assert!(!roots_outside_unit_circle(&[0.7, 0.4]));
    }

    #[test]
    fn adf_errors() {
        assert!(matches!(adf_test(&[1.0; 10], 0.01), Err(ArimaError::TooShort { .. })));
        assert_eq!(adf_test(&[3.0; 40], 0.01), Err(ArimaError::Singular));
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin()).collect();
        assert_eq!(adf_test(&y, 0.02), Err(ArimaError::UnsupportedLevel(0.02)));
    }

    #[test]
    fn critical_value_asymptote() {
        let c = adf_critical_value(0.01, 1_000_000).unwrap();
        assert!((c + 3.43035).abs() < 1e-4);
        assert!(adf_critical_value(0.01, 100).unwrap() < c);
    }
}
