//! Forecast scoring: MAPE, direction accuracy and the filtered comparison table.
//!
//! Direction accuracy is the share of clusters whose predicted direction
//! (relative to the value at the forecast origin) equals the realized one.
//! A zero change only matches another zero change.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no forecasts to score")]
    Empty,
    #[error("every realized value is zero; MAPE is undefined")]
    AllZero,
    #[error("non-finite value in forecast for cluster {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterForecast {
    pub cluster: usize,
    pub model: String,
    pub predicted: f64,
    pub realized: f64,
    /// Value at the forecast origin.
    pub reference: f64,
}

impl ClusterForecast {
    pub fn new(cluster: usize, model: &str, predicted: f64, realized: f64, reference: f64) -> Self {
        Self { cluster, model: model.to_string(), predicted, realized, reference }
    }

    /// `|P - R| / R`, or `None` when `R = 0`.
    pub fn abs_pct_error(&self) -> Option<f64> {
        (self.realized != 0.0).then(|| (self.predicted - self.realized).abs() / self.realized.abs())
    }

    pub fn direction_matches(&self) -> bool {
        direction(self.predicted, self.reference) == direction(self.realized, self.reference)
    }
}

fn direction(v: f64, reference: f64) -> Ordering {
    v.partial_cmp(&reference).unwrap_or(Ordering::Equal)
}

fn check(forecasts: &[ClusterForecast]) -> Result<(), MetricsError> {
    if forecasts.is_empty() {
        return Err(MetricsError::Empty);
    }
    for f in forecasts {
        if !(f.predicted.is_finite() && f.realized.is_finite() && f.reference.is_finite()) {
            return Err(MetricsError::NonFinite(f.cluster));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    pub percent: f64,
    pub used: usize,
    pub excluded_zero: usize,
}

/// Mean absolute percentage error over clusters with a non-zero realized value.
pub fn mape(forecasts: &[ClusterForecast]) -> Result<Mape, MetricsError> {
    check(forecasts)?;
    let errs: Vec<f64> = forecasts.iter().filter_map(ClusterForecast::abs_pct_error).collect();
    if errs.is_empty() {
        return Err(MetricsError::AllZero);
    }
    Ok(Mape {
        percent: 100.0 * errs.iter().sum::<f64>() / errs.len() as f64,
        used: errs.len(),
        excluded_zero: forecasts.len() - errs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionAccuracy {
    pub percent: f64,
    pub matched: usize,
    pub total: usize,
}

pub fn direction_accuracy(forecasts: &[ClusterForecast]) -> Result<DirectionAccuracy, MetricsError> {
    check(forecasts)?;
    let matched = forecasts.iter().filter(|f| f.direction_matches()).count();
    Ok(DirectionAccuracy { percent: 100.0 * matched as f64 / forecasts.len() as f64, matched, total: forecasts.len() })
}

/// Subset of clusters whose own percentage error is strictly below the overall MAPE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredRow {
    pub retained: usize,
    pub total: usize,
    pub direction_accuracy: Option<f64>,
}

impl FilteredRow {
    /// The `k / N` cell.
    pub fn count_label(&self) -> String {
        format!("{} / {}", self.retained, self.total)
    }
}

pub fn filtered(forecasts: &[ClusterForecast], overall_mape: f64) -> Result<FilteredRow, MetricsError> {
    check(forecasts)?;
    let kept: Vec<ClusterForecast> = forecasts
        .iter()
        .filter(|f| f.abs_pct_error().is_some_and(|e| 100.0 * e < overall_mape))
        .cloned()
        .collect();
    let da = if kept.is_empty() {
        log::info!("filtered subset is empty; direction accuracy omitted");
        None
    } else {
        Some(direction_accuracy(&kept)?.percent)
    };
    Ok(FilteredRow { retained: kept.len(), total: forecasts.len(), direction_accuracy: da })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub horizon: usize,
    pub model: String,
    pub clusters: usize,
    pub mape: f64,
    pub excluded_zero: usize,
    pub direction_accuracy: f64,
    pub filtered: FilteredRow,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

/// Scores one (horizon, model) group and returns its row.
pub fn filtered_table(horizon: usize, forecasts: &[ClusterForecast], overall_mape: f64) -> Result<ScoreRow, MetricsError> {
    let m = mape(forecasts)?;
    let da = direction_accuracy(forecasts)?;
    let model = forecasts[0].model.clone();
    Ok(ScoreRow {
        horizon,
        model,
        clusters: forecasts.len(),
        mape: m.percent,
        excluded_zero: m.excluded_zero,
        direction_accuracy: da.percent,
        filtered: filtered(forecasts, overall_mape)?,
    })
}

impl ScoreTable {
    /// Groups forecasts by model (first-seen order) for one horizon and appends one row each.
    pub fn add_horizon(&mut self, horizon: usize, forecasts: &[ClusterForecast]) -> Result<(), MetricsError> {
        let mut models: Vec<&str> = Vec::new();
        for f in forecasts {
            if !models.contains(&f.model.as_str()) {
                models.push(&f.model);
            }
        }
        for model in models {
            let group: Vec<ClusterForecast> = forecasts.iter().filter(|f| f.model == model).cloned().collect();
            let overall = mape(&group)?.percent;
            self.rows.push(filtered_table(horizon, &group, overall)?);
        }
        Ok(())
    }

    /// Overall table: horizon, model, MAPE, DA.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("horizon_months,model,clusters,mape_percent,excluded_zero,direction_accuracy_percent\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.2},{},{:.2}",
                r.horizon, r.model, r.clusters, r.mape, r.excluded_zero, r.direction_accuracy
            );
        }
        out
    }

    /// Filtered table: horizon, model, `k / N`, DA on the subset.
    pub fn filtered_to_csv(&self) -> String {
        let mut out = String::from("horizon_months,model,clusters_under_mape,direction_accuracy_percent\n");
        for r in &self.rows {
            let da = r.filtered.direction_accuracy.map(|v| format!("{v:.2}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", r.horizon, r.model, r.filtered.count_label(), da);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("score table serializes")
    }
}
