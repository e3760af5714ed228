use citegrowth::evalmetrics::{direction_accuracy, filtered, mape, ClusterForecast, MetricsError, ScoreTable};
use proptest::prelude::*;

fn forecasts_strategy() -> impl Strategy<Value = Vec<ClusterForecast>> {
    prop::collection::vec((0.0f64..100.0, 0.5f64..100.0, 0.0f64..100.0), 1..40).prop_map(|rows| {
        rows.into_iter().enumerate().map(|(i, (p, r, o))| ClusterForecast::new(i, "m", p, r, o)).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mape_is_scale_invariant(fs in forecasts_strategy(), c in 0.01f64..100.0) {
        let scaled: Vec<ClusterForecast> = fs
            .iter()
            .map(|f| ClusterForecast::new(f.cluster, "m", f.predicted * c, f.realized * c, f.reference * c))
            .collect();
        let (a, b) = (mape(&fs).unwrap().percent, mape(&scaled).unwrap().percent);
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        prop_assert_eq!(direction_accuracy(&fs).unwrap(), direction_accuracy(&scaled).unwrap());
    }

    #[test]
    fn direction_accuracy_is_monotone_invariant(fs in forecasts_strategy()) {
        let g = |x: f64| x.powi(3) + 2.0 * x - 7.0;
        let mapped: Vec<ClusterForecast> =
            fs.iter().map(|f| ClusterForecast::new(f.cluster, "m", g(f.predicted), g(f.realized), g(f.reference))).collect();
        prop_assert_eq!(direction_accuracy(&fs).unwrap().matched, direction_accuracy(&mapped).unwrap().matched);
    }

    #[test]
    fn filtered_subset_is_below_overall(fs in forecasts_strategy()) {
        let overall = mape(&fs).unwrap().percent;
        let row = filtered(&fs, overall).unwrap();
        let expected = fs.iter().filter(|f| f.abs_pct_error().is_some_and(|e| 100.0 * e < overall)).count();
        prop_assert_eq!(row.retained, expected);
        prop_assert_eq!(row.total, fs.len());
        prop_assert_eq!(row.direction_accuracy.is_some(), expected > 0);
    }

    #[test]
    fn direction_accuracy_granularity(fs in forecasts_strategy()) {
        let da = direction_accuracy(&fs).unwrap();
        let k = da.percent * fs.len() as f64 / 100.0;
        prop_assert!((k - k.round()).abs() < 1e-9);
        prop_assert_eq!(k.round() as usize, da.matched);
    }
}

#[test]
fn perfect_forecasts() {
    let fs: Vec<ClusterForecast> = (1..6).map(|i| ClusterForecast::new(i, "m", i as f64, i as f64, 0.0)).collect();
    assert_eq!(mape(&fs).unwrap().percent, 0.0);
    assert_eq!(direction_accuracy(&fs).unwrap().percent, 100.0);
}

#[test]
fn non_finite_values_rejected() {
    let fs = [ClusterForecast::new(3, "m", f64::NAN, 1.0, 0.0)];
    assert_eq!(mape(&fs), Err(MetricsError::NonFinite(3)));
    assert_eq!(direction_accuracy(&fs), Err(MetricsError::NonFinite(3)));
}

#[test]
fn thirty_nine_cluster_table() {
    let fs: Vec<ClusterForecast> = (0..39)
        .map(|i| {
            let err = if i < 14 { 0.05 } else { 0.9 };
            ClusterForecast::new(i, "arima", 100.0 * (1.0 + err), 100.0, if i % 2 == 0 { 50.0 } else { 150.0 })
        })
        .collect();
    let mut t = ScoreTable::default();
    t.add_horizon(12, &fs).unwrap();
    assert_eq!(t.rows[0].filtered.count_label(), "14 / 39");
    let csv = t.filtered_to_csv();
    assert!(csv.lines().nth(1).unwrap().starts_with("12,arima,14 / 39,"));
    let json: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
    assert_eq!(json["rows"][0]["filtered"]["retained"], 14);
}
