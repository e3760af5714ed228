use std::path::Path;
use std::process::Command;

use citegrowth::arima::adf_test;
use citegrowth::pipeline::{self, artifacts, CommunitySeries, ModelKind, PipelineError, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn small_config(out: &Path, models: &[ModelKind]) -> RunConfig {
    let mut cfg = RunConfig { out: out.to_path_buf(), models: models.to_vec(), seed: 3, ..Default::default() };
    cfg.input.synthetic.blocks = 3;
    cfg.input.synthetic.nodes_per_block = 40;
    cfg.input.synthetic.p_in = 0.3;
    cfg.input.synthetic.p_out = 0.01;
    cfg.input.synthetic.time_start = "2000-01".into();
    cfg.input.synthetic.time_end = "2007-01".into();
    cfg.series.train_start = "2000-01".into();
    cfg.walk.walk_length = 20;
    cfg.walk.walks_per_node = 4;
    cfg.embedding.dimension = 16;
    cfg.embedding.window = 4;
    cfg.embedding.epochs = 1;
    cfg.arima.max_p = 1;
    cfg.arima.max_d = 1;
    cfg.arima.max_q = 1;
    cfg.lstm.units = 8;
    cfg.lstm.max_epochs = 3;
    cfg
}

#[test]
fn arima_only_run_writes_no_other_model_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &[ModelKind::Arima]);
    let r = pipeline::run_pipeline(&cfg).unwrap();
    assert!(dir.path().join(artifacts::FITS_ARIMA).exists());
    assert!(!dir.path().join(artifacts::FITS_HAWKES).exists());
    assert!(!dir.path().join(artifacts::LSTM_DIR).exists());
    assert!(r.forecasts.iter().all(|f| f.model == "arima"));
    assert_eq!(r.forecasts.len(), r.clusters * cfg.series.horizons.len());
    let listed: Vec<&str> = r.manifest.artifacts.iter().map(|a| a.path.as_str()).collect();
    for name in [artifacts::GRAPH, artifacts::EMBEDDING, artifacts::ASSIGNMENTS, artifacts::SERIES, artifacts::FORECASTS] {
        assert!(listed.contains(&name), "{name} missing from manifest");
    }
    assert!(!listed.contains(&artifacts::MANIFEST));
}

#[test]
fn series_partition_every_node() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &[ModelKind::Arima]);
    let g = pipeline::generate(&cfg).unwrap();
    let emb = pipeline::embed(&cfg, &g).unwrap();
    let (_, a) = pipeline::cluster(&cfg, g.labels(), &emb, g.planted()).unwrap();
    assert_eq!(a.sizes().iter().sum::<usize>(), g.node_count());
    let series = pipeline::series_stage(&cfg, &g, &a).unwrap();
    assert_eq!(series.len(), a.k);
    let (start, end) = cfg.train_window().unwrap();
    let horizon = *cfg.series.horizons.iter().max().unwrap() as i64;
    let in_range = g.app_times().iter().filter(|t| (start..=end + horizon).contains(&(t.floor() as i64))).count();
    let binned: f64 = series.iter().map(|s| s.counts.iter().chain(&s.future).sum::<f64>()).sum();
    assert_eq!(binned as usize, in_range);
    for s in &series {
        assert_eq!(s.events.len() as f64, s.counts.iter().sum::<f64>());
        assert_eq!(s.counts.len() as i64, end - start + 1);
    }
    let back = pipeline::load_series(&cfg).unwrap();
    assert_eq!(back, series);
}

#[test]
fn stages_require_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), &[ModelKind::Arima]);
    assert!(matches!(pipeline::load_series(&cfg), Err(PipelineError::MissingArtifact { .. })));
    assert!(matches!(pipeline::load_forecasts(&cfg), Err(PipelineError::MissingArtifact { .. })));
}

fn community(cluster: usize, counts: Vec<f64>) -> CommunitySeries {
    CommunitySeries { cluster, start_month: 0, counts, future: vec![0.0; 12], events: Vec::new() }
}

#[test]
fn adf_summary_counts_non_rejections() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let mut series = Vec::new();
    for c in 0..39 {
        let e = draw(252);
        let counts = if c < 13 {
            e.iter().scan(50.0, |s, v| {
                *s += v;
                Some(*s)
            })
            .collect()
        } else {
            e.iter().map(|v| 50.0 + v).collect()
        };
        series.push(community(c, counts));
    }
    let expected = series.iter().filter(|s| !adf_test(&s.counts, 0.01).unwrap().reject).count();
    let report = pipeline::adf_report(&series);
    assert_eq!(report.tested, 39);
    assert_eq!(report.non_rejections, expected);
    assert_eq!(report.summary(), "13 / 39");
}

#[test]
fn config_round_trip_and_validation() {
    let cfg = small_config(Path::new("x"), &ModelKind::ALL);
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert!(RunConfig::from_toml("bogus = 1").is_err());
    assert!(RunConfig::from_toml("[series]\nhorizons = [0]").is_err());
    assert!(RunConfig::from_toml("[cluster]\nfraction = 2.0").is_err());
    assert_eq!(ModelKind::parse_list("lstm, arima,arima").unwrap(), vec![ModelKind::Arima, ModelKind::Lstm]);
    assert!(ModelKind::parse_list("prophet").is_err());
}

#[test]
fn cli_runs_stages_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, small_config(&out, &ModelKind::ALL).to_toml()).unwrap();
    let bin = env!("CARGO_BIN_EXE_citegrowth");
    let run = |args: &[&str]| Command::new(bin).args(args).arg("--config").arg(&cfg_path).output().unwrap();

    let printed = run(&["config", "--seed", "9"]);
    assert!(printed.status.success());
    let cfg = RunConfig::from_toml(&String::from_utf8(printed.stdout).unwrap()).unwrap();
    assert_eq!(cfg.seed, 9);

    let missing = run(&["fit"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("series"));

    for stage in ["generate", "embed", "cluster", "series"] {
        let o = run(&[stage]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for stage in ["fit", "forecast", "score", "report"] {
        let o = run(&[stage, "--models", "arima,hawkes"]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(out.join(artifacts::REPORT_BARS).exists());
    assert!(!out.join(artifacts::LSTM_DIR).exists());
    assert!(!run(&["run", "--models", "arima,arma"]).status.success());
}
