//! End-to-end orchestration: graph, embedding, clustering, community series,
//! the three forecasters and the score tables.
//!
//! Every stage reads its inputs from and writes its artifacts to one output
//! directory, so stages can run one at a time from the CLI or all together
//! through [`run_pipeline`]. A `manifest.json` records the seed, the config
//! hash and a SHA-256 digest of every artifact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arima::{self, AdfResult, ArimaModel};
use crate::citegraph::{self, CitationGraph, GraphFormat, SbmConfig};
use crate::dendro::{self, ClusterAssignment, Dendrogram};
use crate::evalmetrics::{ClusterForecast, ScoreTable};
use crate::hawkes::{self, EventSeries, FitOptions, HawkesFit};
use crate::lstm::{self, LstmConfig, TrainedLstm};
use crate::rng;
use crate::skipgram::{self, Embedding, EmbeddingParams, TrainMode};
use crate::walker::{self, AliasMode, WalkParams};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[{stage}] {message}")]
    Stage { stage: &'static str, message: String },
    #[error("[{stage}] missing input {path}: run the `{needs}` stage first")]
    MissingArtifact { stage: &'static str, path: PathBuf, needs: &'static str },
    #[error("config: {0}")]
    Config(String),
}

fn stage_err<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hawkes,
    Arima,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Hawkes, ModelKind::Arima, ModelKind::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hawkes => "hawkes",
            ModelKind::Arima => "arima",
            ModelKind::Lstm => "lstm",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<ModelKind>, PipelineError> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m = match part.to_ascii_lowercase().as_str() {
                "hawkes" => ModelKind::Hawkes,
                "arima" => ModelKind::Arima,
                "lstm" => ModelKind::Lstm,
                other => return Err(PipelineError::Config(format!("unknown model `{other}`"))),
            };
            if !out.contains(&m) {
                out.push(m);
            }
        }
        out.sort();
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutRule {
    /// Merges above `fraction x max merge height` are cut.
    Height,
    /// Inconsistency-criterion cut at `fraction x max inconsistency`.
    Inconsistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesTarget {
    /// Application dates of member patents.
    Applications,
    /// Dates of citations received by member patents.
    Citations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub time_start: String,
    pub time_end: String,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            blocks: 4,
            nodes_per_block: 50,
            p_in: 0.2,
            p_out: 0.005,
            time_start: "1985-01".into(),
            time_end: "2007-01".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    /// Graph file; when absent a synthetic SBM graph is generated.
    pub graph: Option<PathBuf>,
    pub format: GraphFormat,
    pub synthetic: SyntheticSection,
}

impl Default for InputSection {
    fn default() -> Self {
        Self { graph: None, format: GraphFormat::Dot, synthetic: SyntheticSection::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkSection {
    pub p: f64,
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    /// Follow citation direction instead of treating edges as undirected.
    pub directed: bool,
    pub alias_mode: AliasMode,
}

impl Default for WalkSection {
    fn default() -> Self {
        let w = WalkParams::default();
        Self {
            p: w.p,
            q: w.q,
            walk_length: w.walk_length,
            walks_per_node: w.walks_per_node,
            directed: false,
            alias_mode: w.alias_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub dimension: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        let e = EmbeddingParams::default();
        Self { dimension: e.dimension, window: e.window, negatives: e.negatives, epochs: e.epochs, initial_lr: e.initial_lr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub rule: CutRule,
    pub fraction: f64,
    pub depth: usize,
    /// Scale embeddings to unit length before linkage.
    pub normalize: bool,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self { rule: CutRule::Height, fraction: 0.2, depth: 2, normalize: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeriesSection {
    pub train_start: String,
    /// Last training month; also the forecast origin.
    pub train_end: String,
    pub target: SeriesTarget,
    pub horizons: Vec<usize>,
}

impl Default for SeriesSection {
    fn default() -> Self {
        Self {
            train_start: "1985-01".into(),
            train_end: "2005-12".into(),
            target: SeriesTarget::Applications,
            horizons: vec![3, 12],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HawkesSection {
    pub starts: usize,
    pub min_events: usize,
}

impl Default for HawkesSection {
    fn default() -> Self {
        let f = FitOptions::default();
        Self { starts: f.starts, min_events: f.min_events }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArimaSection {
    pub max_p: usize,
    pub max_d: usize,
    pub max_q: usize,
}

impl Default for ArimaSection {
    fn default() -> Self {
        Self { max_p: 5, max_d: 2, max_q: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Single-threaded embedding training for bit-identical output.
    pub deterministic: bool,
    pub models: Vec<ModelKind>,
    pub input: InputSection,
    pub walk: WalkSection,
    pub embedding: EmbeddingSection,
    pub cluster: ClusterSection,
    pub series: SeriesSection,
    pub hawkes: HawkesSection,
    pub arima: ArimaSection,
    pub lstm: LstmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            deterministic: true,
            models: ModelKind::ALL.to_vec(),
            input: InputSection::default(),
            walk: WalkSection::default(),
            embedding: EmbeddingSection::default(),
            cluster: ClusterSection::default(),
            series: SeriesSection::default(),
            hawkes: HawkesSection::default(),
            arima: ArimaSection::default(),
            lstm: LstmConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let (start, end) = self.train_window()?;
        if end < start {
            return Err(PipelineError::Config("train_end precedes train_start".into()));
        }
        if self.series.horizons.is_empty() || self.series.horizons.contains(&0) {
            return Err(PipelineError::Config("horizons must be positive".into()));
        }
        if !(self.cluster.fraction > 0.0 && self.cluster.fraction <= 1.0) {
            return Err(PipelineError::Config("cluster.fraction must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Inclusive `(start, end)` month indices of the training window.
    pub fn train_window(&self) -> Result<(i64, i64), PipelineError> {
        let parse = |s: &str| {
            citegraph::parse_time(s)
                .filter(|t| t.fract() == 0.0)
                .map(|t| t as i64)
                .ok_or_else(|| PipelineError::Config(format!("bad month `{s}` (expected YYYY-MM)")))
        };
        Ok((parse(&self.series.train_start)?, parse(&self.series.train_end)?))
    }

    fn max_horizon(&self) -> usize {
        self.series.horizons.iter().copied().max().unwrap_or(0)
    }

    fn walk_params(&self) -> WalkParams {
        WalkParams {
            p: self.walk.p,
            q: self.walk.q,
            walk_length: self.walk.walk_length,
            walks_per_node: self.walk.walks_per_node,
            seed: self.seed,
            alias_mode: self.walk.alias_mode,
        }
    }

    fn embedding_params(&self) -> EmbeddingParams {
        EmbeddingParams {
            dimension: self.embedding.dimension,
            window: self.embedding.window,
            negatives: self.embedding.negatives,
            epochs: self.embedding.epochs,
            initial_lr: self.embedding.initial_lr,
            seed: self.seed,
            mode: if self.deterministic { TrainMode::Deterministic } else { TrainMode::Parallel },
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn enabled(&self, m: ModelKind) -> bool {
        self.models.contains(&m)
    }
}

pub mod artifacts {
    pub const GRAPH: &str = "graph.dot";
    pub const EMBEDDING: &str = "embedding.txt";
    pub const DENDROGRAM: &str = "dendrogram.txt";
    pub const ASSIGNMENTS: &str = "assignments.csv";
    pub const CLUSTER_SUMMARY: &str = "cluster_summary.json";
    pub const SERIES: &str = "series.csv";
    pub const EVENTS: &str = "events.csv";
    pub const ADF: &str = "adf.json";
    pub const FITS_HAWKES: &str = "fits_hawkes.json";
    pub const FITS_ARIMA: &str = "fits_arima.json";
    pub const LSTM_DIR: &str = "lstm";
    pub const FORECASTS: &str = "forecasts.csv";
    pub const SCORES: &str = "scores.csv";
    pub const SCORES_FILTERED: &str = "scores_filtered.csv";
    pub const SCORES_JSON: &str = "scores.json";
    pub const REPORT_DENDROGRAM: &str = "report_dendrogram.csv";
    pub const REPORT_BARS: &str = "report_bars.csv";
    pub const MANIFEST: &str = "manifest.json";
}

fn write_file(stage: &'static str, path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(stage_err(stage))?;
    }
    fs::write(path, contents).map_err(|e| PipelineError::Stage { stage, message: format!("{}: {e}", path.display()) })
}

fn require(stage: &'static str, path: PathBuf, needs: &'static str) -> Result<PathBuf, PipelineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact { stage, path, needs })
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// graph

/// Generates the synthetic SBM graph described by `input.synthetic`.
pub fn generate(cfg: &RunConfig) -> Result<CitationGraph, PipelineError> {
    let s = &cfg.input.synthetic;
    let bad = |t: &str| PipelineError::Config(format!("bad synthetic time `{t}`"));
    let sbm = SbmConfig {
        block_sizes: vec![s.nodes_per_block; s.blocks],
        p_in: s.p_in,
        p_out: s.p_out,
        seed: cfg.seed,
        time_start: citegraph::parse_time(&s.time_start).ok_or_else(|| bad(&s.time_start))?,
        time_end: citegraph::parse_time(&s.time_end).ok_or_else(|| bad(&s.time_end))?,
    };
    let g = citegraph::generate_synthetic_graph(&sbm).map_err(stage_err("generate"))?;
    write_file("generate", &cfg.path(artifacts::GRAPH), citegraph::write_dot(&g))?;
    Ok(g)
}

/// The configured input graph, or the generated one in the output directory.
pub fn load_input_graph(cfg: &RunConfig) -> Result<CitationGraph, PipelineError> {
    match &cfg.input.graph {
        Some(p) => citegraph::load_graph(p, cfg.input.format).map_err(stage_err("load")),
        None => {
            let p = require("load", cfg.path(artifacts::GRAPH), "generate")?;
            citegraph::load_graph(&p, GraphFormat::Dot).map_err(stage_err("load"))
        }
    }
}

// ---------------------------------------------------------------------------
// embedding and clustering

pub fn embed(cfg: &RunConfig, g: &CitationGraph) -> Result<Embedding, PipelineError> {
    let adj = if cfg.walk.directed { citegraph::as_directed_adjacency(g) } else { citegraph::as_undirected_adjacency(g) };
    let corpus = walker::generate_walks(&adj, &cfg.walk_params()).map_err(stage_err("embed"))?;
    let (emb, report) = skipgram::train(&corpus, g.node_count(), &cfg.embedding_params()).map_err(stage_err("embed"))?;
    log::info!("embedding: {} walks, final epoch loss {:?}", corpus.len(), report.epoch_losses.last());
    let mut buf = Vec::new();
    emb.write_text(g.labels(), &mut buf).map_err(stage_err("embed"))?;
    write_file("embed", &cfg.path(artifacts::EMBEDDING), buf)?;
    Ok(emb)
}

pub fn load_embedding(cfg: &RunConfig) -> Result<(Vec<String>, Embedding), PipelineError> {
    let p = require("cluster", cfg.path(artifacts::EMBEDDING), "embed")?;
    let f = fs::File::open(&p).map_err(stage_err("cluster"))?;
    Embedding::read_text(BufReader::new(f)).map_err(stage_err("cluster"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub rule: CutRule,
    pub fraction: f64,
    pub clusters: usize,
    pub sizes: Vec<usize>,
    /// NMI against planted blocks when the graph carries them.
    pub nmi_vs_planted: Option<f64>,
}

pub fn cluster(
    cfg: &RunConfig,
    labels: &[String],
    emb: &Embedding,
    planted: Option<&[usize]>,
) -> Result<(Dendrogram, ClusterAssignment), PipelineError> {
    let emb = if cfg.cluster.normalize { emb.normalized() } else { emb.clone() };
    let rows: Vec<Vec<f64>> = emb.rows().map(<[f64]>::to_vec).collect();
    let d = dendro::ward_linkage(&rows).map_err(stage_err("cluster"))?;
    let a = match cfg.cluster.rule {
        CutRule::Height => dendro::cut_by_height(&d, cfg.cluster.fraction),
        CutRule::Inconsistency => dendro::cut_by_inconsistency_depth(&d, cfg.cluster.fraction, cfg.cluster.depth),
    }
    .map_err(stage_err("cluster"))?;
    write_file("cluster", &cfg.path(artifacts::DENDROGRAM), d.to_text())?;
    let mut csv = String::from("label,cluster\n");
    for (l, c) in labels.iter().zip(&a.labels) {
        let _ = writeln!(csv, "{l},{c}");
    }
    write_file("cluster", &cfg.path(artifacts::ASSIGNMENTS), csv)?;
    let summary = ClusterSummary {
        rule: cfg.cluster.rule,
        fraction: cfg.cluster.fraction,
        clusters: a.k,
        sizes: a.sizes(),
        nmi_vs_planted: planted.map(|p| dendro::normalized_mutual_information(&a.labels, p)),
    };
    write_file("cluster", &cfg.path(artifacts::CLUSTER_SUMMARY), to_json(&summary))?;
    Ok((d, a))
}

/// Reads `assignments.csv` and orders it by the graph's node labels.
pub fn load_assignment(cfg: &RunConfig, g: &CitationGraph) -> Result<ClusterAssignment, PipelineError> {
    let p = require("series", cfg.path(artifacts::ASSIGNMENTS), "cluster")?;
    let mut rdr = csv::Reader::from_path(&p).map_err(stage_err("series"))?;
    let mut raw = vec![usize::MAX; g.node_count()];
    for rec in rdr.deserialize::<(String, usize)>() {
        let (label, c) = rec.map_err(stage_err("series"))?;
        let id = g.node_id(&label).ok_or_else(|| PipelineError::Stage {
            stage: "series",
            message: format!("assignment for unknown node `{label}`"),
        })?;
        raw[id.0] = c;
    }
    if raw.contains(&usize::MAX) {
        return Err(PipelineError::Stage { stage: "series", message: "assignment does not cover every node".into() });
    }
    Ok(ClusterAssignment::from_raw(&raw))
}

// ---------------------------------------------------------------------------
// community series

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunitySeries {
    pub cluster: usize,
    /// Month index of `counts[0]`.
    pub start_month: i64,
    /// Monthly counts over the training window.
    pub counts: Vec<f64>,
    /// Monthly counts after the origin (`future[0]` is origin + 1).
    pub future: Vec<f64>,
    /// De-tied event times in months since the window start.
    pub events: Vec<f64>,
}

impl CommunitySeries {
    pub fn train_len(&self) -> usize {
        self.counts.len()
    }

    /// Count in the origin month.
    pub fn reference(&self) -> f64 {
        self.counts.last().copied().unwrap_or(0.0)
    }
}

/// Bins member timestamps by month for every cluster.
pub fn build_series(g: &CitationGraph, a: &ClusterAssignment, cfg: &RunConfig) -> Result<Vec<CommunitySeries>, PipelineError> {
    if a.labels.len() != g.node_count() {
        return Err(PipelineError::Stage { stage: "series", message: "assignment does not cover every node".into() });
    }
    let (start, end) = cfg.train_window()?;
    let months = (end - start + 1) as usize;
    let future_len = cfg.max_horizon();
    let mut per_cluster: Vec<Vec<f64>> = vec![Vec::new(); a.k];
    match cfg.series.target {
        SeriesTarget::Applications => {
            for (i, &c) in a.labels.iter().enumerate() {
                per_cluster[c].push(g.app_times()[i]);
            }
        }
        SeriesTarget::Citations => {
            for (i, times) in g.citation_times().into_iter().enumerate() {
                per_cluster[a.labels[i]].extend(times);
            }
        }
    }
    let mut out = Vec::with_capacity(a.k);
    for (c, mut times) in per_cluster.into_iter().enumerate() {
        times.sort_by(f64::total_cmp);
        let mut counts = vec![0.0; months];
        let mut future = vec![0.0; future_len];
        let mut in_window = Vec::new();
        for t in times {
            let m = t.floor() as i64;
            if (start..=end).contains(&m) {
                counts[(m - start) as usize] += 1.0;
                in_window.push(t - start as f64);
            } else if m > end && ((m - end) as usize) <= future_len {
                future[(m - end - 1) as usize] += 1.0;
            }
        }
        let events = hawkes::detie(&in_window, 1.0).map_err(stage_err("series"))?;
        if events.is_empty() {
            log::warn!("cluster {c} has no events in the training window; model fits will skip it");
        }
        out.push(CommunitySeries { cluster: c, start_month: start, counts, future, events });
    }
    Ok(out)
}

/// Unit-root test at the 1% level on every cluster series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdfRow {
    pub cluster: usize,
    pub result: Option<AdfResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdfReport {
    pub rows: Vec<AdfRow>,
    pub tested: usize,
    pub non_rejections: usize,
}

impl AdfReport {
    /// `non-rejections / tested`.
    pub fn summary(&self) -> String {
        format!("{} / {}", self.non_rejections, self.tested)
    }
}

pub fn adf_report(series: &[CommunitySeries]) -> AdfReport {
    let rows: Vec<AdfRow> = series
        .iter()
        .map(|s| match arima::adf_test(&s.counts, 0.01) {
            Ok(r) => AdfRow { cluster: s.cluster, result: Some(r), note: None },
            Err(e) => AdfRow { cluster: s.cluster, result: None, note: Some(e.to_string()) },
        })
        .collect();
    let tested = rows.iter().filter(|r| r.result.is_some()).count();
    let non_rejections = rows.iter().filter(|r| r.result.as_ref().is_some_and(|x| !x.reject)).count();
    AdfReport { rows, tested, non_rejections }
}

fn write_series(cfg: &RunConfig, series: &[CommunitySeries]) -> Result<(), PipelineError> {
    let mut csv = String::from("cluster,month,count,split\n");
    let mut ev = String::from("cluster,time\n");
    for s in series {
        for (i, v) in s.counts.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{},train", s.cluster, citegraph::format_time((s.start_month + i as i64) as f64), v);
        }
        let origin = s.start_month + s.train_len() as i64 - 1;
        for (i, v) in s.future.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{},future", s.cluster, citegraph::format_time((origin + 1 + i as i64) as f64), v);
        }
        for t in &s.events {
            let _ = writeln!(ev, "{},{}", s.cluster, t);
        }
    }
    write_file("series", &cfg.path(artifacts::SERIES), csv)?;
    write_file("series", &cfg.path(artifacts::EVENTS), ev)
}

pub fn series_stage(cfg: &RunConfig, g: &CitationGraph, a: &ClusterAssignment) -> Result<Vec<CommunitySeries>, PipelineError> {
    let series = build_series(g, a, cfg)?;
    write_series(cfg, &series)?;
    let adf = adf_report(&series);
    log::info!("ADF unit root not rejected at 1%: {}", adf.summary());
    write_file("series", &cfg.path(artifacts::ADF), to_json(&adf))?;
    Ok(series)
}

/// Reads `series.csv` and `events.csv` back.
pub fn load_series(cfg: &RunConfig) -> Result<Vec<CommunitySeries>, PipelineError> {
    const STAGE: &str = "fit";
    let sp = require(STAGE, cfg.path(artifacts::SERIES), "series")?;
    let ep = require(STAGE, cfg.path(artifacts::EVENTS), "series")?;
    let mut map: BTreeMap<usize, CommunitySeries> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(&sp).map_err(stage_err(STAGE))?;
    for rec in rdr.deserialize::<(usize, String, f64, String)>() {
        let (c, month, v, split) = rec.map_err(stage_err(STAGE))?;
        let m = citegraph::parse_time(&month)
            .ok_or_else(|| PipelineError::Stage { stage: STAGE, message: format!("bad month `{month}`") })? as i64;
        let s = map.entry(c).or_insert_with(|| CommunitySeries {
            cluster: c,
            start_month: m,
            counts: Vec::new(),
            future: Vec::new(),
            events: Vec::new(),
        });
        if split == "train" { s.counts.push(v) } else { s.future.push(v) }
    }
    let mut rdr = csv::Reader::from_path(&ep).map_err(stage_err(STAGE))?;
    for rec in rdr.deserialize::<(usize, f64)>() {
        let (c, t) = rec.map_err(stage_err(STAGE))?;
        if let Some(s) = map.get_mut(&c) {
            s.events.push(t);
        }
    }
    Ok(map.into_values().collect())
}

// ---------------------------------------------------------------------------
// model fitting

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord<T> {
    pub cluster: usize,
    pub fit: Option<T>,
    pub error: Option<String>,
}

impl<T> FitRecord<T> {
    fn from_result<E: std::fmt::Display>(cluster: usize, r: Result<T, E>) -> Self {
        match r {
            Ok(fit) => Self { cluster, fit: Some(fit), error: None },
            Err(e) => {
                log::warn!("cluster {cluster}: fit failed: {e}");
                Self { cluster, fit: None, error: Some(e.to_string()) }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Fits {
    pub hawkes: Option<Vec<FitRecord<HawkesFit>>>,
    pub arima: Option<Vec<FitRecord<ArimaModel>>>,
    pub lstm: Option<Vec<FitRecord<TrainedLstm>>>,
}

fn lstm_path(cfg: &RunConfig, cluster: usize, suffix: &str) -> PathBuf {
    cfg.path(artifacts::LSTM_DIR).join(format!("cluster_{cluster:03}{suffix}"))
}

pub fn fit_models(cfg: &RunConfig, series: &[CommunitySeries]) -> Result<Fits, PipelineError> {
    let mut fits = Fits::default();
    if cfg.enabled(ModelKind::Hawkes) {
        let opts = FitOptions { starts: cfg.hawkes.starts, min_events: cfg.hawkes.min_events, ..FitOptions::default() };
        let recs: Vec<_> = series
            .par_iter()
            .map(|s| {
                let r = EventSeries::new(s.events.clone(), s.train_len() as f64).and_then(|ev| hawkes::fit(&ev, &opts));
                FitRecord::from_result(s.cluster, r)
            })
            .collect();
        write_file("fit", &cfg.path(artifacts::FITS_HAWKES), to_json(&recs))?;
        fits.hawkes = Some(recs);
    }
    if cfg.enabled(ModelKind::Arima) {
        let a = &cfg.arima;
        let recs: Vec<_> = series
            .par_iter()
            .map(|s| FitRecord::from_result(s.cluster, arima::select_order(&s.counts, a.max_p, a.max_d, a.max_q)))
            .collect();
        write_file("fit", &cfg.path(artifacts::FITS_ARIMA), to_json(&recs))?;
        fits.arima = Some(recs);
    }
    if cfg.enabled(ModelKind::Lstm) {
        let recs: Vec<_> = series
            .par_iter()
            .map(|s| {
                let lc = LstmConfig { seed: rng::derive_seed(cfg.seed, &format!("lstm-{}", s.cluster)), ..cfg.lstm.clone() };
                FitRecord::from_result(s.cluster, lstm::train(&s.counts, &lc))
            })
            .collect();
        for r in &recs {
            if let Some(m) = &r.fit {
                write_file("fit", &lstm_path(cfg, r.cluster, ".ckpt"), m.to_checkpoint())?;
                write_file("fit", &lstm_path(cfg, r.cluster, "_loss.csv"), m.history_csv())?;
            }
        }
        fits.lstm = Some(recs);
    }
    Ok(fits)
}

/// Loads fitted models for the enabled forecasters.
pub fn load_fits(cfg: &RunConfig, series: &[CommunitySeries]) -> Result<Fits, PipelineError> {
    const STAGE: &str = "forecast";
    let read_json = |name: &str| -> Result<String, PipelineError> {
        let p = require(STAGE, cfg.path(name), "fit")?;
        fs::read_to_string(p).map_err(stage_err(STAGE))
    };
    let mut fits = Fits::default();
    if cfg.enabled(ModelKind::Hawkes) {
        fits.hawkes = Some(serde_json::from_str(&read_json(artifacts::FITS_HAWKES)?).map_err(stage_err(STAGE))?);
    }
    if cfg.enabled(ModelKind::Arima) {
        fits.arima = Some(serde_json::from_str(&read_json(artifacts::FITS_ARIMA)?).map_err(stage_err(STAGE))?);
    }
    if cfg.enabled(ModelKind::Lstm) {
        let mut recs = Vec::new();
        for s in series {
            let p = lstm_path(cfg, s.cluster, ".ckpt");
            let r = match fs::read_to_string(&p) {
                Ok(text) => TrainedLstm::from_checkpoint(&text).map_err(|e| e.to_string()),
                Err(e) => Err(format!("{}: {e}", p.display())),
            };
            recs.push(FitRecord::from_result(s.cluster, r));
        }
        fits.lstm = Some(recs);
    }
    Ok(fits)
}

// ---------------------------------------------------------------------------
// forecasting and scoring

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub horizon: usize,
    pub model: String,
    pub cluster: usize,
    pub predicted: f64,
    pub realized: f64,
    pub reference: f64,
}

/// Predicted count in month `origin + h` for every fitted cluster and horizon.
pub fn forecast_stage(cfg: &RunConfig, series: &[CommunitySeries], fits: &Fits) -> Result<Vec<ForecastRow>, PipelineError> {
    let by_cluster: BTreeMap<usize, &CommunitySeries> = series.iter().map(|s| (s.cluster, s)).collect();
    let mut rows = Vec::new();
    let mut push = |model: ModelKind, cluster: usize, h: usize, predicted: f64| {
        let s = by_cluster[&cluster];
        if let Some(&realized) = s.future.get(h - 1) {
            rows.push(ForecastRow { horizon: h, model: model.name().into(), cluster, predicted, realized, reference: s.reference() });
        }
    };
    let max_h = cfg.max_horizon();
    if let Some(recs) = &fits.hawkes {
        for r in recs {
            let (Some(f), Some(s)) = (&r.fit, by_cluster.get(&r.cluster)) else { continue };
            let t0 = s.train_len() as f64;
            for &h in &cfg.series.horizons {
                let p = hawkes::forecast(&f.params, &s.events, t0, h as f64) - hawkes::forecast(&f.params, &s.events, t0, h as f64 - 1.0);
                push(ModelKind::Hawkes, r.cluster, h, p);
            }
        }
    }
    if let Some(recs) = &fits.arima {
        for r in recs {
            let (Some(m), Some(s)) = (&r.fit, by_cluster.get(&r.cluster)) else { continue };
            let path = arima::forecast(m, &s.counts, max_h).map_err(stage_err("forecast"))?;
            for &h in &cfg.series.horizons {
                push(ModelKind::Arima, r.cluster, h, path[h - 1]);
            }
        }
    }
    if let Some(recs) = &fits.lstm {
        for r in recs {
            let (Some(m), Some(s)) = (&r.fit, by_cluster.get(&r.cluster)) else { continue };
            let path = m.forecast(&s.counts, max_h).map_err(stage_err("forecast"))?;
            for &h in &cfg.series.horizons {
                push(ModelKind::Lstm, r.cluster, h, path[h - 1]);
            }
        }
    }
    rows.sort_by(|a, b| (a.horizon, &a.model, a.cluster).cmp(&(b.horizon, &b.model, b.cluster)));
    let mut csv = String::from("horizon,model,cluster,predicted,realized,reference\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{},{}", r.horizon, r.model, r.cluster, r.predicted, r.realized, r.reference);
    }
    write_file("forecast", &cfg.path(artifacts::FORECASTS), csv)?;
    Ok(rows)
}

pub fn load_forecasts(cfg: &RunConfig) -> Result<Vec<ForecastRow>, PipelineError> {
    let p = require("score", cfg.path(artifacts::FORECASTS), "forecast")?;
    let mut rdr = csv::Reader::from_path(&p).map_err(stage_err("score"))?;
    rdr.deserialize().collect::<Result<_, _>>().map_err(stage_err("score"))
}

pub fn score_stage(cfg: &RunConfig, rows: &[ForecastRow]) -> Result<ScoreTable, PipelineError> {
    let mut table = ScoreTable::default();
    for &h in &cfg.series.horizons {
        let group: Vec<ClusterForecast> = rows
            .iter()
            .filter(|r| r.horizon == h)
            .map(|r| ClusterForecast::new(r.cluster, &r.model, r.predicted, r.realized, r.reference))
            .collect();
        if group.is_empty() {
            continue;
        }
        for model in ModelKind::ALL.iter().map(|m| m.name()) {
            let g: Vec<ClusterForecast> = group.iter().filter(|f| f.model == model).cloned().collect();
            if g.is_empty() {
                continue;
            }
            if let Err(e) = table.add_horizon(h, &g) {
                log::warn!("horizon {h}, {model}: not scored: {e}");
            }
        }
    }
    write_file("score", &cfg.path(artifacts::SCORES), table.to_csv())?;
    write_file("score", &cfg.path(artifacts::SCORES_FILTERED), table.filtered_to_csv())?;
    write_file("score", &cfg.path(artifacts::SCORES_JSON), table.to_json() + "\n")?;
    Ok(table)
}

// ---------------------------------------------------------------------------
// report and manifest

/// Plot data: dendrogram segments (y = merge height and inconsistency) and
/// predicted-vs-actual bars per cluster.
pub fn report(cfg: &RunConfig) -> Result<(), PipelineError> {
    const STAGE: &str = "report";
    let dp = require(STAGE, cfg.path(artifacts::DENDROGRAM), "cluster")?;
    let d = Dendrogram::from_text(&fs::read_to_string(dp).map_err(stage_err(STAGE))?).map_err(stage_err(STAGE))?;
    let heights: Vec<f64> = d.merges().iter().map(|m| m.height).collect();
    let incons: Vec<f64> = dendro::inconsistency(&d, cfg.cluster.depth).map_err(stage_err(STAGE))?.iter().map(|r| r.value).collect();
    let mut csv = String::from("merge,x_left,x_right,y_left,y_right,height,inconsistency\n");
    for (i, s) in d.plot_segments(&heights).iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{},{},{},{},{}", s[0], s[1], s[2], s[3], s[4], incons[i]);
    }
    write_file(STAGE, &cfg.path(artifacts::REPORT_DENDROGRAM), csv)?;
    let rows = load_forecasts(cfg)?;
    let mut bars = String::from("horizon,cluster,model,predicted,realized\n");
    for r in rows {
        let _ = writeln!(bars, "{},{},{},{},{}", r.horizon, r.cluster, r.model, r.predicted, r.realized);
    }
    write_file(STAGE, &cfg.path(artifacts::REPORT_BARS), bars)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub deterministic: bool,
    pub models: Vec<ModelKind>,
    pub streams: Vec<String>,
    /// SHA-256 of the config with the output directory blanked.
    pub config_sha256: String,
    pub artifacts: Vec<ArtifactEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if p.strip_prefix(root).ok() != Some(Path::new(artifacts::MANIFEST)) {
            out.push(p);
        }
    }
    Ok(())
}

/// Hashes every artifact in the output directory and writes `manifest.json`.
pub fn write_manifest(cfg: &RunConfig) -> Result<Manifest, PipelineError> {
    const STAGE: &str = "manifest";
    let mut files = Vec::new();
    collect_files(&cfg.out, &cfg.out, &mut files).map_err(stage_err(STAGE))?;
    let mut entries = Vec::new();
    for f in files {
        let bytes = fs::read(&f).map_err(stage_err(STAGE))?;
        let rel = f.strip_prefix(&cfg.out).expect("under output dir");
        let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        entries.push(ArtifactEntry { path, bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let blank = RunConfig { out: PathBuf::new(), ..cfg.clone() };
    let manifest = Manifest {
        tool: "citegrowth".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        deterministic: cfg.deterministic,
        models: cfg.models.clone(),
        streams: [rng::streams::GRAPH, rng::streams::WALKS, rng::streams::SGD, rng::streams::INIT, rng::streams::DROPOUT]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        config_sha256: sha256_hex(blank.to_toml().as_bytes()),
        artifacts: entries,
    };
    write_file(STAGE, &cfg.path(artifacts::MANIFEST), to_json(&manifest))?;
    Ok(manifest)
}

/// Everything a full run produces in memory.
#[derive(Debug, Clone)]
pub struct ForecastReport {
    pub clusters: usize,
    pub nmi_vs_planted: Option<f64>,
    pub adf: AdfReport,
    pub forecasts: Vec<ForecastRow>,
    pub scores: ScoreTable,
    pub manifest: Manifest,
}

/// Runs every stage. Without an input graph the synthetic one is generated.
pub fn run_pipeline(cfg: &RunConfig) -> Result<ForecastReport, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(stage_err("run"))?;
    let g = match &cfg.input.graph {
        Some(_) => load_input_graph(cfg)?,
        None => generate(cfg)?,
    };
    let emb = embed(cfg, &g)?;
    let (_, a) = cluster(cfg, g.labels(), &emb, g.planted())?;
    let series = series_stage(cfg, &g, &a)?;
    let fits = fit_models(cfg, &series)?;
    let forecasts = forecast_stage(cfg, &series, &fits)?;
    let scores = score_stage(cfg, &forecasts)?;
    report(cfg)?;
    let manifest = write_manifest(cfg)?;
    Ok(ForecastReport {
        clusters: a.k,
        nmi_vs_planted: g.planted().map(|p| dendro::normalized_mutual_information(&a.labels, p)),
        adf: adf_report(&series),
        forecasts,
        scores,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_graph() -> CitationGraph {
        let labels = vec!["a".into(), "b".into(), "c".into(), "d".into()];
        let t = |y, m| citegraph::month_index(y, m);
        let times = vec![t(1985, 1.0), t(1985, 1.0), t(1985, 3.0), t(1986, 2.0)];
        CitationGraph::new(labels, times, vec![(3, 0), (2, 1)], None).unwrap()
    }

    fn window_cfg(end: &str) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.series.train_start = "1985-01".into();
        cfg.series.train_end = end.into();
        cfg
    }

    #[test]
    fn counts_per_month() {
        let cfg = window_cfg("1985-03");
        let a = ClusterAssignment::from_raw(&[0, 0, 0, 1]);
        let s = build_series(&tiny_graph(), &a, &cfg).unwrap();
        assert_eq!(s[0].counts, vec![2.0, 0.0, 1.0]);
        assert_eq!(s[0].events, vec![0.0, 0.5, 2.0]);
        assert_eq!(s[1].counts, vec![0.0; 3]);
        assert_eq!(s[1].future[10], 1.0);
    }

    #[test]
    fn default_window_is_252_months() {
        let s = build_series(&tiny_graph(), &ClusterAssignment::from_raw(&[0; 4]), &RunConfig::default()).unwrap();
        assert_eq!(s[0].counts.len(), 252);
        assert_eq!(s[0].counts.iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn citation_target() {
        let mut cfg = window_cfg("1986-12");
        cfg.series.target = SeriesTarget::Citations;
        let a = ClusterAssignment::from_raw(&[0, 0, 1, 1]);
        let s = build_series(&tiny_graph(), &a, &cfg).unwrap();
        assert_eq!(s[0].counts.iter().sum::<f64>(), 2.0);
        assert_eq!(s[1].counts.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn model_list_parsing() {
        assert_eq!(ModelKind::parse_list("lstm, arima").unwrap(), vec![ModelKind::Arima, ModelKind::Lstm]);
        assert!(ModelKind::parse_list("prophet").is_err());
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = RunConfig::from_toml("seed = 7\n[series]\nhorizons = [1]\n").unwrap();
        assert_eq!((partial.seed, partial.series.horizons.clone()), (7, vec![1]));
        assert!(RunConfig::from_toml("[series]\nhorizons = [0]\n").is_err());
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
        assert_eq!(cfg.train_window().unwrap().1 - cfg.train_window().unwrap().0 + 1, 252);
    }

    #[test]
    fn adf_summary_counts() {
        let s = CommunitySeries { cluster: 0, start_month: 0, counts: vec![1.0; 5], future: vec![], events: vec![] };
        let r = adf_report(&[s]);
        assert_eq!((r.tested, r.summary()), (0, "0 / 0".to_string()));
        assert!(r.rows[0].note.is_some());
    }
}
