//! Directed patent citation graph with per-node application timestamps.
//!
//! Timestamps are fractional months since 1970-01 (month index 0). Two
//! on-disk formats are supported:
//!
//! * a DOT subset: `digraph { "a" [time="1990-03"]; "a" -> "b"; }`. The
//!   `time` attribute is either `YYYY-MM` or a decimal month index. An
//!   optional integer `block` attribute carries a planted community label.
//! * an edge CSV with header `from,to` plus a timestamp CSV with header
//!   `label,year,month` (month may be fractional, 1-based).

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

pub const EPOCH_YEAR: i32 = 1970;

/// Dense node index, `0..node_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("edge endpoint `{0}` is not a declared node")]
    DanglingEndpoint(String),
    #[error("node `{0}` has no timestamp")]
    MissingTimestamp(String),
    #[error("graph has no nodes")]
    Empty,
    #[error("invalid block-model probabilities: need 0 <= p_out < p_in <= 1 (got p_in={p_in}, p_out={p_out})")]
    InvalidProbability { p_in: f64, p_out: f64 },
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io { path: path.to_path_buf(), source }
}

/// Converts a calendar month (1-based) to a month index since 1970-01.
pub fn month_index(year: i32, month: f64) -> f64 {
    f64::from(year - EPOCH_YEAR) * 12.0 + (month - 1.0)
}

/// Inverse of [`month_index`] for whole months: `(year, month)` with month 1..=12.
pub fn calendar_month(index: i64) -> (i32, u32) {
    let year = EPOCH_YEAR as i64 + index.div_euclid(12);
    (year as i32, (index.rem_euclid(12) + 1) as u32)
}

/// Parses `YYYY-MM` or a decimal month index.
pub fn parse_time(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((y, m)) = s.split_once('-').filter(|(y, _)| !y.is_empty()) {
        let year: i32 = y.parse().ok()?;
        let month: u32 = m.parse().ok()?;
        if !(1..=12).contains(&month) {
            return None;
        }
        return Some(month_index(year, f64::from(month)));
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Formats a month index; whole months render as `YYYY-MM`.
pub fn format_time(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e9 {
        let (y, m) = calendar_month(t as i64);
        format!("{y:04}-{m:02}")
    } else {
        format!("{t}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphFormat {
    Dot,
    EdgeCsv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CitationGraph {
    labels: Vec<String>,
    app_time: Vec<f64>,
    edges: Vec<(NodeId, NodeId)>,
    label_index: HashMap<String, NodeId>,
    planted: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub min_time: f64,
    pub max_time: f64,
}

impl CitationGraph {
    /// Builds a validated graph. Self-loops and duplicate edges are dropped.
    pub fn new(
        labels: Vec<String>,
        app_time: Vec<f64>,
        raw_edges: impl IntoIterator<Item = (usize, usize)>,
        planted: Option<Vec<usize>>,
    ) -> Result<Self, GraphError> {
        if labels.is_empty() {
            return Err(GraphError::Empty);
        }
        if app_time.len() != labels.len() {
            return Err(GraphError::MissingTimestamp(labels[app_time.len().min(labels.len() - 1)].clone()));
        }
        if let Some(i) = app_time.iter().position(|t| !t.is_finite()) {
            return Err(GraphError::MissingTimestamp(labels[i].clone()));
        }
        let n = labels.len();
        let mut seen = HashSet::new();
        let mut edges = Vec::new();
        let mut self_loops = 0usize;
        for (a, b) in raw_edges {
            if a >= n || b >= n {
                return Err(GraphError::DanglingEndpoint(format!("#{}", a.max(b))));
            }
            if a == b {
                self_loops += 1;
                continue;
            }
            if seen.insert((a, b)) {
                edges.push((NodeId(a), NodeId(b)));
            }
        }
        if self_loops > 0 {
            log::warn!("dropped {self_loops} self-loop edge(s)");
        }
        let mut label_index = HashMap::with_capacity(n);
        for (i, l) in labels.iter().enumerate() {
            if label_index.insert(l.clone(), NodeId(i)).is_some() {
                return Err(GraphError::Parse { line: 0, message: format!("duplicate node label `{l}`") });
            }
        }
        if let Some(p) = &planted {
            if p.len() != n {
                return Err(GraphError::InvalidConfig("planted labels must cover every node".into()));
            }
        }
        Ok(Self { labels, app_time, edges, label_index, planted })
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.labels[id.0]
    }

    pub fn app_times(&self) -> &[f64] {
        &self.app_time
    }

    pub fn app_time(&self, id: NodeId) -> f64 {
        self.app_time[id.0]
    }

    pub fn node_id(&self, label: &str) -> Option<NodeId> {
        self.label_index.get(label).copied()
    }

    /// Ground-truth community labels, present for generated graphs.
    pub fn planted(&self) -> Option<&[usize]> {
        self.planted.as_deref()
    }

    pub fn stats(&self) -> GraphStats {
        let (min_time, max_time) = self
            .app_time
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
        GraphStats { node_count: self.node_count(), edge_count: self.edge_count(), min_time, max_time }
    }

    /// Removes nodes with no incident edges, re-indexing the rest in order.
    pub fn without_isolated(&self) -> CitationGraph {
        let mut touched = vec![false; self.node_count()];
        for &(a, b) in &self.edges {
            touched[a.0] = true;
            touched[b.0] = true;
        }
        let mut remap = vec![usize::MAX; self.node_count()];
        let mut labels = Vec::new();
        let mut times = Vec::new();
        let mut planted = self.planted.as_ref().map(|_| Vec::new());
        for i in (0..self.node_count()).filter(|&i| touched[i]) {
            remap[i] = labels.len();
            labels.push(self.labels[i].clone());
            times.push(self.app_time[i]);
            if let (Some(out), Some(src)) = (planted.as_mut(), self.planted.as_ref()) {
                out.push(src[i]);
            }
        }
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|&(a, b)| (remap[a.0], remap[b.0])).collect();
        CitationGraph::new(labels, times, edges, planted).unwrap_or_else(|_| self.clone())
    }

    /// In-edge event times: for every citation `a -> b`, the citing node's
    /// application time, grouped by cited node.
    pub fn citation_times(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.node_count()];
        for &(from, to) in &self.edges {
            out[to.0].push(self.app_time[from.0]);
        }
        out
    }
}

/// Loads a graph. For [`GraphFormat::EdgeCsv`] the timestamp table is read
/// from the sibling file `<stem>.times.csv`.
pub fn load_graph(path: &Path, format: GraphFormat) -> Result<CitationGraph, GraphError> {
    match format {
        GraphFormat::Dot => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            parse_dot(&text)
        }
        GraphFormat::EdgeCsv => {
            let times = times_path_for(path);
            let edges = fs::File::open(path).map_err(io_err(path))?;
            let t = fs::File::open(&times).map_err(io_err(&times))?;
            parse_edge_csv(edges, t)
        }
    }
}

pub fn times_path_for(edges: &Path) -> PathBuf {
    let stem = edges.file_stem().and_then(|s| s.to_str()).unwrap_or("graph");
    edges.with_file_name(format!("{stem}.times.csv"))
}

pub fn write_graph(g: &CitationGraph, path: &Path, format: GraphFormat) -> Result<(), GraphError> {
    match format {
        GraphFormat::Dot => fs::write(path, write_dot(g)).map_err(io_err(path)),
        GraphFormat::EdgeCsv => {
            let (edges, times) = write_edge_csv(g)?;
            fs::write(path, edges).map_err(io_err(path))?;
            let tp = times_path_for(path);
            fs::write(&tp, times).map_err(io_err(&tp))
        }
    }
}

// ---------------------------------------------------------------------------
// DOT subset

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Id(String),
    Sym(char),
    Arrow,
    UndirectedEdge,
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, GraphError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut at_line_start = true;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            i += 1;
            at_line_start = true;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' && at_line_start {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        at_line_start = false;
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let start = line;
            i += 2;
            loop {
                match chars.get(i) {
                    None => return Err(GraphError::Parse { line: start, message: "unterminated comment".into() }),
                    Some('*') if chars.get(i + 1) == Some(&'/') => {
                        i += 2;
                        break;
                    }
                    Some('\n') => {
                        line += 1;
                        i += 1;
                    }
                    Some(_) => i += 1,
                }
            }
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'>') {
            out.push((Tok::Arrow, line));
            i += 2;
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            out.push((Tok::UndirectedEdge, line));
            i += 2;
            continue;
        }
        if "{}[];,=".contains(c) {
            out.push((Tok::Sym(c), line));
            i += 1;
            continue;
        }
        if c == '"' {
            let start = line;
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(GraphError::Parse { line: start, message: "unterminated string".into() }),
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') if chars.get(i + 1) == Some(&'"') => {
                        s.push('"');
                        i += 2;
                    }
                    Some(&ch) => {
                        if ch == '\n' {
                            line += 1;
                        }
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            out.push((Tok::Id(s), start));
            continue;
        }
        if c.is_alphanumeric() || c == '_' || c == '.' || c == '-' {
            let mut s = String::new();
            while let Some(&ch) = chars.get(i) {
                if ch.is_alphanumeric() || ch == '_' || ch == '.' || (ch == '-' && chars.get(i + 1) != Some(&'>') && chars.get(i + 1) != Some(&'-')) {
                    s.push(ch);
                    i += 1;
                } else {
                    break;
                }
            }
            out.push((Tok::Id(s), line));
            continue;
        }
        return Err(GraphError::Parse { line, message: format!("unexpected character `{c}`") });
    }
    Ok(out)
}

struct DotParser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl DotParser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks.get(self.pos).or(self.toks.last()).map_or(1, |(_, l)| *l)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, GraphError> {
        Err(GraphError::Parse { line: self.line(), message: message.into() })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect_sym(&mut self, c: char) -> Result<(), GraphError> {
        match self.peek() {
            Some(Tok::Sym(s)) if *s == c => {
                self.pos += 1;
                Ok(())
            }
            other => {
                let found = format!("{other:?}");
                self.err(format!("expected `{c}`, found {found}"))
            }
        }
    }

    fn id(&mut self) -> Result<String, GraphError> {
        match self.peek() {
            Some(Tok::Id(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            other => {
                let found = format!("{other:?}");
                self.err(format!("expected identifier, found {found}"))
            }
        }
    }

    fn attrs(&mut self) -> Result<Vec<(String, String, usize)>, GraphError> {
        let mut out = Vec::new();
        while matches!(self.peek(), Some(Tok::Sym('['))) {
            self.pos += 1;
            loop {
                if matches!(self.peek(), Some(Tok::Sym(']'))) {
                    self.pos += 1;
                    break;
                }
                let line = self.line();
                let k = self.id()?;
                self.expect_sym('=')?;
                let v = self.id()?;
                out.push((k, v, line));
                if matches!(self.peek(), Some(Tok::Sym(',')) | Some(Tok::Sym(';'))) {
                    self.pos += 1;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Default)]
struct NodeTable {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    declared: Vec<bool>,
    time: Vec<Option<f64>>,
    block: Vec<Option<usize>>,
}

impl NodeTable {
    fn intern(&mut self, label: &str) -> usize {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        let i = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), i);
        self.declared.push(false);
        self.time.push(None);
        self.block.push(None);
        i
    }

    fn finish(self, edges: Vec<(usize, usize)>) -> Result<CitationGraph, GraphError> {
        if self.labels.is_empty() {
            return Err(GraphError::Empty);
        }
        if let Some(i) = self.declared.iter().position(|d| !d) {
            return Err(GraphError::DanglingEndpoint(self.labels[i].clone()));
        }
        let mut times = Vec::with_capacity(self.labels.len());
        for (i, t) in self.time.iter().enumerate() {
            times.push(t.ok_or_else(|| GraphError::MissingTimestamp(self.labels[i].clone()))?);
        }
        let planted = if self.block.iter().all(Option::is_some) {
            Some(self.block.iter().map(|b| b.unwrap_or(0)).collect())
        } else {
            None
        };
        CitationGraph::new(self.labels, times, edges, planted)
    }
}

/// Parses the supported DOT subset.
pub fn parse_dot(text: &str) -> Result<CitationGraph, GraphError> {
    let mut p = DotParser { toks: tokenize(text)?, pos: 0 };
    if p.toks.is_empty() {
        return Err(GraphError::Empty);
    }
    if matches!(p.peek(), Some(Tok::Id(s)) if s.eq_ignore_ascii_case("strict")) {
        p.pos += 1;
    }
    match p.next() {
        Some(Tok::Id(s)) if s.eq_ignore_ascii_case("digraph") => {}
        Some(Tok::Id(s)) if s.eq_ignore_ascii_case("graph") => {
            p.pos -= 1;
            return p.err("undirected `graph` is not supported; use `digraph`");
        }
        _ => {
            p.pos = p.pos.saturating_sub(1);
            return p.err("expected `digraph`");
        }
    }
    if matches!(p.peek(), Some(Tok::Id(_))) {
        p.pos += 1;
    }
    p.expect_sym('{')?;

    let mut nodes = NodeTable::default();
    let mut edges = Vec::new();
    loop {
        match p.peek() {
            None => return p.err("missing closing `}`"),
            Some(Tok::Sym('}')) => {
                p.pos += 1;
                break;
            }
            Some(Tok::Sym(';')) => {
                p.pos += 1;
                continue;
            }
            _ => {}
        }
        let first = p.id()?;
        if matches!(first.as_str(), "graph" | "node" | "edge") && matches!(p.peek(), Some(Tok::Sym('['))) {
            p.attrs()?;
            continue;
        }
        if matches!(p.peek(), Some(Tok::Sym('='))) {
            p.pos += 1;
            p.id()?;
            continue;
        }
        if matches!(p.peek(), Some(Tok::UndirectedEdge)) {
            return p.err("`--` edges are not allowed in a digraph");
        }
        if matches!(p.peek(), Some(Tok::Arrow)) {
            let mut chain = vec![nodes.intern(&first)];
            while matches!(p.peek(), Some(Tok::Arrow)) {
                p.pos += 1;
                let next = p.id()?;
                chain.push(nodes.intern(&next));
            }
            p.attrs()?;
            edges.extend(chain.windows(2).map(|w| (w[0], w[1])));
            continue;
        }
        let idx = nodes.intern(&first);
        nodes.declared[idx] = true;
        for (k, v, line) in p.attrs()? {
            match k.as_str() {
                "time" => {
                    let t = parse_time(&v)
                        .ok_or_else(|| GraphError::Parse { line, message: format!("bad time value `{v}`") })?;
                    nodes.time[idx] = Some(t);
                }
                "block" => {
                    let b = v
                        .parse()
                        .map_err(|_| GraphError::Parse { line, message: format!("bad block value `{v}`") })?;
                    nodes.block[idx] = Some(b);
                }
                _ => {}
            }
        }
    }
    if p.peek().is_some() {
        return p.err("trailing content after closing `}`");
    }
    nodes.finish(edges)
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\\\""))
}

pub fn write_dot(g: &CitationGraph) -> String {
    let stats = g.stats();
    let mut out = String::new();
    let _ = writeln!(out, "// nodes={} edges={}", stats.node_count, stats.edge_count);
    out.push_str("digraph citations {\n");
    for i in 0..g.node_count() {
        let _ = write!(out, "  {} [time=\"{}\"", quote(&g.labels[i]), format_time(g.app_time[i]));
        if let Some(p) = &g.planted {
            let _ = write!(out, ", block={}", p[i]);
        }
        out.push_str("];\n");
    }
    for &(a, b) in &g.edges {
        let _ = writeln!(out, "  {} -> {};", quote(&g.labels[a.0]), quote(&g.labels[b.0]));
    }
    out.push_str("}\n");
    out
}

/// Reads the `// nodes=N edges=M` header written by [`write_dot`], if present.
pub fn dot_header_counts(text: &str) -> Option<(usize, usize)> {
    let line = text.lines().next()?.trim().strip_prefix("//")?;
    let mut nodes = None;
    let mut edges = None;
    for part in line.split_whitespace() {
        if let Some(v) = part.strip_prefix("nodes=") {
            nodes = v.parse().ok();
        } else if let Some(v) = part.strip_prefix("edges=") {
            edges = v.parse().ok();
        }
    }
    Some((nodes?, edges?))
}

// ---------------------------------------------------------------------------
// Edge CSV

pub fn parse_edge_csv(edges: impl std::io::Read, times: impl std::io::Read) -> Result<CitationGraph, GraphError> {
    let mut nodes = NodeTable::default();
    let mut trd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(times);
    check_header(&mut trd, &["label", "year", "month"])?;
    for rec in trd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() < 3 {
            return Err(GraphError::Parse { line, message: "expected label,year,month".into() });
        }
        let year: i32 = rec[1].parse().map_err(|_| GraphError::Parse { line, message: format!("bad year `{}`", &rec[1]) })?;
        let month: f64 = rec[2]
            .parse()
            .ok()
            .filter(|m: &f64| (1.0..13.0).contains(m))
            .ok_or_else(|| GraphError::Parse { line, message: format!("bad month `{}`", &rec[2]) })?;
        let idx = nodes.intern(&rec[0]);
        if nodes.declared[idx] {
            return Err(GraphError::Parse { line, message: format!("duplicate node `{}`", &rec[0]) });
        }
        nodes.declared[idx] = true;
        nodes.time[idx] = Some(month_index(year, month));
    }
    let mut erd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(edges);
    check_header(&mut erd, &["from", "to"])?;
    let mut edge_list = Vec::new();
    for rec in erd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() < 2 {
            return Err(GraphError::Parse { line, message: "expected from,to".into() });
        }
        let a = *nodes.index.get(&rec[0]).ok_or_else(|| GraphError::DanglingEndpoint(rec[0].to_string()))?;
        let b = *nodes.index.get(&rec[1]).ok_or_else(|| GraphError::DanglingEndpoint(rec[1].to_string()))?;
        edge_list.push((a, b));
    }
    nodes.finish(edge_list)
}

fn check_header<R: std::io::Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), GraphError> {
    let h = rdr.headers()?;
    let ok = h.len() >= expected.len() && expected.iter().zip(h.iter()).all(|(e, got)| e.eq_ignore_ascii_case(got));
    if ok {
        Ok(())
    } else {
        Err(GraphError::Parse { line: 1, message: format!("expected header `{}`", expected.join(",")) })
    }
}

/// Returns `(edges csv, timestamps csv)`.
pub fn write_edge_csv(g: &CitationGraph) -> Result<(String, String), GraphError> {
    let mut ew = csv::Writer::from_writer(Vec::new());
    ew.write_record(["from", "to"])?;
    for &(a, b) in &g.edges {
        ew.write_record([&g.labels[a.0], &g.labels[b.0]])?;
    }
    let mut tw = csv::Writer::from_writer(Vec::new());
    tw.write_record(["label", "year", "month"])?;
    for (label, &t) in g.labels.iter().zip(&g.app_time) {
        let whole = t.div_euclid(12.0);
        let year = EPOCH_YEAR + whole as i32;
        let month = t - whole * 12.0 + 1.0;
        tw.write_record([label.clone(), year.to_string(), format!("{month}")])?;
    }
    let finish = |w: csv::Writer<Vec<u8>>| -> Result<String, GraphError> {
        let bytes = w.into_inner().map_err(|e| GraphError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    };
    Ok((finish(ew)?, finish(tw)?))
}

// ---------------------------------------------------------------------------
// Adjacency

/// Compressed per-node neighbor lists, each sorted ascending without duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    directed: bool,
}

impl Adjacency {
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>, directed: bool) -> Self {
        let mut lists = vec![Vec::new(); node_count];
        for (a, b) in edges {
            if a == b {
                continue;
            }
            lists[a].push(b);
            if !directed {
                lists[b].push(a);
            }
        }
        let mut offsets = Vec::with_capacity(node_count + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            neighbors.extend(l);
            offsets.push(neighbors.len());
        }
        Self { offsets, neighbors, directed }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Position of `b` in the flattened neighbor array of `a`, i.e. a dense
    /// directed-edge index.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.neighbors(a).binary_search(&b).ok().map(|i| self.offsets[a] + i)
    }

    pub fn arc_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }
}

/// Symmetrized, unweighted view of the citation graph used for walking.
pub fn as_undirected_adjacency(g: &CitationGraph) -> Adjacency {
    Adjacency::from_edges(g.node_count(), g.edges.iter().map(|&(a, b)| (a.0, b.0)), false)
}

/// Out-edge view (citing -> cited), for directed walking.
pub fn as_directed_adjacency(g: &CitationGraph) -> Adjacency {
    Adjacency::from_edges(g.node_count(), g.edges.iter().map(|&(a, b)| (a.0, b.0)), true)
}

// ---------------------------------------------------------------------------
// Synthetic stochastic block model

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SbmConfig {
    /// Size of each planted block.
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
    /// Timestamps are uniform over `[time_start, time_end)` (month indices).
    pub time_start: f64,
    pub time_end: f64,
}

impl SbmConfig {
    pub fn uniform(blocks: usize, nodes_per_block: usize, p_in: f64, p_out: f64, seed: u64) -> Self {
        Self {
            block_sizes: vec![nodes_per_block; blocks],
            p_in,
            p_out,
            seed,
            time_start: month_index(1985, 1.0),
            time_end: month_index(2007, 1.0),
        }
    }
}

/// Bernoulli(p) hits over `total` trials, visited by geometric skipping.
fn bernoulli_hits<R: Rng>(rng: &mut R, total: u64, p: f64, mut hit: impl FnMut(u64)) {
    if p <= 0.0 || total == 0 {
        return;
    }
    if p >= 1.0 {
        (0..total).for_each(hit);
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut idx: u64 = 0;
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let skip = (u.ln() / log_q).floor();
        if !skip.is_finite() || skip >= (total - idx) as f64 {
            return;
        }
        idx += skip as u64;
        hit(idx);
        idx += 1;
        if idx >= total {
            return;
        }
    }
}

/// Stochastic-block-model citation graph. Each sampled undirected pair is
/// oriented from the later application to the earlier one.
pub fn generate_synthetic_graph(cfg: &SbmConfig) -> Result<CitationGraph, GraphError> {
    let (p_in, p_out) = (cfg.p_in, cfg.p_out);
    if !(0.0 <= p_out && p_out < p_in && p_in <= 1.0) {
        return Err(GraphError::InvalidProbability { p_in, p_out });
    }
    if cfg.block_sizes.is_empty() || cfg.block_sizes.contains(&0) {
        return Err(GraphError::InvalidConfig("every block needs at least one node".into()));
    }
    if !(cfg.time_end > cfg.time_start) {
        return Err(GraphError::InvalidConfig("time_end must exceed time_start".into()));
    }
    let mut rng = rng::stream(cfg.seed, rng::streams::GRAPH, 0);
    let mut starts = Vec::with_capacity(cfg.block_sizes.len());
    let mut planted = Vec::new();
    for (b, &s) in cfg.block_sizes.iter().enumerate() {
        starts.push(planted.len());
        planted.extend(std::iter::repeat_n(b, s));
    }
    let n = planted.len();
    let width = cfg.time_end - cfg.time_start;
    let times: Vec<f64> = (0..n).map(|_| cfg.time_start + width * rng.random::<f64>()).collect();
    let labels: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();

    let mut pairs = Vec::new();
    for (a, &sa) in cfg.block_sizes.iter().enumerate() {
        let base = starts[a];
        // upper triangle of the block, row-major
        let total = (sa as u64) * (sa as u64 - 1) / 2;
        let mut row = 0u64;
        let mut row_start = 0u64;
        bernoulli_hits(&mut rng, total, p_in, |idx| {
            while idx >= row_start + (sa as u64 - 1 - row) {
                row_start += sa as u64 - 1 - row;
                row += 1;
            }
            let col = row + 1 + (idx - row_start);
            pairs.push((base + row as usize, base + col as usize));
        });
        for (b, &sb) in cfg.block_sizes.iter().enumerate().skip(a + 1) {
            let base_b = starts[b];
            bernoulli_hits(&mut rng, (sa as u64) * (sb as u64), p_out, |idx| {
                pairs.push((base + (idx / sb as u64) as usize, base_b + (idx % sb as u64) as usize));
            });
        }
    }
    let edges: Vec<(usize, usize)> = pairs.into_iter().map(|(u, v)| if times[u] >= times[v] { (u, v) } else { (v, u) }).collect();
    CitationGraph::new(labels, times, edges, Some(planted))
}
