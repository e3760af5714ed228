//! Python bindings for the `citegrowth` crate.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::citegrowth::arima;
use ::citegrowth::citegraph::{self, GraphFormat, SbmConfig};
use ::citegrowth::dendro;
use ::citegrowth::evalmetrics::{self, ClusterForecast};
use ::citegrowth::hawkes::{self, EventSeries, FitOptions};
use ::citegrowth::lstm::{self, LstmConfig, TrainedLstm};
use ::citegrowth::pipeline::{self, RunConfig};
use ::citegrowth::skipgram::{self, EmbeddingParams, TrainMode};
use ::citegrowth::walker::{self, WalkParams};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Directed citation graph with application months.
#[pyclass(name = "Graph", module = "citegrowth", frozen)]
struct PyGraph {
    inner: citegraph::CitationGraph,
}

#[pymethods]
impl PyGraph {
    /// Synthetic stochastic-block-model graph.
    #[staticmethod]
    #[pyo3(signature = (blocks, nodes_per_block, p_in, p_out, seed=0))]
    fn sbm(blocks: usize, nodes_per_block: usize, p_in: f64, p_out: f64, seed: u64) -> PyResult<Self> {
        let cfg = SbmConfig::uniform(blocks, nodes_per_block, p_in, p_out, seed);
        Ok(Self { inner: citegraph::generate_synthetic_graph(&cfg).map_err(value_err)? })
    }

    /// Loads a DOT file or an edge CSV (with its `.times.csv` companion).
    #[staticmethod]
    #[pyo3(signature = (path, format="dot"))]
    fn load(path: PathBuf, format: &str) -> PyResult<Self> {
        let fmt = match format {
            "dot" => GraphFormat::Dot,
            "edge-csv" | "csv" => GraphFormat::EdgeCsv,
            other => return Err(PyValueError::new_err(format!("unknown format `{other}`"))),
        };
        Ok(Self { inner: citegraph::load_graph(&path, fmt).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_dot(text: &str) -> PyResult<Self> {
        Ok(Self { inner: citegraph::parse_dot(text).map_err(value_err)? })
    }

    fn to_dot(&self) -> String {
        citegraph::write_dot(&self.inner)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().to_vec()
    }

    /// Application times as month indices since 1970-01.
    #[getter]
    fn app_times(&self) -> Vec<f64> {
        self.inner.app_times().to_vec()
    }

    #[getter]
    fn planted(&self) -> Option<Vec<usize>> {
        self.inner.planted().map(<[usize]>::to_vec)
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().iter().map(|(a, b)| (a.index(), b.index())).collect()
    }

    /// node2vec walks over the undirected view of the graph.
    #[pyo3(signature = (p=1.0, q=0.5, walk_length=80, walks_per_node=10, seed=0))]
    fn walks(&self, p: f64, q: f64, walk_length: usize, walks_per_node: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
        let adj = citegraph::as_undirected_adjacency(&self.inner);
        let params = WalkParams { p, q, walk_length, walks_per_node, seed, ..Default::default() };
        Ok(walker::generate_walks(&adj, &params).map_err(value_err)?.walks)
    }

    /// Walks followed by skip-gram training; one row per node.
    #[pyo3(signature = (dimension=128, window=10, negatives=5, epochs=5, p=1.0, q=0.5, walk_length=80, walks_per_node=10, seed=0, parallel=false))]
    #[allow(clippy::too_many_arguments)]
    fn embed(
        &self,
        py: Python<'_>,
        dimension: usize,
        window: usize,
        negatives: usize,
        epochs: usize,
        p: f64,
        q: f64,
        walk_length: usize,
        walks_per_node: usize,
        seed: u64,
        parallel: bool,
    ) -> PyResult<Vec<Vec<f64>>> {
        let corpus = walker::WalkCorpus { walks: self.walks(p, q, walk_length, walks_per_node, seed)? };
        let params = EmbeddingParams {
            dimension,
            window,
            negatives,
            epochs,
            seed,
            mode: if parallel { TrainMode::Parallel } else { TrainMode::Deterministic },
            ..Default::default()
        };
        let n = self.inner.node_count();
        let (emb, _) = py.detach(|| skipgram::train(&corpus, n, &params)).map_err(value_err)?;
        Ok(emb.rows().map(<[f64]>::to_vec).collect())
    }

    fn __repr__(&self) -> String {
        format!("Graph(nodes={}, edges={})", self.inner.node_count(), self.inner.edge_count())
    }
}

/// Ward linkage tree over a list of points.
#[pyclass(name = "Dendrogram", module = "citegrowth", frozen)]
struct PyDendrogram {
    inner: dendro::Dendrogram,
}

#[pymethods]
impl PyDendrogram {
    #[new]
    fn new(points: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self { inner: dendro::ward_linkage(&points).map_err(value_err)? })
    }

    /// `(left, right, height, size)` per merge, SciPy linkage layout.
    fn merges(&self) -> Vec<(usize, usize, f64, usize)> {
        self.inner.merges().iter().map(|m| (m.left, m.right, m.height, m.size)).collect()
    }

    fn leaf_order(&self) -> Vec<usize> {
        self.inner.leaf_order()
    }

    fn cut_height(&self, fraction: f64) -> PyResult<Vec<usize>> {
        Ok(dendro::cut_by_height(&self.inner, fraction).map_err(value_err)?.labels)
    }

    #[pyo3(signature = (fraction, depth=2))]
    fn cut_inconsistency(&self, fraction: f64, depth: usize) -> PyResult<Vec<usize>> {
        Ok(dendro::cut_by_inconsistency_depth(&self.inner, fraction, depth).map_err(value_err)?.labels)
    }

    /// `(mean, std, count, coefficient)` per merge.
    #[pyo3(signature = (depth=2))]
    fn inconsistency(&self, depth: usize) -> PyResult<Vec<(f64, f64, usize, f64)>> {
        let rows = dendro::inconsistency(&self.inner, depth).map_err(value_err)?;
        Ok(rows.iter().map(|r| (r.mean, r.std, r.count, r.value)).collect())
    }
}

#[pyfunction]
fn nmi(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(PyValueError::new_err("label vectors differ in length"));
    }
    Ok(dendro::normalized_mutual_information(&a, &b))
}

/// Exponential-kernel Hawkes process parameters.
#[pyclass(name = "HawkesParams", module = "citegrowth", frozen)]
struct PyHawkes {
    inner: hawkes::HawkesParams,
}

#[pymethods]
impl PyHawkes {
    #[new]
    #[pyo3(signature = (mu, alpha, beta, lambda0=None))]
    fn new(mu: f64, alpha: f64, beta: f64, lambda0: Option<f64>) -> PyResult<Self> {
        let inner = hawkes::HawkesParams::new(mu, alpha, beta, lambda0.unwrap_or(mu)).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }
    #[getter]
    fn lambda0(&self) -> f64 {
        self.inner.lambda0
    }

    fn expected_count(&self, t: f64) -> f64 {
        hawkes::expected_count(&self.inner, t)
    }

    fn second_moment(&self, t: f64) -> f64 {
        hawkes::second_moment(&self.inner, t)
    }

    fn intensity(&self, events: Vec<f64>, t: f64) -> f64 {
        hawkes::intensity(&self.inner, &events, t)
    }

    fn log_likelihood(&self, events: Vec<f64>, horizon: f64) -> PyResult<f64> {
        Ok(hawkes::log_likelihood(&self.inner, &EventSeries::new(events, horizon).map_err(value_err)?))
    }

    #[pyo3(signature = (horizon, seed=0))]
    fn simulate(&self, horizon: f64, seed: u64) -> PyResult<Vec<f64>> {
        Ok(hawkes::simulate_seeded(&self.inner, horizon, seed).map_err(value_err)?.times().to_vec())
    }

    /// Expected number of events in `(t0, t0 + h]` given the history.
    fn forecast(&self, events: Vec<f64>, t0: f64, h: f64) -> f64 {
        hawkes::forecast(&self.inner, &events, t0, h)
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!("HawkesParams(mu={}, alpha={}, beta={}, lambda0={})", p.mu, p.alpha, p.beta, p.lambda0)
    }
}

/// Maximum-likelihood fit; returns `(params, log_likelihood)`.
#[pyfunction]
#[pyo3(signature = (events, horizon, starts=8))]
fn fit_hawkes(py: Python<'_>, events: Vec<f64>, horizon: f64, starts: usize) -> PyResult<(PyHawkes, f64)> {
    let series = EventSeries::new(events, horizon).map_err(value_err)?;
    let opts = FitOptions { starts, ..Default::default() };
    let fit = py.detach(|| hawkes::fit(&series, &opts)).map_err(value_err)?;
    Ok((PyHawkes { inner: fit.params }, fit.log_likelihood))
}

#[pyfunction]
#[pyo3(signature = (times, unit=1.0))]
fn detie(times: Vec<f64>, unit: f64) -> PyResult<Vec<f64>> {
    hawkes::detie(&times, unit).map_err(value_err)
}

/// Fitted ARIMA(p, d, q) model.
#[pyclass(name = "ArimaModel", module = "citegrowth", frozen)]
struct PyArima {
    inner: arima::ArimaModel,
}

#[pymethods]
impl PyArima {
    #[getter]
    fn order(&self) -> (usize, usize, usize) {
        (self.inner.p, self.inner.d, self.inner.q)
    }
    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept
    }
    #[getter]
    fn ar(&self) -> Vec<f64> {
        self.inner.ar.clone()
    }
    #[getter]
    fn ma(&self) -> Vec<f64> {
        self.inner.ma.clone()
    }
    #[getter]
    fn sigma2(&self) -> f64 {
        self.inner.sigma2
    }
    #[getter]
    fn aic(&self) -> f64 {
        self.inner.aic
    }

    fn forecast(&self, y: Vec<f64>, h: usize) -> PyResult<Vec<f64>> {
        arima::forecast(&self.inner, &y, h).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("ArimaModel(order=({}, {}, {}), aic={:.3})", self.inner.p, self.inner.d, self.inner.q, self.inner.aic)
    }
}

#[pyfunction]
fn fit_arima(y: Vec<f64>, p: usize, d: usize, q: usize) -> PyResult<PyArima> {
    Ok(PyArima { inner: arima::fit_arima(&y, p, d, q).map_err(value_err)? })
}

/// AIC grid search over `p <= max_p`, `d <= max_d`, `q <= max_q`.
#[pyfunction]
#[pyo3(signature = (y, max_p=5, max_d=2, max_q=5))]
fn select_order(py: Python<'_>, y: Vec<f64>, max_p: usize, max_d: usize, max_q: usize) -> PyResult<PyArima> {
    let inner = py.detach(|| arima::select_order(&y, max_p, max_d, max_q)).map_err(value_err)?;
    Ok(PyArima { inner })
}

/// Augmented Dickey-Fuller test (constant, no trend).
#[pyfunction]
#[pyo3(signature = (y, level=0.01))]
fn adf_test<'py>(py: Python<'py>, y: Vec<f64>, level: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = arima::adf_test(&y, level).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("statistic", r.statistic)?;
    d.set_item("lags", r.lags)?;
    d.set_item("nobs", r.nobs)?;
    d.set_item("critical_value", r.critical_value)?;
    d.set_item("reject", r.reject)?;
    Ok(d)
}

/// Trained univariate LSTM forecaster.
#[pyclass(name = "Lstm", module = "citegrowth", frozen)]
struct PyLstm {
    inner: TrainedLstm,
}

#[pymethods]
impl PyLstm {
    #[staticmethod]
    #[pyo3(signature = (series, units=128, window=12, batch_size=32, dropout=0.2, learning_rate=1e-3, max_epochs=100, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        series: Vec<f64>,
        units: usize,
        window: usize,
        batch_size: usize,
        dropout: f64,
        learning_rate: f64,
        max_epochs: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = LstmConfig { units, window, batch_size, dropout, learning_rate, max_epochs, seed, ..Default::default() };
        Ok(Self { inner: py.detach(|| lstm::train(&series, &cfg)).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_checkpoint(text: &str) -> PyResult<Self> {
        Ok(Self { inner: TrainedLstm::from_checkpoint(text).map_err(value_err)? })
    }

    fn to_checkpoint(&self) -> String {
        self.inner.to_checkpoint()
    }

    fn forecast(&self, series: Vec<f64>, h: usize) -> PyResult<Vec<f64>> {
        self.inner.forecast(&series, h).map_err(value_err)
    }

    /// `(epoch, train_loss, val_loss, lr)` per epoch.
    fn history(&self) -> Vec<(usize, f64, f64, f64)> {
        self.inner.history.iter().map(|r| (r.epoch, r.train_loss, r.val_loss, r.lr)).collect()
    }
}

fn forecasts(predicted: &[f64], realized: &[f64], reference: Option<&[f64]>) -> PyResult<Vec<ClusterForecast>> {
    if predicted.len() != realized.len() || reference.is_some_and(|r| r.len() != predicted.len()) {
        return Err(PyValueError::new_err("input lists differ in length"));
    }
    Ok((0..predicted.len())
        .map(|i| ClusterForecast::new(i, "", predicted[i], realized[i], reference.map_or(0.0, |r| r[i])))
        .collect())
}

/// MAPE in percent over entries with a non-zero realized value.
#[pyfunction]
fn mape(predicted: Vec<f64>, realized: Vec<f64>) -> PyResult<f64> {
    Ok(evalmetrics::mape(&forecasts(&predicted, &realized, None)?).map_err(value_err)?.percent)
}

/// Direction accuracy in percent relative to the origin values.
#[pyfunction]
fn direction_accuracy(predicted: Vec<f64>, realized: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    let f = forecasts(&predicted, &realized, Some(&reference))?;
    Ok(evalmetrics::direction_accuracy(&f).map_err(value_err)?.percent)
}

/// Default run configuration as TOML.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_toml()
}

/// Runs every stage and returns a summary dict; artifacts land in `out`.
#[pyfunction]
#[pyo3(signature = (config_toml, out=None))]
fn run_pipeline<'py>(py: Python<'py>, config_toml: &str, out: Option<PathBuf>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = RunConfig::from_toml(config_toml).map_err(value_err)?;
    if let Some(o) = out {
        cfg.out = o;
    }
    let r = py.detach(|| pipeline::run_pipeline(&cfg)).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let d = PyDict::new(py);
    d.set_item("clusters", r.clusters)?;
    d.set_item("nmi_vs_planted", r.nmi_vs_planted)?;
    d.set_item("adf", r.adf.summary())?;
    d.set_item("scores", r.scores.to_csv())?;
    d.set_item("scores_filtered", r.scores.filtered_to_csv())?;
    d.set_item("forecasts", r.forecasts.len())?;
    d.set_item("out", cfg.out)?;
    Ok(d)
}

#[pymodule]
fn citegrowth(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyDendrogram>()?;
    m.add_class::<PyHawkes>()?;
    m.add_class::<PyArima>()?;
    m.add_class::<PyLstm>()?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(fit_hawkes, m)?)?;
    m.add_function(wrap_pyfunction!(detie, m)?)?;
    m.add_function(wrap_pyfunction!(fit_arima, m)?)?;
    m.add_function(wrap_pyfunction!(select_order, m)?)?;
    m.add_function(wrap_pyfunction!(adf_test, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(direction_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
