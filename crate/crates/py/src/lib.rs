//! Python bindings: networks, trajectories, the fleet matcher, evaluation,
//! weight fitting, the synthetic generator and the scalar score functions.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use trimatch_core::calibration::{self, CalibrationSample, FitOptions};
use trimatch_core::config::MatchParams;
use trimatch_core::eval::{self, TruthSet};
use trimatch_core::history::MatchRecord;
use trimatch_core::matcher::{self, FleetState, MatchConfig};
use trimatch_core::network::RoadNetwork;
use trimatch_core::scoring::{self, FusionWeights, ScoreVector};
use trimatch_core::search;
use trimatch_core::synth::{self, FleetSpec, GridSpec};
use trimatch_core::traffic::{Predictor, SgmnModel};
use trimatch_core::trajectory::{self, Probe};
use trimatch_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

/// Road network split into fixed-length edges.
#[pyclass(name = "RoadNetwork", module = "trimatch", frozen)]
struct PyNetwork {
    inner: Arc<RoadNetwork>,
}

#[pymethods]
impl PyNetwork {
    /// Loads `nodes.csv` and `links.csv`.
    #[staticmethod]
    #[pyo3(signature = (nodes, links, split_length = 50.0))]
    fn from_csv(nodes: PathBuf, links: PathBuf, split_length: f64) -> PyResult<Self> {
        let net = RoadNetwork::from_csv(&nodes, &links, split_length).map_err(to_py)?;
        Ok(Self { inner: Arc::new(net) })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.nodes.len()
    }

    #[getter]
    fn link_count(&self) -> usize {
        self.inner.links.len()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edges.len()
    }

    /// Laplacian eigenvalues of the link graph, scaled into [0, 1].
    fn spectrum(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.spectrum().map_err(to_py)?.eigenvalues.iter().copied().collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "RoadNetwork(nodes={}, links={}, edges={})",
            self.inner.nodes.len(),
            self.inner.links.len(),
            self.inner.edges.len()
        )
    }
}

/// Probe sequence of one trip. Probes are `(t, lon, lat, speed, bearing)`
/// tuples with bearings in degrees counter-clockwise from east.
#[pyclass(name = "Trajectory", module = "trimatch", frozen, from_py_object)]
#[derive(Clone)]
struct PyTrajectory {
    inner: trajectory::Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[new]
    fn new(id: String, vehicle: String, probes: Vec<(f64, f64, f64, f64, f64)>) -> PyResult<Self> {
        let probes = probes
            .into_iter()
            .map(|(t, lon, lat, speed, bearing)| Probe { t, speed, bearing, lon, lat })
            .collect();
        Ok(Self {
            inner: trajectory::Trajectory::new(id, vehicle, probes).map_err(to_py)?,
        })
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn vehicle(&self) -> &str {
        &self.inner.vehicle
    }

    #[getter]
    fn probes(&self) -> Vec<(f64, f64, f64, f64, f64)> {
        self.inner.probes.iter().map(|p| (p.t, p.lon, p.lat, p.speed, p.bearing)).collect()
    }

    /// Median time between probes.
    #[getter]
    fn interval(&self) -> f64 {
        self.inner.interval()
    }

    /// Keeps the first probe and every probe `interval` seconds after it.
    fn downsample(&self, interval: f64) -> PyResult<Self> {
        Ok(Self {
            inner: calibration::downsample(&self.inner, interval).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Trajectory(id={:?}, probes={})", self.inner.id, self.inner.len())
    }
}

/// Matched edge and inferred segment path of every probe of one trajectory.
/// Edges are `(link_id, edge_idx)` pairs, `None` when a probe is unmatched.
#[pyclass(name = "MatchResult", module = "trimatch", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMatchResult {
    net: Arc<RoadNetwork>,
    record: MatchRecord,
}

#[pymethods]
impl PyMatchResult {
    #[getter]
    fn trajectory_id(&self) -> &str {
        &self.record.trajectory_id
    }

    #[getter]
    fn timestamps(&self) -> Vec<f64> {
        self.record.probes.iter().map(|p| p.timestamp).collect()
    }

    #[getter]
    fn edges(&self) -> Vec<Option<(i64, usize)>> {
        self.record
            .probes
            .iter()
            .map(|p| p.edge.map(|e| self.net.edge_label(e)))
            .collect()
    }

    #[getter]
    fn paths(&self) -> Vec<Option<Vec<(i64, usize)>>> {
        self.record
            .probes
            .iter()
            .map(|p| p.path.as_ref().map(|path| path.iter().map(|&e| self.net.edge_label(e)).collect()))
            .collect()
    }

    #[getter]
    fn matched_count(&self) -> usize {
        self.record.matched_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "MatchResult(trajectory_id={:?}, matched={}/{})",
            self.record.trajectory_id,
            self.record.matched_count(),
            self.record.probes.len()
        )
    }
}

fn records(results: &[PyRef<'_, PyMatchResult>]) -> Vec<MatchRecord> {
    results.iter().map(|r| r.record.clone()).collect()
}

fn wrap(net: &Arc<RoadNetwork>, records: Vec<MatchRecord>) -> Vec<PyMatchResult> {
    records
        .into_iter()
        .map(|record| PyMatchResult { net: Arc::clone(net), record })
        .collect()
}

/// Fleet matcher with its own history and traffic-state stores. Each call
/// to `match_trajectories` feeds the stores for the calls that follow.
///
/// `config` is a dict or JSON string with the same keys as the command-line
/// config file. `predictor` is `"naive"`, `None` (no traffic score) or the
/// path of a trained checkpoint.
#[pyclass(name = "Matcher", module = "trimatch")]
struct PyMatcher {
    net: Arc<RoadNetwork>,
    cfg: MatchConfig,
    state: FleetState,
    predictor: Option<Predictor>,
}

#[pymethods]
impl PyMatcher {
    #[new]
    #[pyo3(signature = (network, config = None, predictor = Some("naive".to_string())))]
    fn new(network: &PyNetwork, config: Option<&Bound<'_, PyAny>>, predictor: Option<String>) -> PyResult<Self> {
        let params = match config {
            None => MatchParams::default(),
            Some(c) => {
                let text: String = match c.extract::<String>() {
                    Ok(s) => s,
                    Err(_) => c.py().import("json")?.call_method1("dumps", (c,))?.extract()?,
                };
                serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("config: {e}")))?
            }
        };
        let cfg = params.match_config().map_err(to_py)?;
        let net = Arc::clone(&network.inner);
        let predictor = match predictor.as_deref() {
            None => None,
            Some("naive") => Some(Predictor::naive(&cfg.traffic)),
            Some(path) => {
                let spectrum = net.spectrum().map_err(to_py)?;
                Some(Predictor::Sgmn(SgmnModel::load(spectrum, path.as_ref()).map_err(to_py)?))
            }
        };
        let state = FleetState::new(&net, &cfg);
        Ok(Self { net, cfg, state, predictor })
    }

    /// Adds already-matched trajectories (for example reference routes) to
    /// the stores without matching them.
    fn absorb(&mut self, trajectories: Vec<PyTrajectory>, results: Vec<PyRef<'_, PyMatchResult>>) -> PyResult<()> {
        if trajectories.len() != results.len() {
            return Err(PyValueError::new_err("trajectories and results differ in length"));
        }
        for (t, r) in trajectories.iter().zip(&results) {
            self.state.absorb(&self.net, &t.inner, &r.record).map_err(to_py)?;
        }
        Ok(())
    }

    fn match_trajectories(&mut self, py: Python<'_>, trajectories: Vec<PyTrajectory>) -> PyResult<Vec<PyMatchResult>> {
        let trs: Vec<_> = trajectories.into_iter().map(|t| t.inner).collect();
        let (net, cfg, state, predictor) = (&self.net, &self.cfg, &mut self.state, self.predictor.as_ref());
        let outcomes = py
            .detach(|| matcher::match_fleet(net, cfg, &trs, state, predictor))
            .map_err(to_py)?;
        Ok(wrap(&self.net, outcomes.into_iter().map(|o| o.record).collect()))
    }

    #[getter]
    fn history_size(&self) -> usize {
        self.state.history.len()
    }
}

/// Reads a probes CSV and splits each vehicle's stream into trips.
#[pyfunction]
#[pyo3(signature = (path, trip_gap = 900.0))]
fn read_trajectories(path: PathBuf, trip_gap: f64) -> PyResult<Vec<PyTrajectory>> {
    Ok(trajectory::read_trajectories(&path, trip_gap)
        .map_err(to_py)?
        .into_iter()
        .map(|inner| PyTrajectory { inner })
        .collect())
}

#[pyfunction]
fn read_matches(network: &PyNetwork, path: PathBuf) -> PyResult<Vec<PyMatchResult>> {
    let recs = matcher::read_matches_csv(&path, &network.inner).map_err(to_py)?;
    Ok(wrap(&network.inner, recs))
}

#[pyfunction]
fn write_matches(network: &PyNetwork, results: Vec<PyRef<'_, PyMatchResult>>, path: PathBuf) -> PyResult<()> {
    matcher::write_matches_csv(&path, &network.inner, &records(&results)).map_err(to_py)
}

/// Accuracy, recall and per-interval breakdown as a dict.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    results: Vec<PyRef<'py, PyMatchResult>>,
    truth: Vec<PyRef<'py, PyMatchResult>>,
) -> PyResult<Bound<'py, PyAny>> {
    let truth = TruthSet::from_records(&records(&truth)).map_err(to_py)?;
    let report = eval::evaluate(&records(&results), &truth, None, serde_json::Value::Null).map_err(to_py)?;
    json_to_py(py, &serde_json::to_value(report).map_err(|e| PyValueError::new_err(e.to_string()))?)
}

/// Fits fusion weights to `(s_p, s_c, s_a, y)` rows (fractions).
#[pyfunction]
#[pyo3(signature = (samples, seed = 0))]
fn fit_weights<'py>(py: Python<'py>, samples: Vec<(f64, f64, f64, f64)>, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let samples: Vec<CalibrationSample> = samples
        .into_iter()
        .map(|(p, c, a, y)| CalibrationSample { scores: ScoreVector { p, c, a }, y })
        .collect();
    let fit = calibration::fit_weights(&samples, &FitOptions { seed, ..FitOptions::default() }).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("weights", (fit.weights.wp, fit.weights.wc, fit.weights.wa))?;
    d.set_item("rounded", (fit.rounded.wp, fit.rounded.wc, fit.rounded.wa))?;
    d.set_item("bias", fit.bias)?;
    d.set_item("degenerate", fit.degenerate)?;
    d.set_item("test_loss", fit.test_loss)?;
    Ok(d)
}

/// Grid network plus a synthetic fleet: `(network, trajectories, truth)`.
#[pyfunction]
#[pyo3(signature = (rows = 8, cols = 8, vehicles = 20, days = 1, seed = 0, interval = 15.0, gps_sigma = 5.0, habit_strength = 0.7, split_length = 50.0))]
#[allow(clippy::too_many_arguments)]
fn synthetic_fleet(
    rows: usize,
    cols: usize,
    vehicles: usize,
    days: usize,
    seed: u64,
    interval: f64,
    gps_sigma: f64,
    habit_strength: f64,
    split_length: f64,
) -> PyResult<(PyNetwork, Vec<PyTrajectory>, Vec<PyMatchResult>)> {
    let grid = GridSpec { rows, cols, ..GridSpec::default() };
    let net = Arc::new(synth::grid_network(&grid, split_length).map_err(to_py)?);
    let spec = FleetSpec {
        vehicles,
        days,
        seed,
        interval,
        gps_sigma,
        habit_strength,
        ..FleetSpec::default()
    };
    let fleet = synth::generate_synthetic(&net, &synth::grid_free_flow(&net, &grid), &spec).map_err(to_py)?;
    let trajectories = fleet.trajectories().into_iter().map(|inner| PyTrajectory { inner }).collect();
    let truth = wrap(&net, fleet.truth());
    Ok((PyNetwork { inner: net }, trajectories, truth))
}

#[pyfunction]
#[pyo3(signature = (v_prev, v_cur, path_length, dt, lambda_ = 0.1))]
fn speed_weight(v_prev: f64, v_cur: f64, path_length: f64, dt: f64, lambda_: f64) -> f64 {
    scoring::speed_weight(v_prev, v_cur, path_length, dt, lambda_)
}

#[pyfunction]
fn bearing_weight(probe_bearing: f64, link_direction: f64) -> f64 {
    scoring::bearing_weight(probe_bearing, link_direction)
}

/// Fused score of `(s_p, s_c, s_a)` under `(w_p, w_c, w_a)`.
#[pyfunction]
fn final_score(scores: (f64, f64, f64), weights: (f64, f64, f64)) -> PyResult<f64> {
    let w = FusionWeights::new(weights.0, weights.1, weights.2).map_err(to_py)?;
    Ok(scoring::final_score(&ScoreVector { p: scores.0, c: scores.1, a: scores.2 }, &w))
}

/// Number of candidate paths used for a probing interval.
#[pyfunction]
fn k_for_interval(dt: f64) -> usize {
    search::k_for_interval(dt)
}

#[pymodule]
fn trimatch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyMatchResult>()?;
    m.add_class::<PyMatcher>()?;
    m.add_function(wrap_pyfunction!(read_trajectories, m)?)?;
    m.add_function(wrap_pyfunction!(read_matches, m)?)?;
    m.add_function(wrap_pyfunction!(write_matches, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_weights, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_fleet, m)?)?;
    m.add_function(wrap_pyfunction!(speed_weight, m)?)?;
    m.add_function(wrap_pyfunction!(bearing_weight, m)?)?;
    m.add_function(wrap_pyfunction!(final_score, m)?)?;
    m.add_function(wrap_pyfunction!(k_for_interval, m)?)?;
    Ok(())
}
