//! Python bindings. Events cross the boundary in their text form
//! (`S,<tick>,<pamp>,<danger>,<safe>` / `A,<tick>,<type>`).

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use dcaseg::datagen::{self, ScenarioSpec};
use dcaseg::engine::{self, PopulationConfig};
use dcaseg::segmentation::{self, SegmentationMode, SegmenterConfig};
use dcaseg::signal::{self, AntigenEvent, Event, SignalInstance};
use dcaseg::stats::{self, Direction};
use dcaseg::stream_io;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "WeightMatrix", from_py_object)]
#[derive(Clone)]
pub struct PyWeightMatrix {
    #[pyo3(get, set)]
    csm_pamp: f64,
    #[pyo3(get, set)]
    csm_danger: f64,
    #[pyo3(get, set)]
    csm_safe: f64,
    #[pyo3(get, set)]
    k_pamp: f64,
    #[pyo3(get, set)]
    k_danger: f64,
    #[pyo3(get, set)]
    k_safe: f64,
}

impl From<&PyWeightMatrix> for signal::WeightMatrix {
    fn from(w: &PyWeightMatrix) -> Self {
        signal::WeightMatrix {
            csm_pamp: w.csm_pamp,
            csm_danger: w.csm_danger,
            csm_safe: w.csm_safe,
            k_pamp: w.k_pamp,
            k_danger: w.k_danger,
            k_safe: w.k_safe,
        }
    }
}

#[pymethods]
impl PyWeightMatrix {
    /// Defaults to the standard dDCA weights.
    #[new]
    #[pyo3(signature = (csm_pamp=None, csm_danger=None, csm_safe=None, k_pamp=None, k_danger=None, k_safe=None))]
    fn new(
        csm_pamp: Option<f64>,
        csm_danger: Option<f64>,
        csm_safe: Option<f64>,
        k_pamp: Option<f64>,
        k_danger: Option<f64>,
        k_safe: Option<f64>,
    ) -> Self {
        let d = signal::WeightMatrix::default();
        PyWeightMatrix {
            csm_pamp: csm_pamp.unwrap_or(d.csm_pamp),
            csm_danger: csm_danger.unwrap_or(d.csm_danger),
            csm_safe: csm_safe.unwrap_or(d.csm_safe),
            k_pamp: k_pamp.unwrap_or(d.k_pamp),
            k_danger: k_danger.unwrap_or(d.k_danger),
            k_safe: k_safe.unwrap_or(d.k_safe),
        }
    }

    fn violations(&self) -> Vec<String> {
        signal::WeightMatrix::from(self)
            .violations()
            .iter()
            .map(|v| v.to_string())
            .collect()
    }

    fn is_valid(&self) -> bool {
        signal::WeightMatrix::from(self).is_valid()
    }

    fn __repr__(&self) -> String {
        format!(
            "WeightMatrix(csm=({}, {}, {}), k=({}, {}, {}))",
            self.csm_pamp, self.csm_danger, self.csm_safe, self.k_pamp, self.k_danger, self.k_safe
        )
    }
}

/// Returns `(csm, k)` for one signal instance.
#[pyfunction]
#[pyo3(signature = (pamp, danger, safe, weights=None))]
fn transform_signals(pamp: f64, danger: f64, safe: f64, weights: Option<PyWeightMatrix>) -> PyResult<(f64, f64)> {
    let s = SignalInstance::new(0, pamp, danger, safe).map_err(value_err)?;
    let w = weights.as_ref().map(Into::into).unwrap_or_default();
    let out = signal::transform_signals(&s, &w).map_err(value_err)?;
    Ok((out.csm, out.k))
}

#[pyclass(name = "ProcessedRecord", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyProcessedRecord(engine::ProcessedRecord);

#[pymethods]
impl PyProcessedRecord {
    #[getter]
    fn presented_at(&self) -> u64 {
        self.0.presented_at
    }

    #[getter]
    fn dc_index(&self) -> usize {
        self.0.dc_index
    }

    #[getter]
    fn sum_k(&self) -> f64 {
        self.0.sum_k
    }

    #[getter]
    fn forced(&self) -> bool {
        self.0.forced
    }

    #[getter]
    fn antigen_counts(&self) -> BTreeMap<String, u64> {
        self.0.antigen_counts.iter().map(|(t, n)| (t.to_string(), *n)).collect()
    }

    fn antigen_total(&self) -> u64 {
        self.0.antigen_total()
    }

    fn __repr__(&self) -> String {
        format!(
            "ProcessedRecord(presented_at={}, dc_index={}, sum_k={}, antigens={})",
            self.0.presented_at,
            self.0.dc_index,
            self.0.sum_k,
            self.0.antigen_total()
        )
    }
}

fn wrap(records: Vec<engine::ProcessedRecord>) -> Vec<PyProcessedRecord> {
    records.into_iter().map(PyProcessedRecord).collect()
}

fn unwrap(records: &[PyRef<'_, PyProcessedRecord>]) -> Vec<engine::ProcessedRecord> {
    records.iter().map(|r| r.0.clone()).collect()
}

fn population(
    population_size: usize,
    threshold_step: f64,
    weights: Option<PyWeightMatrix>,
    flush_at_end: bool,
) -> PopulationConfig {
    PopulationConfig {
        population_size,
        threshold_step,
        weights: weights.as_ref().map(Into::into).unwrap_or_default(),
        flush_at_end,
    }
}

#[pyclass(name = "Engine")]
pub struct PyEngine(engine::Engine);

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (population_size=100, threshold_step=12.0, weights=None, flush_at_end=true))]
    fn new(
        population_size: usize,
        threshold_step: f64,
        weights: Option<PyWeightMatrix>,
        flush_at_end: bool,
    ) -> PyResult<Self> {
        let cfg = population(population_size, threshold_step, weights, flush_at_end);
        Ok(PyEngine(engine::Engine::new(cfg).map_err(value_err)?))
    }

    fn ingest_antigen(&mut self, tick: u64, antigen_type: &str) -> PyResult<()> {
        self.0
            .ingest_antigen(&AntigenEvent::new(tick, antigen_type))
            .map_err(value_err)
    }

    /// Returns the records of cells that matured on this signal.
    fn ingest_signal(&mut self, tick: u64, pamp: f64, danger: f64, safe: f64) -> PyResult<Vec<PyProcessedRecord>> {
        let s = SignalInstance::new(tick, pamp, danger, safe).map_err(value_err)?;
        Ok(wrap(self.0.ingest_signal(&s).map_err(value_err)?))
    }

    /// Ingests one event line with the same ordering checks as a file run.
    fn ingest_line(&mut self, line: &str) -> PyResult<Vec<PyProcessedRecord>> {
        let ev = stream_io::parse_event_line(line).map_err(value_err)?;
        let mut out = Vec::new();
        self.0.ingest(&ev, &mut out).map_err(value_err)?;
        Ok(wrap(out))
    }

    /// Ends the stream: returns `(records, dropped_antigens)`.
    fn flush(&mut self) -> (Vec<PyProcessedRecord>, u64) {
        let out = self.0.flush();
        (wrap(out.records), out.dropped)
    }

    #[getter]
    fn ag_counter(&self) -> u64 {
        self.0.ag_counter()
    }

    #[getter]
    fn population_size(&self) -> usize {
        self.0.cells().len()
    }

    /// `(migration_threshold, lifespan, sum_k, antigens_held)` per cell.
    fn cell_states(&self) -> Vec<(f64, f64, f64, u64)> {
        self.0
            .cells()
            .iter()
            .map(|c| (c.migration_threshold(), c.lifespan(), c.sum_k(), c.antigens_held()))
            .collect()
    }
}

#[pyclass(name = "RunOutput", frozen, get_all)]
pub struct PyRunOutput {
    records: Vec<PyProcessedRecord>,
    dropped: u64,
    antigens_ingested: u64,
    signals: u64,
    final_tick: Option<u64>,
}

fn parse_lines(lines: Vec<String>) -> PyResult<Vec<Event>> {
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| stream_io::parse_event_line(l).map_err(|e| value_err(format!("line {}: {e}", i + 1))))
        .collect()
}

/// Runs a whole stream of event lines through a fresh population.
#[pyfunction]
#[pyo3(signature = (lines, population_size=100, threshold_step=12.0, weights=None, flush_at_end=true))]
fn run_stream(
    lines: Vec<String>,
    population_size: usize,
    threshold_step: f64,
    weights: Option<PyWeightMatrix>,
    flush_at_end: bool,
) -> PyResult<PyRunOutput> {
    let events = parse_lines(lines)?;
    let cfg = population(population_size, threshold_step, weights, flush_at_end);
    let run = engine::run_stream(cfg, &events).map_err(value_err)?;
    Ok(PyRunOutput {
        records: wrap(run.records),
        dropped: run.dropped,
        antigens_ingested: run.antigens_ingested,
        signals: run.signals,
        final_tick: run.final_tick,
    })
}

#[pyclass(name = "SegmentReport", frozen, get_all)]
pub struct PySegmentReport {
    ordinal: u64,
    start_tick: u64,
    end_tick: u64,
    records: u64,
    antigen_instances: u64,
    empty: bool,
    k_alpha: BTreeMap<String, f64>,
    counts: BTreeMap<String, u64>,
}

impl From<&segmentation::SegmentReport> for PySegmentReport {
    fn from(r: &segmentation::SegmentReport) -> Self {
        PySegmentReport {
            ordinal: r.ordinal,
            start_tick: r.start_tick,
            end_tick: r.end_tick,
            records: r.records,
            antigen_instances: r.antigen_instances,
            empty: r.empty,
            k_alpha: r.scores.iter().map(|(t, s)| (t.to_string(), s.k_alpha)).collect(),
            counts: r.scores.iter().map(|(t, s)| (t.to_string(), s.total_count)).collect(),
        }
    }
}

/// Per-type Kα over a set of records.
#[pyfunction]
fn compute_k_alpha(records: Vec<PyRef<'_, PyProcessedRecord>>) -> BTreeMap<String, f64> {
    segmentation::compute_k_alpha(&unwrap(&records))
        .into_iter()
        .map(|(t, s)| (t.to_string(), s.k_alpha))
        .collect()
}

/// Segments records (`mode` is `none`, `abs` or `tbs`) and scores each segment.
#[pyfunction]
#[pyo3(signature = (records, mode="none", size=None, final_tick=None, include_forced=true))]
fn analyze(
    records: Vec<PyRef<'_, PyProcessedRecord>>,
    mode: &str,
    size: Option<u64>,
    final_tick: Option<u64>,
    include_forced: bool,
) -> PyResult<Vec<PySegmentReport>> {
    let mode: SegmentationMode = mode.parse().map_err(value_err)?;
    let segment_size = match (mode, size) {
        (SegmentationMode::None, _) => 0,
        (_, Some(s)) => s,
        (_, None) => return Err(PyValueError::new_err("size is required for abs and tbs")),
    };
    let cfg = SegmenterConfig {
        mode,
        segment_size,
        include_forced,
    };
    let reports = segmentation::analyze(&unwrap(&records), &cfg, final_tick).map_err(value_err)?;
    Ok(reports.iter().map(Into::into).collect())
}

#[pyclass(name = "Summary", frozen, get_all)]
pub struct PySummary {
    min: f64,
    mean: f64,
    max: f64,
    stdev: f64,
    n_segments: usize,
}

#[pyfunction]
fn summarize(series: Vec<f64>) -> PyResult<PySummary> {
    let s = stats::summarize(&series).map_err(value_err)?;
    Ok(PySummary {
        min: s.min,
        mean: s.mean,
        max: s.max,
        stdev: s.stdev,
        n_segments: s.n_segments,
    })
}

#[pyclass(name = "TTestResult", frozen, get_all)]
pub struct PyTTestResult {
    statistic: f64,
    degrees_of_freedom: f64,
    p_value: f64,
    alpha: f64,
    significant: bool,
    direction: Option<String>,
}

impl From<stats::TTestResult> for PyTTestResult {
    fn from(r: stats::TTestResult) -> Self {
        PyTTestResult {
            statistic: r.statistic,
            degrees_of_freedom: r.degrees_of_freedom,
            p_value: r.p_value,
            alpha: r.alpha,
            significant: r.significant,
            direction: r.direction.map(|d| d.to_string()),
        }
    }
}

#[pyfunction]
#[pyo3(signature = (a, b, alpha=stats::DEFAULT_ALPHA, pooled=false))]
fn two_sample_two_sided(a: Vec<f64>, b: Vec<f64>, alpha: f64, pooled: bool) -> PyResult<PyTTestResult> {
    let model = if pooled {
        stats::VarianceModel::Pooled
    } else {
        stats::VarianceModel::Welch
    };
    Ok(stats::two_sample_two_sided(&a, &b, alpha, model)
        .map_err(value_err)?
        .into())
}

/// `direction` is `"greater"` or `"less"`.
#[pyfunction]
#[pyo3(signature = (x, true_mean, direction, alpha=stats::DEFAULT_ALPHA))]
fn one_sample_one_sided(x: Vec<f64>, true_mean: f64, direction: &str, alpha: f64) -> PyResult<PyTTestResult> {
    let d: Direction = direction.parse().map_err(value_err)?;
    Ok(stats::one_sample_one_sided(&x, true_mean, d, alpha)
        .map_err(value_err)?
        .into())
}

fn scenario_output(spec: &ScenarioSpec) -> PyResult<(Vec<String>, BTreeMap<String, String>)> {
    let scenario = datagen::generate(spec).map_err(value_err)?;
    let lines = scenario.events.iter().map(stream_io::format_event).collect();
    let labels = scenario
        .labels
        .iter()
        .map(|(t, l)| (t.to_string(), l.to_string()))
        .collect();
    Ok((lines, labels))
}

/// Generates a scenario from its JSON spec: returns `(event_lines, labels)`.
#[pyfunction]
fn generate(spec_json: &str) -> PyResult<(Vec<String>, BTreeMap<String, String>)> {
    let spec: ScenarioSpec = serde_json::from_str(spec_json).map_err(value_err)?;
    scenario_output(&spec)
}

/// The bundled port-scan scenario, optionally reseeded or rate-scaled.
#[pyfunction]
#[pyo3(signature = (seed=None, scale=None))]
fn generate_bundled(seed: Option<u64>, scale: Option<f64>) -> PyResult<(Vec<String>, BTreeMap<String, String>)> {
    let mut spec = datagen::bundled_scenario_syn_scan();
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(f) = scale {
        spec = spec.scale_rates(f);
    }
    scenario_output(&spec)
}

#[pymodule]
fn pydcaseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyWeightMatrix>()?;
    m.add_class::<PyProcessedRecord>()?;
    m.add_class::<PyEngine>()?;
    m.add_class::<PyRunOutput>()?;
    m.add_class::<PySegmentReport>()?;
    m.add_class::<PySummary>()?;
    m.add_class::<PyTTestResult>()?;
    m.add_function(wrap_pyfunction!(transform_signals, m)?)?;
    m.add_function(wrap_pyfunction!(run_stream, m)?)?;
    m.add_function(wrap_pyfunction!(compute_k_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(two_sample_two_sided, m)?)?;
    m.add_function(wrap_pyfunction!(one_sample_one_sided, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_bundled, m)?)?;
    Ok(())
}
