//! Python bindings for the `drivebridge` simulator.
//!
//! The module mirrors the library surface a Python caller is most likely to
//! want: the control-law scalar helpers, box overlap, scenario loading and
//! execution, trace serialization and scoring, and a thin wrapper over the
//! in-process message bus for experimenting with queue semantics.
//!
//! Everything here delegates to the core crate; no simulation or scoring
//! logic lives in the bindings.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use drivebridge::bus::{Bus, Payload, PublisherHandle, SubscriptionHandle, TopicName};
use drivebridge::chart;
use drivebridge::controller;
use drivebridge::metrics::{self, Rect};
use drivebridge::perception::{Bbox, Detection, ObjectClass};
use drivebridge::scenario::{self, ScenarioSpec};
use drivebridge::trace::{self, TraceRecord};
use drivebridge::units;

fn value_error<E: std::fmt::Display>(err: E) -> PyErr {
    PyValueError::new_err(err.to_string())
}

// ---------------------------------------------------------------------------
// Scalar helpers
// ---------------------------------------------------------------------------

/// Convert km/h to m/s.
#[pyfunction]
fn kmh_to_mps(kmh: f64) -> f64 {
    units::kmh_to_mps(kmh)
}

/// Convert m/s to km/h.
#[pyfunction]
fn mps_to_kmh(mps: f64) -> f64 {
    units::mps_to_kmh(mps)
}

/// Commanded acceleration (m/s^2) for a speed error, proportional with
/// saturation: `clamp(0.7 * (target - current), -6, 6)`.
///
/// Raises `ValueError` for negative or non-finite speeds.
#[pyfunction]
fn control_accel(current_speed_mps: f64, target_speed_mps: f64) -> PyResult<f64> {
    controller::control_accel(current_speed_mps, target_speed_mps).map_err(value_error)
}

/// Closed-form time (s) for the saturated proportional loop to bring the
/// speed from `v0_mps` to within `epsilon_mps` of `v_target_mps`.
///
/// Raises `ValueError` for negative or non-finite speeds, or a non-positive
/// tolerance.
#[pyfunction]
fn settling_time(v0_mps: f64, v_target_mps: f64, epsilon_mps: f64) -> PyResult<f64> {
    controller::settling_time(v0_mps, v_target_mps, epsilon_mps).map_err(value_error)
}

/// Intersection-over-union of two axis-aligned boxes given as
/// `(x0, y0, x1, y1)` corner tuples.
///
/// Raises `ValueError` for non-finite coordinates.
#[pyfunction]
fn iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> PyResult<f64> {
    let ra = Rect::from_corners(a.0, a.1, a.2, a.3);
    let rb = Rect::from_corners(b.0, b.1, b.2, b.3);
    metrics::iou(&ra, &rb).map_err(value_error)
}

/// Names and one-line descriptions of the built-in scenarios, as
/// `(name, description)` pairs.
#[pyfunction]
fn builtin_names() -> Vec<(String, String)> {
    scenario::builtin_names()
        .iter()
        .map(|(name, desc)| (name.to_string(), desc.to_string()))
        .collect()
}

// ---------------------------------------------------------------------------
// Metrics report
// ---------------------------------------------------------------------------

/// Detection scorecard produced by `Trace.metrics`.
#[pyclass(name = "MetricsReport", module = "drivebridge_py", frozen)]
struct PyMetricsReport {
    inner: metrics::MetricsReport,
}

#[pymethods]
impl PyMetricsReport {
    #[getter]
    fn precision(&self) -> f64 {
        self.inner.precision
    }

    #[getter]
    fn recall(&self) -> f64 {
        self.inner.recall
    }

    #[getter]
    fn f1(&self) -> f64 {
        self.inner.f1
    }

    #[getter]
    fn map50(&self) -> f64 {
        self.inner.map50
    }

    #[getter]
    fn map50_95(&self) -> f64 {
        self.inner.map50_95
    }

    fn __repr__(&self) -> String {
        format!(
            "MetricsReport(precision={:.4}, recall={:.4}, f1={:.4}, map50={:.4}, map50_95={:.4})",
            self.inner.precision,
            self.inner.recall,
            self.inner.f1,
            self.inner.map50,
            self.inner.map50_95
        )
    }
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

/// A declarative simulation scenario: initial conditions, scene objects,
/// weather schedule, drift configuration, and the speed-limit mapping.
#[pyclass(name = "Scenario", module = "drivebridge_py")]
struct PyScenario {
    spec: ScenarioSpec,
}

#[pymethods]
impl PyScenario {
    /// Load one of the built-in scenarios by name (see `builtin_names()`).
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        scenario::builtin(name)
            .map(|spec| Self { spec })
            .ok_or_else(|| value_error(format!("unknown builtin scenario {name:?}")))
    }

    /// Parse a scenario from its text format.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        scenario::load_scenario(text)
            .map(|spec| Self { spec })
            .map_err(value_error)
    }

    /// Read and parse a scenario file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path)?;
        Self::from_text(&text)
    }

    #[getter]
    fn name(&self) -> String {
        self.spec.name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.spec.seed
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.spec.duration_s
    }

    #[getter]
    fn tick_hz(&self) -> f64 {
        self.spec.tick_hz
    }

    #[getter]
    fn initial_speed_kmh(&self) -> f64 {
        self.spec.initial_speed_kmh
    }

    #[getter]
    fn confidence_threshold(&self) -> f64 {
        self.spec.confidence_threshold
    }

    /// Number of simulation ticks the scenario will run.
    fn tick_count(&self) -> u64 {
        self.spec.tick_count()
    }

    /// Replace the random seed (everything else unchanged).
    fn set_seed(&mut self, seed: u64) {
        self.spec.seed = seed;
    }

    /// Render the scenario back to its text format.
    fn to_text(&self) -> String {
        scenario::to_text(&self.spec)
    }

    /// Run the closed-loop simulation and return the recorded trace.
    fn run(&self) -> PyResult<PyTrace> {
        scenario::run(&self.spec)
            .map(|records| PyTrace { records })
            .map_err(value_error)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, seed={}, duration_s={}, tick_hz={})",
            self.spec.name, self.spec.seed, self.spec.duration_s, self.spec.tick_hz
        )
    }
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

/// A recorded simulation run: vehicle samples, detections, commands, and
/// weather changes in publication order.
#[pyclass(name = "Trace", module = "drivebridge_py")]
struct PyTrace {
    records: Vec<TraceRecord>,
}

#[pymethods]
impl PyTrace {
    /// Parse a trace from CSV text (see `to_csv`).
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        trace::from_csv(text)
            .map(|records| Self { records })
            .map_err(value_error)
    }

    /// Parse a trace from JSON-lines text (see `to_jsonl`).
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        trace::from_jsonl(text)
            .map(|records| Self { records })
            .map_err(value_error)
    }

    /// Read a trace file; the format is chosen by extension
    /// (`.csv` or `.jsonl`).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::from_csv(&text),
            Some("jsonl") => Self::from_jsonl(&text),
            other => Err(value_error(format!(
                "unsupported trace extension {other:?}; expected .csv or .jsonl"
            ))),
        }
    }

    fn __len__(&self) -> usize {
        self.records.len()
    }

    /// Serialize the trace to CSV. Floats round-trip exactly.
    fn to_csv(&self) -> String {
        trace::to_csv(&self.records)
    }

    /// Serialize the trace to JSON lines. Floats round-trip exactly.
    fn to_jsonl(&self) -> String {
        trace::to_jsonl(&self.records)
    }

    /// Write the trace to a file; the format is chosen by extension
    /// (`.csv` or `.jsonl`).
    fn save(&self, path: PathBuf) -> PyResult<()> {
        let text = match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => self.to_csv(),
            Some("jsonl") => self.to_jsonl(),
            other => {
                return Err(value_error(format!(
                    "unsupported trace extension {other:?}; expected .csv or .jsonl"
                )))
            }
        };
        std::fs::write(&path, text)?;
        Ok(())
    }

    /// Vehicle speed over time as `(time_s, speed_mps)` pairs.
    fn speed_series(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter_map(|record| match record {
                TraceRecord::VehicleSample { time_s, speed_mps, .. } => Some((*time_s, *speed_mps)),
                _ => None,
            })
            .collect()
    }

    /// Detection scorecard against the scenario's ground truth, or `None`
    /// when the run had no visible truth to score against.
    fn metrics(&self, scenario: &PyScenario) -> PyResult<Option<PyMetricsReport>> {
        let evaluation = metrics::evaluate_trace(&self.records, &scenario.spec).map_err(value_error)?;
        Ok(evaluation.detection.map(|inner| PyMetricsReport { inner }))
    }

    /// The full evaluation (detection counts, latency, untriggered changes)
    /// as a pretty-printed JSON string.
    fn evaluation_json(&self, scenario: &PyScenario) -> PyResult<String> {
        let evaluation = metrics::evaluate_trace(&self.records, &scenario.spec).map_err(value_error)?;
        serde_json::to_string_pretty(&evaluation).map_err(value_error)
    }

    /// Perception-to-command latency samples as
    /// `(trigger_stamp_s, effect_stamp_s, latency_s)` tuples.
    fn response_latency(&self, scenario: &PyScenario) -> Vec<(f64, f64, f64)> {
        metrics::response_latency(
            &self.records,
            &scenario.spec.mapping,
            scenario.spec.confidence_threshold,
        )
        .samples
        .iter()
        .map(|s| (s.trigger_stamp_s, s.effect_stamp_s, s.latency_s))
        .collect()
    }

    /// Command target changes with no attributable detection, as
    /// `(stamp_s, target_speed_mps)` tuples.
    fn untriggered_changes(&self, scenario: &PyScenario) -> Vec<(f64, f64)> {
        metrics::response_latency(
            &self.records,
            &scenario.spec.mapping,
            scenario.spec.confidence_threshold,
        )
        .untriggered_changes
        .iter()
        .map(|c| (c.stamp_s, c.target_speed_mps))
        .collect()
    }

    /// Settling statistics against a target speed: returns
    /// `(settled_at_s, overshoot_mps)` where `settled_at_s` is `None` if the
    /// profile never stays within `epsilon_mps` of the target.
    fn speed_profile_stats(
        &self,
        v_target_mps: f64,
        epsilon_mps: f64,
    ) -> PyResult<(Option<f64>, f64)> {
        let stats =
            metrics::speed_profile_stats(&self.records, v_target_mps, epsilon_mps).map_err(value_error)?;
        Ok((stats.settled_at_s, stats.overshoot_mps))
    }

    /// Render the speed profile (plus detection markers and target levels)
    /// as a standalone SVG document.
    fn speed_profile_svg(&self) -> PyResult<String> {
        chart::speed_profile_svg(&self.records).map_err(value_error)
    }

    fn __repr__(&self) -> String {
        let samples = self
            .records
            .iter()
            .filter(|r| matches!(r, TraceRecord::VehicleSample { .. }))
            .count();
        format!("Trace({} records, {} vehicle samples)", self.records.len(), samples)
    }
}

// ---------------------------------------------------------------------------
// Bus
// ---------------------------------------------------------------------------

/// In-process publish/subscribe bus with per-subscriber bounded FIFO queues
/// (drop-oldest on overflow).
#[pyclass(name = "Bus", module = "drivebridge_py")]
struct PyBus {
    inner: Bus,
}

#[pymethods]
impl PyBus {
    #[new]
    fn new() -> Self {
        Self { inner: Bus::new() }
    }

    /// Register `node_id` as a publisher on `topic` (e.g. "/detections").
    fn register_publisher(&self, node_id: &str, topic: &str) -> PyResult<PyPublisher> {
        let topic = TopicName::new(topic).map_err(value_error)?;
        Ok(PyPublisher {
            inner: self.inner.register_publisher(node_id, topic),
        })
    }

    /// Register `node_id` as a subscriber on `topic` with a bounded queue.
    #[pyo3(signature = (node_id, topic, capacity = 16))]
    fn register_subscriber(
        &self,
        node_id: &str,
        topic: &str,
        capacity: usize,
    ) -> PyResult<PySubscription> {
        let topic = TopicName::new(topic).map_err(value_error)?;
        self.inner
            .register_subscriber(node_id, topic, capacity)
            .map(|inner| PySubscription { inner })
            .map_err(value_error)
    }

    /// Sorted list of topics with at least one registered endpoint.
    fn topics(&self) -> Vec<String> {
        self.inner
            .topics()
            .iter()
            .map(|t| t.as_str().to_string())
            .collect()
    }

    /// Remove every registration owned by `node_id`.
    fn unregister_node(&self, node_id: &str) {
        self.inner.unregister_node(node_id);
    }
}

/// Publishing endpoint returned by `Bus.register_publisher`.
#[pyclass(name = "Publisher", module = "drivebridge_py")]
struct PyPublisher {
    inner: PublisherHandle,
}

#[pymethods]
impl PyPublisher {
    #[getter]
    fn topic(&self) -> String {
        self.inner.topic().as_str().to_string()
    }

    /// Publish a detection message and return its per-publisher sequence
    /// number. The box is a fixed centered placeholder; this entry point is
    /// for exercising queue semantics, not for building detectors.
    fn publish_detection(&self, class_name: &str, confidence: f64, stamp_s: f64) -> PyResult<u64> {
        if !confidence.is_finite() || !(0.0..=1.0).contains(&confidence) {
            return Err(value_error(format!(
                "confidence must be in [0, 1], got {confidence}"
            )));
        }
        let class = ObjectClass::from_name(class_name)
            .ok_or_else(|| value_error(format!("unknown object class {class_name:?}")))?;
        let detection = Detection {
            class_id: class.class_id(),
            class_name: class.name().to_string(),
            confidence,
            bbox: Bbox {
                cx: 0.5,
                cy: 0.5,
                w: 0.2,
                h: 0.2,
            },
            stamp_s,
            truth_id: None,
        };
        self.inner
            .publish(Payload::Detection(detection), stamp_s)
            .map(|envelope| envelope.seq)
            .map_err(value_error)
    }
}

/// Subscribing endpoint returned by `Bus.register_subscriber`.
#[pyclass(name = "Subscription", module = "drivebridge_py")]
struct PySubscription {
    inner: SubscriptionHandle,
}

#[pymethods]
impl PySubscription {
    #[getter]
    fn topic(&self) -> String {
        self.inner.topic().as_str().to_string()
    }

    /// Messages currently queued.
    fn pending(&self) -> usize {
        self.inner.pending()
    }

    /// Total messages discarded by overflow since registration.
    fn dropped(&self) -> u64 {
        self.inner.dropped()
    }

    /// Pop every queued message, oldest first, as
    /// `(seq, publish_time_s, payload_json)` tuples.
    fn drain(&self) -> PyResult<Vec<(u64, f64, String)>> {
        self.inner
            .drain()
            .into_iter()
            .map(|envelope| {
                let payload = serde_json::to_string(&envelope.payload).map_err(value_error)?;
                Ok((envelope.seq, envelope.publish_time_s, payload))
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Module
// ---------------------------------------------------------------------------

#[pymodule]
fn drivebridge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("SPEED_ERROR_GAIN", controller::SPEED_ERROR_GAIN)?;
    m.add("MAX_ACCEL_MPS2", drivebridge::plant::MAX_ACCEL_MPS2)?;
    m.add_function(wrap_pyfunction!(kmh_to_mps, m)?)?;
    m.add_function(wrap_pyfunction!(mps_to_kmh, m)?)?;
    m.add_function(wrap_pyfunction!(control_accel, m)?)?;
    m.add_function(wrap_pyfunction!(settling_time, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_names, m)?)?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyMetricsReport>()?;
    m.add_class::<PyBus>()?;
    m.add_class::<PyPublisher>()?;
    m.add_class::<PySubscription>()?;
    Ok(())
}
