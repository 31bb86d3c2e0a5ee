//! Declarative scenarios and the deterministic fixed-timestep runner.
//!
//! A [`ScenarioSpec`] describes everything a run needs: seed, duration and
//! tick rate, the ego vehicle's entry speed, scene objects along the track,
//! a weather schedule, an optional drift injector, and the controller's
//! limit mapping and confidence gate. Scenarios load from a small
//! line-oriented text format ([`load_scenario`]) or come built in
//! ([`builtin`]).
//!
//! [`run`] executes a scenario tick by tick over the in-process bus with
//! every node decision in a fixed order and a single seeded RNG, so a
//! scenario with the same seed always produces a byte-identical trace.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{Bus, Payload, TopicName, DEFAULT_QUEUE_CAPACITY};
use crate::controller::{Controller, SpeedMapping, DEFAULT_CONFIDENCE_THRESHOLD};
use crate::perception::{
    sense, DriftSpec, ObjectClass, SceneObject, WeatherState,
};
use crate::plant::{step, DriveCommand, VehicleState};
use crate::trace::TraceRecord;
use crate::units::kmh_to_mps;

/// Topic names used by the pipeline.
pub mod topics {
    pub const DETECTIONS: &str = "/detections";
    pub const ACKERMANN_CMD: &str = "/ackermann_cmd";
    pub const VEHICLE_STATE: &str = "/vehicle_state";
    pub const WEATHER_CONTROL: &str = "/weather_control";
}

/// Slack when snapping schedule times onto the tick grid.
const SCHEDULE_EPS_S: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// One step of the weather schedule: `weather` takes effect at `time_s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherPhase {
    pub time_s: f64,
    pub weather: WeatherState,
}

/// A complete, runnable scenario description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    pub tick_hz: f64,
    pub initial_speed_kmh: f64,
    pub track_length_m: f64,
    pub objects: Vec<SceneObject>,
    pub weather_schedule: Vec<WeatherPhase>,
    pub drift: DriftSpec,
    pub mapping: SpeedMapping,
    pub confidence_threshold: f64,
}

impl ScenarioSpec {
    /// Number of control ticks in the run.
    pub fn tick_count(&self) -> u64 {
        (self.duration_s * self.tick_hz).round() as u64
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |message: String| Err(ScenarioError::Invalid(message));
        if self.name.trim().is_empty() {
            return invalid("name must not be empty".into());
        }
        if !self.duration_s.is_finite() || self.duration_s <= 0.0 {
            return invalid(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !self.tick_hz.is_finite() || self.tick_hz <= 0.0 {
            return invalid(format!("tick_hz must be positive, got {}", self.tick_hz));
        }
        if self.tick_count() == 0 {
            return invalid("duration and tick rate give an empty run".into());
        }
        if !self.initial_speed_kmh.is_finite() || self.initial_speed_kmh < 0.0 {
            return invalid(format!(
                "initial_speed_kmh must be non-negative, got {}",
                self.initial_speed_kmh
            ));
        }
        if !self.track_length_m.is_finite() || self.track_length_m <= 0.0 {
            return invalid(format!(
                "track_length_m must be positive, got {}",
                self.track_length_m
            ));
        }
        for (index, object) in self.objects.iter().enumerate() {
            if !object.position_m.is_finite()
                || object.position_m < 0.0
                || object.position_m > self.track_length_m
            {
                return invalid(format!(
                    "object {index} position {} is outside the track [0, {}]",
                    object.position_m, self.track_length_m
                ));
            }
            if !object.width_m.is_finite()
                || object.width_m <= 0.0
                || !object.height_m.is_finite()
                || object.height_m <= 0.0
            {
                return invalid(format!("object {index} must have positive dimensions"));
            }
        }
        if self.weather_schedule.is_empty() {
            return invalid("weather schedule must have at least one phase".into());
        }
        if self.weather_schedule[0].time_s != 0.0 {
            return invalid("the first weather phase must start at time 0".into());
        }
        for pair in self.weather_schedule.windows(2) {
            if !(pair[1].time_s > pair[0].time_s) {
                return invalid(format!(
                    "weather phase times must strictly increase ({} then {})",
                    pair[0].time_s, pair[1].time_s
                ));
            }
        }
        for (index, phase) in self.weather_schedule.iter().enumerate() {
            if !phase.time_s.is_finite() || phase.time_s < 0.0 {
                return invalid(format!("weather phase {index} time must be non-negative"));
            }
            phase
                .weather
                .validate()
                .map_err(|e| ScenarioError::Invalid(format!("weather phase {index}: {e}")))?;
        }
        self.drift
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return invalid(format!(
                "confidence_threshold must be in [0, 1], got {}",
                self.confidence_threshold
            ));
        }
        Ok(())
    }
}

// --- built-in scenarios ----------------------------------------------------

/// Two-phase run on a straight track: the vehicle enters at 40 km/h in fog,
/// picks up a 30 km/h sign and settles to 25, then the sky clears, a
/// 90 km/h sign appears, and it accelerates to 80.
pub fn fog_to_clear() -> ScenarioSpec {
    ScenarioSpec {
        name: "fog-to-clear".into(),
        seed: 42,
        duration_s: 24.0,
        tick_hz: 10.0,
        initial_speed_kmh: 40.0,
        track_length_m: 400.0,
        objects: vec![
            SceneObject {
                class: ObjectClass::SpeedLimit30,
                position_m: 80.0,
                width_m: 1.0,
                height_m: 1.0,
            },
            SceneObject {
                class: ObjectClass::SpeedLimit90,
                position_m: 185.0,
                width_m: 1.0,
                height_m: 1.0,
            },
        ],
        weather_schedule: vec![
            WeatherPhase {
                time_s: 0.0,
                weather: WeatherState::fog(),
            },
            WeatherPhase {
                time_s: 12.0,
                weather: WeatherState::clear(),
            },
        ],
        drift: DriftSpec::None,
        mapping: SpeedMapping::default(),
        confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
    }
}

/// The fog half of [`fog_to_clear`] with covariate drift layered on top:
/// scaled confidences, jittered boxes, and a boosted miss rate all run.
pub fn covariate_fog() -> ScenarioSpec {
    ScenarioSpec {
        name: "covariate-fog".into(),
        seed: 7,
        duration_s: 20.0,
        tick_hz: 10.0,
        initial_speed_kmh: 40.0,
        track_length_m: 350.0,
        objects: vec![
            SceneObject {
                class: ObjectClass::SpeedLimit30,
                position_m: 70.0,
                width_m: 1.0,
                height_m: 1.0,
            },
            SceneObject {
                class: ObjectClass::SpeedLimit90,
                position_m: 160.0,
                width_m: 1.0,
                height_m: 1.0,
            },
        ],
        weather_schedule: vec![WeatherPhase {
            time_s: 0.0,
            weather: WeatherState::fog(),
        }],
        drift: DriftSpec::Covariate {
            confidence_scale: 0.8,
            miss_rate_boost: 0.3,
            bbox_jitter_sigma: 0.002,
        },
        mapping: SpeedMapping::default(),
        confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
    }
}

/// A parked obstacle 60 m ahead on a clear day: the vehicle brakes to a
/// stop and holds it while the obstacle stays in view.
pub fn obstacle_stop() -> ScenarioSpec {
    ScenarioSpec {
        name: "obstacle-stop".into(),
        seed: 11,
        duration_s: 20.0,
        tick_hz: 10.0,
        initial_speed_kmh: 40.0,
        track_length_m: 300.0,
        objects: vec![SceneObject {
            class: ObjectClass::Obstacle,
            position_m: 60.0,
            width_m: 2.0,
            height_m: 2.0,
        }],
        weather_schedule: vec![WeatherPhase {
            time_s: 0.0,
            weather: WeatherState::clear(),
        }],
        drift: DriftSpec::None,
        mapping: SpeedMapping::default(),
        confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
    }
}

/// Look up a built-in scenario by name.
pub fn builtin(name: &str) -> Option<ScenarioSpec> {
    match name {
        "fog-to-clear" => Some(fog_to_clear()),
        "covariate-fog" => Some(covariate_fog()),
        "obstacle-stop" => Some(obstacle_stop()),
        _ => None,
    }
}

/// Names and one-line descriptions of the built-in scenarios.
pub fn builtin_names() -> [(&'static str, &'static str); 3] {
    [
        (
            "fog-to-clear",
            "40 km/h entry, 30-limit sign in fog, then a 90-limit sign once the sky clears",
        ),
        (
            "covariate-fog",
            "all-fog run with covariate drift: scaled confidence, jittered boxes, extra misses",
        ),
        (
            "obstacle-stop",
            "parked obstacle 60 m ahead in clear weather; the vehicle brakes and holds a stop",
        ),
    ]
}

// --- textual scenario format -----------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Scenario,
    Object(usize),
    Weather(usize),
    Drift,
    Mapping,
}

/// One `key = value` occurrence with its line number.
type KeyMap = BTreeMap<String, (String, usize)>;

#[derive(Default)]
struct RawScenario {
    scenario: KeyMap,
    objects: BTreeMap<usize, (KeyMap, usize)>,
    weather: BTreeMap<usize, (KeyMap, usize)>,
    drift: Option<(KeyMap, usize)>,
    mapping: Option<(KeyMap, usize)>,
    scenario_line: usize,
}

fn parse_error(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse {
        line,
        message: message.into(),
    }
}

fn section_for(header: &str, line: usize) -> Result<Section, ScenarioError> {
    if header == "scenario" {
        return Ok(Section::Scenario);
    }
    if header == "drift" {
        return Ok(Section::Drift);
    }
    if header == "mapping" {
        return Ok(Section::Mapping);
    }
    if let Some(rest) = header.strip_prefix("object.") {
        let index = rest
            .parse()
            .map_err(|_| parse_error(line, format!("bad object index {rest:?}")))?;
        return Ok(Section::Object(index));
    }
    if let Some(rest) = header.strip_prefix("weather.") {
        let index = rest
            .parse()
            .map_err(|_| parse_error(line, format!("bad weather index {rest:?}")))?;
        return Ok(Section::Weather(index));
    }
    Err(parse_error(line, format!("unknown section [{header}]")))
}

fn split_sections(text: &str) -> Result<RawScenario, ScenarioError> {
    let mut raw = RawScenario::default();
    let mut section = Section::None;
    for (index, raw_line) in text.lines().enumerate() {
        let line = index + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(inner) = trimmed.strip_prefix('[') {
            let Some(header) = inner.strip_suffix(']') else {
                return Err(parse_error(line, format!("malformed section header {trimmed:?}")));
            };
            section = section_for(header, line)?;
            match section {
                Section::Scenario => raw.scenario_line = line,
                Section::Object(i) => {
                    raw.objects.entry(i).or_insert_with(|| (KeyMap::new(), line));
                }
                Section::Weather(i) => {
                    raw.weather.entry(i).or_insert_with(|| (KeyMap::new(), line));
                }
                Section::Drift => {
                    raw.drift.get_or_insert_with(|| (KeyMap::new(), line));
                }
                Section::Mapping => {
                    raw.mapping.get_or_insert_with(|| (KeyMap::new(), line));
                }
                Section::None => {}
            }
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(parse_error(line, format!("expected key = value, got {trimmed:?}")));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(parse_error(line, "empty key"));
        }
        let map = match section {
            Section::None => {
                return Err(parse_error(line, "key outside any [section]"));
            }
            Section::Scenario => &mut raw.scenario,
            Section::Object(i) => &mut raw.objects.get_mut(&i).expect("section created").0,
            Section::Weather(i) => &mut raw.weather.get_mut(&i).expect("section created").0,
            Section::Drift => &mut raw.drift.as_mut().expect("section created").0,
            Section::Mapping => &mut raw.mapping.as_mut().expect("section created").0,
        };
        if let Some((_, first_line)) = map.get(&key) {
            return Err(parse_error(
                line,
                format!("duplicate key {key:?} (first set on line {first_line})"),
            ));
        }
        map.insert(key, (value, line));
    }
    Ok(raw)
}

fn take_value(map: &mut KeyMap, key: &str) -> Option<(String, usize)> {
    map.remove(key)
}

fn parse_num<T: std::str::FromStr>(
    raw: &str,
    line: usize,
    key: &str,
) -> Result<T, ScenarioError> {
    raw.parse()
        .map_err(|_| parse_error(line, format!("invalid value for {key}: {raw:?}")))
}

fn take_num<T: std::str::FromStr>(
    map: &mut KeyMap,
    key: &str,
) -> Result<Option<T>, ScenarioError> {
    match take_value(map, key) {
        Some((raw, line)) => Ok(Some(parse_num(&raw, line, key)?)),
        None => Ok(None),
    }
}

fn require_num<T: std::str::FromStr>(
    map: &mut KeyMap,
    key: &str,
    section_line: usize,
) -> Result<T, ScenarioError> {
    take_num(map, key)?.ok_or_else(|| parse_error(section_line, format!("missing required key {key}")))
}

fn reject_unknown(map: &KeyMap, section: &str) -> Result<(), ScenarioError> {
    if let Some((key, (_, line))) = map.iter().next() {
        return Err(parse_error(
            *line,
            format!("unknown key {key:?} in [{section}]"),
        ));
    }
    Ok(())
}

fn parse_class(raw: &str, line: usize) -> Result<ObjectClass, ScenarioError> {
    ObjectClass::from_name(raw)
        .ok_or_else(|| parse_error(line, format!("unknown object class {raw:?}")))
}

fn build_drift(map: &mut KeyMap, section_line: usize) -> Result<DriftSpec, ScenarioError> {
    let Some((kind, kind_line)) = take_value(map, "kind") else {
        return Err(parse_error(section_line, "missing required key kind"));
    };
    let drift = match kind.as_str() {
        "none" => DriftSpec::None,
        "covariate" => DriftSpec::Covariate {
            confidence_scale: take_num(map, "confidence_scale")?.unwrap_or(1.0),
            miss_rate_boost: take_num(map, "miss_rate_boost")?.unwrap_or(0.0),
            bbox_jitter_sigma: take_num(map, "bbox_jitter_sigma")?.unwrap_or(0.0),
        },
        "prior_shift" => {
            let mut weights = BTreeMap::new();
            for class in ObjectClass::ALL {
                let key = format!("weight_{}", class.name());
                if let Some(weight) = take_num(map, &key)? {
                    weights.insert(class, weight);
                }
            }
            if weights.is_empty() {
                return Err(parse_error(
                    section_line,
                    "prior_shift drift needs at least one weight_<class> key",
                ));
            }
            DriftSpec::PriorShift { weights }
        }
        "concept" => {
            let mut pairs = Vec::new();
            for class in ObjectClass::ALL {
                let key = format!("relabel_{}", class.name());
                if let Some((raw, line)) = take_value(map, &key) {
                    pairs.push((class, parse_class(&raw, line)?));
                }
            }
            DriftSpec::concept(pairs)
        }
        other => {
            return Err(parse_error(kind_line, format!("unknown drift kind {other:?}")));
        }
    };
    reject_unknown(map, "drift")?;
    Ok(drift)
}

/// Parse a scenario from its textual form.
///
/// The format is line oriented: `[section]` headers, `key = value` pairs,
/// `#` comment lines, and blank lines. `[scenario]` requires `seed`,
/// `duration_s`, and `initial_speed_kmh`; everything else has defaults.
/// Objects and weather phases live in indexed sections (`[object.0]`,
/// `[weather.1]`, …). The parsed scenario is validated before it is
/// returned.
pub fn load_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let mut raw = split_sections(text)?;
    if raw.scenario_line == 0 && raw.scenario.is_empty() {
        return Err(parse_error(1, "missing [scenario] section"));
    }
    let scenario_line = raw.scenario_line;
    let map = &mut raw.scenario;

    let name = take_value(map, "name")
        .map(|(value, _)| value)
        .unwrap_or_else(|| "unnamed".into());
    let seed: u64 = require_num(map, "seed", scenario_line)?;
    let duration_s: f64 = require_num(map, "duration_s", scenario_line)?;
    let initial_speed_kmh: f64 = require_num(map, "initial_speed_kmh", scenario_line)?;
    let tick_hz: f64 = take_num(map, "tick_hz")?.unwrap_or(10.0);
    let track_length_m: f64 = take_num(map, "track_length_m")?.unwrap_or(500.0);
    let confidence_threshold: f64 =
        take_num(map, "confidence_threshold")?.unwrap_or(DEFAULT_CONFIDENCE_THRESHOLD);
    reject_unknown(map, "scenario")?;

    let mut objects = Vec::new();
    for (_, (mut map, section_line)) in std::mem::take(&mut raw.objects) {
        let (class_raw, class_line) = take_value(&mut map, "class")
            .ok_or_else(|| parse_error(section_line, "missing required key class"))?;
        let object = SceneObject {
            class: parse_class(&class_raw, class_line)?,
            position_m: require_num(&mut map, "position_m", section_line)?,
            width_m: take_num(&mut map, "width_m")?.unwrap_or(1.0),
            height_m: take_num(&mut map, "height_m")?.unwrap_or(1.0),
        };
        reject_unknown(&map, "object")?;
        objects.push(object);
    }

    let mut weather_schedule = Vec::new();
    for (_, (mut map, section_line)) in std::mem::take(&mut raw.weather) {
        let (condition_raw, condition_line) = take_value(&mut map, "condition")
            .ok_or_else(|| parse_error(section_line, "missing required key condition"))?;
        let condition = crate::perception::WeatherCondition::from_name(&condition_raw)
            .ok_or_else(|| {
                parse_error(condition_line, format!("unknown condition {condition_raw:?}"))
            })?;
        let base = match condition {
            crate::perception::WeatherCondition::Clear => WeatherState::clear(),
            crate::perception::WeatherCondition::Fog => WeatherState::fog(),
        };
        let phase = WeatherPhase {
            time_s: take_num(&mut map, "time_s")?.unwrap_or(0.0),
            weather: WeatherState {
                condition,
                visibility_m: take_num(&mut map, "visibility_m")?.unwrap_or(base.visibility_m),
                sun_altitude_deg: take_num(&mut map, "sun_altitude_deg")?
                    .unwrap_or(base.sun_altitude_deg),
            },
        };
        reject_unknown(&map, "weather")?;
        weather_schedule.push(phase);
    }
    if weather_schedule.is_empty() {
        weather_schedule.push(WeatherPhase {
            time_s: 0.0,
            weather: WeatherState::clear(),
        });
    }

    let drift = match raw.drift.as_mut() {
        Some((map, section_line)) => build_drift(map, *section_line)?,
        None => DriftSpec::None,
    };

    let mapping = match raw.mapping.as_mut() {
        Some((map, _)) => {
            let mut entries = Vec::new();
            for (key, (value, line)) in std::mem::take(map) {
                let limit: u32 = parse_num(&key, line, "mapping limit")?;
                let target: f64 = parse_num(&value, line, "mapping target")?;
                entries.push(((limit, target), line));
            }
            let lines: Vec<usize> = entries.iter().map(|(_, line)| *line).collect();
            SpeedMapping::new(entries.into_iter().map(|(pair, _)| pair)).map_err(|e| {
                parse_error(lines.first().copied().unwrap_or(scenario_line), e.to_string())
            })?
        }
        None => SpeedMapping::default(),
    };

    let spec = ScenarioSpec {
        name,
        seed,
        duration_s,
        tick_hz,
        initial_speed_kmh,
        track_length_m,
        objects,
        weather_schedule,
        drift,
        mapping,
        confidence_threshold,
    };
    spec.validate()?;
    Ok(spec)
}

/// Serialize a scenario to the textual format (inverse of
/// [`load_scenario`] for valid scenarios).
pub fn to_text(spec: &ScenarioSpec) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "[scenario]");
    let _ = writeln!(out, "name = {}", spec.name);
    let _ = writeln!(out, "seed = {}", spec.seed);
    let _ = writeln!(out, "duration_s = {}", spec.duration_s);
    let _ = writeln!(out, "tick_hz = {}", spec.tick_hz);
    let _ = writeln!(out, "initial_speed_kmh = {}", spec.initial_speed_kmh);
    let _ = writeln!(out, "track_length_m = {}", spec.track_length_m);
    let _ = writeln!(out, "confidence_threshold = {}", spec.confidence_threshold);
    for (index, object) in spec.objects.iter().enumerate() {
        let _ = writeln!(out, "\n[object.{index}]");
        let _ = writeln!(out, "class = {}", object.class.name());
        let _ = writeln!(out, "position_m = {}", object.position_m);
        let _ = writeln!(out, "width_m = {}", object.width_m);
        let _ = writeln!(out, "height_m = {}", object.height_m);
    }
    for (index, phase) in spec.weather_schedule.iter().enumerate() {
        let _ = writeln!(out, "\n[weather.{index}]");
        let _ = writeln!(out, "time_s = {}", phase.time_s);
        let _ = writeln!(out, "condition = {}", phase.weather.condition.name());
        let _ = writeln!(out, "visibility_m = {}", phase.weather.visibility_m);
        let _ = writeln!(out, "sun_altitude_deg = {}", phase.weather.sun_altitude_deg);
    }
    let _ = writeln!(out, "\n[drift]");
    match &spec.drift {
        DriftSpec::None => {
            let _ = writeln!(out, "kind = none");
        }
        DriftSpec::Covariate {
            confidence_scale,
            miss_rate_boost,
            bbox_jitter_sigma,
        } => {
            let _ = writeln!(out, "kind = covariate");
            let _ = writeln!(out, "confidence_scale = {confidence_scale}");
            let _ = writeln!(out, "miss_rate_boost = {miss_rate_boost}");
            let _ = writeln!(out, "bbox_jitter_sigma = {bbox_jitter_sigma}");
        }
        DriftSpec::PriorShift { weights } => {
            let _ = writeln!(out, "kind = prior_shift");
            for (class, weight) in weights {
                let _ = writeln!(out, "weight_{} = {weight}", class.name());
            }
        }
        DriftSpec::Concept { relabel } => {
            let _ = writeln!(out, "kind = concept");
            for (from, to) in relabel {
                if from != to {
                    let _ = writeln!(out, "relabel_{} = {}", from.name(), to.name());
                }
            }
        }
    }
    let _ = writeln!(out, "\n[mapping]");
    for (limit, target) in spec.mapping.entries() {
        let _ = writeln!(out, "{limit} = {target}");
    }
    out
}

// --- the runner --------------------------------------------------------------

/// Execute a scenario and return its trace.
///
/// Each tick runs the same fixed sequence: the weather scheduler publishes
/// any phase that has come due, perception senses from the latest vehicle
/// state and publishes detections, the controller folds in detections and
/// publishes a command, and the plant applies the newest command and
/// publishes the stepped state. The trace records every bus delivery plus
/// a vehicle sample per tick (and one for the initial state).
pub fn run(spec: &ScenarioSpec) -> Result<Vec<TraceRecord>, ScenarioError> {
    spec.validate()?;

    let bus = Bus::new();
    let topic = |path: &str| TopicName::new(path).expect("pipeline topics are well-formed");
    let detections_topic = topic(topics::DETECTIONS);
    let command_topic = topic(topics::ACKERMANN_CMD);
    let state_topic = topic(topics::VEHICLE_STATE);
    let weather_topic = topic(topics::WEATHER_CONTROL);

    let subscribe = |node: &str, t: &TopicName| {
        bus.register_subscriber(node, t.clone(), DEFAULT_QUEUE_CAPACITY)
            .expect("default queue capacity is non-zero")
    };

    // Node wiring. Registration order fixes delivery order.
    let weather_pub = bus.register_publisher("weather", weather_topic.clone());
    let perception_state_sub = subscribe("perception", &state_topic);
    let perception_weather_sub = subscribe("perception", &weather_topic);
    let detection_pub = bus.register_publisher("perception", detections_topic.clone());
    let controller_state_sub = subscribe("controller", &state_topic);
    let controller_det_sub = subscribe("controller", &detections_topic);
    let command_pub = bus.register_publisher("controller", command_topic.clone());
    let plant_cmd_sub = subscribe("plant", &command_topic);
    let state_pub = bus.register_publisher("plant", state_topic.clone());
    let recorder_weather_sub = subscribe("recorder", &weather_topic);
    let recorder_det_sub = subscribe("recorder", &detections_topic);
    let recorder_cmd_sub = subscribe("recorder", &command_topic);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dt = 1.0 / spec.tick_hz;
    let ticks = spec.tick_count();
    let initial_speed = kmh_to_mps(spec.initial_speed_kmh);
    let mut vehicle = VehicleState::new(0.0, initial_speed, 0.0);
    let mut controller = Controller::new(
        initial_speed,
        spec.mapping.clone(),
        spec.confidence_threshold,
    );

    let mut records: Vec<TraceRecord> = Vec::new();
    records.push(TraceRecord::VehicleSample {
        time_s: vehicle.time_s,
        position_m: vehicle.position_m,
        speed_mps: vehicle.speed_mps,
        accel_mps2: vehicle.accel_mps2,
    });
    state_pub
        .publish(Payload::VehicleState(vehicle.into()), vehicle.time_s)
        .expect("fresh publisher");

    // Perception's and the controller's latest view of the world.
    let mut perception_state = VehicleState::new(0.0, 0.0, 0.0);
    let mut perception_weather = spec.weather_schedule[0].weather;
    let mut controller_speed = 0.0;
    let mut next_phase = 0usize;
    let mut latest_command: Option<DriveCommand> = None;

    let publish_failure = "runner publishes with a monotone clock on registered handles";

    for tick in 0..ticks {
        let now = tick as f64 * dt;

        // Weather scheduler: publish every phase that has come due.
        while next_phase < spec.weather_schedule.len()
            && spec.weather_schedule[next_phase].time_s <= now + SCHEDULE_EPS_S
        {
            weather_pub
                .publish(
                    Payload::Weather(spec.weather_schedule[next_phase].weather),
                    now,
                )
                .expect(publish_failure);
            next_phase += 1;
        }

        // Perception: read the newest state and weather, sense, publish.
        for envelope in perception_state_sub.drain() {
            if let Payload::VehicleState(msg) = envelope.payload {
                perception_state = VehicleState::new(msg.position_m, msg.speed_mps, msg.time_s);
            }
        }
        for envelope in perception_weather_sub.drain() {
            if let Payload::Weather(weather) = envelope.payload {
                perception_weather = weather;
            }
        }
        let detections = sense(
            &perception_state,
            &spec.objects,
            &perception_weather,
            &spec.drift,
            &mut rng,
        );
        for detection in &detections {
            detection_pub
                .publish(Payload::Detection(detection.clone()), now)
                .expect(publish_failure);
        }

        // Controller: fold in state and detections, then command.
        for envelope in controller_state_sub.drain() {
            if let Payload::VehicleState(msg) = envelope.payload {
                controller_speed = msg.speed_mps;
            }
        }
        for envelope in controller_det_sub.drain() {
            if let Payload::Detection(detection) = envelope.payload {
                controller.on_detection(&detection);
            }
        }
        let command = controller.tick(controller_speed, now);
        command_pub
            .publish(Payload::DriveCommand(command), now)
            .expect(publish_failure);

        // Plant: apply the newest command and publish the stepped state.
        for envelope in plant_cmd_sub.drain() {
            if let Payload::DriveCommand(command) = envelope.payload {
                latest_command = Some(command);
            }
        }
        let applied = latest_command.expect("a command is published every tick");
        vehicle = step(&vehicle, &applied, dt).expect("validated scenario timestep");
        state_pub
            .publish(Payload::VehicleState(vehicle.into()), vehicle.time_s)
            .expect(publish_failure);

        // Recorder: drain this tick's deliveries in pipeline order.
        for envelope in recorder_weather_sub.drain() {
            if let Payload::Weather(weather) = envelope.payload {
                records.push(TraceRecord::weather(&weather, envelope.publish_time_s));
            }
        }
        for envelope in recorder_det_sub.drain() {
            if let Payload::Detection(detection) = &envelope.payload {
                records.push(TraceRecord::detection(
                    envelope.seq,
                    detection,
                    envelope.publish_time_s,
                ));
            }
        }
        for envelope in recorder_cmd_sub.drain() {
            if let Payload::DriveCommand(command) = envelope.payload {
                records.push(TraceRecord::command(
                    envelope.seq,
                    &command,
                    envelope.publish_time_s,
                ));
            }
        }
        records.push(TraceRecord::VehicleSample {
            time_s: vehicle.time_s,
            position_m: vehicle.position_m,
            speed_mps: vehicle.speed_mps,
            accel_mps2: vehicle.accel_mps2,
        });
    }

    Ok(records)
}
