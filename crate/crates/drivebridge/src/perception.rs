//! Simulated sign/obstacle detector with weather-driven degradation and
//! injectable data drift.
//!
//! Instead of running a real network over rendered frames, the detector
//! works backwards from scene geometry: each scene object that falls inside
//! the camera's range projects to a bounding box through a pinhole model,
//! is detected with a probability that decays with distance and worsens in
//! fog, and gets a confidence drawn from a Beta distribution whose mean
//! depends on the weather. Drift injectors then perturb the stream the way
//! a drifting real-world detector would: jittered boxes and extra misses
//! (covariate shift), class-frequency re-weighting (prior shift), or label
//! remapping (concept shift).
//!
//! All randomness flows through the caller-supplied RNG, so a seeded run is
//! exactly reproducible.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::VehicleState;

/// Visibility assumed for clear sky when none is given, m.
pub const DEFAULT_CLEAR_VISIBILITY_M: f64 = 100.0;
/// Visibility assumed for fog when none is given, m.
pub const DEFAULT_FOG_VISIBILITY_M: f64 = 60.0;
/// Sun altitude defaults paired with the two conditions, degrees.
pub const DEFAULT_CLEAR_SUN_DEG: f64 = 55.0;
pub const DEFAULT_FOG_SUN_DEG: f64 = 10.0;
/// Camera range beyond which nothing projects into the frame, m.
pub const DEFAULT_MAX_RANGE_M: f64 = 100.0;
/// Pinhole focal constant (normalized image units × m / m of object size).
pub const DEFAULT_FOCAL_NORM: f64 = 25.0;
/// Divisor mapping projected size to normalized [0, 1] image units.
pub const PROJECTION_NORM: f64 = 100.0;
/// Base detection probability at zero distance, by condition.
pub const DEFAULT_P_BASE_CLEAR: f64 = 0.98;
pub const DEFAULT_P_BASE_FOG: f64 = 0.90;
/// Confidence distribution: Beta with these means and a common std.
pub const DEFAULT_CONFIDENCE_MEAN_CLEAR: f64 = 0.92;
pub const DEFAULT_CONFIDENCE_MEAN_FOG: f64 = 0.85;
pub const DEFAULT_CONFIDENCE_STD: f64 = 0.04;
/// Jittered boxes never shrink below this edge length.
const MIN_BBOX_DIM: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("invalid drift parameter: {0}")]
    InvalidDrift(String),
    #[error("invalid weather: {0}")]
    InvalidWeather(String),
}

/// The three object classes the detector knows about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    SpeedLimit30,
    SpeedLimit90,
    Obstacle,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [
        ObjectClass::SpeedLimit30,
        ObjectClass::SpeedLimit90,
        ObjectClass::Obstacle,
    ];

    pub fn class_id(self) -> u32 {
        match self {
            ObjectClass::SpeedLimit30 => 0,
            ObjectClass::SpeedLimit90 => 1,
            ObjectClass::Obstacle => 2,
        }
    }

    pub fn from_class_id(id: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.class_id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::SpeedLimit30 => "speed_limit_30",
            ObjectClass::SpeedLimit90 => "speed_limit_90",
            ObjectClass::Obstacle => "obstacle",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Posted limit in km/h for sign classes, `None` for obstacles.
    pub fn speed_limit_kmh(self) -> Option<u32> {
        match self {
            ObjectClass::SpeedLimit30 => Some(30),
            ObjectClass::SpeedLimit90 => Some(90),
            ObjectClass::Obstacle => None,
        }
    }
}

/// A physical object placed on the track.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: ObjectClass,
    /// Meters along the track.
    pub position_m: f64,
    pub width_m: f64,
    pub height_m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherCondition {
    Clear,
    Fog,
}

impl WeatherCondition {
    pub fn name(self) -> &'static str {
        match self {
            WeatherCondition::Clear => "clear",
            WeatherCondition::Fog => "fog",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "clear" => Some(WeatherCondition::Clear),
            "fog" => Some(WeatherCondition::Fog),
            _ => None,
        }
    }
}

/// Weather as published on `/weather_control`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherState {
    pub condition: WeatherCondition,
    pub visibility_m: f64,
    pub sun_altitude_deg: f64,
}

impl WeatherState {
    pub fn clear() -> Self {
        Self {
            condition: WeatherCondition::Clear,
            visibility_m: DEFAULT_CLEAR_VISIBILITY_M,
            sun_altitude_deg: DEFAULT_CLEAR_SUN_DEG,
        }
    }

    pub fn fog() -> Self {
        Self {
            condition: WeatherCondition::Fog,
            visibility_m: DEFAULT_FOG_VISIBILITY_M,
            sun_altitude_deg: DEFAULT_FOG_SUN_DEG,
        }
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        if !self.visibility_m.is_finite() || self.visibility_m <= 0.0 {
            return Err(PerceptionError::InvalidWeather(format!(
                "visibility_m must be positive, got {}",
                self.visibility_m
            )));
        }
        if self.condition == WeatherCondition::Fog && self.visibility_m > DEFAULT_CLEAR_VISIBILITY_M
        {
            return Err(PerceptionError::InvalidWeather(format!(
                "fog visibility_m {} exceeds the clear-sky ceiling {}",
                self.visibility_m, DEFAULT_CLEAR_VISIBILITY_M
            )));
        }
        if !self.sun_altitude_deg.is_finite() {
            return Err(PerceptionError::InvalidWeather(
                "sun_altitude_deg must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Axis-aligned bounding box in normalized image coordinates, center form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// One detector output as published on `/detections`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u32,
    pub class_name: String,
    /// Detector confidence in [0, 1].
    pub confidence: f64,
    pub bbox: Bbox,
    /// Time of the frame the detection came from, s.
    pub stamp_s: f64,
    /// Index of the scene object that produced this detection, when known.
    /// Recorded for downstream diagnostics; scoring matches geometrically
    /// and never reads it. A real detector would not provide it.
    pub truth_id: Option<usize>,
}

impl Detection {
    pub fn from_class(class: ObjectClass, confidence: f64, bbox: Bbox, stamp_s: f64) -> Self {
        Self {
            class_id: class.class_id(),
            class_name: class.name().to_string(),
            confidence,
            bbox,
            stamp_s,
            truth_id: None,
        }
    }

    pub fn class(&self) -> Option<ObjectClass> {
        ObjectClass::from_class_id(self.class_id)
    }
}

/// Data-drift injectors applied to the detection stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    /// Exact identity: the stream is untouched.
    None,
    /// Input-statistics drift: confidences scale down, boxes jitter, and
    /// detections go missing at a boosted rate.
    Covariate {
        confidence_scale: f64,
        miss_rate_boost: f64,
        bbox_jitter_sigma: f64,
    },
    /// Class-frequency drift: detections are kept with probability
    /// proportional to their class weight (weight 1.0 when unlisted).
    PriorShift { weights: BTreeMap<ObjectClass, f64> },
    /// Label drift: classes are renamed through a total mapping.
    Concept { relabel: BTreeMap<ObjectClass, ObjectClass> },
}

impl DriftSpec {
    /// Concept drift from a possibly-partial mapping; unlisted classes map
    /// to themselves.
    pub fn concept<I: IntoIterator<Item = (ObjectClass, ObjectClass)>>(pairs: I) -> Self {
        let mut relabel: BTreeMap<ObjectClass, ObjectClass> =
            ObjectClass::ALL.into_iter().map(|c| (c, c)).collect();
        for (from, to) in pairs {
            relabel.insert(from, to);
        }
        DriftSpec::Concept { relabel }
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        match self {
            DriftSpec::None | DriftSpec::Concept { .. } => Ok(()),
            DriftSpec::Covariate {
                confidence_scale,
                miss_rate_boost,
                bbox_jitter_sigma,
            } => {
                if !(0.0..=1.0).contains(confidence_scale) {
                    return Err(PerceptionError::InvalidDrift(format!(
                        "confidence_scale must be in [0, 1], got {confidence_scale}"
                    )));
                }
                if !(0.0..=1.0).contains(miss_rate_boost) {
                    return Err(PerceptionError::InvalidDrift(format!(
                        "miss_rate_boost must be in [0, 1], got {miss_rate_boost}"
                    )));
                }
                if !bbox_jitter_sigma.is_finite() || *bbox_jitter_sigma < 0.0 {
                    return Err(PerceptionError::InvalidDrift(format!(
                        "bbox_jitter_sigma must be non-negative, got {bbox_jitter_sigma}"
                    )));
                }
                Ok(())
            }
            DriftSpec::PriorShift { weights } => {
                if weights.is_empty() {
                    return Err(PerceptionError::InvalidDrift(
                        "prior-shift weights must not be empty".into(),
                    ));
                }
                for (class, w) in weights {
                    if !w.is_finite() || *w < 0.0 {
                        return Err(PerceptionError::InvalidDrift(format!(
                            "weight for {} must be non-negative, got {w}",
                            class.name()
                        )));
                    }
                }
                let all_zero = ObjectClass::ALL
                    .into_iter()
                    .all(|c| weights.get(&c).copied().unwrap_or(1.0) == 0.0);
                if all_zero {
                    return Err(PerceptionError::InvalidDrift(
                        "prior-shift weights must not all be zero".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Tunable constants of the simulated detector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionConfig {
    pub p_base_clear: f64,
    pub p_base_fog: f64,
    pub max_range_m: f64,
    pub focal_norm: f64,
    pub confidence_mean_clear: f64,
    pub confidence_mean_fog: f64,
    pub confidence_std: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            p_base_clear: DEFAULT_P_BASE_CLEAR,
            p_base_fog: DEFAULT_P_BASE_FOG,
            max_range_m: DEFAULT_MAX_RANGE_M,
            focal_norm: DEFAULT_FOCAL_NORM,
            confidence_mean_clear: DEFAULT_CONFIDENCE_MEAN_CLEAR,
            confidence_mean_fog: DEFAULT_CONFIDENCE_MEAN_FOG,
            confidence_std: DEFAULT_CONFIDENCE_STD,
        }
    }
}

/// Project a scene object into the camera frame with default constants.
///
/// Returns `None` when the object is behind the vehicle, at zero distance,
/// or beyond the camera range.
pub fn project_bbox(vehicle: &VehicleState, object: &SceneObject) -> Option<Bbox> {
    project_bbox_with(&PerceptionConfig::default(), vehicle, object)
}

/// [`project_bbox`] with explicit detector constants.
///
/// Pinhole model: a face of `s` meters at distance `d` spans
/// `focal_norm · s / (d · 100)` normalized image units, capped at the full
/// frame. Boxes sit centered in the frame — the camera looks straight down
/// the track.
pub fn project_bbox_with(
    config: &PerceptionConfig,
    vehicle: &VehicleState,
    object: &SceneObject,
) -> Option<Bbox> {
    let distance = object.position_m - vehicle.position_m;
    if distance <= 0.0 || distance > config.max_range_m {
        return None;
    }
    let w = (config.focal_norm * object.width_m / (distance * PROJECTION_NORM)).min(1.0);
    let h = (config.focal_norm * object.height_m / (distance * PROJECTION_NORM)).min(1.0);
    Some(Bbox {
        cx: 0.5,
        cy: 0.5,
        w,
        h,
    })
}

/// Probability that the detector fires on an object at `distance_m`, with
/// default constants.
pub fn detection_probability(weather: &WeatherState, distance_m: f64) -> f64 {
    detection_probability_with(&PerceptionConfig::default(), weather, distance_m)
}

/// [`detection_probability`] with explicit detector constants: a
/// per-condition base rate decays linearly to zero at the visibility
/// distance.
pub fn detection_probability_with(
    config: &PerceptionConfig,
    weather: &WeatherState,
    distance_m: f64,
) -> f64 {
    let p_base = match weather.condition {
        WeatherCondition::Clear => config.p_base_clear,
        WeatherCondition::Fog => config.p_base_fog,
    };
    p_base * (1.0 - distance_m / weather.visibility_m).max(0.0)
}

/// Run the simulated detector over the scene for one frame, with default
/// constants.
pub fn sense<R: Rng>(
    vehicle: &VehicleState,
    scene: &[SceneObject],
    weather: &WeatherState,
    drift: &DriftSpec,
    rng: &mut R,
) -> Vec<Detection> {
    sense_with(&PerceptionConfig::default(), vehicle, scene, weather, drift, rng)
}

/// [`sense`] with explicit detector constants.
///
/// Scene objects are visited in slice order; per visible object the RNG is
/// consumed in a fixed sequence (hit draw, then confidence, then any
/// drift draws), so a given seed always yields the same stream. Covariate
/// drift folds its extra miss rate into the hit draw; prior-shift drift
/// thins accepted detections by class weight; concept drift relabels them.
pub fn sense_with<R: Rng>(
    config: &PerceptionConfig,
    vehicle: &VehicleState,
    scene: &[SceneObject],
    weather: &WeatherState,
    drift: &DriftSpec,
    rng: &mut R,
) -> Vec<Detection> {
    let mut detections = Vec::new();
    for (index, object) in scene.iter().enumerate() {
        let Some(bbox) = project_bbox_with(config, vehicle, object) else {
            continue;
        };
        let distance = object.position_m - vehicle.position_m;
        let mut p_detect = detection_probability_with(config, weather, distance);
        if let DriftSpec::Covariate { miss_rate_boost, .. } = drift {
            p_detect *= 1.0 - miss_rate_boost;
        }
        if !rng.random_bool(p_detect.clamp(0.0, 1.0)) {
            continue;
        }

        let mean = match weather.condition {
            WeatherCondition::Clear => config.confidence_mean_clear,
            WeatherCondition::Fog => config.confidence_mean_fog,
        };
        let confidence = sample_confidence(mean, config.confidence_std, rng);
        let mut detection = Detection {
            class_id: object.class.class_id(),
            class_name: object.class.name().to_string(),
            confidence,
            bbox,
            stamp_s: vehicle.time_s,
            truth_id: Some(index),
        };

        match drift {
            DriftSpec::None => {}
            DriftSpec::Covariate {
                confidence_scale,
                bbox_jitter_sigma,
                ..
            } => {
                detection.confidence = (detection.confidence * confidence_scale).clamp(0.0, 1.0);
                jitter_bbox(&mut detection.bbox, *bbox_jitter_sigma, rng);
            }
            DriftSpec::PriorShift { weights } => {
                if !rng.random_bool(prior_keep_probability(weights, object.class)) {
                    continue;
                }
            }
            DriftSpec::Concept { relabel } => relabel_detection(&mut detection, relabel),
        }
        detections.push(detection);
    }
    detections
}

/// Apply a drift injector to an already-produced detection batch.
///
/// [`sense`] folds drift in at the source; this standalone form serves
/// recorded or hand-built detection streams. `None` is the exact identity.
pub fn apply_drift<R: Rng>(
    detections: Vec<Detection>,
    drift: &DriftSpec,
    rng: &mut R,
) -> Vec<Detection> {
    match drift {
        DriftSpec::None => detections,
        DriftSpec::Covariate {
            confidence_scale,
            miss_rate_boost,
            bbox_jitter_sigma,
        } => detections
            .into_iter()
            .filter_map(|mut d| {
                if rng.random_bool(*miss_rate_boost) {
                    return None;
                }
                d.confidence = (d.confidence * confidence_scale).clamp(0.0, 1.0);
                jitter_bbox(&mut d.bbox, *bbox_jitter_sigma, rng);
                Some(d)
            })
            .collect(),
        DriftSpec::PriorShift { weights } => detections
            .into_iter()
            .filter(|d| match d.class() {
                Some(class) => rng.random_bool(prior_keep_probability(weights, class)),
                None => true,
            })
            .collect(),
        DriftSpec::Concept { relabel } => detections
            .into_iter()
            .map(|mut d| {
                relabel_detection(&mut d, relabel);
                d
            })
            .collect(),
    }
}

/// Keep probability under prior shift: the class weight normalized by the
/// maximum weight, so the most-weighted class is never thinned. Classes
/// absent from the map carry weight 1.0.
fn prior_keep_probability(weights: &BTreeMap<ObjectClass, f64>, class: ObjectClass) -> f64 {
    let w = weights.get(&class).copied().unwrap_or(1.0);
    let w_max = ObjectClass::ALL
        .into_iter()
        .map(|c| weights.get(&c).copied().unwrap_or(1.0))
        .fold(0.0, f64::max);
    if w_max <= 0.0 {
        return 0.0;
    }
    (w / w_max).clamp(0.0, 1.0)
}

fn relabel_detection(detection: &mut Detection, relabel: &BTreeMap<ObjectClass, ObjectClass>) {
    if let Some(class) = detection.class() {
        let renamed = relabel.get(&class).copied().unwrap_or(class);
        detection.class_id = renamed.class_id();
        detection.class_name = renamed.name().to_string();
    }
}

/// Draw a confidence from a Beta distribution moment-matched to the given
/// mean and standard deviation. Falls back to the mean itself when no Beta
/// has that spread (possible only with non-default constants).
fn sample_confidence<R: Rng>(mean: f64, std: f64, rng: &mut R) -> f64 {
    let nu = mean * (1.0 - mean) / (std * std) - 1.0;
    if nu <= 0.0 {
        return mean.clamp(0.0, 1.0);
    }
    let alpha = mean * nu;
    let beta = (1.0 - mean) * nu;
    Beta::new(alpha, beta)
        .expect("moment-matched Beta parameters are positive")
        .sample(rng)
}

fn jitter_bbox<R: Rng>(bbox: &mut Bbox, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let noise = Normal::new(0.0, sigma).expect("validated sigma is positive and finite");
    bbox.cx = (bbox.cx + noise.sample(rng)).clamp(0.0, 1.0);
    bbox.cy = (bbox.cy + noise.sample(rng)).clamp(0.0, 1.0);
    bbox.w = (bbox.w + noise.sample(rng)).clamp(MIN_BBOX_DIM, 1.0);
    bbox.h = (bbox.h + noise.sample(rng)).clamp(MIN_BBOX_DIM, 1.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vehicle_at(position_m: f64) -> VehicleState {
        VehicleState::new(position_m, 10.0, 3.0)
    }

    fn sign(class: ObjectClass, position_m: f64) -> SceneObject {
        SceneObject {
            class,
            position_m,
            width_m: 1.0,
            height_m: 1.0,
        }
    }

    #[test]
    fn projection_follows_pinhole_model() {
        // 1 m face at 50 m: 25·1/(50·100) = 0.005 image units.
        let bbox = project_bbox(&vehicle_at(0.0), &sign(ObjectClass::SpeedLimit30, 50.0)).unwrap();
        assert!((bbox.w - 0.005).abs() < 1e-15);
        assert!((bbox.h - 0.005).abs() < 1e-15);
        assert_eq!(bbox.cx, 0.5);
        assert_eq!(bbox.cy, 0.5);
    }

    #[test]
    fn projection_caps_at_full_frame() {
        // 2 m face at 0.25 m would span 2.0 units; capped at 1.0.
        let object = SceneObject {
            class: ObjectClass::Obstacle,
            position_m: 0.25,
            width_m: 2.0,
            height_m: 2.0,
        };
        let bbox = project_bbox(&vehicle_at(0.0), &object).unwrap();
        assert_eq!(bbox.w, 1.0);
        assert_eq!(bbox.h, 1.0);
    }

    #[test]
    fn projection_rejects_behind_and_beyond() {
        assert!(project_bbox(&vehicle_at(10.0), &sign(ObjectClass::SpeedLimit30, 5.0)).is_none());
        assert!(project_bbox(&vehicle_at(10.0), &sign(ObjectClass::SpeedLimit30, 10.0)).is_none());
        assert!(project_bbox(&vehicle_at(0.0), &sign(ObjectClass::SpeedLimit30, 100.5)).is_none());
        // Exactly at max range still projects.
        assert!(project_bbox(&vehicle_at(0.0), &sign(ObjectClass::SpeedLimit30, 100.0)).is_some());
    }

    #[test]
    fn detection_probability_decays_linearly() {
        let clear = WeatherState::clear();
        // 0.98 · (1 − 50/100) = 0.49.
        assert!((detection_probability(&clear, 50.0) - 0.49).abs() < 1e-12);
        // At and past the visibility limit the probability is zero.
        assert_eq!(detection_probability(&clear, 100.0), 0.0);
        assert_eq!(detection_probability(&clear, 150.0), 0.0);
        // At zero distance it is the base rate.
        assert!((detection_probability(&clear, 0.0) - 0.98).abs() < 1e-12);
    }

    #[test]
    fn fog_reduces_detection_probability() {
        let fog = WeatherState::fog();
        // 0.90 · (1 − 30/60) = 0.45.
        assert!((detection_probability(&fog, 30.0) - 0.45).abs() < 1e-12);
        let clear = WeatherState::clear();
        for d in [0.0, 10.0, 30.0, 55.0] {
            assert!(detection_probability(&fog, d) < detection_probability(&clear, d));
        }
    }

    #[test]
    fn sense_is_deterministic_per_seed() {
        let scene = [
            sign(ObjectClass::SpeedLimit30, 40.0),
            sign(ObjectClass::SpeedLimit90, 70.0),
        ];
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sense(
                &vehicle_at(0.0),
                &scene,
                &WeatherState::clear(),
                &DriftSpec::None,
                &mut rng,
            )
        };
        assert_eq!(run(7), run(7));
        // A long-enough stream differs across seeds.
        let mut any_difference = false;
        for seed in 0..20 {
            if run(seed) != run(seed + 100) {
                any_difference = true;
                break;
            }
        }
        assert!(any_difference);
    }

    #[test]
    fn sense_stamps_and_truth_ids() {
        let scene = [sign(ObjectClass::SpeedLimit30, 5.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // At 5 m in clear weather p ≈ 0.93, so a few tries always hit.
        for _ in 0..50 {
            let detections = sense(
                &vehicle_at(0.0),
                &scene,
                &WeatherState::clear(),
                &DriftSpec::None,
                &mut rng,
            );
            if let Some(d) = detections.first() {
                assert_eq!(d.stamp_s, 3.0);
                assert_eq!(d.truth_id, Some(0));
                assert_eq!(d.class_id, 0);
                assert_eq!(d.class_name, "speed_limit_30");
                assert!((0.0..=1.0).contains(&d.confidence));
                return;
            }
        }
        panic!("no detection in 50 frames at p ≈ 0.93");
    }

    #[test]
    fn detection_rate_tracks_probability() {
        // Monte Carlo check of the hit rate at a fixed distance.
        let scene = [sign(ObjectClass::SpeedLimit30, 30.1)];
        let vehicle = vehicle_at(0.1);
        let weather = WeatherState::clear();
        let expected = detection_probability(&weather, 30.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 40_000;
        let mut hits = 0;
        for _ in 0..trials {
            if !sense(&vehicle, &scene, &weather, &DriftSpec::None, &mut rng).is_empty() {
                hits += 1;
            }
        }
        let rate = hits as f64 / trials as f64;
        // Three-sigma band for a Bernoulli at p ≈ 0.686 over 40k trials.
        let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
        assert!(
            (rate - expected).abs() < 3.0 * sigma + 1e-9,
            "rate {rate} vs expected {expected}"
        );
    }

    #[test]
    fn confidence_distribution_matches_moments() {
        let scene = [sign(ObjectClass::SpeedLimit30, 1.0)];
        let vehicle = vehicle_at(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut samples = Vec::new();
        while samples.len() < 20_000 {
            for d in sense(
                &vehicle,
                &scene,
                &WeatherState::clear(),
                &DriftSpec::None,
                &mut rng,
            ) {
                samples.push(d.confidence);
            }
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
        assert!((mean - 0.92).abs() < 0.005, "mean {mean}");
        assert!((var.sqrt() - 0.04).abs() < 0.005, "std {}", var.sqrt());
        assert!(samples.iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn covariate_drift_scales_confidence_and_boosts_misses() {
        let scene = [sign(ObjectClass::SpeedLimit30, 1.0)];
        let vehicle = vehicle_at(0.0);
        let drift = DriftSpec::Covariate {
            confidence_scale: 0.5,
            miss_rate_boost: 0.4,
            bbox_jitter_sigma: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 20_000;
        let mut hits = 0;
        let mut max_confidence: f64 = 0.0;
        for _ in 0..trials {
            for d in sense(&vehicle, &scene, &WeatherState::clear(), &drift, &mut rng) {
                hits += 1;
                max_confidence = max_confidence.max(d.confidence);
            }
        }
        let base = detection_probability(&WeatherState::clear(), 1.0);
        let expected = base * 0.6;
        let rate = hits as f64 / trials as f64;
        let sigma = (expected * (1.0 - expected) / trials as f64).sqrt();
        assert!((rate - expected).abs() < 4.0 * sigma, "rate {rate} vs {expected}");
        // Halved confidences stay below ~0.5 (Beta mass above 1.0 is nil).
        assert!(max_confidence <= 0.5 + 1e-12);
    }

    #[test]
    fn covariate_jitter_moves_boxes() {
        let detections = vec![Detection::from_class(
            ObjectClass::SpeedLimit30,
            0.9,
            Bbox {
                cx: 0.5,
                cy: 0.5,
                w: 0.2,
                h: 0.2,
            },
            0.0,
        )];
        let drift = DriftSpec::Covariate {
            confidence_scale: 1.0,
            miss_rate_boost: 0.0,
            bbox_jitter_sigma: 0.05,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = apply_drift(detections.clone(), &drift, &mut rng);
        assert_eq!(out.len(), 1);
        assert_ne!(out[0].bbox, detections[0].bbox);
        for b in [out[0].bbox.cx, out[0].bbox.cy, out[0].bbox.w, out[0].bbox.h] {
            assert!((0.0..=1.0).contains(&b));
        }
    }

    #[test]
    fn none_drift_is_exact_identity() {
        let scene = [
            sign(ObjectClass::SpeedLimit30, 20.0),
            sign(ObjectClass::SpeedLimit90, 60.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut batch = Vec::new();
        for _ in 0..20 {
            batch.extend(sense(
                &vehicle_at(0.0),
                &scene,
                &WeatherState::clear(),
                &DriftSpec::None,
                &mut rng,
            ));
        }
        let before = batch.clone();
        let out = apply_drift(batch, &DriftSpec::None, &mut rng);
        assert_eq!(out, before);
    }

    #[test]
    fn prior_shift_thins_by_class_weight() {
        let make = |class: ObjectClass| {
            Detection::from_class(
                class,
                0.9,
                Bbox {
                    cx: 0.5,
                    cy: 0.5,
                    w: 0.1,
                    h: 0.1,
                },
                0.0,
            )
        };
        let weights: BTreeMap<ObjectClass, f64> = [
            (ObjectClass::SpeedLimit30, 0.25),
            (ObjectClass::SpeedLimit90, 1.0),
        ]
        .into_iter()
        .collect();
        let drift = DriftSpec::PriorShift { weights };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let trials = 20_000;
        let mut kept_30 = 0;
        let mut kept_90 = 0;
        let mut kept_obstacle = 0;
        for _ in 0..trials {
            let batch = vec![
                make(ObjectClass::SpeedLimit30),
                make(ObjectClass::SpeedLimit90),
                make(ObjectClass::Obstacle),
            ];
            for d in apply_drift(batch, &drift, &mut rng) {
                match d.class().unwrap() {
                    ObjectClass::SpeedLimit30 => kept_30 += 1,
                    ObjectClass::SpeedLimit90 => kept_90 += 1,
                    ObjectClass::Obstacle => kept_obstacle += 1,
                }
            }
        }
        // Weight 0.25 vs max 1.0 keeps a quarter; the full-weight class and
        // the unlisted class (implicit weight 1.0) are never thinned.
        let rate_30 = kept_30 as f64 / trials as f64;
        assert!((rate_30 - 0.25).abs() < 0.02, "rate {rate_30}");
        assert_eq!(kept_90, trials);
        assert_eq!(kept_obstacle, trials);
    }

    #[test]
    fn concept_drift_relabels_totally() {
        let relabel = DriftSpec::concept([(ObjectClass::SpeedLimit30, ObjectClass::SpeedLimit90)]);
        let DriftSpec::Concept { relabel: map } = &relabel else {
            panic!("constructor returned the wrong variant");
        };
        // Identity completion covers every class.
        assert_eq!(map.len(), 3);
        assert_eq!(map[&ObjectClass::SpeedLimit90], ObjectClass::SpeedLimit90);
        assert_eq!(map[&ObjectClass::Obstacle], ObjectClass::Obstacle);

        let batch = vec![
            Detection::from_class(
                ObjectClass::SpeedLimit30,
                0.9,
                Bbox {
                    cx: 0.5,
                    cy: 0.5,
                    w: 0.1,
                    h: 0.1,
                },
                0.0,
            ),
            Detection::from_class(
                ObjectClass::Obstacle,
                0.8,
                Bbox {
                    cx: 0.5,
                    cy: 0.5,
                    w: 0.1,
                    h: 0.1,
                },
                0.0,
            ),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = apply_drift(batch, &relabel, &mut rng);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].class(), Some(ObjectClass::SpeedLimit90));
        assert_eq!(out[0].class_name, "speed_limit_90");
        // Confidence and box are untouched by concept drift.
        assert_eq!(out[0].confidence, 0.9);
        assert_eq!(out[1].class(), Some(ObjectClass::Obstacle));
    }

    #[test]
    fn drift_validation_rejects_bad_parameters() {
        assert!(DriftSpec::Covariate {
            confidence_scale: 1.5,
            miss_rate_boost: 0.0,
            bbox_jitter_sigma: 0.0,
        }
        .validate()
        .is_err());
        assert!(DriftSpec::Covariate {
            confidence_scale: 1.0,
            miss_rate_boost: -0.1,
            bbox_jitter_sigma: 0.0,
        }
        .validate()
        .is_err());
        assert!(DriftSpec::Covariate {
            confidence_scale: 1.0,
            miss_rate_boost: 0.0,
            bbox_jitter_sigma: -1.0,
        }
        .validate()
        .is_err());
        assert!(DriftSpec::PriorShift {
            weights: BTreeMap::new()
        }
        .validate()
        .is_err());
        assert!(DriftSpec::PriorShift {
            weights: [(ObjectClass::SpeedLimit30, -1.0)].into_iter().collect()
        }
        .validate()
        .is_err());
        assert!(DriftSpec::None.validate().is_ok());
        assert!(DriftSpec::concept([]).validate().is_ok());
    }

    #[test]
    fn weather_validation() {
        assert!(WeatherState::clear().validate().is_ok());
        assert!(WeatherState::fog().validate().is_ok());
        let bad = WeatherState {
            condition: WeatherCondition::Fog,
            visibility_m: 150.0,
            sun_altitude_deg: 10.0,
        };
        assert!(bad.validate().is_err());
        let zero = WeatherState {
            condition: WeatherCondition::Clear,
            visibility_m: 0.0,
            sun_altitude_deg: 55.0,
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn class_ids_and_names_round_trip() {
        for class in ObjectClass::ALL {
            assert_eq!(ObjectClass::from_class_id(class.class_id()), Some(class));
            assert_eq!(ObjectClass::from_name(class.name()), Some(class));
        }
        assert_eq!(ObjectClass::from_class_id(9), None);
        assert_eq!(ObjectClass::from_name("bicycle"), None);
        assert_eq!(ObjectClass::SpeedLimit30.speed_limit_kmh(), Some(30));
        assert_eq!(ObjectClass::SpeedLimit90.speed_limit_kmh(), Some(90));
        assert_eq!(ObjectClass::Obstacle.speed_limit_kmh(), None);
    }
}
