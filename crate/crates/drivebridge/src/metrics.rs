//! Offline scoring of runs: detection quality, command latency, and speed
//! profiles.
//!
//! Detection metrics follow the usual object-detection recipe: detections
//! are ranked by confidence and greedily matched to same-class ground truth
//! at an IoU threshold; precision/recall/F1 come from the counts and
//! average precision from the 101-point interpolated precision envelope,
//! averaged over classes with at least one truth. mAP@[.5:.95] averages AP
//! over IoU thresholds 0.50 to 0.95 in steps of 0.05.
//!
//! Latency and speed-profile statistics replay a recorded trace: the former
//! pairs accepted detections with the first command that reflects them, the
//! latter measures settling and overshoot against a target speed.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::SpeedMapping;
use crate::perception::{
    detection_probability, project_bbox, Bbox, Detection, WeatherState,
};
use crate::plant::VehicleState;
use crate::scenario::ScenarioSpec;
use crate::trace::TraceRecord;
use crate::units::kmh_to_mps;

/// Default IoU threshold for counting a detection as a true positive.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
/// Two speed targets within this are the same target, m/s.
const TARGET_EQ_EPS_MPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("bounding boxes must have positive area")]
    ZeroAreaBox,
    #[error("IoU threshold must lie in (0, 1], got {0}")]
    BadIouThreshold(f64),
    #[error("no ground-truth instances to score against")]
    NoGroundTruth,
    #[error("trace contains no vehicle samples")]
    EmptyTrace,
}

/// Axis-aligned box in corner form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x0: cx - w / 2.0,
            y0: cy - h / 2.0,
            x1: cx + w / 2.0,
            y1: cy + h / 2.0,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    fn shifted(&self, dx: f64) -> Self {
        Self {
            x0: self.x0 + dx,
            x1: self.x1 + dx,
            ..*self
        }
    }
}

impl From<Bbox> for Rect {
    fn from(b: Bbox) -> Self {
        Rect::from_center(b.cx, b.cy, b.w, b.h)
    }
}

/// Intersection over union of two boxes. Errors when either box has zero
/// area (degenerate boxes have no meaningful overlap ratio).
pub fn iou(a: &Rect, b: &Rect) -> Result<f64, MetricsError> {
    if a.area() <= 0.0 || b.area() <= 0.0 {
        return Err(MetricsError::ZeroAreaBox);
    }
    let ix = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let iy = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let intersection = ix * iy;
    Ok(intersection / (a.area() + b.area() - intersection))
}

/// A detection reduced to what scoring needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalDetection {
    pub class_id: u32,
    pub confidence: f64,
    pub rect: Rect,
}

impl From<&Detection> for EvalDetection {
    fn from(d: &Detection) -> Self {
        Self {
            class_id: d.class_id,
            confidence: d.confidence,
            rect: d.bbox.into(),
        }
    }
}

/// A ground-truth instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalTruth {
    pub class_id: u32,
    pub rect: Rect,
}

/// Outcome of greedy matching at one IoU threshold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// (detection index, truth index, IoU), in match (confidence) order.
    pub matched: Vec<(usize, usize, f64)>,
}

fn validate_threshold(iou_threshold: f64) -> Result<(), MetricsError> {
    if !iou_threshold.is_finite() || iou_threshold <= 0.0 || iou_threshold > 1.0 {
        return Err(MetricsError::BadIouThreshold(iou_threshold));
    }
    Ok(())
}

/// Detection indices ranked by descending confidence; ties keep the lower
/// index first, so the ranking is total and reproducible.
fn confidence_ranking(detections: &[EvalDetection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Best still-unclaimed same-class truth for one detection: highest IoU at
/// or above the threshold, ties resolved to the lowest truth index.
fn best_truth_for(
    detection: &EvalDetection,
    truths: &[EvalTruth],
    taken: &[bool],
    iou_threshold: f64,
) -> Result<Option<(usize, f64)>, MetricsError> {
    let mut best: Option<(usize, f64)> = None;
    for (truth_index, truth) in truths.iter().enumerate() {
        if taken[truth_index] || truth.class_id != detection.class_id {
            continue;
        }
        let overlap = iou(&detection.rect, &truth.rect)?;
        if overlap < iou_threshold {
            continue;
        }
        if best.map_or(true, |(_, best_overlap)| overlap > best_overlap) {
            best = Some((truth_index, overlap));
        }
    }
    Ok(best)
}

/// Greedily match detections to ground truth at an IoU threshold.
///
/// Detections are visited in descending confidence order; each claims the
/// unclaimed same-class truth with the highest IoU at or above the
/// threshold, or counts as a false positive. Unclaimed truths are false
/// negatives.
pub fn match_detections(
    detections: &[EvalDetection],
    truths: &[EvalTruth],
    iou_threshold: f64,
) -> Result<MatchResult, MetricsError> {
    validate_threshold(iou_threshold)?;
    let mut taken = vec![false; truths.len()];
    let mut matched = Vec::new();
    let mut false_positives = 0;
    for detection_index in confidence_ranking(detections) {
        match best_truth_for(&detections[detection_index], truths, &taken, iou_threshold)? {
            Some((truth_index, overlap)) => {
                taken[truth_index] = true;
                matched.push((detection_index, truth_index, overlap));
            }
            None => false_positives += 1,
        }
    }
    Ok(MatchResult {
        true_positives: matched.len(),
        false_positives,
        false_negatives: truths.len() - matched.len(),
        matched,
    })
}

/// Precision and recall from match counts. Empty denominators score zero.
pub fn precision_recall(result: &MatchResult) -> (f64, f64) {
    let detections = result.true_positives + result.false_positives;
    let truths = result.true_positives + result.false_negatives;
    let precision = if detections == 0 {
        0.0
    } else {
        result.true_positives as f64 / detections as f64
    };
    let recall = if truths == 0 {
        0.0
    } else {
        result.true_positives as f64 / truths as f64
    };
    (precision, recall)
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// 101-point interpolated AP over one class's ranked (recall, precision)
/// prefix points: at each grid recall, the maximum precision among points
/// with at least that recall.
fn grid_ap(points: &[(f64, f64)]) -> f64 {
    let mut sum = 0.0;
    for i in 0..=100 {
        let grid_recall = i as f64 / 100.0;
        let best = points
            .iter()
            .filter(|(recall, _)| *recall >= grid_recall)
            .map(|(_, precision)| *precision)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

fn class_average_precision(
    detections: &[EvalDetection],
    truths: &[EvalTruth],
    class_id: u32,
    iou_threshold: f64,
) -> Result<f64, MetricsError> {
    let class_truths: Vec<EvalTruth> = truths
        .iter()
        .filter(|t| t.class_id == class_id)
        .copied()
        .collect();
    let class_detections: Vec<EvalDetection> = detections
        .iter()
        .filter(|d| d.class_id == class_id)
        .copied()
        .collect();
    let mut taken = vec![false; class_truths.len()];
    let mut true_positives = 0usize;
    let mut points = Vec::with_capacity(class_detections.len());
    for (rank, detection_index) in confidence_ranking(&class_detections).into_iter().enumerate() {
        if let Some((truth_index, _)) = best_truth_for(
            &class_detections[detection_index],
            &class_truths,
            &taken,
            iou_threshold,
        )? {
            taken[truth_index] = true;
            true_positives += 1;
        }
        points.push((
            true_positives as f64 / class_truths.len() as f64,
            true_positives as f64 / (rank + 1) as f64,
        ));
    }
    Ok(grid_ap(&points))
}

/// Mean average precision at one IoU threshold: per-class 101-point AP
/// averaged over the classes that have at least one ground-truth instance.
pub fn average_precision(
    detections: &[EvalDetection],
    truths: &[EvalTruth],
    iou_threshold: f64,
) -> Result<f64, MetricsError> {
    validate_threshold(iou_threshold)?;
    let classes: BTreeSet<u32> = truths.iter().map(|t| t.class_id).collect();
    if classes.is_empty() {
        return Err(MetricsError::NoGroundTruth);
    }
    let mut sum = 0.0;
    for &class_id in &classes {
        sum += class_average_precision(detections, truths, class_id, iou_threshold)?;
    }
    Ok(sum / classes.len() as f64)
}

/// mAP at IoU 0.5.
pub fn map50(detections: &[EvalDetection], truths: &[EvalTruth]) -> Result<f64, MetricsError> {
    average_precision(detections, truths, 0.5)
}

/// mAP averaged over IoU thresholds 0.50, 0.55, …, 0.95.
pub fn map50_95(detections: &[EvalDetection], truths: &[EvalTruth]) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    for i in 10..20 {
        sum += average_precision(detections, truths, i as f64 / 20.0)?;
    }
    Ok(sum / 10.0)
}

/// The full detection scorecard.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub map50: f64,
    pub map50_95: f64,
}

/// Score a detection set against ground truth: counts at IoU 0.5 plus the
/// mAP family.
pub fn evaluate_detections(
    detections: &[EvalDetection],
    truths: &[EvalTruth],
) -> Result<MetricsReport, MetricsError> {
    let matches = match_detections(detections, truths, DEFAULT_IOU_THRESHOLD)?;
    let (precision, recall) = precision_recall(&matches);
    if truths.is_empty() {
        return Err(MetricsError::NoGroundTruth);
    }
    Ok(MetricsReport {
        precision,
        recall,
        f1: f1_score(precision, recall),
        map50: map50(detections, truths)?,
        map50_95: map50_95(detections, truths)?,
    })
}

/// One attributed target change.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LatencySample {
    /// Stamp of the accepted detection that implied the new target, s.
    pub trigger_stamp_s: f64,
    /// Stamp of the first command carrying the new target, s.
    pub effect_stamp_s: f64,
    pub latency_s: f64,
}

/// A command target change with no triggering detection in the trace
/// (e.g. the controller releasing an obstacle stop on its hold timer).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UntriggeredChange {
    pub stamp_s: f64,
    pub target_speed_mps: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LatencyReport {
    pub samples: Vec<LatencySample>,
    pub untriggered_changes: Vec<UntriggeredChange>,
}

impl LatencyReport {
    pub fn max_latency_s(&self) -> Option<f64> {
        self.samples.iter().map(|s| s.latency_s).fold(None, |acc, l| {
            Some(acc.map_or(l, |a: f64| a.max(l)))
        })
    }
}

/// Replay a trace and attribute every command target change to the
/// detection that implied it.
///
/// Detections are gated and mapped exactly as the controller would
/// (confidence at or above the threshold; sign classes through `mapping`;
/// obstacles imply a zero target). A target change whose value matches the
/// pending implied target yields a latency sample; any other change is
/// recorded as untriggered.
pub fn response_latency(
    trace: &[TraceRecord],
    mapping: &SpeedMapping,
    confidence_threshold: f64,
) -> LatencyReport {
    let mut report = LatencyReport::default();
    let mut current_target: Option<f64> = None;
    let mut pending: Option<(f64, f64)> = None; // (trigger stamp, implied target)

    for record in trace {
        match record {
            TraceRecord::DetectionEvent {
                time_s, confidence, ..
            } => {
                if *confidence < confidence_threshold {
                    continue;
                }
                let Some(detection) = record.as_detection() else {
                    continue;
                };
                let Some(class) = detection.class() else {
                    continue;
                };
                let implied = match class.speed_limit_kmh() {
                    Some(limit_kmh) => match mapping.command_for_kmh(limit_kmh) {
                        Some(target_kmh) => kmh_to_mps(target_kmh),
                        None => continue,
                    },
                    None => 0.0,
                };
                let already_current =
                    current_target.is_some_and(|c| (c - implied).abs() <= TARGET_EQ_EPS_MPS);
                if already_current {
                    pending = None;
                } else {
                    let renewed = pending.is_some_and(|(_, p)| {
                        (p - implied).abs() <= TARGET_EQ_EPS_MPS
                    });
                    if !renewed {
                        pending = Some((*time_s, implied));
                    }
                }
            }
            TraceRecord::CommandEvent {
                time_s,
                target_speed_mps,
                ..
            } => {
                let target = *target_speed_mps;
                let changed = match current_target {
                    None => {
                        // The first command sets the baseline; it only
                        // counts as a change if a detection already
                        // implied a different target.
                        pending.is_some()
                    }
                    Some(current) => (current - target).abs() > TARGET_EQ_EPS_MPS,
                };
                if changed {
                    match pending {
                        Some((trigger_stamp_s, implied))
                            if (implied - target).abs() <= TARGET_EQ_EPS_MPS =>
                        {
                            report.samples.push(LatencySample {
                                trigger_stamp_s,
                                effect_stamp_s: *time_s,
                                latency_s: *time_s - trigger_stamp_s,
                            });
                            pending = None;
                        }
                        _ => {
                            report.untriggered_changes.push(UntriggeredChange {
                                stamp_s: *time_s,
                                target_speed_mps: target,
                            });
                        }
                    }
                }
                current_target = Some(target);
            }
            _ => {}
        }
    }
    report
}

/// Settling and overshoot of the recorded speed against a target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpeedProfileStats {
    /// Time of the first vehicle sample after which every sample stays
    /// within the tolerance band; `None` if the profile never settles.
    pub settled_at_s: Option<f64>,
    /// Largest excursion past the target in the direction of approach,
    /// m/s; zero if the speed never crosses the target.
    pub overshoot_mps: f64,
}

/// Measure settling and overshoot over the vehicle samples of `trace`
/// against `v_target_mps` with tolerance `epsilon_mps`.
pub fn speed_profile_stats(
    trace: &[TraceRecord],
    v_target_mps: f64,
    epsilon_mps: f64,
) -> Result<SpeedProfileStats, MetricsError> {
    let samples: Vec<(f64, f64)> = trace
        .iter()
        .filter_map(|r| match r {
            TraceRecord::VehicleSample { time_s, speed_mps, .. } => Some((*time_s, *speed_mps)),
            _ => None,
        })
        .collect();
    if samples.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }

    let last_violation = samples
        .iter()
        .rposition(|(_, speed)| (speed - v_target_mps).abs() > epsilon_mps);
    let settled_at_s = match last_violation {
        None => Some(samples[0].0),
        Some(index) if index + 1 < samples.len() => Some(samples[index + 1].0),
        Some(_) => None,
    };

    // Approach from below measures excursions above the target and vice
    // versa; a start already on target counts upward excursions.
    let direction = if v_target_mps >= samples[0].1 { 1.0 } else { -1.0 };
    let overshoot_mps = samples
        .iter()
        .map(|(_, speed)| (speed - v_target_mps) * direction)
        .fold(0.0, f64::max);

    Ok(SpeedProfileStats {
        settled_at_s,
        overshoot_mps,
    })
}

/// Everything the trace-level evaluation produces.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEvaluation {
    /// Detection scorecard; `None` when the run had no ground truth (e.g.
    /// an empty scene).
    pub detection: Option<MetricsReport>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Sensing frames reconstructed from the trace.
    pub frames: usize,
    pub truth_instances: usize,
    pub detection_count: usize,
    pub latency: LatencyReport,
}

struct Frame {
    time_s: f64,
    position_m: f64,
    weather: WeatherState,
    detections: Vec<Detection>,
}

/// Score a recorded trace against the scenario that produced it.
///
/// Ground truth is reconstructed frame by frame: each vehicle sample opens
/// a sensing frame at its stamp, the weather in force at that frame is
/// tracked from weather events, and a scene object is a truth instance in
/// a frame when it projects into the camera and its detection probability
/// is positive. The final sample only closes the run and opens no frame.
/// Matching is frame-local; ranking for AP is global across frames.
pub fn evaluate_trace(
    trace: &[TraceRecord],
    spec: &ScenarioSpec,
) -> Result<TraceEvaluation, MetricsError> {
    let mut frames: Vec<Frame> = Vec::new();
    let mut weather = WeatherState::clear();
    for record in trace {
        match record {
            TraceRecord::VehicleSample {
                time_s, position_m, ..
            } => frames.push(Frame {
                time_s: *time_s,
                position_m: *position_m,
                weather,
                detections: Vec::new(),
            }),
            TraceRecord::WeatherEvent {
                condition,
                visibility_m,
                sun_altitude_deg,
                ..
            } => {
                weather = WeatherState {
                    condition: *condition,
                    visibility_m: *visibility_m,
                    sun_altitude_deg: *sun_altitude_deg,
                };
                // Weather events land between a frame's opening sample and
                // its detections, so they update the open frame.
                if let Some(open) = frames.last_mut() {
                    if open.detections.is_empty() {
                        open.weather = weather;
                    }
                }
            }
            TraceRecord::DetectionEvent { .. } => {
                if let (Some(open), Some(detection)) = (frames.last_mut(), record.as_detection()) {
                    open.detections.push(detection);
                }
            }
            TraceRecord::CommandEvent { .. } => {}
        }
    }
    if frames.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    // The trailing sample records the final state; no sensing happened there.
    frames.pop();

    // Lay frames out side by side on a wide strip so frame-local matching
    // falls out of ordinary geometric matching: boxes from different frames
    // can never overlap.
    let mut detections: Vec<EvalDetection> = Vec::new();
    let mut truths: Vec<EvalTruth> = Vec::new();
    for (frame_index, frame) in frames.iter().enumerate() {
        let offset = 2.0 * frame_index as f64;
        let vehicle = VehicleState::new(frame.position_m, 0.0, frame.time_s);
        for object in &spec.objects {
            let Some(bbox) = project_bbox(&vehicle, object) else {
                continue;
            };
            let distance = object.position_m - frame.position_m;
            if detection_probability(&frame.weather, distance) <= 0.0 {
                continue;
            }
            truths.push(EvalTruth {
                class_id: object.class.class_id(),
                rect: Rect::from(bbox).shifted(offset),
            });
        }
        for detection in &frame.detections {
            let mut eval = EvalDetection::from(detection);
            eval.rect = eval.rect.shifted(offset);
            detections.push(eval);
        }
    }

    let (detection_report, counts) = if truths.is_empty() {
        (None, MatchResult::default())
    } else {
        let matches = match_detections(&detections, &truths, DEFAULT_IOU_THRESHOLD)?;
        (Some(evaluate_detections(&detections, &truths)?), matches)
    };
    let false_positives = if truths.is_empty() {
        detections.len()
    } else {
        counts.false_positives
    };

    Ok(TraceEvaluation {
        detection: detection_report,
        true_positives: counts.true_positives,
        false_positives,
        false_negatives: counts.false_negatives,
        frames: frames.len(),
        truth_instances: truths.len(),
        detection_count: detections.len(),
        latency: response_latency(trace, &spec.mapping, spec.confidence_threshold),
    })
}
