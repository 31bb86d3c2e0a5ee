//! Acceptance gate: eight end-to-end checks, one per criterion, each
//! printing a single `[PASS]`/`[FAIL]` line (visible with
//! `cargo test --test acceptance -- --nocapture`).
//!
//! The checks re-derive every expectation independently inside this file —
//! closed-form control arithmetic, a from-scratch matching and AP oracle,
//! analytic detection rates with confidence intervals — and hold the crate
//! to the stated tolerances.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drivebridge::bus::{Bus, Payload, TopicName};
use drivebridge::controller::{control_accel, SPEED_ERROR_GAIN};
use drivebridge::metrics::{
    evaluate_detections, map50, map50_95, match_detections, response_latency, EvalDetection,
    EvalTruth, MetricsReport, Rect,
};
use drivebridge::perception::{
    project_bbox_with, sense_with, DriftSpec, ObjectClass, PerceptionConfig, SceneObject,
    WeatherCondition, WeatherState,
};
use drivebridge::plant::{VehicleState, MAX_ACCEL_MPS2};
use drivebridge::scenario::{covariate_fog, fog_to_clear, run};
use drivebridge::trace::{to_csv, to_jsonl, TraceRecord};
use drivebridge::units::{kmh_to_mps, mps_to_kmh};

// Criterion 1: the control law equals its closed form to this tolerance.
const CONTROL_LAW_TOL: f64 = 1e-9;
// Criteria 2–3: settling windows for the two retargets, in seconds.
const ACCEL_SETTLE_NOMINAL_S: f64 = 4.8;
const ACCEL_SETTLE_SLACK_S: f64 = 0.3;
const ACCEL_SETTLE_HARD_CAP_S: f64 = 5.0;
const DECEL_SETTLE_NOMINAL_S: f64 = 3.9;
const DECEL_SETTLE_SLACK_S: f64 = 0.3;
// Settling band around a target and the allowed overshoot, in km/h.
const SPEED_BAND_KMH: f64 = 1.0;
const OVERSHOOT_CAP_KMH: f64 = 0.5;
// Criterion 4: a target change must follow its detection within this long.
const LATENCY_CAP_S: f64 = 0.2;
// Criterion 5: randomized-case agreement with the scoring oracle.
const RANDOM_CASES: usize = 200;
const AP_ORACLE_TOL: f64 = 1e-9;
// Criterion 6: frames per arm of the recall-separation experiment, and the
// two-sided 95% normal quantile for the Wilson intervals.
const SEPARATION_FRAMES: usize = 10_000;
const WILSON_Z: f64 = 1.959963984540054;
// Criterion 7: lossless-delivery volume and registry fuzz count.
const BUS_MESSAGES: usize = 10_000;
const REGISTRY_SEQUENCES: usize = 100;

/// Run one criterion's checks, printing exactly one pass/fail line.
fn criterion(number: u32, description: &str, check: impl FnOnce()) {
    match catch_unwind(AssertUnwindSafe(check)) {
        Ok(()) => println!("[PASS] criterion {number}: {description}"),
        Err(cause) => {
            println!("[FAIL] criterion {number}: {description}");
            resume_unwind(cause);
        }
    }
}

// --- trace helpers -----------------------------------------------------------

fn speed_samples_kmh(records: &[TraceRecord]) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter_map(|record| match record {
            TraceRecord::VehicleSample {
                time_s, speed_mps, ..
            } => Some((*time_s, mps_to_kmh(*speed_mps))),
            _ => None,
        })
        .collect()
}

/// Commanded targets in km/h, deduplicated to actual changes.
fn target_changes_kmh(records: &[TraceRecord]) -> Vec<(f64, f64)> {
    let mut changes: Vec<(f64, f64)> = Vec::new();
    for record in records {
        if let TraceRecord::CommandEvent {
            time_s,
            target_speed_mps,
            ..
        } = record
        {
            let target = mps_to_kmh(*target_speed_mps);
            match changes.last() {
                Some(&(_, last)) if (last - target).abs() <= 1e-9 => {}
                _ => changes.push((*time_s, target)),
            }
        }
    }
    changes
}

/// First upward crossing of `level_kmh` at or after `from_s`, linearly
/// interpolated between samples.
fn rising_crossing_s(samples: &[(f64, f64)], from_s: f64, level_kmh: f64) -> Option<f64> {
    samples.windows(2).find_map(|pair| {
        let (t0, v0) = pair[0];
        let (t1, v1) = pair[1];
        if t0 < from_s - 1e-9 {
            return None;
        }
        if v0 < level_kmh && v1 >= level_kmh {
            Some(t0 + (level_kmh - v0) / (v1 - v0) * (t1 - t0))
        } else {
            None
        }
    })
}

/// Earliest sample time from which the speed stays inside ±band of the
/// target through `to_s`.
fn settle_time_s(
    samples: &[(f64, f64)],
    from_s: f64,
    to_s: f64,
    target_kmh: f64,
    band_kmh: f64,
) -> Option<f64> {
    let window: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|(t, _)| *t >= from_s - 1e-9 && *t <= to_s + 1e-9)
        .collect();
    match window.iter().rposition(|(_, v)| (v - target_kmh).abs() > band_kmh) {
        None => window.first().map(|(t, _)| *t),
        Some(i) if i + 1 < window.len() => Some(window[i + 1].0),
        Some(_) => None,
    }
}

// --- criterion 1 -------------------------------------------------------------

#[test]
fn criterion_1_control_law_matches_closed_form() {
    criterion(
        1,
        "saturated proportional law equals its closed form on a dense speed grid",
        || {
            assert_eq!(SPEED_ERROR_GAIN, 0.7);
            assert_eq!(MAX_ACCEL_MPS2, 6.0);
            let mut max_delta = 0.0_f64;
            let mut cases = 0u32;
            let mut check = |current: f64, target: f64| {
                let accel = control_accel(current, target).unwrap();
                let expected = (0.7 * (target - current)).min(6.0).max(-6.0);
                max_delta = max_delta.max((accel - expected).abs());
                cases += 1;
            };
            for i in 0..=60 {
                for j in 0..=60 {
                    check(i as f64 * 0.5, j as f64 * 0.5);
                }
            }
            for limit_kmh in [5.0, 25.0, 30.0, 40.0, 49.4, 80.0, 90.0, 130.0] {
                for speed_mps in [0.0, 3.3, 11.11, 13.7, 22.3] {
                    check(speed_mps, kmh_to_mps(limit_kmh));
                }
            }
            assert!(
                max_delta < CONTROL_LAW_TOL,
                "max deviation {max_delta:e} over {cases} cases"
            );
        },
    );
}

// --- criteria 2-4: behavior of the two-sign run -------------------------------

#[test]
fn criterion_2_acceleration_settles_on_schedule() {
    criterion(
        2,
        "after the 80 km/h retarget, speed settles within 1 km/h in 4.8±0.3 s \
         (hard cap 5.0 s) from the rising 49.4 km/h crossing",
        || {
            let records = run(&fog_to_clear()).unwrap();
            let samples = speed_samples_kmh(&records);
            let changes = target_changes_kmh(&records);
            assert_eq!(changes.len(), 3, "target sequence: {changes:?}");
            let (rise_start_s, rise_target) = *changes.last().unwrap();
            assert!((rise_target - 80.0).abs() < 1e-9);
            let end_s = samples.last().unwrap().0;
            let crossing_s = rising_crossing_s(&samples, rise_start_s, 49.4)
                .expect("speed crosses 49.4 km/h on the way up");
            let settled_s = settle_time_s(&samples, rise_start_s, end_s, 80.0, SPEED_BAND_KMH)
                .expect("speed settles at 80 km/h");
            let rise_s = settled_s - crossing_s;
            assert!(
                (rise_s - ACCEL_SETTLE_NOMINAL_S).abs() <= ACCEL_SETTLE_SLACK_S,
                "settled {rise_s:.3} s after the crossing"
            );
            assert!(
                rise_s <= ACCEL_SETTLE_HARD_CAP_S,
                "settled {rise_s:.3} s after the crossing"
            );
        },
    );
}

#[test]
fn criterion_3_deceleration_settles_monotonically() {
    criterion(
        3,
        "after the 25 km/h retarget, speed settles within 1 km/h in 3.9±0.3 s, \
         monotonically, with overshoot at most 0.5 km/h",
        || {
            let records = run(&fog_to_clear()).unwrap();
            let samples = speed_samples_kmh(&records);
            let changes = target_changes_kmh(&records);
            assert_eq!(changes.len(), 3, "target sequence: {changes:?}");
            let (drop_start_s, drop_target) = changes[1];
            assert!((drop_target - 25.0).abs() < 1e-9);
            let phase_end_s = changes[2].0;

            let settled_s =
                settle_time_s(&samples, drop_start_s, phase_end_s, 25.0, SPEED_BAND_KMH)
                    .expect("speed settles at 25 km/h");
            let settle_s = settled_s - drop_start_s;
            assert!(
                (settle_s - DECEL_SETTLE_NOMINAL_S).abs() <= DECEL_SETTLE_SLACK_S,
                "settled {settle_s:.3} s after the retarget"
            );

            let window: Vec<(f64, f64)> = samples
                .iter()
                .copied()
                .filter(|(t, _)| *t >= drop_start_s - 1e-9 && *t <= phase_end_s + 1e-9)
                .collect();
            for pair in window.windows(2) {
                assert!(
                    pair[1].1 <= pair[0].1 + 1e-9,
                    "speed rose from {:?} to {:?} during the deceleration",
                    pair[0],
                    pair[1]
                );
            }
            let minimum = window.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
            assert!(
                25.0 - minimum <= OVERSHOOT_CAP_KMH,
                "dipped to {minimum:.3} km/h"
            );
        },
    );
}

#[test]
fn criterion_4_target_changes_are_attributed() {
    criterion(
        4,
        "every commanded target change traces back to an accepted detection \
         within 0.2 s, with nothing unattributed",
        || {
            let spec = fog_to_clear();
            let records = run(&spec).unwrap();
            let report = response_latency(&records, &spec.mapping, spec.confidence_threshold);
            assert_eq!(report.samples.len(), 2, "{:?}", report.samples);
            for sample in &report.samples {
                assert!(sample.latency_s >= 0.0);
                assert!(
                    sample.latency_s <= LATENCY_CAP_S + 1e-9,
                    "latency {} s at trigger {}",
                    sample.latency_s,
                    sample.trigger_stamp_s
                );
            }
            assert!(
                report.untriggered_changes.is_empty(),
                "{:?}",
                report.untriggered_changes
            );
        },
    );
}

// --- criterion 5: scoring vs an independent oracle ----------------------------

fn oracle_iou(a: Rect, b: Rect) -> f64 {
    let ix = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let iy = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let intersection = ix * iy;
    let union = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - intersection;
    intersection / union
}

/// Confidence-descending visit order; stable sort keeps index order on ties.
fn oracle_ranking(detections: &[EvalDetection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap()
    });
    order
}

/// Greedy matcher written from the definition: per detection (confidence
/// order), claim the unclaimed same-class truth with the highest IoU at or
/// above the threshold, lowest index on ties.
fn oracle_match(
    detections: &[EvalDetection],
    truths: &[EvalTruth],
    threshold: f64,
) -> (usize, usize, usize, Vec<(usize, usize)>) {
    let mut taken = vec![false; truths.len()];
    let mut pairs = Vec::new();
    for detection_index in oracle_ranking(detections) {
        let mut best: Option<(usize, f64)> = None;
        for (truth_index, truth) in truths.iter().enumerate() {
            if taken[truth_index] || truth.class_id != detections[detection_index].class_id {
                continue;
            }
            let overlap = oracle_iou(detections[detection_index].rect, truth.rect);
            if overlap >= threshold && best.map_or(true, |(_, b)| overlap > b) {
                best = Some((truth_index, overlap));
            }
        }
        if let Some((truth_index, _)) = best {
            taken[truth_index] = true;
            pairs.push((detection_index, truth_index));
        }
    }
    (
        pairs.len(),
        detections.len() - pairs.len(),
        truths.len() - pairs.len(),
        pairs,
    )
}

/// 101-point AP for one class, from the definition.
fn oracle_class_ap(
    detections: &[EvalDetection],
    truths: &[EvalTruth],
    class_id: u32,
    threshold: f64,
) -> f64 {
    let class_detections: Vec<EvalDetection> = detections
        .iter()
        .filter(|d| d.class_id == class_id)
        .copied()
        .collect();
    let class_truths: Vec<EvalTruth> = truths
        .iter()
        .filter(|t| t.class_id == class_id)
        .copied()
        .collect();
    let mut taken = vec![false; class_truths.len()];
    let mut hits = Vec::new();
    for detection_index in oracle_ranking(&class_detections) {
        let mut best: Option<(usize, f64)> = None;
        for (truth_index, truth) in class_truths.iter().enumerate() {
            if taken[truth_index] {
                continue;
            }
            let overlap = oracle_iou(class_detections[detection_index].rect, truth.rect);
            if overlap >= threshold && best.map_or(true, |(_, b)| overlap > b) {
                best = Some((truth_index, overlap));
            }
        }
        match best {
            Some((truth_index, _)) => {
                taken[truth_index] = true;
                hits.push(true);
            }
            None => hits.push(false),
        }
    }
    let mut ap_sum = 0.0;
    for grid_index in 0..=100 {
        let grid_recall = grid_index as f64 / 100.0;
        let mut best_precision = 0.0_f64;
        let mut true_positives = 0usize;
        for (rank, &hit) in hits.iter().enumerate() {
            if hit {
                true_positives += 1;
            }
            let recall = true_positives as f64 / class_truths.len() as f64;
            let precision = true_positives as f64 / (rank + 1) as f64;
            if recall >= grid_recall {
                best_precision = best_precision.max(precision);
            }
        }
        ap_sum += best_precision;
    }
    ap_sum / 101.0
}

fn oracle_map(detections: &[EvalDetection], truths: &[EvalTruth], threshold: f64) -> f64 {
    let classes: BTreeSet<u32> = truths.iter().map(|t| t.class_id).collect();
    let sum: f64 = classes
        .iter()
        .map(|&class_id| oracle_class_ap(detections, truths, class_id, threshold))
        .sum();
    sum / classes.len() as f64
}

#[test]
fn criterion_5_scoring_agrees_with_oracle() {
    criterion(
        5,
        "matching counts and AP agree with an independent oracle on 200 \
         randomized cases",
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
            // Half-unit grid coordinates keep every IoU exact in both
            // implementations, so threshold and tie decisions must coincide.
            let random_rect = |rng: &mut ChaCha8Rng| {
                let x0 = rng.random_range(0..12) as f64 * 0.5;
                let y0 = rng.random_range(0..12) as f64 * 0.5;
                let w = rng.random_range(1..=6) as f64 * 0.5;
                let h = rng.random_range(1..=6) as f64 * 0.5;
                Rect::from_corners(x0, y0, x0 + w, y0 + h)
            };
            for case in 0..RANDOM_CASES {
                let detections: Vec<EvalDetection> = (0..rng.random_range(0..=6))
                    .map(|_| EvalDetection {
                        class_id: rng.random_range(0..3),
                        confidence: rng.random_range(0..=20) as f64 / 20.0,
                        rect: random_rect(&mut rng),
                    })
                    .collect();
                let truths: Vec<EvalTruth> = (0..rng.random_range(0..=6))
                    .map(|_| EvalTruth {
                        class_id: rng.random_range(0..3),
                        rect: random_rect(&mut rng),
                    })
                    .collect();

                let result = match_detections(&detections, &truths, 0.5).unwrap();
                let (tp, fp, fn_, pairs) = oracle_match(&detections, &truths, 0.5);
                assert_eq!(result.true_positives, tp, "case {case}");
                assert_eq!(result.false_positives, fp, "case {case}");
                assert_eq!(result.false_negatives, fn_, "case {case}");
                let crate_pairs: Vec<(usize, usize)> =
                    result.matched.iter().map(|&(d, t, _)| (d, t)).collect();
                assert_eq!(crate_pairs, pairs, "case {case}");

                if !truths.is_empty() {
                    let got50 = map50(&detections, &truths).unwrap();
                    let want50 = oracle_map(&detections, &truths, 0.5);
                    assert!(
                        (got50 - want50).abs() < AP_ORACLE_TOL,
                        "case {case}: map50 {got50} vs oracle {want50}"
                    );
                    let got = map50_95(&detections, &truths).unwrap();
                    let want: f64 = (10..20)
                        .map(|i| oracle_map(&detections, &truths, i as f64 / 20.0))
                        .sum::<f64>()
                        / 10.0;
                    assert!(
                        (got - want).abs() < AP_ORACLE_TOL,
                        "case {case}: map50_95 {got} vs oracle {want}"
                    );
                }
            }
        },
    );
}

// --- criterion 6: exact perfection and drifted degradation --------------------

/// Wilson score interval for a binomial proportion.
fn wilson_bounds(successes: usize, trials: usize) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denominator = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half) / denominator, (center + half) / denominator)
}

#[test]
fn criterion_6_perfect_and_degraded_detection() {
    criterion(
        6,
        "perfect detections score exactly 1.0; covariate miss drift separates \
         recall with non-overlapping 95% intervals",
        || {
            // Hand-built perfection: detections identical to ground truth.
            let truths = vec![
                EvalTruth {
                    class_id: 0,
                    rect: Rect::from_corners(0.0, 0.0, 1.0, 1.0),
                },
                EvalTruth {
                    class_id: 1,
                    rect: Rect::from_corners(2.0, 0.0, 3.0, 1.0),
                },
                EvalTruth {
                    class_id: 2,
                    rect: Rect::from_corners(0.0, 2.0, 1.0, 3.0),
                },
            ];
            let detections: Vec<EvalDetection> = truths
                .iter()
                .zip([0.9, 0.8, 0.7])
                .map(|(truth, confidence)| EvalDetection {
                    class_id: truth.class_id,
                    confidence,
                    rect: truth.rect,
                })
                .collect();
            let report = evaluate_detections(&detections, &truths).unwrap();
            assert_eq!(
                report,
                MetricsReport {
                    precision: 1.0,
                    recall: 1.0,
                    f1: 1.0,
                    map50: 1.0,
                    map50_95: 1.0,
                }
            );

            // Detector-built perfection: certain hits, no jitter, so the
            // sensed boxes equal the projected truth exactly.
            let config = PerceptionConfig {
                p_base_clear: 1.0,
                ..PerceptionConfig::default()
            };
            let weather = WeatherState {
                condition: WeatherCondition::Clear,
                visibility_m: 1e12,
                sun_altitude_deg: 55.0,
            };
            let scene = [
                SceneObject {
                    class: ObjectClass::SpeedLimit30,
                    position_m: 30.0,
                    width_m: 1.0,
                    height_m: 1.0,
                },
                SceneObject {
                    class: ObjectClass::Obstacle,
                    position_m: 60.0,
                    width_m: 2.0,
                    height_m: 2.0,
                },
            ];
            let mut rng = ChaCha8Rng::seed_from_u64(0x6B);
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for frame in 0..150 {
                let vehicle = VehicleState::new(0.0, 0.0, frame as f64 * 0.1);
                let sensed: Vec<EvalDetection> =
                    sense_with(&config, &vehicle, &scene, &weather, &DriftSpec::None, &mut rng)
                        .iter()
                        .map(EvalDetection::from)
                        .collect();
                let frame_truths: Vec<EvalTruth> = scene
                    .iter()
                    .filter_map(|object| {
                        project_bbox_with(&config, &vehicle, object).map(|bbox| EvalTruth {
                            class_id: object.class.class_id(),
                            rect: bbox.into(),
                        })
                    })
                    .collect();
                let result = match_detections(&sensed, &frame_truths, 0.5).unwrap();
                tp += result.true_positives;
                fp += result.false_positives;
                fn_ += result.false_negatives;
            }
            assert_eq!((tp, fp, fn_), (300, 0, 0));

            // Degradation: a 0.3 extra miss rate must push recall down by a
            // statistically unambiguous margin.
            let scene = [SceneObject {
                class: ObjectClass::SpeedLimit30,
                position_m: 50.0,
                width_m: 1.0,
                height_m: 1.0,
            }];
            let clear = WeatherState::clear(); // hit rate 0.98 · 0.5 = 0.49
            let drifted_spec = DriftSpec::Covariate {
                confidence_scale: 1.0,
                miss_rate_boost: 0.3,
                bbox_jitter_sigma: 0.0,
            };
            let recall_hits = |drift: &DriftSpec, seed: u64| -> usize {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut hits = 0usize;
                for frame in 0..SEPARATION_FRAMES {
                    let vehicle = VehicleState::new(0.0, 0.0, frame as f64 * 0.1);
                    let sensed: Vec<EvalDetection> =
                        sense_with(&config, &vehicle, &scene, &clear, drift, &mut rng)
                            .iter()
                            .map(EvalDetection::from)
                            .collect();
                    let truths: Vec<EvalTruth> = scene
                        .iter()
                        .filter_map(|object| {
                            project_bbox_with(&config, &vehicle, object).map(|bbox| EvalTruth {
                                class_id: object.class.class_id(),
                                rect: bbox.into(),
                            })
                        })
                        .collect();
                    hits += match_detections(&sensed, &truths, 0.5)
                        .unwrap()
                        .true_positives;
                }
                hits
            };
            // Base rate uses p_base_clear = 1.0, so hit probability is 0.5
            // at half the visibility distance; drifted is 0.5 · 0.7 = 0.35.
            let baseline = recall_hits(&DriftSpec::None, 0x6C1);
            let drifted = recall_hits(&drifted_spec, 0x6C2);
            let baseline_rate = baseline as f64 / SEPARATION_FRAMES as f64;
            let drifted_rate = drifted as f64 / SEPARATION_FRAMES as f64;
            assert!((baseline_rate - 0.50).abs() < 0.02, "{baseline_rate}");
            assert!((drifted_rate - 0.35).abs() < 0.02, "{drifted_rate}");
            let (baseline_low, _) = wilson_bounds(baseline, SEPARATION_FRAMES);
            let (_, drifted_high) = wilson_bounds(drifted, SEPARATION_FRAMES);
            assert!(
                baseline_low > drifted_high,
                "recall intervals overlap: baseline ≥ {baseline_low:.4}, \
                 drifted ≤ {drifted_high:.4}"
            );
        },
    );
}

// --- criterion 7: bus delivery and registry -----------------------------------

#[test]
fn criterion_7_bus_delivery_and_registry() {
    criterion(
        7,
        "bus delivers 10k messages losslessly in FIFO order, drops oldest on \
         overflow, and the registry tracks a reference model",
        || {
            let bus = Bus::new();
            let topic = TopicName::new("/stream").unwrap();
            let publisher = bus.register_publisher("producer", topic.clone());
            let subscription = bus
                .register_subscriber("consumer", topic.clone(), BUS_MESSAGES)
                .unwrap();
            for i in 0..BUS_MESSAGES {
                let state = VehicleState::new(i as f64, 0.0, i as f64 * 0.001);
                publisher
                    .publish(Payload::VehicleState(state.into()), i as f64 * 0.001)
                    .unwrap();
            }
            assert_eq!(subscription.dropped(), 0);
            let envelopes = subscription.drain();
            assert_eq!(envelopes.len(), BUS_MESSAGES);
            for (i, envelope) in envelopes.iter().enumerate() {
                assert_eq!(envelope.seq, i as u64);
                match &envelope.payload {
                    Payload::VehicleState(state) => assert_eq!(state.position_m, i as f64),
                    other => panic!("unexpected payload {other:?}"),
                }
            }

            // Overflow keeps the newest `capacity` messages and counts drops.
            let slow = bus.register_subscriber("slow", topic.clone(), 3).unwrap();
            for i in 0..5 {
                let now = (BUS_MESSAGES + i) as f64 * 0.001;
                let state = VehicleState::new(0.0, 0.0, now);
                publisher
                    .publish(Payload::VehicleState(state.into()), now)
                    .unwrap();
            }
            assert_eq!(slow.dropped(), 2);
            let kept: Vec<u64> = slow.drain().iter().map(|e| e.seq).collect();
            let base = BUS_MESSAGES as u64;
            assert_eq!(kept, vec![base + 2, base + 3, base + 4]);

            // Randomized register/unregister sequences against a set model.
            let mut rng = ChaCha8Rng::seed_from_u64(0xC7);
            for sequence in 0..REGISTRY_SEQUENCES {
                let bus = Bus::new();
                let mut model: BTreeMap<String, (BTreeSet<String>, BTreeSet<String>)> =
                    BTreeMap::new();
                let mut handles = Vec::new();
                for _ in 0..30 {
                    let node = format!("n{}", rng.random_range(0..5));
                    let path = format!("/topic{}", rng.random_range(0..3));
                    let topic = TopicName::new(&path).unwrap();
                    match rng.random_range(0..4) {
                        0 | 3 => {
                            bus.register_publisher(&node, topic.clone());
                            model.entry(path).or_default().0.insert(node);
                        }
                        1 => {
                            handles.push(bus.register_subscriber(&node, topic.clone(), 4).unwrap());
                            model.entry(path).or_default().1.insert(node);
                        }
                        _ => {
                            bus.unregister_node(&node);
                            for (publishers, subscribers) in model.values_mut() {
                                publishers.remove(&node);
                                subscribers.remove(&node);
                            }
                            model.retain(|_, (p, s)| !p.is_empty() || !s.is_empty());
                        }
                    }
                    let listed: Vec<String> =
                        bus.topics().iter().map(|t| t.as_str().to_string()).collect();
                    let expected: Vec<String> = model.keys().cloned().collect();
                    assert_eq!(listed, expected, "sequence {sequence}");
                    for (path, (publishers, subscribers)) in &model {
                        let record = bus.lookup(&TopicName::new(path).unwrap());
                        assert_eq!(&record.publishers, publishers, "sequence {sequence} {path}");
                        assert_eq!(&record.subscribers, subscribers, "sequence {sequence} {path}");
                    }
                }
            }
        },
    );
}

// --- criterion 8: determinism --------------------------------------------------

#[test]
fn criterion_8_traces_are_reproducible() {
    criterion(
        8,
        "equal seeds give byte-identical trace files; a different seed differs",
        || {
            let spec = fog_to_clear();
            let first = to_csv(&run(&spec).unwrap());
            let second = to_csv(&run(&spec).unwrap());
            assert_eq!(first, second);
            assert!(!first.is_empty());

            let mut reseeded = spec.clone();
            reseeded.seed = 43;
            let other = to_csv(&run(&reseeded).unwrap());
            assert_ne!(first, other);

            // The drift-heavy scenario exercises every RNG path.
            let drifted = covariate_fog();
            assert_eq!(
                to_jsonl(&run(&drifted).unwrap()),
                to_jsonl(&run(&drifted).unwrap())
            );
        },
    );
}
