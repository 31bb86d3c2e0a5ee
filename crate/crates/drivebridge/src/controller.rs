//! Adaptive longitudinal speed controller.
//!
//! The decision layer consumes detections and vehicle state and emits drive
//! commands at the tick rate. Speed-limit detections above a confidence
//! gate switch the speed target through a limit→target mapping (the
//! commanded speed backs off from the posted limit); obstacle detections
//! command a stop that is held until obstacle reports cease for a hold
//! interval. The acceleration itself comes from a saturated proportional
//! law on the speed error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::Detection;
use crate::plant::{DriveCommand, MAX_ACCEL_MPS2};
use crate::units::kmh_to_mps;

/// Proportional gain on the speed error, 1/s.
pub const SPEED_ERROR_GAIN: f64 = 0.7;
/// Detections below this confidence are ignored by default.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;
/// A stop is released after this long without obstacle detections, s.
pub const DEFAULT_OBSTACLE_HOLD_S: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("speeds must be finite and non-negative, got current={current}, target={target}")]
    InvalidSpeeds { current: f64, target: f64 },
    #[error("settling tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error("mapping {limit_kmh} km/h -> {target_kmh} km/h must command a positive speed at or below the posted limit")]
    BadMappingEntry { limit_kmh: u32, target_kmh: f64 },
}

/// Saturated proportional control law.
///
/// The commanded acceleration is the speed error (target − current, m/s)
/// scaled by [`SPEED_ERROR_GAIN`] and clamped symmetrically to the actuator
/// limit of ±[`MAX_ACCEL_MPS2`].
pub fn control_accel(current_speed_mps: f64, target_speed_mps: f64) -> Result<f64, ControlError> {
    if !current_speed_mps.is_finite()
        || !target_speed_mps.is_finite()
        || current_speed_mps < 0.0
        || target_speed_mps < 0.0
    {
        return Err(ControlError::InvalidSpeeds {
            current: current_speed_mps,
            target: target_speed_mps,
        });
    }
    let error = target_speed_mps - current_speed_mps;
    Ok((SPEED_ERROR_GAIN * error).clamp(-MAX_ACCEL_MPS2, MAX_ACCEL_MPS2))
}

/// Time for the closed loop to bring the speed within `epsilon_mps` of the
/// target, from the continuous-time solution of the control law.
///
/// While the error exceeds [`MAX_ACCEL_MPS2`]/[`SPEED_ERROR_GAIN`] the
/// acceleration is saturated and the error shrinks linearly; below that the
/// loop is a first-order exponential decay. Returns 0 when the speed is
/// already within tolerance.
pub fn settling_time(
    v0_mps: f64,
    v_target_mps: f64,
    epsilon_mps: f64,
) -> Result<f64, ControlError> {
    if !v0_mps.is_finite() || !v_target_mps.is_finite() || v0_mps < 0.0 || v_target_mps < 0.0 {
        return Err(ControlError::InvalidSpeeds {
            current: v0_mps,
            target: v_target_mps,
        });
    }
    if !epsilon_mps.is_finite() || epsilon_mps <= 0.0 {
        return Err(ControlError::BadTolerance(epsilon_mps));
    }
    let gap = (v0_mps - v_target_mps).abs();
    if gap <= epsilon_mps {
        return Ok(0.0);
    }
    let saturation_gap = MAX_ACCEL_MPS2 / SPEED_ERROR_GAIN;
    if gap > saturation_gap {
        if epsilon_mps >= saturation_gap {
            // The tolerance is met while still saturated.
            return Ok((gap - epsilon_mps) / MAX_ACCEL_MPS2);
        }
        let saturated_s = (gap - saturation_gap) / MAX_ACCEL_MPS2;
        return Ok(saturated_s + (saturation_gap / epsilon_mps).ln() / SPEED_ERROR_GAIN);
    }
    Ok((gap / epsilon_mps).ln() / SPEED_ERROR_GAIN)
}

/// Mapping from posted speed limits to the speed actually commanded, km/h.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedMapping {
    entries: BTreeMap<u32, f64>,
}

impl Default for SpeedMapping {
    /// Commanded speeds back off from the posted limit: 30 → 25, 90 → 80.
    fn default() -> Self {
        Self {
            entries: [(30, 25.0), (90, 80.0)].into_iter().collect(),
        }
    }
}

impl SpeedMapping {
    /// Build a mapping, requiring every commanded speed to be positive,
    /// finite, and no higher than its posted limit.
    pub fn new<I: IntoIterator<Item = (u32, f64)>>(entries: I) -> Result<Self, ControlError> {
        let entries: BTreeMap<u32, f64> = entries.into_iter().collect();
        for (&limit_kmh, &target_kmh) in &entries {
            if !target_kmh.is_finite() || target_kmh <= 0.0 || target_kmh > limit_kmh as f64 {
                return Err(ControlError::BadMappingEntry { limit_kmh, target_kmh });
            }
        }
        Ok(Self { entries })
    }

    /// Commanded speed for a posted limit, km/h; `None` for unmapped limits.
    pub fn command_for_kmh(&self, limit_kmh: u32) -> Option<f64> {
        self.entries.get(&limit_kmh).copied()
    }

    pub fn entries(&self) -> &BTreeMap<u32, f64> {
        &self.entries
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    /// Holding the current target; no accepted detection has changed it yet.
    Maintain,
    /// Tracking a target set by an accepted speed-limit detection.
    Adapt,
    /// Braking to zero because of an obstacle detection.
    Stopping,
}

/// Externally visible controller state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub mode: ControllerMode,
    pub target_speed_mps: f64,
    /// Stamp of the last accepted detection, s; negative infinity before
    /// any detection has been accepted.
    pub last_detection_stamp_s: f64,
    pub confidence_threshold: f64,
}

/// The decision layer. Feed it detections as they arrive and call
/// [`Controller::tick`] once per control period.
#[derive(Clone, Debug)]
pub struct Controller {
    state: ControllerState,
    mapping: SpeedMapping,
    obstacle_hold_s: f64,
    /// Target to resume once a stop is released.
    resume_target_mps: f64,
    last_obstacle_stamp_s: f64,
    unknown_limit_count: u64,
}

impl Controller {
    pub fn new(initial_target_mps: f64, mapping: SpeedMapping, confidence_threshold: f64) -> Self {
        Self {
            state: ControllerState {
                mode: ControllerMode::Maintain,
                target_speed_mps: initial_target_mps,
                last_detection_stamp_s: f64::NEG_INFINITY,
                confidence_threshold,
            },
            mapping,
            obstacle_hold_s: DEFAULT_OBSTACLE_HOLD_S,
            resume_target_mps: initial_target_mps,
            last_obstacle_stamp_s: f64::NEG_INFINITY,
            unknown_limit_count: 0,
        }
    }

    pub fn with_obstacle_hold(mut self, hold_s: f64) -> Self {
        self.obstacle_hold_s = hold_s;
        self
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn mapping(&self) -> &SpeedMapping {
        &self.mapping
    }

    /// Detections that named a speed limit the mapping does not cover.
    pub fn unknown_limit_count(&self) -> u64 {
        self.unknown_limit_count
    }

    /// Fold one detection into the controller state.
    ///
    /// Detections below the confidence gate are ignored. Accepted
    /// speed-limit detections retarget through the mapping (deferred until
    /// the stop releases if one is in progress); accepted obstacle
    /// detections begin or extend a stop. Limits without a mapping entry
    /// are counted and otherwise ignored.
    pub fn on_detection(&mut self, detection: &Detection) {
        if detection.confidence < self.state.confidence_threshold {
            return;
        }
        let Some(class) = detection.class() else {
            self.unknown_limit_count += 1;
            return;
        };
        match class.speed_limit_kmh() {
            Some(limit_kmh) => match self.mapping.command_for_kmh(limit_kmh) {
                Some(target_kmh) => {
                    let target_mps = kmh_to_mps(target_kmh);
                    if self.state.mode == ControllerMode::Stopping {
                        self.resume_target_mps = target_mps;
                    } else {
                        self.state.mode = ControllerMode::Adapt;
                        self.state.target_speed_mps = target_mps;
                    }
                    self.state.last_detection_stamp_s = detection.stamp_s;
                }
                None => {
                    self.unknown_limit_count += 1;
                }
            },
            None => {
                if self.state.mode != ControllerMode::Stopping {
                    self.resume_target_mps = self.state.target_speed_mps;
                    self.state.mode = ControllerMode::Stopping;
                    self.state.target_speed_mps = 0.0;
                }
                self.last_obstacle_stamp_s = detection.stamp_s;
                self.state.last_detection_stamp_s = detection.stamp_s;
            }
        }
    }

    /// Emit the drive command for the current control period.
    ///
    /// Releases a stop once obstacle detections have been absent for the
    /// hold interval, then applies the control law to the current target.
    pub fn tick(&mut self, vehicle_speed_mps: f64, now_s: f64) -> DriveCommand {
        if self.state.mode == ControllerMode::Stopping
            && now_s - self.last_obstacle_stamp_s >= self.obstacle_hold_s
        {
            self.state.mode = ControllerMode::Adapt;
            self.state.target_speed_mps = self.resume_target_mps;
        }
        let accel = control_accel(vehicle_speed_mps, self.state.target_speed_mps)
            .expect("plant speeds and mapped targets are finite and non-negative");
        DriveCommand {
            target_speed_mps: self.state.target_speed_mps,
            accel_mps2: accel,
            steering_rad: 0.0,
            stamp_s: now_s,
        }
    }
}
