//! One-dimensional kinematic vehicle plant.
//!
//! The ego vehicle lives on a straight track: state is position along the
//! track, forward speed, the acceleration applied on the last step, and the
//! simulation clock. Speed never goes negative (no reverse gear) and every
//! commanded acceleration is clamped to the actuator limit before it is
//! applied.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Actuator limit: commanded acceleration is clamped to ±this, m/s².
pub const MAX_ACCEL_MPS2: f64 = 6.0;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("commanded acceleration must be finite, got {0}")]
    NonFiniteAccel(f64),
    #[error("timestep must be positive and finite, got {0}")]
    BadTimestep(f64),
}

/// Kinematic state of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Meters along the track; non-decreasing over a run.
    pub position_m: f64,
    /// Forward speed, m/s; never negative.
    pub speed_mps: f64,
    /// Acceleration applied on the most recent step, m/s².
    pub accel_mps2: f64,
    /// Simulation clock, s.
    pub time_s: f64,
}

impl VehicleState {
    pub fn new(position_m: f64, speed_mps: f64, time_s: f64) -> Self {
        Self {
            position_m,
            speed_mps,
            accel_mps2: 0.0,
            time_s,
        }
    }

    pub fn at_rest() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }
}

/// Wire form of the vehicle state as published on `/vehicle_state`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleStateMsg {
    pub position_m: f64,
    pub speed_mps: f64,
    pub time_s: f64,
}

impl From<VehicleState> for VehicleStateMsg {
    fn from(s: VehicleState) -> Self {
        Self {
            position_m: s.position_m,
            speed_mps: s.speed_mps,
            time_s: s.time_s,
        }
    }
}

/// Longitudinal drive command as published on `/ackermann_cmd`.
///
/// Steering is carried for wire-format completeness and is always zero on
/// this straight track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveCommand {
    pub target_speed_mps: f64,
    pub accel_mps2: f64,
    pub steering_rad: f64,
    /// Time the command was computed, s.
    pub stamp_s: f64,
}

/// Clamp a commanded acceleration to the actuator limit.
pub fn clamp_accel(accel_mps2: f64) -> Result<f64, PlantError> {
    if !accel_mps2.is_finite() {
        return Err(PlantError::NonFiniteAccel(accel_mps2));
    }
    Ok(accel_mps2.clamp(-MAX_ACCEL_MPS2, MAX_ACCEL_MPS2))
}

/// Advance the vehicle one timestep under `cmd`.
///
/// The commanded acceleration is clamped to the actuator limit, speed is
/// floored at zero, and position integrates the average of old and new speed
/// (exact for piecewise-constant acceleration).
pub fn step(state: &VehicleState, cmd: &DriveCommand, dt_s: f64) -> Result<VehicleState, PlantError> {
    if !dt_s.is_finite() || dt_s <= 0.0 {
        return Err(PlantError::BadTimestep(dt_s));
    }
    let accel = clamp_accel(cmd.accel_mps2)?;
    let speed = (state.speed_mps + accel * dt_s).max(0.0);
    let position = state.position_m + 0.5 * (state.speed_mps + speed) * dt_s;
    Ok(VehicleState {
        position_m: position,
        speed_mps: speed,
        accel_mps2: accel,
        time_s: state.time_s + dt_s,
    })
}
