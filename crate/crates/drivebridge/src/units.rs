//! Speed unit conversions.
//!
//! Sign faces and human-facing output use km/h; every internal state,
//! command, and control computation uses m/s.

/// Exact factor between km/h and m/s (3600 s/h over 1000 m/km).
pub const KMH_PER_MPS: f64 = 3.6;

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / KMH_PER_MPS
}

pub fn mps_to_kmh(mps: f64) -> f64 {
    mps * KMH_PER_MPS
}
