//! Replayable run traces.
//!
//! A trace is the flat, time-ordered list of everything observable that
//! happened during a run: vehicle samples each tick, detection and command
//! events as they crossed the bus, and weather changes. Traces serialize to
//! CSV (fixed nine-slot header, kind-specific columns, empty padding) and
//! to JSON lines; both round-trip losslessly, and writing is deterministic
//! so equal runs give byte-identical files.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::{Bbox, Detection, WeatherCondition, WeatherState};
use crate::plant::DriveCommand;

/// Fixed CSV header: two fixed columns and nine kind-specific slots.
pub const CSV_HEADER: &str =
    "time,kind,field1,field2,field3,field4,field5,field6,field7,field8,field9";
const CSV_SLOTS: usize = 9;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// One observable event in a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    /// Vehicle state at the end of a tick.
    VehicleSample {
        time_s: f64,
        position_m: f64,
        speed_mps: f64,
        accel_mps2: f64,
    },
    /// A detection delivered on `/detections`.
    DetectionEvent {
        time_s: f64,
        seq: u64,
        class_id: u32,
        class_name: String,
        confidence: f64,
        cx: f64,
        cy: f64,
        w: f64,
        h: f64,
        truth_id: Option<usize>,
    },
    /// A drive command delivered on `/ackermann_cmd`.
    CommandEvent {
        time_s: f64,
        seq: u64,
        target_speed_mps: f64,
        accel_mps2: f64,
        steering_rad: f64,
    },
    /// A weather change delivered on `/weather_control`.
    WeatherEvent {
        time_s: f64,
        condition: WeatherCondition,
        visibility_m: f64,
        sun_altitude_deg: f64,
    },
}

impl TraceRecord {
    pub fn time_s(&self) -> f64 {
        match self {
            TraceRecord::VehicleSample { time_s, .. }
            | TraceRecord::DetectionEvent { time_s, .. }
            | TraceRecord::CommandEvent { time_s, .. }
            | TraceRecord::WeatherEvent { time_s, .. } => *time_s,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TraceRecord::VehicleSample { .. } => "vehicle_sample",
            TraceRecord::DetectionEvent { .. } => "detection_event",
            TraceRecord::CommandEvent { .. } => "command_event",
            TraceRecord::WeatherEvent { .. } => "weather_event",
        }
    }

    pub fn detection(seq: u64, d: &Detection, time_s: f64) -> Self {
        TraceRecord::DetectionEvent {
            time_s,
            seq,
            class_id: d.class_id,
            class_name: d.class_name.clone(),
            confidence: d.confidence,
            cx: d.bbox.cx,
            cy: d.bbox.cy,
            w: d.bbox.w,
            h: d.bbox.h,
            truth_id: d.truth_id,
        }
    }

    pub fn command(seq: u64, c: &DriveCommand, time_s: f64) -> Self {
        TraceRecord::CommandEvent {
            time_s,
            seq,
            target_speed_mps: c.target_speed_mps,
            accel_mps2: c.accel_mps2,
            steering_rad: c.steering_rad,
        }
    }

    pub fn weather(w: &WeatherState, time_s: f64) -> Self {
        TraceRecord::WeatherEvent {
            time_s,
            condition: w.condition,
            visibility_m: w.visibility_m,
            sun_altitude_deg: w.sun_altitude_deg,
        }
    }

    /// Rebuild the detection this record describes (for offline scoring).
    pub fn as_detection(&self) -> Option<Detection> {
        match self {
            TraceRecord::DetectionEvent {
                time_s,
                class_id,
                class_name,
                confidence,
                cx,
                cy,
                w,
                h,
                truth_id,
                ..
            } => Some(Detection {
                class_id: *class_id,
                class_name: class_name.clone(),
                confidence: *confidence,
                bbox: Bbox {
                    cx: *cx,
                    cy: *cy,
                    w: *w,
                    h: *h,
                },
                stamp_s: *time_s,
                truth_id: *truth_id,
            }),
            _ => None,
        }
    }
}

/// Shortest round-trip decimal form of a float (what `Display` gives).
fn fmt_f64(value: f64) -> String {
    format!("{value}")
}

fn csv_row(time_s: f64, kind: &str, fields: &[String]) -> String {
    let mut row = format!("{},{}", fmt_f64(time_s), kind);
    for field in fields {
        row.push(',');
        row.push_str(field);
    }
    for _ in fields.len()..CSV_SLOTS {
        row.push(',');
    }
    row
}

/// Serialize a trace to CSV. Deterministic: equal traces give equal bytes.
pub fn to_csv(records: &[TraceRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for record in records {
        let row = match record {
            TraceRecord::VehicleSample {
                time_s,
                position_m,
                speed_mps,
                accel_mps2,
            } => csv_row(
                *time_s,
                record.kind(),
                &[fmt_f64(*position_m), fmt_f64(*speed_mps), fmt_f64(*accel_mps2)],
            ),
            TraceRecord::DetectionEvent {
                time_s,
                seq,
                class_id,
                class_name,
                confidence,
                cx,
                cy,
                w,
                h,
                truth_id,
            } => csv_row(
                *time_s,
                record.kind(),
                &[
                    seq.to_string(),
                    class_id.to_string(),
                    class_name.clone(),
                    fmt_f64(*confidence),
                    fmt_f64(*cx),
                    fmt_f64(*cy),
                    fmt_f64(*w),
                    fmt_f64(*h),
                    truth_id.map(|t| t.to_string()).unwrap_or_default(),
                ],
            ),
            TraceRecord::CommandEvent {
                time_s,
                seq,
                target_speed_mps,
                accel_mps2,
                steering_rad,
            } => csv_row(
                *time_s,
                record.kind(),
                &[
                    seq.to_string(),
                    fmt_f64(*target_speed_mps),
                    fmt_f64(*accel_mps2),
                    fmt_f64(*steering_rad),
                ],
            ),
            TraceRecord::WeatherEvent {
                time_s,
                condition,
                visibility_m,
                sun_altitude_deg,
            } => csv_row(
                *time_s,
                record.kind(),
                &[
                    condition.name().to_string(),
                    fmt_f64(*visibility_m),
                    fmt_f64(*sun_altitude_deg),
                ],
            ),
        };
        out.push_str(&row);
        out.push('\n');
    }
    out
}

fn parse_field<T: std::str::FromStr>(
    fields: &[&str],
    index: usize,
    name: &str,
    line: usize,
) -> Result<T, TraceError> {
    let raw = fields.get(index).copied().unwrap_or("");
    raw.parse().map_err(|_| TraceError::Malformed {
        line,
        message: format!("bad {name}: {raw:?}"),
    })
}

/// Parse a CSV trace produced by [`to_csv`].
pub fn from_csv(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(TraceError::Malformed {
                line: 1,
                message: format!("unexpected header {header:?}"),
            })
        }
        None => {
            return Err(TraceError::Malformed {
                line: 1,
                message: "empty input".into(),
            })
        }
    }
    let mut records = Vec::new();
    for (index, raw) in lines {
        let line = index + 1;
        if raw.is_empty() {
            continue;
        }
        let columns: Vec<&str> = raw.split(',').collect();
        if columns.len() != CSV_SLOTS + 2 {
            return Err(TraceError::Malformed {
                line,
                message: format!("expected {} columns, got {}", CSV_SLOTS + 2, columns.len()),
            });
        }
        let time_s: f64 = parse_field(&columns, 0, "time", line)?;
        let kind = columns[1];
        let fields = &columns[2..];
        let record = match kind {
            "vehicle_sample" => TraceRecord::VehicleSample {
                time_s,
                position_m: parse_field(fields, 0, "position_m", line)?,
                speed_mps: parse_field(fields, 1, "speed_mps", line)?,
                accel_mps2: parse_field(fields, 2, "accel_mps2", line)?,
            },
            "detection_event" => TraceRecord::DetectionEvent {
                time_s,
                seq: parse_field(fields, 0, "seq", line)?,
                class_id: parse_field(fields, 1, "class_id", line)?,
                class_name: fields[2].to_string(),
                confidence: parse_field(fields, 3, "confidence", line)?,
                cx: parse_field(fields, 4, "cx", line)?,
                cy: parse_field(fields, 5, "cy", line)?,
                w: parse_field(fields, 6, "w", line)?,
                h: parse_field(fields, 7, "h", line)?,
                truth_id: match fields[8] {
                    "" => None,
                    raw => Some(raw.parse().map_err(|_| TraceError::Malformed {
                        line,
                        message: format!("bad truth_id: {raw:?}"),
                    })?),
                },
            },
            "command_event" => TraceRecord::CommandEvent {
                time_s,
                seq: parse_field(fields, 0, "seq", line)?,
                target_speed_mps: parse_field(fields, 1, "target_speed_mps", line)?,
                accel_mps2: parse_field(fields, 2, "accel_mps2", line)?,
                steering_rad: parse_field(fields, 3, "steering_rad", line)?,
            },
            "weather_event" => TraceRecord::WeatherEvent {
                time_s,
                condition: WeatherCondition::from_name(fields[0]).ok_or_else(|| {
                    TraceError::Malformed {
                        line,
                        message: format!("bad condition: {:?}", fields[0]),
                    }
                })?,
                visibility_m: parse_field(fields, 1, "visibility_m", line)?,
                sun_altitude_deg: parse_field(fields, 2, "sun_altitude_deg", line)?,
            },
            other => {
                return Err(TraceError::Malformed {
                    line,
                    message: format!("unknown kind {other:?}"),
                })
            }
        };
        records.push(record);
    }
    Ok(records)
}

/// Serialize a trace to JSON lines (one record object per line).
pub fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("trace records always serialize"));
        out.push('\n');
    }
    out
}

/// Parse a JSON-lines trace produced by [`to_jsonl`].
pub fn from_jsonl(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        if raw.is_empty() {
            continue;
        }
        let record = serde_json::from_str(raw).map_err(|e| TraceError::Malformed {
            line: index + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
