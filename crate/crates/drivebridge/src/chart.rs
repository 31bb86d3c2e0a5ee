//! Speed-profile charts rendered as self-contained SVG.
//!
//! [`speed_profile_svg`] draws the vehicle speed over time from a trace,
//! overlays the controller's target speed as a dashed step line, and marks
//! each detection along the bottom edge with a tooltip. The output is a
//! plain string with no external references, deterministic for a given
//! trace.

use std::fmt::Write;

use thiserror::Error;

use crate::trace::TraceRecord;
use crate::units::mps_to_kmh;

pub const CHART_WIDTH: f64 = 960.0;
pub const CHART_HEIGHT: f64 = 480.0;

const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 45.0;

const SPEED_COLOR: &str = "#1f77b4";
const TARGET_COLOR: &str = "#ff7f0e";
const AXIS_COLOR: &str = "#333333";
const GRID_COLOR: &str = "#dddddd";

#[derive(Debug, Error, PartialEq)]
pub enum ChartError {
    #[error("trace has no vehicle samples to plot")]
    EmptyTrace,
}

/// Maps (time, speed) data coordinates onto the pixel box.
struct Frame {
    t_max: f64,
    v_max: f64,
}

impl Frame {
    fn x(&self, t: f64) -> f64 {
        MARGIN_LEFT + (t / self.t_max) * (CHART_WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let plot_height = CHART_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        CHART_HEIGHT - MARGIN_BOTTOM - (v / self.v_max) * plot_height
    }
}

/// Pick a 1/2/5-series step that divides `range` into a handful of ticks.
fn nice_step(range: f64, target_count: f64) -> f64 {
    let raw = range / target_count;
    let magnitude = 10f64.powf(raw.log10().floor());
    let normalized = raw / magnitude;
    let factor = if normalized <= 1.0 {
        1.0
    } else if normalized <= 2.0 {
        2.0
    } else if normalized <= 5.0 {
        5.0
    } else {
        10.0
    };
    factor * magnitude
}

/// Short decimal label, free of float noise.
fn label(value: f64) -> String {
    format!("{}", (value * 1e6).round() / 1e6)
}

fn marker_color(class_name: &str) -> &'static str {
    match class_name {
        "speed_limit_30" => "#2ca02c",
        "speed_limit_90" => "#9467bd",
        "obstacle" => "#d62728",
        _ => "#7f7f7f",
    }
}

/// Render the speed profile of a trace as an SVG document.
pub fn speed_profile_svg(records: &[TraceRecord]) -> Result<String, ChartError> {
    let samples: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|record| match record {
            TraceRecord::VehicleSample {
                time_s, speed_mps, ..
            } => Some((*time_s, mps_to_kmh(*speed_mps))),
            _ => None,
        })
        .collect();
    if samples.is_empty() {
        return Err(ChartError::EmptyTrace);
    }

    let targets: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|record| match record {
            TraceRecord::CommandEvent {
                time_s,
                target_speed_mps,
                ..
            } => Some((*time_s, mps_to_kmh(*target_speed_mps))),
            _ => None,
        })
        .collect();

    let t_max = samples.last().expect("non-empty").0.max(1e-9);
    let v_peak = samples
        .iter()
        .map(|(_, v)| *v)
        .chain(targets.iter().map(|(_, v)| *v))
        .fold(0.0_f64, f64::max);
    let frame = Frame {
        t_max,
        v_max: (v_peak * 1.1).max(10.0),
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {CHART_WIDTH} {CHART_HEIGHT}\" \
         width=\"{CHART_WIDTH}\" height=\"{CHART_HEIGHT}\" font-family=\"sans-serif\">"
    );
    let _ = writeln!(
        svg,
        "  <rect x=\"0\" y=\"0\" width=\"{CHART_WIDTH}\" height=\"{CHART_HEIGHT}\" fill=\"white\"/>"
    );

    // Grid and tick labels.
    let x_step = nice_step(frame.t_max, 8.0);
    let y_step = nice_step(frame.v_max, 6.0);
    let mut tick = 0.0;
    while tick <= frame.t_max + 1e-9 {
        let x = frame.x(tick);
        let _ = writeln!(
            svg,
            "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{GRID_COLOR}\"/>",
            x,
            MARGIN_TOP,
            x,
            CHART_HEIGHT - MARGIN_BOTTOM
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"{AXIS_COLOR}\" \
             text-anchor=\"middle\">{}</text>",
            x,
            CHART_HEIGHT - MARGIN_BOTTOM + 16.0,
            label(tick)
        );
        tick += x_step;
    }
    let mut tick = 0.0;
    while tick <= frame.v_max + 1e-9 {
        let y = frame.y(tick);
        let _ = writeln!(
            svg,
            "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{GRID_COLOR}\"/>",
            MARGIN_LEFT,
            y,
            CHART_WIDTH - MARGIN_RIGHT,
            y
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"{AXIS_COLOR}\" \
             text-anchor=\"end\">{}</text>",
            MARGIN_LEFT - 6.0,
            y + 4.0,
            label(tick)
        );
        tick += y_step;
    }

    // Axes.
    let _ = writeln!(
        svg,
        "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{AXIS_COLOR}\" stroke-width=\"1.5\"/>",
        MARGIN_LEFT,
        MARGIN_TOP,
        MARGIN_LEFT,
        CHART_HEIGHT - MARGIN_BOTTOM
    );
    let _ = writeln!(
        svg,
        "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{AXIS_COLOR}\" stroke-width=\"1.5\"/>",
        MARGIN_LEFT,
        CHART_HEIGHT - MARGIN_BOTTOM,
        CHART_WIDTH - MARGIN_RIGHT,
        CHART_HEIGHT - MARGIN_BOTTOM
    );
    let _ = writeln!(
        svg,
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" fill=\"{AXIS_COLOR}\" text-anchor=\"middle\">time (s)</text>",
        MARGIN_LEFT + (CHART_WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / 2.0,
        CHART_HEIGHT - 8.0
    );
    let _ = writeln!(
        svg,
        "  <text x=\"14\" y=\"{:.2}\" font-size=\"13\" fill=\"{AXIS_COLOR}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 14 {:.2})\">speed (km/h)</text>",
        MARGIN_TOP + (CHART_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM) / 2.0,
        MARGIN_TOP + (CHART_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM) / 2.0
    );

    // Target step overlay (dashed), annotated with the distinct levels.
    if !targets.is_empty() {
        let mut levels: Vec<f64> = Vec::new();
        let mut points: Vec<(f64, f64)> = Vec::new();
        for &(t, v) in &targets {
            match levels.last() {
                None => {
                    levels.push(v);
                    points.push((t, v));
                }
                Some(&last) if (v - last).abs() > 1e-9 => {
                    points.push((t, last));
                    points.push((t, v));
                    levels.push(v);
                }
                Some(_) => {}
            }
        }
        points.push((frame.t_max, *levels.last().expect("non-empty targets")));
        let level_list = levels
            .iter()
            .map(|v| label(*v))
            .collect::<Vec<_>>()
            .join(",");
        let point_list = points
            .iter()
            .map(|(t, v)| format!("{:.2},{:.2}", frame.x(*t), frame.y(*v)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            svg,
            "  <polyline fill=\"none\" stroke=\"{TARGET_COLOR}\" stroke-width=\"2\" \
             stroke-dasharray=\"7 5\" data-target-levels=\"{level_list}\" points=\"{point_list}\"/>"
        );
    }

    // The speed curve itself.
    if samples.len() == 1 {
        let (t, v) = samples[0];
        let _ = writeln!(
            svg,
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{SPEED_COLOR}\"/>",
            frame.x(t),
            frame.y(v)
        );
    } else {
        let point_list = samples
            .iter()
            .map(|(t, v)| format!("{:.2},{:.2}", frame.x(*t), frame.y(*v)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            svg,
            "  <polyline fill=\"none\" stroke=\"{SPEED_COLOR}\" stroke-width=\"2\" points=\"{point_list}\"/>"
        );
    }

    // Detection markers along the bottom edge, one tooltip each.
    for record in records {
        if let TraceRecord::DetectionEvent {
            time_s,
            class_name,
            confidence,
            ..
        } = record
        {
            let _ = writeln!(
                svg,
                "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.7\">\
                 <title>t={:.1}s {} conf={:.2}</title></circle>",
                frame.x(*time_s),
                CHART_HEIGHT - MARGIN_BOTTOM - 8.0,
                marker_color(class_name),
                time_s,
                class_name,
                confidence
            );
        }
    }

    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}
