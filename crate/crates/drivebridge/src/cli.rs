//! Command-line interface: run scenarios, score traces, render charts.
//!
//! Exit codes: 0 on success, 2 for input problems (bad arguments, unreadable
//! or malformed files, invalid scenarios), 3 for internal invariant
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::chart;
use crate::metrics::{self, TraceEvaluation};
use crate::scenario::{self, ScenarioSpec};
use crate::trace::{self, TraceRecord};
use crate::units::{kmh_to_mps, mps_to_kmh};

#[derive(Parser)]
#[command(
    name = "drivebridge",
    version,
    about = "Deterministic desk-scale simulator of a perception/decision/control driving pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace, summary, and optional chart.
    Run(RunArgs),
    /// Score a recorded trace against its scenario's ground truth.
    Metrics(MetricsArgs),
    /// Render the speed-profile SVG for a recorded trace.
    Plot(PlotArgs),
    /// List the built-in scenarios.
    ListBuiltins,
}

/// Where the scenario comes from: a file or a built-in, never both.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct ScenarioSource {
    /// Path to a scenario file.
    #[arg(long, value_name = "PATH")]
    scenario: Option<PathBuf>,
    /// Name of a built-in scenario (see list-builtins).
    #[arg(long, value_name = "NAME")]
    builtin: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TraceFormat {
    Csv,
    Jsonl,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Directory for run outputs.
    #[arg(long, value_name = "DIR", env = "DRIVEBRIDGE_OUT", default_value = "out")]
    output_dir: PathBuf,
    /// Trace file format.
    #[arg(long, value_enum, default_value = "csv")]
    trace_format: TraceFormat,
    /// Also render the speed-profile SVG.
    #[arg(long)]
    emit_plot: bool,
    /// Replace the scenario's seed for this run.
    #[arg(long, value_name = "SEED")]
    seed_override: Option<u64>,
}

#[derive(Args)]
struct MetricsArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// Path to a recorded trace (.csv or .jsonl).
    #[arg(long, value_name = "PATH")]
    trace: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Path to a recorded trace (.csv or .jsonl).
    #[arg(long, value_name = "PATH")]
    trace: PathBuf,
    /// Output SVG path (defaults to the trace path with an .svg extension).
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

enum CliError {
    /// The user gave us something we cannot work with: exit 2.
    Input(String),
    /// The pipeline itself broke an invariant: exit 3.
    Internal(String),
}

fn input_error(message: impl Into<String>) -> CliError {
    CliError::Input(message.into())
}

/// Print one line to stdout, exiting quietly if the reader has gone away —
/// piping into `head` must not crash the process.
fn emit(line: impl std::fmt::Display) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if writeln!(out, "{line}").is_err() {
        std::process::exit(0);
    }
}

/// Parse arguments and dispatch; the binary's whole behavior.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(message)) => {
            eprintln!("internal error: {message}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Plot(args) => cmd_plot(args),
        Command::ListBuiltins => {
            for (name, description) in scenario::builtin_names() {
                emit(format_args!("{name:<16} {description}"));
            }
            Ok(())
        }
    }
}

fn load_source(source: &ScenarioSource) -> Result<ScenarioSpec, CliError> {
    if let Some(path) = &source.scenario {
        let text = std::fs::read_to_string(path)
            .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
        return scenario::load_scenario(&text)
            .map_err(|e| input_error(format!("{}: {e}", path.display())));
    }
    let name = source
        .builtin
        .as_deref()
        .expect("clap group guarantees one source");
    scenario::builtin(name).ok_or_else(|| {
        let names: Vec<&str> = scenario::builtin_names().iter().map(|(n, _)| *n).collect();
        input_error(format!(
            "unknown builtin {name:?} (available: {})",
            names.join(", ")
        ))
    })
}

fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => trace::from_csv(&text),
        Some("jsonl") => trace::from_jsonl(&text),
        _ => {
            return Err(input_error(format!(
                "{}: unsupported trace extension (expected .csv or .jsonl)",
                path.display()
            )))
        }
    };
    parsed.map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| input_error(format!("cannot write {}: {e}", path.display())))
}

/// Settling behavior of one constant-target stretch of the run.
#[derive(Serialize)]
struct PhaseBlock {
    start_s: f64,
    target_kmh: f64,
    /// Absolute trace time of the last entry into the ±1 km/h band.
    settled_at_s: Option<f64>,
    /// The same instant measured from the target change.
    settle_after_s: Option<f64>,
    overshoot_kmh: f64,
}

/// Slice the run at command-target changes and score each stretch against
/// its own target with a ±1 km/h settling band.
fn phase_blocks(records: &[TraceRecord]) -> Vec<PhaseBlock> {
    let mut changes: Vec<(f64, f64)> = Vec::new();
    for record in records {
        if let TraceRecord::CommandEvent {
            time_s,
            target_speed_mps,
            ..
        } = record
        {
            match changes.last() {
                Some(&(_, last)) if (last - target_speed_mps).abs() <= 1e-9 => {}
                _ => changes.push((*time_s, *target_speed_mps)),
            }
        }
    }
    let end_s = records
        .iter()
        .rev()
        .find_map(|record| match record {
            TraceRecord::VehicleSample { time_s, .. } => Some(*time_s),
            _ => None,
        })
        .unwrap_or(0.0);

    changes
        .iter()
        .enumerate()
        .map(|(index, &(start_s, target_mps))| {
            let stop_s = changes.get(index + 1).map(|&(t, _)| t).unwrap_or(end_s);
            let slice: Vec<TraceRecord> = records
                .iter()
                .filter(|record| {
                    matches!(record, TraceRecord::VehicleSample { .. })
                        && record.time_s() >= start_s - 1e-9
                        && record.time_s() <= stop_s + 1e-9
                })
                .cloned()
                .collect();
            let stats = metrics::speed_profile_stats(&slice, target_mps, kmh_to_mps(1.0)).ok();
            PhaseBlock {
                start_s,
                target_kmh: mps_to_kmh(target_mps),
                settled_at_s: stats.as_ref().and_then(|s| s.settled_at_s),
                settle_after_s: stats
                    .as_ref()
                    .and_then(|s| s.settled_at_s)
                    .map(|t| t - start_s),
                overshoot_kmh: stats.map(|s| mps_to_kmh(s.overshoot_mps)).unwrap_or(0.0),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct RunSummary {
    scenario: String,
    seed: u64,
    duration_s: f64,
    tick_hz: f64,
    ticks: u64,
    final_speed_kmh: f64,
    final_position_m: f64,
    max_abs_accel_mps2: f64,
    phases: Vec<PhaseBlock>,
    evaluation: TraceEvaluation,
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Internal(format!("serializing report: {e}")))
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let mut spec = load_source(&args.source)?;
    if let Some(seed) = args.seed_override {
        spec.seed = seed;
    }
    let records = scenario::run(&spec)
        .map_err(|e| input_error(format!("scenario {:?}: {e}", spec.name)))?;

    std::fs::create_dir_all(&args.output_dir).map_err(|e| {
        input_error(format!("cannot create {}: {e}", args.output_dir.display()))
    })?;

    let trace_path = match args.trace_format {
        TraceFormat::Csv => {
            let path = args.output_dir.join("trace.csv");
            write_file(&path, &trace::to_csv(&records))?;
            path
        }
        TraceFormat::Jsonl => {
            let path = args.output_dir.join("trace.jsonl");
            write_file(&path, &trace::to_jsonl(&records))?;
            path
        }
    };
    emit(format_args!("wrote {}", trace_path.display()));

    let evaluation = metrics::evaluate_trace(&records, &spec)
        .map_err(|e| CliError::Internal(format!("evaluating a fresh run: {e}")))?;
    let (final_speed, final_position, max_accel) = records
        .iter()
        .filter_map(|record| match record {
            TraceRecord::VehicleSample {
                speed_mps,
                position_m,
                accel_mps2,
                ..
            } => Some((*speed_mps, *position_m, accel_mps2.abs())),
            _ => None,
        })
        .fold((0.0, 0.0, 0.0_f64), |(_, _, peak), (v, x, a)| {
            (v, x, peak.max(a))
        });
    let summary = RunSummary {
        scenario: spec.name.clone(),
        seed: spec.seed,
        duration_s: spec.duration_s,
        tick_hz: spec.tick_hz,
        ticks: spec.tick_count(),
        final_speed_kmh: mps_to_kmh(final_speed),
        final_position_m: final_position,
        max_abs_accel_mps2: max_accel,
        phases: phase_blocks(&records),
        evaluation,
    };
    let summary_path = args.output_dir.join("summary.json");
    write_file(&summary_path, &to_pretty_json(&summary)?)?;
    emit(format_args!("wrote {}", summary_path.display()));

    if args.emit_plot {
        let svg = chart::speed_profile_svg(&records)
            .map_err(|e| CliError::Internal(format!("plotting a fresh run: {e}")))?;
        let plot_path = args.output_dir.join("speed_profile.svg");
        write_file(&plot_path, &svg)?;
        emit(format_args!("wrote {}", plot_path.display()));
    }

    emit(format_args!(
        "scenario {} seed {}: {} ticks, final speed {:.2} km/h at {:.1} m, max |accel| {:.2} m/s^2",
        summary.scenario,
        summary.seed,
        summary.ticks,
        summary.final_speed_kmh,
        summary.final_position_m,
        summary.max_abs_accel_mps2
    ));
    Ok(())
}

#[derive(Serialize)]
struct MetricsOutput {
    #[serde(flatten)]
    evaluation: TraceEvaluation,
    phases: Vec<PhaseBlock>,
}

fn cmd_metrics(args: MetricsArgs) -> Result<(), CliError> {
    let spec = load_source(&args.source)?;
    let records = read_trace(&args.trace)?;
    let evaluation = metrics::evaluate_trace(&records, &spec)
        .map_err(|e| input_error(format!("{}: {e}", args.trace.display())))?;
    let output = MetricsOutput {
        evaluation,
        phases: phase_blocks(&records),
    };
    emit(to_pretty_json(&output)?);
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<(), CliError> {
    let records = read_trace(&args.trace)?;
    let svg = chart::speed_profile_svg(&records)
        .map_err(|e| input_error(format!("{}: {e}", args.trace.display())))?;
    let output = args
        .output
        .unwrap_or_else(|| args.trace.with_extension("svg"));
    write_file(&output, &svg)?;
    emit(format_args!("wrote {}", output.display()));
    Ok(())
}
