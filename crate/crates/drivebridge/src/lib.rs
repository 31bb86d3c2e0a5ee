//! Deterministic desk-scale simulator of a camera-to-actuator driving
//! pipeline.
//!
//! An in-process publish/subscribe [`bus`] connects a simulated sign and
//! obstacle detector ([`perception`], with weather-driven degradation and
//! injectable data drift), an adaptive longitudinal speed controller
//! ([`controller`]), and a one-dimensional vehicle plant ([`plant`]).
//! The [`scenario`] runner drives all of them on a fixed 10 Hz tick and
//! records a replayable [`trace`]; [`metrics`] scores detection quality,
//! command latency, and speed-profile settling from those traces, and
//! [`chart`] renders the speed profile as a standalone SVG.
//!
//! Every run is a pure function of the scenario and its seed: equal seeds
//! give byte-identical traces.

pub mod bus;
pub mod chart;
pub mod cli;
pub mod controller;
pub mod metrics;
pub mod perception;
pub mod plant;
pub mod scenario;
pub mod trace;
pub mod units;
