//! Packet-level discrete-event simulator of a UAV camera feed relayed
//! through a cellular base station to a group of vehicles.
//!
//! A run wires an uplink (UAV to BS) and one downlink bearer per vehicle
//! onto a shared dynamic-TDD slot grid, then measures per-user throughput,
//! per-hop latency and reliability. Four dissemination strategies are
//! modelled; see [`scenario::ScenarioKind`].

// `!(x > 0.0)` is how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod buffers;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod radio;
pub mod runner;
pub mod scenario;
pub mod topology;
pub mod traffic;

pub use error::{Result, SimError};
pub use metrics::MetricRecord;
pub use runner::{figure_recipe, run_sweep, RunConfig, SweepResult};
pub use scenario::{build_scenario, CellSpec, ScenarioKind};
