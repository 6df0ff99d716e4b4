//! Headless operation: scripted scenarios on a virtual clock, offline
//! trace auditing and display reconstruction.

pub mod check;
pub mod emit;
pub mod scenario;
pub mod sim;

pub use check::{check_trace, CheckReport, CheckResult};
pub use emit::{emit_display, EmitError, Viewer};
pub use scenario::{Action, ChannelSource, RosterEntry, Scenario, ScenarioError, TimedAction};
pub use sim::{run_scenario, SimOptions, SimOutcome, SimReport};
