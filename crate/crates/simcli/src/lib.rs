//! Scenario runner for the morphing quadrotor stack: load a scenario
//! file, build the map, search a path, construct the corridor, optimize
//! the trajectory with morph scheduling, and track it in a closed-loop
//! rigid-body simulation. Also hosts the circle-tracking controller
//! benchmark.

pub mod bench;
pub mod pipeline;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod world;

pub use pipeline::{plan_scenario, PipelineError, PlannedScenario};
pub use report::{write_benchmark_csv, write_report, RunReport, Summary};
pub use scenario::{ControllerKind, Scenario};
pub use sim::simulate_tracking;
