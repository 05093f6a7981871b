//! Closed-loop simulation: quintic references, the constrained plant and the
//! scenario runner.
mod plant;
mod quintic;
mod runner;
mod scenario;
mod stats;

pub use plant::{Actuation, Fidelity, Plant, PlantConfig, PlantInput, PlantState, StepInfo};
pub use quintic::QuinticSegment;
pub use runner::{run_scenario, PhaseSummary, RunOptions, RunSummary, Sample, ScenarioResult};
pub use scenario::{
    load_scenario, parse_scenario, ControllerSettings, InitialConfiguration, Phase, PhaseKind, Scenario, SimulationSettings,
};
pub use stats::{fit_double_pole, ErrorStats};
