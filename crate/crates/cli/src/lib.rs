//! Scenario harness for the logarithmic rehearsal scheduler: config parsing,
//! runs over the scheduler and its baselines, and artifact rendering.

pub mod render;
pub mod runner;
pub mod scenario;

pub use runner::{run, RunOutput, SystemRun};
pub use scenario::{Scenario, ScenarioError, SystemKind};
