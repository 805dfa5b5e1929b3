//! Simulation harness: configuration, closed-loop runs, scenarios, traces.

pub mod config;
pub mod scenario;
pub mod sim;
pub mod spectral;
pub mod trace;

pub use config::{Config, ConfigError};
pub use scenario::{run_scenario, Metric, Overrides, ScenarioKind, ScenarioOutput};
pub use trace::{Manifest, SimTrace};
