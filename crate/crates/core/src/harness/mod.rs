//! Scenario runner and metrics pipeline.

pub mod artifacts;
pub mod lockstep;
pub mod metrics;
pub mod report;
pub mod scenario;

pub use artifacts::{RunArtifacts, TelemetryRow, DelayRow};
pub use lockstep::run_lockstep;
pub use metrics::{compute_rms, RmsReport};
pub use report::Report;
pub use scenario::ScenarioConfig;
