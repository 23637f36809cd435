//! Scenario construction, the federated round orchestrator, log formats,
//! analysis (Pareto fronts, run comparison, ablations) and SVG export for
//! `fedmo-core`.

pub mod ablate;
pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod export;
pub mod records;
pub mod runner;
pub mod scenario;
pub mod svg;

pub use config::{ScenarioConfig, ScenarioKind};
pub use error::{LabError, Result};
pub use runner::{run_scenario, RunOutput};
pub use scenario::Scenario;
