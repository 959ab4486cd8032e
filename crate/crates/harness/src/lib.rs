//! Scenario files, experiment orchestration, metrics, plots and the
//! `safempd` command line.

pub mod error;
pub mod generate;
pub mod plot;
pub mod scenario_file;
pub mod suite;
pub mod trace;
pub mod trial;

pub use error::{HarnessError, Result};
pub use scenario_file::{load_scenario, LoadedScenario, ScenarioFile};
pub use suite::{export_results, run_suite, ExportFormat, MetricsTable};
pub use trial::{run_trial, ExperimentConfig, TrialResult};
