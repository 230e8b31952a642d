//! Monte-Carlo benchmark harness: seeded simulation of a scenario, every
//! selected estimator run on the same data, and CSV/JSON plot data.

pub mod config;
pub mod error;
pub mod report;
pub mod simulate;

pub use config::{Method, Scenario, ScenarioConfig};
pub use error::{BenchError, Result};
pub use report::{run_benchmark, run_scenario, BenchOutputs, Overrides, Summary};
pub use simulate::{empirical_mse, mse_statistics, simulate_paths, BenchmarkDataset};
