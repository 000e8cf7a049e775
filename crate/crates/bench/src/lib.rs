//! Experiment harness for HyGEC: scenario files, a parallel trial runner,
//! result export, instance files and the oracle parity suite.

pub mod error;
pub mod export;
pub mod instance_io;
pub mod parity;
pub mod runner;
pub mod scenario;

pub use error::{BenchError, Result};
pub use runner::{run_scenario, summarize, Outcome, ResultTable, Summary, Trial};
pub use scenario::{Algorithm, Scenario, ScenarioKind, Seeds};
