//! Config-driven runs: loading scenario files, building systems, solving,
//! checking invariants and writing outputs, plus the randomized `verify`
//! suites.

pub mod build;
pub mod config;
pub mod manufactured;
pub mod report;
pub mod run;
pub mod verify;

pub use build::{build, BuiltScenario};
pub use config::{emit, load_scenario, parse_scenario, Scenario, ScenarioConfig};
pub use report::{CheckResult, RunReport, Timings};
pub use run::{oracle_compare, run, trace, write_outputs, OracleCompare, RunOutcome, TraceReport};
pub use verify::{verify, PropertyResult, Suite, VerifyReport};

use crate::oracle::OracleError;
use crate::quasilinear::QuasiError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("io error: {0}")]
    Io(String),
    #[error("cannot build system: {0}")]
    Build(String),
    #[error("solver failed: {0}")]
    Solver(#[from] QuasiError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}
