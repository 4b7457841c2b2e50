//! Machine-readable run reports.

use super::manufactured::ConvergenceTable;
use crate::microphysics::{AtmosphereDiagnostics, DivergenceFallback, WaterBudget};
use crate::oracle::OracleReport;
use crate::quasilinear::CoupledSolution;
use serde::Serialize;

/// Verdict of one invariant check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    /// The measured quantity.
    pub value: f64,
    /// The bound it is compared against.
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass: value <= threshold,
            value,
            threshold,
            detail: detail.into(),
        }
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass: value >= threshold,
            value,
            threshold,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtmosphereSummary {
    pub diagnostics: AtmosphereDiagnostics,
    pub water_budget: WaterBudget,
    pub divergence_fallback: DivergenceFallback,
}

/// Wall-clock seconds per phase. Kept out of `report.json` so that reports
/// of identical runs are byte-identical.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timings {
    pub build: f64,
    pub solve: f64,
    pub checks: f64,
    pub write: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    pub kind: String,
    pub horizon: f64,
    /// Certificates and iteration traces per slab.
    pub slabs: Vec<CoupledSolution>,
    pub checks: Vec<CheckResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atmosphere: Option<AtmosphereSummary>,
    pub all_pass: bool,
    #[serde(skip)]
    pub timings: Timings,
}

impl RunReport {
    pub fn failed(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_pass {
            0
        } else {
            1
        }
    }
}
