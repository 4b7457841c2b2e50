//! Orchestration: solve, check, write.

use super::build::{build, Built, BuiltScenario};
use super::config::Scenario;
use super::manufactured::convergence_study;
use super::report::{AtmosphereSummary, CheckResult, RunReport, Timings};
use super::ScenarioError;
use crate::characteristics::{trace_backward, Parametric, TraceMode};
use crate::field::{write_columnar_with, Axis, AxisRole, SampledField};
use crate::microphysics::{diagnostics, water_budget};
use crate::oracle::{compare, corrupt, OracleReport, BOUND_SLACK};
use crate::quasilinear::{continued_residuals, solve_continued, CoupledSolution, QuasilinearSystem, SolverSettings};
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;
use std::time::Instant;

/// Geometric tolerance of the entry-membership check.
pub const ENTRY_TOL: f64 = 1e-8;
/// Allowed excess of measured outer ratios over the certified factor.
pub const CONTRACTION_SLACK: f64 = 0.05;
/// Residual allowance in units of the Picard tolerance.
pub const RESIDUAL_FACTOR: f64 = 10.0;
pub const POSITIVITY_TOL: f64 = 1e-8;
pub const SUPPORT_TOL: f64 = 1e-10;
/// Window for error ratios per grid halving in the convergence study.
pub const CONVERGENCE_WINDOW: (f64, f64) = (0.4, 0.65);

pub struct RunOutcome {
    pub report: RunReport,
    pub solutions: Vec<CoupledSolution>,
    pub built: BuiltScenario,
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Builds and solves the scenario and runs every enabled check.
pub fn run(sc: &Scenario) -> Result<RunOutcome, ScenarioError> {
    let mut timings = Timings::default();
    let t = Instant::now();
    let built = build(sc)?;
    timings.build = secs(t);
    let t = Instant::now();
    let sols = solve_continued(&built.system, built.horizon, &built.settings)?;
    timings.solve = secs(t);
    let t = Instant::now();
    let c = &sc.config;
    let mut checks = Vec::new();
    let settings = &built.settings;
    let sys = &built.system;
    let worst_kappa = sols
        .iter()
        .map(|s| s.certificate.contraction_factor)
        .fold(0.0, f64::max);
    checks.push(CheckResult::at_most(
        "certificate",
        worst_kappa,
        settings.safety,
        format!("{} slabs", sols.len()),
    ));
    if c.checks.residual {
        let worst = continued_residuals(sys, &sols, settings)?
            .into_iter()
            .fold(0.0f64, |m, (ry, rw)| m.max(ry).max(rw));
        checks.push(CheckResult::at_most(
            "fixed_point_residual",
            worst,
            RESIDUAL_FACTOR * settings.picard.tol,
            "sup over slabs and unknowns",
        ));
    }
    if c.checks.contraction {
        let (excess, n) = contraction_excess(&sols, settings.picard.tol);
        checks.push(CheckResult::at_most(
            "outer_contraction",
            excess,
            CONTRACTION_SLACK,
            format!("max(ratio - kappa) over {n} ratios after pass 2"),
        ));
    }
    if c.checks.entry_membership {
        if let Some(last) = sols.last() {
            let (rate, n) = entry_membership(sys, last, settings)?;
            checks.push(CheckResult::at_least(
                "entry_membership",
                rate,
                1.0,
                format!("{n} traced characteristics"),
            ));
        }
    }
    let mut oracle = None;
    if c.checks.oracle_levels > 0 {
        match compare(sys, &sols, &settings.grid, c.checks.oracle_levels, c.checks.oracle_cfl) {
            Ok(rep) => {
                checks.push(CheckResult {
                    name: "oracle_equivalence".into(),
                    pass: rep.pass,
                    value: rep.levels.iter().map(|l| l.gap.linf / l.bound).fold(0.0, f64::max),
                    threshold: BOUND_SLACK,
                    detail: format!("ratios {:?}", rep.ratios),
                });
                oracle = Some(rep);
            }
            Err(e) => checks.push(CheckResult {
                name: "oracle_equivalence".into(),
                pass: false,
                value: f64::NAN,
                threshold: BOUND_SLACK,
                detail: e.to_string(),
            }),
        }
    }
    let mut convergence = None;
    let mut atmosphere = None;
    match &built.kind {
        Built::Generic => {}
        Built::Manufactured(case) => {
            let table = convergence_study(case, c.domain.t1, built.horizon, settings)?;
            let ratios = table.ratios();
            let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            checks.push(CheckResult::at_most(
                "convergence_ratio_max",
                hi,
                CONVERGENCE_WINDOW.1,
                format!("{ratios:?}"),
            ));
            checks.push(CheckResult::at_least(
                "convergence_ratio_min",
                lo,
                CONVERGENCE_WINDOW.0,
                format!("{ratios:?}"),
            ));
            convergence = Some(table);
        }
        Built::Atmosphere {
            state,
            params,
            atmosphere: atm,
        } => {
            let diag = diagnostics(params, &sols);
            let budget = water_budget(state, &sols).map_err(|e| ScenarioError::Build(e.to_string()))?;
            let scale = diag.scale.max(f64::MIN_POSITIVE);
            if c.checks.positivity {
                let min = diag.minima.iter().copied().fold(f64::INFINITY, f64::min);
                checks.push(CheckResult::at_least(
                    "positivity",
                    min,
                    -POSITIVITY_TOL * scale,
                    format!("minima rho, pi, sigma, nu = {:?}", diag.minima),
                ));
            }
            if c.checks.support {
                checks.push(CheckResult::at_most(
                    "support_leak",
                    diag.support_leak,
                    SUPPORT_TOL * scale,
                    "max |sigma|, |nu| outside [m_a, M*]",
                ));
            }
            if let Some(tol) = c.checks.water_budget {
                checks.push(CheckResult::at_most(
                    "water_budget",
                    budget.relative_residual.abs(),
                    tol,
                    format!(
                        "initial {}, last {}, inflow {}, outflow {}",
                        budget.initial, budget.last, budget.inflow, budget.outflow
                    ),
                ));
            }
            atmosphere = Some(AtmosphereSummary {
                diagnostics: diag,
                water_budget: budget,
                divergence_fallback: atm.fallback.clone(),
            });
        }
    }
    timings.checks = secs(t);
    let kind = match &built.kind {
        Built::Generic => "generic",
        Built::Manufactured(_) => "manufactured",
        Built::Atmosphere { .. } => "atmosphere",
    };
    let all_pass = checks.iter().all(|c| c.pass);
    let report = RunReport {
        name: c.name.clone(),
        kind: kind.into(),
        horizon: built.horizon,
        slabs: sols.clone(),
        checks,
        convergence,
        oracle,
        atmosphere,
        all_pass,
        timings,
    };
    Ok(RunOutcome {
        report,
        solutions: sols,
        built,
    })
}

/// Largest `ratio - kappa` over outer-difference ratios from the third pass
/// on, skipping steps whose new difference is already below `tol`.
pub fn contraction_excess(sols: &[CoupledSolution], tol: f64) -> (f64, usize) {
    let mut worst = f64::NEG_INFINITY;
    let mut n = 0;
    for sol in sols {
        let kappa = sol.certificate.contraction_factor;
        for (k, pair) in sol.outer_trace.windows(2).enumerate() {
            if k < 1 || pair[1] <= tol || pair[0] == 0.0 {
                continue;
            }
            worst = worst.max(pair[1] / pair[0] - kappa);
            n += 1;
        }
    }
    (if n == 0 { 0.0 } else { worst }, n)
}

/// Traces every equation's characteristic back from each final-time node of
/// `sol` and returns the fraction of entry points the domain classifies as
/// inflow points, with the number of traces.
pub fn entry_membership(
    sys: &QuasilinearSystem,
    sol: &CoupledSolution,
    settings: &SolverSettings,
) -> Result<(f64, usize), ScenarioError> {
    let domain = sys.domain.with_origin(sol.t_a);
    let starts = cartesian(&settings.grid);
    let y = sol.y.as_ref();
    let mut jobs: Vec<(&SampledField, Option<&SampledField>, TraceMode)> = Vec::new();
    for v in &sys.v {
        jobs.push((v, None, TraceMode::Tangential));
    }
    for u in &sys.u {
        let h = if u.has_role(|r| matches!(r, AxisRole::Y(_))) { y } else { None };
        jobs.push((u, h, TraceMode::Entry));
    }
    let total = starts.len() * jobs.len();
    let hits: usize = jobs
        .iter()
        .map(|&(b, h, mode)| {
            let field = Parametric::new(b, h);
            starts
                .par_iter()
                .map(|x| {
                    let r = trace_backward(&field, &domain, sol.t_b, x, None, mode, &settings.step);
                    let ok = match r {
                        Ok(r) => r.entry.is_some_and(|e| {
                            matches!(domain.classify_inflow(e.t, &e.x, ENTRY_TOL), Ok(Some(_)))
                        }),
                        Err(_) => false,
                    };
                    ok as usize
                })
                .sum::<usize>()
        })
        .sum();
    Ok((if total == 0 { 1.0 } else { hits as f64 / total as f64 }, total))
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for a in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                a.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// Every `cadence`-th time level of `f` plus the last one.
fn subsample_time(f: &SampledField, cadence: usize) -> SampledField {
    let Some(j) = f.axis_index(AxisRole::Time) else {
        return f.clone();
    };
    let nt = f.axes()[j].len();
    if cadence <= 1 || nt <= 2 {
        return f.clone();
    }
    let mut keep: Vec<usize> = (0..nt).step_by(cadence).collect();
    if *keep.last().unwrap() != nt - 1 {
        keep.push(nt - 1);
    }
    let block = f.node_count() / nt;
    let mut axes = f.axes().to_vec();
    axes[j] = Axis::new(AxisRole::Time, keep.iter().map(|&k| f.axes()[j].nodes[k]).collect());
    let values = f
        .values()
        .iter()
        .map(|c| keep.iter().flat_map(|&k| c[k * block..(k + 1) * block].iter().copied()).collect())
        .collect();
    SampledField::with_names(axes, f.names().to_vec(), values).expect("subsampled lattice is valid")
}

fn write(path: &Path, text: &str) -> Result<(), ScenarioError> {
    std::fs::write(path, text).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

/// Writes field snapshots, iteration traces and the report into `dir`.
pub fn write_outputs(sc: &Scenario, outcome: &mut RunOutcome, dir: &Path) -> Result<(), ScenarioError> {
    let t = Instant::now();
    std::fs::create_dir_all(dir).map_err(|e| ScenarioError::Io(format!("{}: {e}", dir.display())))?;
    let out = &sc.config.output;
    let atm = matches!(outcome.built.kind, Built::Atmosphere { .. });
    let label = |r: AxisRole| {
        if atm && r == AxisRole::Space(0) {
            "m".to_string()
        } else {
            r.label()
        }
    };
    for (k, sol) in outcome.solutions.iter().enumerate() {
        for (name, field, names) in [
            ("y", sol.y.as_ref(), ["rho", "pi"]),
            ("w", sol.w.as_ref(), ["sigma", "nu"]),
        ] {
            let Some(f) = field else { continue };
            if !out.fields.iter().any(|s| s == name) {
                continue;
            }
            let mut f = subsample_time(f, out.cadence);
            if atm {
                f.set_names(names.iter().map(|s| s.to_string()).collect());
            }
            write(&dir.join(format!("slab{k}_{name}.txt")), &write_columnar_with(&f, &label))?;
        }
    }
    let mut trace = String::from("slab pass difference\n");
    for (k, sol) in outcome.solutions.iter().enumerate() {
        for (i, d) in sol.outer_trace.iter().enumerate() {
            trace.push_str(&format!("{k} {} {d}\n", i + 1));
        }
    }
    write(&dir.join("outer_trace.txt"), &trace)?;
    if let Some(tab) = &outcome.report.convergence {
        write(&dir.join("convergence.txt"), &tab.to_text())?;
    }
    write(&dir.join("report.json"), &json(&outcome.report))?;
    outcome.report.timings.write = secs(t);
    write(&dir.join("timings.json"), &json(&outcome.report.timings))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TracedPath {
    /// `v1 ..` or `u1 ..`.
    pub equation: String,
    pub tau_minus: f64,
    pub entry: Option<crate::geometry::InflowPoint>,
    pub s: Vec<f64>,
    /// Positions, `d` per sample.
    pub x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceReport {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub paths: Vec<TracedPath>,
}

impl TracedPath {
    pub fn to_text(&self) -> String {
        let d = self.x.first().map_or(0, |p| p.len());
        let mut s = String::from("s");
        for k in 1..=d {
            s.push_str(&format!(" x{k}"));
        }
        s.push('\n');
        for (t, p) in self.s.iter().zip(&self.x) {
            s.push_str(&t.to_string());
            for v in p {
                s.push_str(&format!(" {v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Backward characteristics of every equation through `(t0, x0)`. Velocities
/// that depend on `y` are closed with the solution of the slab containing
/// `t0`.
pub fn trace(sc: &Scenario, t0: f64, x0: &[f64]) -> Result<TraceReport, ScenarioError> {
    let built = build(sc)?;
    let sys = &built.system;
    let step = &built.settings.step;
    let needs_y = sys.u.iter().any(|u| u.has_role(|r| matches!(r, AxisRole::Y(_))));
    let sols = if needs_y {
        solve_continued(sys, t0.max(built.settings.min_slab), &built.settings)?
    } else {
        Vec::new()
    };
    let mut paths = Vec::new();
    let mut push = |equation: String, b: &SampledField, h: Option<&SampledField>, mode, origin: f64| {
        let domain = sys.domain.with_origin(origin);
        let r = trace_backward(&Parametric::new(b, h), &domain, t0, x0, None, mode, step)
            .map_err(crate::quasilinear::QuasiError::from)?;
        paths.push(TracedPath {
            equation,
            tau_minus: r.tau_minus,
            entry: r.entry.clone(),
            s: r.s.clone(),
            x: (0..r.len()).map(|k| r.position(k).to_vec()).collect(),
        });
        Ok::<_, ScenarioError>(())
    };
    let atmosphere = matches!(built.kind, Built::Atmosphere { .. });
    let name = |prefix: &str, k: usize, labels: [&str; 2]| {
        if atmosphere {
            labels[k].to_string()
        } else {
            format!("{prefix}{}", k + 1)
        }
    };
    for (i, v) in sys.v.iter().enumerate() {
        push(name("v", i, ["rho", "pi"]), v, None, TraceMode::Tangential, 0.0)?;
    }
    for (j, u) in sys.u.iter().enumerate() {
        if u.has_role(|r| matches!(r, AxisRole::Y(_))) {
            let sol = sols
                .iter()
                .find(|s| s.t_a <= t0 && t0 <= s.t_b)
                .or(sols.last())
                .ok_or_else(|| ScenarioError::Build("no slab covers t0".into()))?;
            push(name("u", j, ["sigma", "nu"]), u, sol.y.as_ref(), TraceMode::Entry, sol.t_a)?;
        } else {
            push(name("u", j, ["sigma", "nu"]), u, None, TraceMode::Entry, 0.0)?;
        }
    }
    Ok(TraceReport {
        t0,
        x0: x0.to_vec(),
        paths,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCompare {
    pub report: OracleReport,
    /// The same comparison against the sign-flipped system.
    pub control: OracleReport,
    /// The real comparison passes and the control fails.
    pub pass: bool,
}

pub fn oracle_compare(sc: &Scenario, levels: usize) -> Result<OracleCompare, ScenarioError> {
    let built = build(sc)?;
    let sols = solve_continued(&built.system, built.horizon, &built.settings)?;
    let cfl = sc.config.checks.oracle_cfl;
    let grid = &built.settings.grid;
    let report = compare(&built.system, &sols, grid, levels, cfl)?;
    let control = compare(&corrupt(&built.system), &sols, grid, levels, cfl)?;
    let pass = report.pass && !control.pass;
    Ok(OracleCompare { report, control, pass })
}
