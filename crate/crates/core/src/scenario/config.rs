//! Scenario files: TOML with `[domain]`, `[solver]`, `[output]`, `[checks]`
//! and `[system]` tables. Field references are paths to columnar files
//! (relative to the scenario file), numbers, or lists of numbers (constant
//! fields with one component per entry).

use super::manufactured::ManufacturedCase;
use super::ScenarioError;
use crate::field::{read_columnar, AxisRole, SampledField};
use crate::geometry::Extension;
use crate::lattice::AxisSpec;
use crate::microphysics::MicrophysicsParams;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub domain: DomainConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    pub system: SystemConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub d: usize,
    pub t1: f64,
    #[serde(default)]
    pub window_lo: Vec<f64>,
    #[serde(default)]
    pub window_hi: Vec<f64>,
    /// One entry per tangential axis; empty means periodic everywhere.
    #[serde(default)]
    pub extension: Vec<Extension>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "defaults::picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "defaults::max_iters")]
    pub max_iters: usize,
    /// Integrator substep along characteristics.
    #[serde(default = "defaults::max_dt")]
    pub max_dt: f64,
    #[serde(default = "defaults::event_tol")]
    pub event_tol: f64,
    #[serde(default = "defaults::safety")]
    pub safety: f64,
    #[serde(default = "defaults::slab_guess")]
    pub slab_guess: f64,
    #[serde(default = "defaults::min_slab")]
    pub min_slab: f64,
    pub grid_dt: f64,
    /// End of the run; defaults to `t1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Solution lattice. For atmosphere systems the mass axis is prepended
    /// from the mass grid, so only the physical axes are listed.
    pub grid: Vec<AxisSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Write every `cadence`-th time level of each slab (the last level is
    /// always written).
    #[serde(default = "defaults::cadence")]
    pub cadence: usize,
    /// Subset of `y`, `w`.
    #[serde(default = "defaults::fields")]
    pub fields: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            cadence: defaults::cadence(),
            fields: defaults::fields(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    /// Re-apply the integral operators to the solution.
    #[serde(default = "defaults::yes")]
    pub residual: bool,
    /// Outer difference ratios against the certified factor.
    #[serde(default = "defaults::yes")]
    pub contraction: bool,
    /// Trace characteristics from every final-time node and check the
    /// entry points lie on the inflow surface.
    #[serde(default = "defaults::yes")]
    pub entry_membership: bool,
    /// Number of nested upwind grids for the oracle comparison (0 = off).
    #[serde(default)]
    pub oracle_levels: usize,
    #[serde(default = "defaults::oracle_cfl")]
    pub oracle_cfl: f64,
    /// Atmosphere: minima and support leakage against the state scale.
    #[serde(default = "defaults::yes")]
    pub positivity: bool,
    #[serde(default = "defaults::yes")]
    pub support: bool,
    /// Atmosphere: tolerance on the relative water budget residual.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub water_budget: Option<f64>,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            residual: true,
            contraction: true,
            entry_membership: true,
            oracle_levels: 0,
            oracle_cfl: defaults::oracle_cfl(),
            positivity: true,
            support: true,
            water_budget: None,
        }
    }
}

mod defaults {
    pub fn picard_tol() -> f64 {
        1e-12
    }
    pub fn max_iters() -> usize {
        60
    }
    pub fn max_dt() -> f64 {
        1e-2
    }
    pub fn event_tol() -> f64 {
        1e-10
    }
    pub fn safety() -> f64 {
        0.5
    }
    pub fn slab_guess() -> f64 {
        1.0
    }
    pub fn min_slab() -> f64 {
        1e-4
    }
    pub fn cadence() -> usize {
        1
    }
    pub fn fields() -> Vec<String> {
        vec!["y".into(), "w".into()]
    }
    pub fn yes() -> bool {
        true
    }
    pub fn oracle_cfl() -> f64 {
        0.8
    }
}

/// A field given by file, scalar constant or constant vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldRef {
    Scalar(f64),
    Vector(Vec<f64>),
    Path(String),
}

impl FieldRef {
    pub fn load(&self, base: &Path) -> Result<SampledField, String> {
        match self {
            Self::Scalar(v) => Ok(SampledField::constant(&[*v])),
            Self::Vector(v) if v.is_empty() => Err("empty constant vector".into()),
            Self::Vector(v) => Ok(SampledField::constant(v)),
            Self::Path(p) => {
                let full = base.join(p);
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| format!("cannot read field file {}: {e}", full.display()))?;
                read_columnar(&text).map_err(|e| format!("field file {}: {e}", full.display()))
            }
        }
    }

    fn path(&self) -> Option<&str> {
        match self {
            Self::Path(p) => Some(p),
            _ => None,
        }
    }
}

/// Inflow data: one field for both sheets or separate pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InflowRef {
    Split { initial: FieldRef, top: FieldRef },
    Single(FieldRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    /// Sampled over `(t, x, y, w)`.
    Sampled { field: FieldRef },
    /// `c0(t, x) + cy . y + cw . w`.
    Linear {
        #[serde(default = "zero_ref")]
        c0: FieldRef,
        #[serde(default)]
        cy: Vec<f64>,
        #[serde(default)]
        cw: Vec<f64>,
    },
}

fn zero_ref() -> FieldRef {
    FieldRef::Scalar(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericSystem {
    pub v: Vec<FieldRef>,
    pub u: Vec<FieldRef>,
    pub y0: Vec<FieldRef>,
    pub w_star: Vec<InflowRef>,
    pub f: Vec<SourceSpec>,
    pub g: Vec<SourceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtmosphereConfig {
    pub params: MicrophysicsParams,
    /// Nodes of the uniform mass grid on `[0, M*]`.
    pub mass_nodes: usize,
    pub rho: FieldRef,
    pub pi: FieldRef,
    pub sigma: FieldRef,
    pub nu: FieldRef,
    pub temperature: FieldRef,
    pub v: FieldRef,
    pub u: FieldRef,
    pub w_vel: FieldRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub div_v: Option<FieldRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub div_u: Option<FieldRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub div_w: Option<FieldRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_aero: Option<FieldRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemConfig {
    Generic(GenericSystem),
    Manufactured(ManufacturedCase),
    Atmosphere(Box<AtmosphereConfig>),
}

/// A configuration together with the directory its paths are relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn horizon(&self) -> f64 {
        self.solver.horizon.unwrap_or(self.domain.t1)
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_scenario(&text, &base)
}

/// Parses and validates scenario text whose paths are relative to `base`.
pub fn parse_scenario(text: &str, base: &Path) -> Result<Scenario, ScenarioError> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| line_col(text, s.start))
            .unwrap_or((1, 1));
        ScenarioError::Parse {
            line,
            column,
            msg: e.message().to_string(),
        }
    })?;
    let errs = validate(&config, base);
    if !errs.is_empty() {
        return Err(ScenarioError::Validation(errs));
    }
    Ok(Scenario {
        config,
        base_dir: base.to_path_buf(),
    })
}

/// Canonical text form; [`parse_scenario`] of the result gives back `config`.
pub fn emit(config: &ScenarioConfig) -> String {
    toml::to_string(config).expect("scenario configs serialize")
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let head = &text[..offset.min(text.len())];
    let line = head.matches('\n').count() + 1;
    let column = head.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Every violated constraint, in a stable order.
pub fn validate(c: &ScenarioConfig, base: &Path) -> Vec<String> {
    let mut errs = Vec::new();
    let dm = &c.domain;
    if dm.d == 0 {
        errs.push("d >= 1 required".into());
    }
    if !(dm.t1 > 0.0) || !dm.t1.is_finite() {
        errs.push("t1 > 0 required".into());
    }
    let tang = dm.d.saturating_sub(1);
    if dm.window_lo.len() != tang || dm.window_hi.len() != tang {
        errs.push(format!("window needs {tang} entries per side (d - 1)"));
    } else {
        for (k, (lo, hi)) in dm.window_lo.iter().zip(&dm.window_hi).enumerate() {
            if !(lo < hi) {
                errs.push(format!("window axis {}: lo < hi required", k + 1));
            }
        }
    }
    if !dm.extension.is_empty() && dm.extension.len() != tang {
        errs.push(format!("extension needs {tang} entries or none"));
    }
    let s = &c.solver;
    let positive = [
        ("picard_tol", s.picard_tol),
        ("max_dt", s.max_dt),
        ("event_tol", s.event_tol),
        ("slab_guess", s.slab_guess),
        ("min_slab", s.min_slab),
        ("grid_dt", s.grid_dt),
    ];
    for (name, v) in positive {
        if !(v > 0.0) || !v.is_finite() {
            errs.push(format!("{name} > 0 required"));
        }
    }
    if !(s.safety > 0.0 && s.safety < 1.0) {
        errs.push("safety in (0, 1) required".into());
    }
    if s.max_iters == 0 {
        errs.push("max_iters >= 1 required".into());
    }
    let h = c.horizon();
    if !(h > 0.0 && h <= dm.t1) {
        errs.push(format!("horizon in (0, t1] required (got {h})"));
    }
    for (k, a) in s.grid.iter().enumerate() {
        if a.n < 2 || !(a.lo < a.hi) {
            errs.push(format!("grid axis {}: n >= 2 and lo < hi required", k + 1));
        }
    }
    if c.output.cadence == 0 {
        errs.push("output cadence >= 1 required".into());
    }
    for f in &c.output.fields {
        if f != "y" && f != "w" {
            errs.push(format!("unknown output field '{f}' (expected y or w)"));
        }
    }
    if !(c.checks.oracle_cfl > 0.0) {
        errs.push("oracle_cfl > 0 required".into());
    }
    match &c.system {
        SystemConfig::Generic(g) => validate_generic(g, dm.d, s, base, &mut errs),
        SystemConfig::Manufactured(m) => {
            if dm.d != 1 {
                errs.push("the manufactured system needs d = 1".into());
            }
            if m.grids.len() < 2 || m.grids.iter().any(|&n| n < 3) {
                errs.push("manufactured grids need at least two sizes >= 3".into());
            }
            if m.data_nodes < 3 {
                errs.push("manufactured data_nodes >= 3 required".into());
            }
        }
        SystemConfig::Atmosphere(a) => validate_atmosphere(a, dm.d, s, base, &mut errs),
    }
    errs
}

fn check_space_axes(f: &SampledField, d: usize, what: &str, errs: &mut Vec<String>) {
    for a in f.axes() {
        if let AxisRole::Space(k) = a.role {
            if k >= d {
                errs.push(format!("{what}: axis x{} exceeds d = {d}", k + 1));
            }
        }
    }
}

fn load_checked(r: &FieldRef, base: &Path, d: usize, what: &str, errs: &mut Vec<String>) -> Option<SampledField> {
    match r.load(base) {
        Ok(f) => {
            check_space_axes(&f, d, what, errs);
            Some(f)
        }
        Err(e) => {
            let path = r.path().map(|p| format!(" ({p})")).unwrap_or_default();
            errs.push(format!("{what}{path}: {e}"));
            None
        }
    }
}

fn validate_generic(g: &GenericSystem, d: usize, s: &SolverConfig, base: &Path, errs: &mut Vec<String>) {
    if s.grid.len() != d {
        errs.push(format!("grid needs {d} axes, got {}", s.grid.len()));
    }
    let (p, q) = (g.v.len(), g.u.len());
    if g.y0.len() != p || g.f.len() != p {
        errs.push(format!("v, y0 and f need the same length ({p}, {}, {})", g.y0.len(), g.f.len()));
    }
    if g.w_star.len() != q || g.g.len() != q {
        errs.push(format!(
            "u, w_star and g need the same length ({q}, {}, {})",
            g.w_star.len(),
            g.g.len()
        ));
    }
    if p + q == 0 {
        errs.push("the system has no equations".into());
    }
    for (k, r) in g.v.iter().enumerate() {
        if let Some(f) = load_checked(r, base, d, &format!("v{}", k + 1), errs) {
            if f.ncomp() != d {
                errs.push(format!("v{} has {} components, expected {d}", k + 1, f.ncomp()));
            }
        }
    }
    for (k, r) in g.u.iter().enumerate() {
        if let Some(f) = load_checked(r, base, d, &format!("u{}", k + 1), errs) {
            if f.ncomp() != d {
                errs.push(format!("u{} has {} components, expected {d}", k + 1, f.ncomp()));
            }
        }
    }
    for (k, r) in g.y0.iter().enumerate() {
        load_checked(r, base, d, &format!("y0 {}", k + 1), errs);
    }
    for (k, r) in g.w_star.iter().enumerate() {
        match r {
            InflowRef::Single(f) => {
                load_checked(f, base, d, &format!("w_star {}", k + 1), errs);
            }
            InflowRef::Split { initial, top } => {
                load_checked(initial, base, d, &format!("w_star {} initial", k + 1), errs);
                load_checked(top, base, d, &format!("w_star {} top", k + 1), errs);
            }
        }
    }
    for (name, list) in [("f", &g.f), ("g", &g.g)] {
        for (k, src) in list.iter().enumerate() {
            let what = format!("{name}{}", k + 1);
            match src {
                SourceSpec::Sampled { field } => {
                    load_checked(field, base, d, &what, errs);
                }
                SourceSpec::Linear { c0, cy, cw } => {
                    load_checked(c0, base, d, &what, errs);
                    if cy.len() > p || cw.len() > q {
                        errs.push(format!("{what}: at most {p} y and {q} w coefficients"));
                    }
                }
            }
        }
    }
}

fn validate_atmosphere(a: &AtmosphereConfig, d: usize, s: &SolverConfig, base: &Path, errs: &mut Vec<String>) {
    if d < 2 {
        errs.push("the atmosphere system needs d >= 2 (mass plus height)".into());
    }
    if s.grid.len() + 1 != d {
        errs.push(format!("grid needs {} physical axes, got {}", d.saturating_sub(1), s.grid.len()));
    }
    if a.mass_nodes < 3 {
        errs.push("mass_nodes >= 3 required".into());
    }
    let fields: [(&str, Option<&FieldRef>); 12] = [
        ("rho", Some(&a.rho)),
        ("pi", Some(&a.pi)),
        ("sigma", Some(&a.sigma)),
        ("nu", Some(&a.nu)),
        ("temperature", Some(&a.temperature)),
        ("v", Some(&a.v)),
        ("u", Some(&a.u)),
        ("w_vel", Some(&a.w_vel)),
        ("div_v", a.div_v.as_ref()),
        ("div_u", a.div_u.as_ref()),
        ("div_w", a.div_w.as_ref()),
        ("n_aero", a.n_aero.as_ref()),
    ];
    for (name, r) in fields {
        let Some(r) = r else { continue };
        if let Some(f) = load_checked(r, base, d, name, errs) {
            if matches!(name, "v" | "u" | "w_vel") && f.ncomp() + 1 != d {
                errs.push(format!("{name} has {} components, expected {} (physical)", f.ncomp(), d - 1));
            }
        }
    }
}
