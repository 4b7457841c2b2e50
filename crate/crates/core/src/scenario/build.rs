//! Turns a validated scenario into a solver-ready system.

use super::config::{AtmosphereConfig, FieldRef, GenericSystem, InflowRef, Scenario, SourceSpec, SystemConfig};
use super::manufactured::ManufacturedCase;
use super::ScenarioError;
use crate::characteristics::StepCtrl;
use crate::field::SampledField;
use crate::geometry::{Extension, StripDomain};
use crate::microphysics::{build_system, AtmosphereState, AtmosphereSystem, MassGrid, MicrophysicsParams};
use crate::quasilinear::{LinearSource, QuasilinearSystem, SampledSource, SolverSettings, SourceTerm};
use crate::transport::{InflowData, PicardSettings};
use std::path::Path;
use std::sync::Arc;

/// What a scenario builds into.
#[derive(Debug, Clone)]
pub enum Built {
    Generic,
    Manufactured(ManufacturedCase),
    Atmosphere {
        state: Box<AtmosphereState>,
        params: Box<MicrophysicsParams>,
        atmosphere: AtmosphereSystem,
    },
}

#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub system: QuasilinearSystem,
    pub settings: SolverSettings,
    pub horizon: f64,
    pub kind: Built,
}

pub fn domain_of(sc: &Scenario) -> Result<StripDomain, ScenarioError> {
    let dm = &sc.config.domain;
    let ext = if dm.extension.is_empty() {
        vec![Extension::Periodic; dm.d.saturating_sub(1)]
    } else {
        dm.extension.clone()
    };
    StripDomain::with_extensions(dm.d, dm.t1, dm.window_lo.clone(), dm.window_hi.clone(), ext)
        .map_err(|e| ScenarioError::Validation(vec![e.to_string()]))
}

/// Solver settings with the given spatial lattice.
pub fn settings_of(sc: &Scenario, grid: Vec<Vec<f64>>) -> SolverSettings {
    let s = &sc.config.solver;
    SolverSettings {
        picard: PicardSettings {
            tol: s.picard_tol,
            max_iters: s.max_iters,
            initial_guess: 0.0,
        },
        step: StepCtrl {
            max_dt: s.max_dt,
            event_tol: s.event_tol,
            ..StepCtrl::default()
        },
        safety: s.safety,
        slab_guess: s.slab_guess,
        min_slab: s.min_slab,
        grid_dt: s.grid_dt,
        grid,
    }
}

fn load(r: &FieldRef, base: &Path) -> Result<SampledField, ScenarioError> {
    r.load(base).map_err(|e| ScenarioError::Validation(vec![e]))
}

/// Linear coefficient lists are zero-padded to `p` and `q`.
fn source(spec: &SourceSpec, base: &Path, p: usize, q: usize) -> Result<Arc<dyn SourceTerm>, ScenarioError> {
    let pad = |v: &[f64], n: usize| {
        let mut v = v.to_vec();
        v.resize(n.max(v.len()), 0.0);
        v
    };
    Ok(match spec {
        SourceSpec::Sampled { field } => Arc::new(SampledSource::new(load(field, base)?)),
        SourceSpec::Linear { c0, cy, cw } => Arc::new(LinearSource {
            c0: load(c0, base)?,
            cy: pad(cy, p),
            cw: pad(cw, q),
        }),
    })
}

fn generic(g: &GenericSystem, domain: StripDomain, base: &Path) -> Result<QuasilinearSystem, ScenarioError> {
    let p = g.v.len();
    let q = g.u.len();
    let sources = |list: &[SourceSpec]| -> Result<Vec<Arc<dyn SourceTerm>>, ScenarioError> {
        list.iter().map(|s| source(s, base, p, q)).collect()
    };
    let w_star = g
        .w_star
        .iter()
        .map(|r| {
            Ok(match r {
                InflowRef::Single(f) => InflowData::single(load(f, base)?),
                InflowRef::Split { initial, top } => InflowData::new(load(initial, base)?, load(top, base)?),
            })
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    let sys = QuasilinearSystem {
        domain,
        v: g.v.iter().map(|r| load(r, base)).collect::<Result<_, _>>()?,
        u: g.u.iter().map(|r| load(r, base)).collect::<Result<_, _>>()?,
        f: sources(&g.f)?,
        g: sources(&g.g)?,
        y0: g.y0.iter().map(|r| load(r, base)).collect::<Result<_, _>>()?,
        w_star,
    };
    sys.validate(1e-9).map_err(ScenarioError::Validation)?;
    Ok(sys)
}

fn atmosphere(
    a: &AtmosphereConfig,
    domain: &StripDomain,
    base: &Path,
) -> Result<(AtmosphereState, MicrophysicsParams, AtmosphereSystem, Vec<f64>), ScenarioError> {
    let opt = |r: &Option<FieldRef>| r.as_ref().map(|r| load(r, base)).transpose();
    let state = AtmosphereState {
        rho: load(&a.rho, base)?,
        pi: load(&a.pi, base)?,
        sigma: load(&a.sigma, base)?,
        nu: load(&a.nu, base)?,
        temperature: load(&a.temperature, base)?,
        v: load(&a.v, base)?,
        u: load(&a.u, base)?,
        w_vel: load(&a.w_vel, base)?,
        div_v: opt(&a.div_v)?,
        div_u: opt(&a.div_u)?,
        div_w: opt(&a.div_w)?,
    };
    let mut params = a.params.clone();
    if let Some(n) = opt(&a.n_aero)? {
        params.n_aero = n;
    }
    let grid = MassGrid::uniform(params.m_star, a.mass_nodes).map_err(|e| ScenarioError::Build(e.to_string()))?;
    let sys = build_system(&state, &params, domain, &grid.nodes).map_err(|e| ScenarioError::Build(e.to_string()))?;
    Ok((state, params, sys, grid.nodes))
}

pub fn build(sc: &Scenario) -> Result<BuiltScenario, ScenarioError> {
    let c = &sc.config;
    let domain = domain_of(sc)?;
    let horizon = c.horizon();
    let axes: Vec<Vec<f64>> = c.solver.grid.iter().map(|a| a.nodes()).collect();
    Ok(match &c.system {
        SystemConfig::Generic(g) => BuiltScenario {
            system: generic(g, domain, &sc.base_dir)?,
            settings: settings_of(sc, axes),
            horizon,
            kind: Built::Generic,
        },
        SystemConfig::Manufactured(m) => BuiltScenario {
            system: m.system(c.domain.t1).map_err(|e| ScenarioError::Build(e.to_string()))?,
            settings: settings_of(sc, axes),
            horizon,
            kind: Built::Manufactured(m.clone()),
        },
        SystemConfig::Atmosphere(a) => {
            let (state, params, atm, mass) = atmosphere(a, &domain, &sc.base_dir)?;
            let mut grid = vec![mass];
            grid.extend(axes);
            BuiltScenario {
                system: atm.system.clone(),
                settings: settings_of(sc, grid),
                horizon,
                kind: Built::Atmosphere {
                    state: Box::new(state),
                    params: Box::new(params),
                    atmosphere: atm,
                },
            }
        }
    })
}
