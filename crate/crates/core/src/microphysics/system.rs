//! Atmospheric state, pointwise right-hand sides and the coupled system.
//!
//! All fields use strip coordinates: `x1` is the particle mass `m`, `x2..x_d`
//! are physical positions and `x_d` is the height. Gas quantities simply have
//! no `x1` axis. Velocities carry physical components only; the mass
//! component of the particle speeds is added here.

use super::kernels::{column_moments, gas_terms, nu_terms, sigma_terms, Column, MassGrid, NuTerms, SigmaTerms};
use super::params::MicrophysicsParams;
use super::MicroError;
use crate::field::{check_cone_membership, sup_in_time, Axis, AxisRole, FieldError, NormQuery, Point, SampledField};
use crate::quasilinear::{Ball, CoupledSolution, NodeState, QuasiError, QuasilinearSystem, Sensitivity, SourceTerm};
use crate::geometry::StripDomain;
use crate::transport::InflowData;
use serde::Serialize;
use std::sync::Arc;

/// Tolerance for negative densities and values outside the mass support.
pub const STATE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct AtmosphereState {
    /// Dry air density over `(t, x)`; its slice at the initial time is the
    /// initial datum.
    pub rho: SampledField,
    /// Vapour density over `(t, x)`.
    pub pi: SampledField,
    /// Droplet spectrum over `(t, m, x)`; data on the inflow surface.
    pub sigma: SampledField,
    /// Crystal spectrum over `(t, m, x)`.
    pub nu: SampledField,
    pub temperature: SampledField,
    /// Gas velocity (physical components).
    pub v: SampledField,
    /// Droplet velocity (physical components).
    pub u: SampledField,
    /// Crystal velocity (physical components).
    pub w_vel: SampledField,
    pub div_v: Option<SampledField>,
    pub div_u: Option<SampledField>,
    pub div_w: Option<SampledField>,
}

/// Which divergences were not supplied and had to be differenced.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DivergenceFallback {
    pub div_v: bool,
    pub div_u: bool,
    pub div_w: bool,
}

impl DivergenceFallback {
    pub fn any(&self) -> bool {
        self.div_v || self.div_u || self.div_w
    }
}

impl AtmosphereState {
    /// Dimension of the strip (mass plus physical coordinates).
    pub fn dim(&self) -> usize {
        1 + self.v.ncomp()
    }

    /// Supplied divergences, with finite differences standing in for the
    /// missing ones.
    pub fn divergences(&self) -> Result<([SampledField; 3], DivergenceFallback), FieldError> {
        let pick = |s: &Option<SampledField>, vel: &SampledField| match s {
            Some(f) => Ok((f.clone(), false)),
            None => fd_divergence(vel, 1).map(|f| (f, true)),
        };
        let (dv, a) = pick(&self.div_v, &self.v)?;
        let (du, b) = pick(&self.div_u, &self.u)?;
        let (dw, c) = pick(&self.div_w, &self.w_vel)?;
        let fb = DivergenceFallback {
            div_v: a,
            div_u: b,
            div_w: c,
        };
        Ok(([dv, du, dw], fb))
    }
}

/// `sum_c d(field_c)/dx_{c + offset}` by central differences on the field's
/// own grid (one-sided at the ends). Missing axes contribute nothing.
pub fn fd_divergence(field: &SampledField, offset: usize) -> Result<SampledField, FieldError> {
    let n = field.node_count();
    let mut out = vec![0.0; n];
    for c in 0..field.ncomp() {
        let Some(j) = field.axis_index(AxisRole::Space(c + offset)) else {
            continue;
        };
        let ax = &field.axes()[j];
        let s = field.strides()[j];
        let v = field.component(c);
        let len = ax.len();
        for (flat, o) in out.iter_mut().enumerate() {
            let k = (flat / s) % len;
            let (lo, hi) = (k.saturating_sub(1), (k + 1).min(len - 1));
            let down = v[flat - (k - lo) * s];
            let up = v[flat + (hi - k) * s];
            *o += (up - down) / (ax.nodes[hi] - ax.nodes[lo]);
        }
    }
    SampledField::with_names(field.axes().to_vec(), vec!["div".into()], vec![out])
}

/// Evaluation context shared by the four sources.
#[derive(Debug)]
pub struct AtmosphereModel {
    pub params: MicrophysicsParams,
    pub grid: MassGrid,
    pub temperature: SampledField,
    pub div_v: SampledField,
    pub div_u: SampledField,
    pub div_w: SampledField,
}

/// Column values at one `(t, x)`, owned.
#[derive(Debug, Clone)]
pub struct ColumnData {
    pub pi: f64,
    pub temp: f64,
    pub n_aero: f64,
    pub sigma: Vec<f64>,
    pub nu: Vec<f64>,
}

impl ColumnData {
    pub fn view(&self) -> Column<'_> {
        Column {
            pi: self.pi,
            temp: self.temp,
            n_aero: self.n_aero,
            sigma: &self.sigma,
            nu: &self.nu,
        }
    }
}

fn strip_point(m: f64, x: &[f64]) -> Vec<f64> {
    let mut p = Vec::with_capacity(x.len() + 1);
    p.push(m);
    p.extend_from_slice(x);
    p
}

impl AtmosphereModel {
    /// Column of `state` at time `t` and physical position `x`.
    pub fn column_from_state(&self, state: &AtmosphereState, t: f64, x: &[f64]) -> Result<ColumnData, FieldError> {
        let at = strip_point(0.0, x);
        let p = Point::tx(t, &at);
        let mut sigma = Vec::with_capacity(self.grid.len());
        let mut nu = Vec::with_capacity(self.grid.len());
        for &m in &self.grid.nodes {
            let q = strip_point(m, x);
            sigma.push(state.sigma.eval_comp(0, &Point::tx(t, &q))?);
            nu.push(state.nu.eval_comp(0, &Point::tx(t, &q))?);
        }
        Ok(ColumnData {
            pi: state.pi.eval_comp(0, &p)?,
            temp: self.temperature.eval_comp(0, &p)?,
            n_aero: self.params.n_aero.eval_comp(0, &p)?,
            sigma,
            nu,
        })
    }

    fn node_index(&self, m: f64) -> Result<usize, FieldError> {
        let tol = 1e-12 * self.grid.m_max();
        self.grid
            .nodes
            .iter()
            .position(|&z| (z - m).abs() <= tol)
            .ok_or(FieldError::OutOfRange {
                role: "mass node".into(),
                value: m,
                lo: 0.0,
                hi: self.grid.m_max(),
            })
    }

    pub fn sigma_terms_at(&self, col: &ColumnData, t: f64, i: usize, x: &[f64]) -> Result<SigmaTerms, FieldError> {
        let q = strip_point(self.grid.nodes[i], x);
        let du = self.div_u.eval_comp(0, &Point::tx(t, &q))?;
        let c = col.view();
        let mom = column_moments(&self.params, &self.grid, &c);
        Ok(sigma_terms(&self.params, &self.grid, &c, &mom, i, du))
    }

    pub fn nu_terms_at(&self, col: &ColumnData, t: f64, i: usize, x: &[f64]) -> Result<NuTerms, FieldError> {
        let q = strip_point(self.grid.nodes[i], x);
        let dw = self.div_w.eval_comp(0, &Point::tx(t, &q))?;
        Ok(nu_terms(&self.params, &self.grid, &col.view(), i, dw))
    }

    pub fn gas_at(&self, col: &ColumnData, rho: f64, t: f64, x: &[f64]) -> Result<(f64, f64), FieldError> {
        let q = strip_point(0.0, x);
        let dv = self.div_v.eval_comp(0, &Point::tx(t, &q))?;
        let c = col.view();
        let mom = column_moments(&self.params, &self.grid, &c);
        Ok(gas_terms(&self.params, rho, &c, &mom, dv))
    }

    /// Column read from the current iterates on the solution lattice.
    fn column_from_lattice(&self, s: &NodeState) -> Result<(ColumnData, usize), FieldError> {
        let lr = s
            .lattice
            .ok_or_else(|| FieldError::MissingCoordinate("mass column (lattice access)".into()))?;
        let lat = lr.lattice;
        if lat.x.first().map(|a| a.len()) != Some(self.grid.len()) {
            return Err(FieldError::MissingCoordinate("lattice x1 axis must be the mass grid".into()));
        }
        let (_, ix) = lat.index(lr.flat);
        let i = ix[0];
        let stride = lat.strides()[1];
        let first = lr.flat - i * stride;
        let n = self.grid.len();
        let sigma = (0..n).map(|k| lr.w[0][first + k * stride]).collect();
        let nu = (0..n).map(|k| lr.w[1][first + k * stride]).collect();
        let p = Point::tx(s.t, s.x);
        Ok((
            ColumnData {
                pi: s.y[1],
                temp: self.temperature.eval_comp(0, &p)?,
                n_aero: self.params.n_aero.eval_comp(0, &p)?,
                sigma,
                nu,
            },
            i,
        ))
    }
}

fn state_model(state: &AtmosphereState, params: &MicrophysicsParams, grid: &MassGrid) -> Result<AtmosphereModel, FieldError> {
    let ([div_v, div_u, div_w], _) = state.divergences()?;
    Ok(AtmosphereModel {
        params: params.clone(),
        grid: grid.clone(),
        temperature: state.temperature.clone(),
        div_v,
        div_u,
        div_w,
    })
}

/// `S*` at `(t, m, x)`; `m` must be a node of `grid`.
pub fn assemble_sigma_rhs(
    state: &AtmosphereState,
    params: &MicrophysicsParams,
    t: f64,
    m: f64,
    x: &[f64],
    grid: &MassGrid,
) -> Result<f64, FieldError> {
    let model = state_model(state, params, grid)?;
    let i = model.node_index(m)?;
    let col = model.column_from_state(state, t, x)?;
    Ok(model.sigma_terms_at(&col, t, i, x)?.total())
}

/// `N*` at `(t, m, x)`; `m` must be a node of `grid`.
pub fn assemble_nu_rhs(
    state: &AtmosphereState,
    params: &MicrophysicsParams,
    t: f64,
    m: f64,
    x: &[f64],
    grid: &MassGrid,
) -> Result<f64, FieldError> {
    let model = state_model(state, params, grid)?;
    let i = model.node_index(m)?;
    let col = model.column_from_state(state, t, x)?;
    Ok(model.nu_terms_at(&col, t, i, x)?.total())
}

/// `(R*, P*)` at `(t, x)`.
pub fn assemble_gas_rhs(
    state: &AtmosphereState,
    params: &MicrophysicsParams,
    t: f64,
    x: &[f64],
    grid: &MassGrid,
) -> Result<(f64, f64), FieldError> {
    let model = state_model(state, params, grid)?;
    let col = model.column_from_state(state, t, x)?;
    let rho = state.rho.eval_comp(0, &Point::tx(t, &strip_point(0.0, x)))?;
    model.gas_at(&col, rho, t, x)
}

/// Sup bounds of the model coefficients entering the sensitivities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
struct Coefficients {
    m: f64,
    sbar_l: f64,
    sbar_s: f64,
    g_a: f64,
    g_l: f64,
    g_s: f64,
    k_ls: f64,
    k_sl: f64,
    pi_l: f64,
    pi_s: f64,
    n_l: f64,
    n_s: f64,
    n_aero: f64,
    beta_l: f64,
    beta_s: f64,
    beta_qs: f64,
    z_ls: f64,
}

impl AtmosphereModel {
    fn coefficients(&self) -> Coefficients {
        let p = &self.params;
        let g = &self.grid;
        let sup = |f: &super::params::Profile| g.nodes.iter().map(|&m| f.eval(m).abs()).fold(0.0, f64::max);
        let temps = self.temperature.values()[0].clone();
        let tsup = |f: &super::params::Profile| temps.iter().map(|&t| f.eval(t).abs()).fold(0.0, f64::max);
        let rsup = |r: &super::params::Rate| {
            g.nodes
                .iter()
                .flat_map(|&m| temps.iter().map(move |&t| r.eval(m, t).abs()))
                .fold(0.0, f64::max)
        };
        let abs_moment = |f: &super::params::Profile| {
            g.nodes.iter().zip(&g.weights).map(|(&m, &w)| w * f.eval(m).abs()).sum::<f64>()
        };
        let mm = g.m_max();
        Coefficients {
            m: mm,
            sbar_l: sup(&p.sbar_l),
            sbar_s: sup(&p.sbar_s),
            g_a: sup(&p.g_a),
            g_l: sup(&p.g_l),
            g_s: sup(&p.g_s),
            k_ls: rsup(&p.k_ls),
            k_sl: rsup(&p.k_sl),
            pi_l: tsup(&p.pi_l),
            pi_s: tsup(&p.pi_s),
            n_l: abs_moment(&p.n_l),
            n_s: abs_moment(&p.n_s),
            n_aero: p.n_aero.values()[0].iter().fold(0.0, |a, v| a.max(v.abs())),
            beta_l: p.beta_l.bound(mm),
            beta_s: p.beta_s.bound(mm),
            beta_qs: p.q_s_kernel().bound(mm),
            z_ls: p.z_ls.bound(mm),
        }
    }

    fn div_sup(&self, f: &SampledField, t_a: f64, t_b: f64) -> Result<f64, QuasiError> {
        Ok(sup_in_time(f, t_a, t_b, &NormQuery::sup())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unknown {
    Rho,
    Pi,
    Sigma,
    Nu,
}

/// One of `R*`, `P*`, `S*`, `N*` as a source of the coupled system.
#[derive(Debug, Clone)]
pub struct AtmosphereSource {
    model: Arc<AtmosphereModel>,
    which: Unknown,
}

impl SourceTerm for AtmosphereSource {
    fn eval(&self, s: &NodeState) -> Result<f64, FieldError> {
        let model = &self.model;
        match self.which {
            Unknown::Rho => {
                let q = Point::tx(s.t, s.x);
                Ok(-model.div_v.eval_comp(0, &q)? * s.y[0])
            }
            Unknown::Pi => {
                let (col, _) = model.column_from_lattice(s)?;
                let dv = model.div_v.eval_comp(0, &Point::tx(s.t, s.x))?;
                let c = col.view();
                let mom = column_moments(&model.params, &model.grid, &c);
                Ok(gas_terms(&model.params, s.y[0], &c, &mom, dv).1)
            }
            Unknown::Sigma => {
                let (col, i) = model.column_from_lattice(s)?;
                let du = model.div_u.eval_comp(0, &Point::tx(s.t, s.x))?;
                let c = col.view();
                let mom = column_moments(&model.params, &model.grid, &c);
                Ok(sigma_terms(&model.params, &model.grid, &c, &mom, i, du).total())
            }
            Unknown::Nu => {
                let (col, i) = model.column_from_lattice(s)?;
                let dw = model.div_w.eval_comp(0, &Point::tx(s.t, s.x))?;
                Ok(nu_terms(&model.params, &model.grid, &col.view(), i, dw).total())
            }
        }
    }

    fn sensitivity(&self, t_a: f64, t_b: f64, ball: &Ball) -> Result<Sensitivity, QuasiError> {
        let k = self.model.coefficients();
        let len = t_b - t_a;
        let (ry, rw) = (ball.y_radius, ball.w_radius);
        let m2 = k.m * k.m;
        let (peak, dy, dw) = match self.which {
            Unknown::Rho => {
                let dv = self.model.div_sup(&self.model.div_v, t_a, t_b)?;
                (dv * ry, dv, 0.0)
            }
            Unknown::Pi => {
                let dv = self.model.div_sup(&self.model.div_v, t_a, t_b)?;
                let (fl, fs) = (k.sbar_l * k.m, k.sbar_s * k.m);
                let peak = dv * ry + (ry + k.pi_l) * fl * rw + (ry + k.pi_s) * fs * rw;
                (peak, dv + (fl + fs) * rw, fl * (ry + k.pi_l) + fs * (ry + k.pi_s))
            }
            Unknown::Sigma => {
                let du = self.model.div_sup(&self.model.div_u, t_a, t_b)?;
                let sat = ry + k.pi_l;
                let room = k.n_aero + (k.n_l + k.n_s) * rw;
                let peak = du * rw
                    + k.sbar_l * sat * rw
                    + (k.k_ls + k.k_sl) * rw
                    + k.g_a * room * sat
                    + k.g_l * sat * rw
                    + 1.5 * m2 * k.beta_l * rw * rw
                    + m2 * k.z_ls * rw * rw;
                let dy = k.sbar_l * rw + k.g_a * room + k.g_l * rw;
                let d_sigma = du
                    + k.sbar_l * sat
                    + k.k_ls
                    + k.g_a * k.n_l * sat
                    + k.g_l * sat
                    + 3.0 * m2 * k.beta_l * rw
                    + m2 * k.z_ls * rw;
                let d_nu = k.k_sl + k.g_a * k.n_s * sat + m2 * k.z_ls * rw;
                (peak, dy, d_sigma + d_nu)
            }
            Unknown::Nu => {
                let dwv = self.model.div_sup(&self.model.div_w, t_a, t_b)?;
                let sat = ry + k.pi_s;
                let peak = dwv * rw
                    + k.sbar_s * sat * rw
                    + k.g_s * sat * rw
                    + (k.k_ls + k.k_sl) * rw
                    + 0.5 * m2 * k.beta_qs * rw * rw
                    + m2 * k.beta_s * rw * rw
                    + 1.5 * m2 * k.z_ls * rw * rw;
                let dy = (k.sbar_s + k.g_s) * rw;
                let d_sigma = k.k_ls + 1.5 * m2 * k.z_ls * rw;
                let d_nu = dwv
                    + (k.sbar_s + k.g_s) * sat
                    + k.k_sl
                    + m2 * k.beta_qs * rw
                    + 2.0 * m2 * k.beta_s * rw
                    + 1.5 * m2 * k.z_ls * rw;
                (peak, dy, d_sigma + d_nu)
            }
        };
        Ok(Sensitivity {
            sup: peak * len,
            peak,
            dy: dy * len,
            dw: dw * len,
        })
    }

    fn is_local(&self) -> bool {
        self.which == Unknown::Rho
    }

    fn name(&self) -> String {
        match self.which {
            Unknown::Rho => "R*",
            Unknown::Pi => "P*",
            Unknown::Sigma => "S*",
            Unknown::Nu => "N*",
        }
        .into()
    }
}

/// The atmosphere as a coupled system: `y = (rho, pi)`, `w = (sigma, nu)`.
#[derive(Debug, Clone)]
pub struct AtmosphereSystem {
    pub system: QuasilinearSystem,
    pub model: Arc<AtmosphereModel>,
    pub fallback: DivergenceFallback,
}

/// Sorted union of the nodes of `role` over `fields`.
fn merged_nodes(fields: &[&SampledField], role: AxisRole) -> Option<Vec<f64>> {
    let mut all: Vec<f64> = fields
        .iter()
        .filter_map(|f| f.axis(role))
        .flat_map(|a| a.nodes.iter().copied())
        .collect();
    if all.is_empty() {
        return None;
    }
    all.sort_by(|a, b| a.total_cmp(b));
    all.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
    Some(all)
}

/// Nodes for the `pi` axis of the particle speeds: fine up to `2 r`, then
/// doubling out to `32 r`.
fn pi_axis(r: f64) -> Vec<f64> {
    let mut pos: Vec<f64> = (1..=16).map(|k| r * k as f64 / 8.0).collect();
    pos.extend([4.0, 8.0, 16.0, 32.0].iter().map(|s| s * r));
    let mut nodes: Vec<f64> = pos.iter().rev().map(|v| -v).collect();
    nodes.push(0.0);
    nodes.extend(pos);
    nodes
}

/// Particle speed `(s(m) [pi - pi_sat(T)], vel)` over `(t, m, x, pi)`.
fn particle_speed(
    vel: &SampledField,
    temperature: &SampledField,
    growth: &super::params::Profile,
    sat: &super::params::Profile,
    grid: &MassGrid,
    dim: usize,
    r: f64,
) -> Result<SampledField, MicroError> {
    let srcs = [vel, temperature];
    let mut axes = Vec::new();
    if let Some(t) = merged_nodes(&srcs, AxisRole::Time) {
        axes.push(Axis::new(AxisRole::Time, t));
    }
    let mut m_nodes = grid.nodes.clone();
    if let Some(extra) = merged_nodes(&[vel], AxisRole::Space(0)) {
        m_nodes.extend(extra.into_iter().filter(|&m| m >= 0.0 && m <= grid.m_max()));
        m_nodes.sort_by(|a, b| a.total_cmp(b));
        m_nodes.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
    }
    axes.push(Axis::new(AxisRole::Space(0), m_nodes));
    for k in 1..dim {
        if let Some(n) = merged_nodes(&srcs, AxisRole::Space(k)) {
            axes.push(Axis::new(AxisRole::Space(k), n));
        }
    }
    let mass_only = growth.is_zero();
    if !mass_only {
        axes.push(Axis::new(AxisRole::Y(1), pi_axis(r)));
    }
    let mut err = None;
    let f = SampledField::sample(axes, dim, |p, o| {
        let mut run = || -> Result<(), FieldError> {
            let speed = if mass_only {
                0.0
            } else {
                let temp = temperature.eval_comp(0, p)?;
                growth.eval(p.x[0]) * (p.y[1] - sat.eval(temp))
            };
            o[0] = speed;
            let mut phys = vec![0.0; dim - 1];
            vel.eval_into(p, &mut phys)?;
            o[1..].copy_from_slice(&phys);
            Ok(())
        };
        if let Err(e) = run() {
            err.get_or_insert(e);
        }
    })?;
    match err {
        Some(e) => Err(e.into()),
        None => Ok(f),
    }
}

fn check_state(state: &AtmosphereState, params: &MicrophysicsParams) -> Vec<String> {
    let mut errs = Vec::new();
    for (name, f) in [("rho", &state.rho), ("pi", &state.pi), ("sigma", &state.sigma), ("nu", &state.nu)] {
        let min = f.component(0).iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if min < -STATE_SLACK {
            errs.push(format!("{name} has negative values (min {min})"));
        }
    }
    for (name, f) in [("sigma", &state.sigma), ("nu", &state.nu)] {
        let Some(j) = f.axis_index(AxisRole::Space(0)) else {
            if f.component(0).iter().any(|v| v.abs() > STATE_SLACK) {
                errs.push(format!("{name} must have a mass axis x1"));
            }
            continue;
        };
        let ax = &f.axes()[j];
        let s = f.strides()[j];
        let tol = 1e-12 * params.m_star;
        let leak = f.component(0).iter().enumerate().any(|(flat, v)| {
            let m = ax.nodes[(flat / s) % ax.len()];
            (m < params.m_a - tol || m > params.m_star + tol) && v.abs() > STATE_SLACK
        });
        if leak {
            errs.push(format!("{name} is nonzero outside [m_a, M*] = [{}, {}]", params.m_a, params.m_star));
        }
    }
    errs
}

/// Builds the coupled system on `domain` (dimension `1 + v.ncomp()`) with the
/// mass grid `mass_nodes` on `[0, M*]`, which must be the `x1` axis of the
/// solution lattice.
pub fn build_system(
    state: &AtmosphereState,
    params: &MicrophysicsParams,
    domain: &StripDomain,
    mass_nodes: &[f64],
) -> Result<AtmosphereSystem, MicroError> {
    let d = state.dim();
    if domain.dim() != d || d < 2 {
        return Err(MicroError::Invalid(format!(
            "domain has dimension {} but the velocities imply {d}",
            domain.dim()
        )));
    }
    for (name, f) in [("u", &state.u), ("w", &state.w_vel)] {
        if f.ncomp() != d - 1 {
            return Err(MicroError::Invalid(format!("{name} has {} components, expected {}", f.ncomp(), d - 1)));
        }
    }
    let temps = state.temperature.component(0).to_vec();
    params.validate(4001, &temps)?;
    let grid = MassGrid::new(mass_nodes.to_vec())?;
    if (grid.m_max() - params.m_star).abs() > 1e-12 * params.m_star {
        return Err(MicroError::Invalid(format!(
            "mass grid must end at M* = {}, ends at {}",
            params.m_star,
            grid.m_max()
        )));
    }
    let errs = check_state(state, params);
    if !errs.is_empty() {
        return Err(MicroError::SupportViolation(errs));
    }
    let origin = domain.origin();
    let y0 = vec![
        state.rho.slice(AxisRole::Time, origin)?.select(&[0])?,
        state.pi.slice(AxisRole::Time, origin)?.select(&[0])?,
    ];
    let y_sup = y0
        .iter()
        .flat_map(|f| f.component(0).iter())
        .fold(0.0f64, |a, v| a.max(v.abs()))
        + 1.0;
    let u = particle_speed(&state.u, &state.temperature, &params.s_l, &params.pi_l, &grid, d, y_sup)?;
    let w = particle_speed(&state.w_vel, &state.temperature, &params.s_s, &params.pi_s, &grid, d, y_sup)?;
    let mut cone = Vec::new();
    for (name, f) in [("u", &u), ("w", &w)] {
        let rep = check_cone_membership(f, d);
        if !rep.is_member {
            cone.push(format!(
                "{name}: vertical speed must be <= -B < 0; {} offending nodes, max {}",
                rep.violation_count, -rep.b_d
            ));
        }
    }
    if !cone.is_empty() {
        return Err(MicroError::ConeViolation(cone));
    }
    let mut vvals = vec![vec![0.0; state.v.node_count()]];
    vvals.extend(state.v.values().iter().cloned());
    let v = SampledField::new(state.v.axes().to_vec(), vvals)?;
    let ([div_v, div_u, div_w], fallback) = state.divergences()?;
    let model = Arc::new(AtmosphereModel {
        params: params.clone(),
        grid,
        temperature: state.temperature.clone(),
        div_v,
        div_u,
        div_w,
    });
    let src = |which| -> Arc<dyn SourceTerm> {
        Arc::new(AtmosphereSource {
            model: model.clone(),
            which,
        })
    };
    let system = QuasilinearSystem {
        domain: domain.clone(),
        v: vec![v.clone(), v],
        u: vec![u, w],
        f: vec![src(Unknown::Rho), src(Unknown::Pi)],
        g: vec![src(Unknown::Sigma), src(Unknown::Nu)],
        y0,
        w_star: vec![
            InflowData::single(state.sigma.select(&[0])?),
            InflowData::single(state.nu.select(&[0])?),
        ],
    };
    if let Err(errs) = system.validate(1e-12) {
        return Err(MicroError::Invalid(errs.join("; ")));
    }
    Ok(AtmosphereSystem { system, model, fallback })
}

/// Invariant checks on solved slabs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtmosphereDiagnostics {
    /// Smallest value of each unknown: rho, pi, sigma, nu.
    pub minima: [f64; 4],
    /// Largest `|sigma|`, `|nu|` at mass nodes outside `[m_a, M*]`.
    pub support_leak: f64,
    /// Largest `|value|` over all unknowns, the scale of the checks.
    pub scale: f64,
}

pub fn diagnostics(params: &MicrophysicsParams, sols: &[CoupledSolution]) -> AtmosphereDiagnostics {
    let mut minima = [f64::INFINITY; 4];
    let mut leak = 0.0f64;
    let mut scale = 0.0f64;
    let tol = 1e-12 * params.m_star;
    for sol in sols {
        for (k, c) in sol.y().values().iter().chain(sol.w().values()).enumerate() {
            for &v in c {
                minima[k] = minima[k].min(v);
                scale = scale.max(v.abs());
            }
        }
        let w = sol.w();
        let j = w.axis_index(AxisRole::Space(0)).expect("solution lattice has a mass axis");
        let ax = &w.axes()[j];
        let s = w.strides()[j];
        for c in w.values() {
            for (flat, &v) in c.iter().enumerate() {
                let m = ax.nodes[(flat / s) % ax.len()];
                if m < params.m_a - tol || m > params.m_star + tol {
                    leak = leak.max(v.abs());
                }
            }
        }
    }
    AtmosphereDiagnostics {
        minima,
        support_leak: leak,
        scale,
    }
}

/// Total water in the window and its fluxes through the bottom and top
/// faces. Horizontal fluxes are not counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaterBudget {
    pub initial: f64,
    pub last: f64,
    pub inflow: f64,
    pub outflow: f64,
    /// `(last - initial - inflow + outflow) / initial`.
    pub relative_residual: f64,
}

fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let h = nodes[k + 1] - nodes[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

/// Water budget over solved slabs: vapour plus condensed mass, with the
/// vertical particle fluxes `-u_d sigma` and `-w_d nu` through `x_d = 0`
/// (out) and `x_d = 1` (in).
pub fn water_budget(state: &AtmosphereState, sols: &[CoupledSolution]) -> Result<WaterBudget, FieldError> {
    let mut total_at = Vec::new();
    let mut inflow = 0.0;
    let mut outflow = 0.0;
    for sol in sols {
        let y = sol.y();
        let w = sol.w();
        let nt = y.axes()[0].len();
        let tn = y.axes()[0].nodes.clone();
        let space: Vec<&Axis> = y.axes()[1..].iter().collect();
        let d = space.len();
        let wts: Vec<Vec<f64>> = space.iter().map(|a| trapezoid_weights(&a.nodes)).collect();
        let per_t: usize = space.iter().map(|a| a.len()).product();
        let mut flux_rates = Vec::with_capacity(nt);
        for kt in 0..nt {
            let t = tn[kt];
            let mut total = 0.0;
            let mut flux = (0.0, 0.0);
            for r in 0..per_t {
                let mut rem = r;
                let mut ix = vec![0usize; d];
                for j in (0..d).rev() {
                    ix[j] = rem % space[j].len();
                    rem /= space[j].len();
                }
                let x: Vec<f64> = (0..d).map(|j| space[j].nodes[ix[j]]).collect();
                let flat = kt * per_t + r;
                let wm = wts[0][ix[0]];
                let wx: f64 = (1..d).map(|j| wts[j][ix[j]]).product();
                // Vapour does not depend on mass: count it once per column.
                if ix[0] == 0 {
                    total += wx * y.component(1)[flat];
                }
                let (s, n) = (w.component(0)[flat], w.component(1)[flat]);
                total += wm * wx * (s + n);
                let zk = ix[d - 1];
                if zk == 0 || zk == space[d - 1].len() - 1 {
                    let p = Point::tx(t, &x);
                    let ud = state.u.eval_comp(d - 2, &p)?;
                    let wd = state.w_vel.eval_comp(d - 2, &p)?;
                    let wh: f64 = wm * (1..d - 1).map(|j| wts[j][ix[j]]).product::<f64>();
                    let f = -wh * (ud * s + wd * n);
                    if zk == 0 {
                        flux.0 += f;
                    } else {
                        flux.1 += f;
                    }
                }
            }
            if kt > 0 || total_at.is_empty() {
                total_at.push(total);
            }
            flux_rates.push(flux);
        }
        let tw = trapezoid_weights(&tn);
        for (k, (o, i)) in flux_rates.into_iter().enumerate() {
            outflow += tw[k] * o;
            inflow += tw[k] * i;
        }
    }
    let initial = *total_at.first().unwrap_or(&0.0);
    let last = *total_at.last().unwrap_or(&0.0);
    let residual = last - initial - inflow + outflow;
    Ok(WaterBudget {
        initial,
        last,
        inflow,
        outflow,
        relative_residual: if initial != 0.0 { residual / initial } else { residual },
    })
}
