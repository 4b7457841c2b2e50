//! First-order upwind finite differences for the same systems, used only to
//! cross-check the characteristic solver on small local problems.
//!
//! Coefficients are read from the raw samples of each field with a separate
//! multilinear interpolator, so that no numerical kernel is shared with the
//! main solver.

use crate::field::{AxisRole, SampledField};
use crate::geometry::Extension;
use crate::quasilinear::{CoupledSolution, NodeState, QuasilinearSystem};
use crate::transport::InflowData;
use serde::Serialize;
use thiserror::Error;

pub const MAX_CFL: f64 = 0.9;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("CFL number {cfl} exceeds {max}")]
    CflViolation { cfl: f64, max: f64 },
    #[error("the oracle only handles pointwise sources ({0} is not)")]
    NonlocalSource(String),
    #[error("source evaluation failed: {0}")]
    Source(String),
    #[error("invalid oracle setup: {0}")]
    Invalid(String),
}

/// Multilinear lookup on the raw samples of a field, clamped to its axes.
struct Probe<'a> {
    f: &'a SampledField,
}

impl Probe<'_> {
    fn coord(role: AxisRole, t: f64, x: &[f64], y: &[f64]) -> f64 {
        match role {
            AxisRole::Time => t,
            AxisRole::Space(k) => x.get(k).copied().unwrap_or(0.0),
            AxisRole::Y(k) => y.get(k).copied().unwrap_or(0.0),
            AxisRole::W(_) => 0.0,
        }
    }

    fn at(&self, c: usize, t: f64, x: &[f64], y: &[f64]) -> f64 {
        let axes = self.f.axes();
        let vals = self.f.component(c);
        let mut base = 0usize;
        let mut frac = Vec::with_capacity(axes.len());
        let strides = self.f.strides();
        for (j, a) in axes.iter().enumerate() {
            let v = Self::coord(a.role, t, x, y).clamp(a.nodes[0], a.nodes[a.nodes.len() - 1]);
            let mut i = 0;
            while i + 2 < a.nodes.len() && a.nodes[i + 1] <= v {
                i += 1;
            }
            let th = (v - a.nodes[i]) / (a.nodes[i + 1] - a.nodes[i]);
            base += i * strides[j];
            frac.push((strides[j], th));
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << frac.len()) {
            let mut w = 1.0;
            let mut off = 0;
            for (j, &(s, th)) in frac.iter().enumerate() {
                if (corner >> j) & 1 == 1 {
                    w *= th;
                    off += s;
                } else {
                    w *= 1.0 - th;
                }
            }
            if w != 0.0 {
                acc += w * vals[base + off];
            }
        }
        acc
    }
}

/// Uniform tensor grid plus time step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdGrid {
    pub nodes: Vec<Vec<f64>>,
    pub extension: Vec<Extension>,
    pub dt: f64,
    pub cfl: f64,
}

impl FdGrid {
    pub fn len(&self) -> usize {
        self.nodes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn min_spacing(&self) -> f64 {
        self.nodes
            .iter()
            .map(|a| a[1] - a[0])
            .fold(f64::INFINITY, f64::min)
    }

    fn strides(&self) -> Vec<usize> {
        let d = self.nodes.len();
        let mut s = vec![1usize; d];
        for j in (0..d.saturating_sub(1)).rev() {
            s[j] = s[j + 1] * self.nodes[j + 1].len();
        }
        s
    }

    fn coords(&self, flat: usize, strides: &[usize]) -> (Vec<usize>, Vec<f64>) {
        let ix: Vec<usize> = strides
            .iter()
            .enumerate()
            .map(|(j, s)| (flat / s) % self.nodes[j].len())
            .collect();
        let x = ix.iter().enumerate().map(|(j, &i)| self.nodes[j][i]).collect();
        (ix, x)
    }
}

/// Values of every unknown on the grid at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub t: f64,
    pub y: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
}

fn inflow_value(data: &InflowData, top: bool, t: f64, x: &[f64]) -> f64 {
    let f = if top { &data.top } else { &data.initial };
    Probe { f }.at(0, t, x, &[])
}

/// Neighbour index of `i` one step in direction `dir` along an axis of
/// `n` nodes.
fn neighbour(i: usize, n: usize, up: bool, ext: Option<Extension>) -> usize {
    match (up, ext) {
        (true, Some(Extension::Periodic)) if i + 1 == n => 1,
        (false, Some(Extension::Periodic)) if i == 0 => n - 2,
        (true, _) => (i + 1).min(n - 1),
        (false, _) => i.saturating_sub(1),
    }
}

/// Sum over axes of the donor-cell difference `s_k (z - z_upwind) / h`.
fn advection(z: &[f64], flat: usize, ix: &[usize], speed: &[f64], grid: &FdGrid, strides: &[usize]) -> f64 {
    let d = grid.nodes.len();
    let mut acc = 0.0;
    for k in 0..d {
        let s = speed[k];
        if s == 0.0 {
            continue;
        }
        let n = grid.nodes[k].len();
        let ext = if k + 1 < d { Some(grid.extension[k]) } else { None };
        let i = ix[k];
        let up = s < 0.0;
        let j = neighbour(i, n, up, ext);
        if j == i {
            continue;
        }
        let h = grid.nodes[k][1] - grid.nodes[k][0];
        let nb = flat as isize + (j as isize - i as isize) * strides[k] as isize;
        let diff = if up { z[nb as usize] - z[flat] } else { z[flat] - z[nb as usize] };
        acc += s * diff / h;
    }
    acc
}

/// One explicit step: donor-cell upwind transport plus Euler source terms.
pub fn upwind_step(sys: &QuasilinearSystem, grid: &FdGrid, level: &Level) -> Result<Level, OracleError> {
    if grid.cfl > MAX_CFL {
        return Err(OracleError::CflViolation {
            cfl: grid.cfl,
            max: MAX_CFL,
        });
    }
    let d = grid.nodes.len();
    let strides = grid.strides();
    let n = grid.len();
    let (t, dt) = (level.t, grid.dt);
    let mut next = Level {
        t: t + dt,
        y: level.y.clone(),
        w: level.w.clone(),
    };
    let mut yv = vec![0.0; sys.p()];
    let mut wv = vec![0.0; sys.q()];
    let mut speed = vec![0.0; d];
    for flat in 0..n {
        let (ix, x) = grid.coords(flat, &strides);
        for (k, c) in level.y.iter().enumerate() {
            yv[k] = c[flat];
        }
        for (k, c) in level.w.iter().enumerate() {
            wv[k] = c[flat];
        }
        let st = NodeState::local(t, &x, &yv, &wv);
        for i in 0..sys.p() {
            let pr = Probe { f: &sys.v[i] };
            for (k, s) in speed.iter_mut().enumerate() {
                *s = pr.at(k, t, &x, &yv);
            }
            let f = sys.f[i].eval(&st).map_err(|e| OracleError::Source(e.to_string()))?;
            next.y[i][flat] = level.y[i][flat] - dt * advection(&level.y[i], flat, &ix, &speed, grid, &strides) + dt * f;
        }
        for j in 0..sys.q() {
            if ix[d - 1] + 1 == grid.nodes[d - 1].len() {
                next.w[j][flat] = inflow_value(&sys.w_star[j], true, t + dt, &x);
                continue;
            }
            let pr = Probe { f: &sys.u[j] };
            for (k, s) in speed.iter_mut().enumerate() {
                *s = pr.at(k, t, &x, &yv);
            }
            let g = sys.g[j].eval(&st).map_err(|e| OracleError::Source(e.to_string()))?;
            next.w[j][flat] = level.w[j][flat] - dt * advection(&level.w[j], flat, &ix, &speed, grid, &strides) + dt * g;
        }
    }
    Ok(next)
}

/// Largest `sum_k |s_k| / h_k` over the samples of the velocity fields.
fn speed_rate(sys: &QuasilinearSystem, nodes: &[Vec<f64>]) -> f64 {
    let d = nodes.len();
    let mut best = 0.0f64;
    for f in sys.v.iter().chain(&sys.u) {
        for flat in 0..f.node_count() {
            let r: f64 = (0..d).map(|k| f.component(k)[flat].abs() / (nodes[k][1] - nodes[k][0])).sum();
            best = best.max(r);
        }
    }
    best
}

/// Upwind solution at `t_end` from the initial data at the domain origin,
/// on a grid with `n[k]` nodes per axis.
pub fn fd_solve(sys: &QuasilinearSystem, n: &[usize], t_end: f64, cfl: f64) -> Result<(FdGrid, Level), OracleError> {
    if let Some(s) = sys.f.iter().chain(&sys.g).find(|s| !s.is_local()) {
        return Err(OracleError::NonlocalSource(s.name()));
    }
    let d = sys.domain.dim();
    if n.len() != d || n.iter().any(|&k| k < 3) {
        return Err(OracleError::Invalid(format!("need {d} axes with at least 3 nodes")));
    }
    let mut nodes = Vec::with_capacity(d);
    for k in 0..d {
        let (lo, hi) = if k + 1 < d {
            (sys.domain.window_lo()[k], sys.domain.window_hi()[k])
        } else {
            (0.0, 1.0)
        };
        let h = (hi - lo) / (n[k] - 1) as f64;
        nodes.push((0..n[k]).map(|i| if i + 1 == n[k] { hi } else { lo + h * i as f64 }).collect::<Vec<_>>());
    }
    let t0 = sys.domain.origin();
    let span = t_end - t0;
    if !(span > 0.0) {
        return Err(OracleError::Invalid("t_end must exceed the origin".into()));
    }
    let rate = speed_rate(sys, &nodes);
    let h_min = nodes.iter().map(|a| a[1] - a[0]).fold(f64::INFINITY, f64::min);
    let dt_max = if rate > 0.0 { cfl / rate } else { h_min };
    let steps = (span / dt_max).ceil().max(1.0) as usize;
    let dt = span / steps as f64;
    let grid = FdGrid {
        nodes,
        extension: sys.domain.extensions().to_vec(),
        dt,
        cfl: dt * rate,
    };
    let strides = grid.strides();
    let total = grid.len();
    let mut level = Level {
        t: t0,
        y: vec![vec![0.0; total]; sys.p()],
        w: vec![vec![0.0; total]; sys.q()],
    };
    for flat in 0..total {
        let (_, x) = grid.coords(flat, &strides);
        for i in 0..sys.p() {
            level.y[i][flat] = Probe { f: &sys.y0[i] }.at(0, t0, &x, &[]);
        }
        for j in 0..sys.q() {
            level.w[j][flat] = inflow_value(&sys.w_star[j], false, t0, &x);
        }
    }
    for _ in 0..steps {
        level = upwind_step(sys, &grid, &level)?;
    }
    level.t = t_end;
    Ok((grid, level))
}

/// Discrepancy between two node-value sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Discrepancy {
    pub linf: f64,
    /// Mean absolute difference.
    pub l1: f64,
}

pub fn discrepancy(a: &[f64], b: &[f64]) -> Discrepancy {
    let n = a.len().max(1) as f64;
    let mut linf = 0.0f64;
    let mut l1 = 0.0;
    for (p, q) in a.iter().zip(b) {
        let e = (p - q).abs();
        linf = linf.max(e);
        l1 += e;
    }
    Discrepancy { linf, l1: l1 / n }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelReport {
    pub h: f64,
    pub dt: f64,
    pub gap: Discrepancy,
    /// `C h` with `C` fitted on the coarsest level.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub levels: Vec<LevelReport>,
    /// `gap_{k+1} / gap_k`.
    pub ratios: Vec<f64>,
    pub c_fit: f64,
    pub pass: bool,
}

/// Accepted range of gap ratios under halving of `h`.
pub const RATIO_WINDOW: (f64, f64) = (0.35, 0.65);

/// Allowed excess of a level's gap over the fitted `C h`.
pub const BOUND_SLACK: f64 = 1.3;

/// Compares the characteristic solution at the end of `sols` with upwind
/// solutions on `levels` successively halved grids, the coarsest sharing the
/// solution lattice's spacing. The gap is measured at the lattice nodes.
pub fn compare(
    sys: &QuasilinearSystem,
    sols: &[CoupledSolution],
    grid: &[Vec<f64>],
    levels: usize,
    cfl: f64,
) -> Result<OracleReport, OracleError> {
    let last = sols.last().ok_or_else(|| OracleError::Invalid("no solved slabs".into()))?;
    let t_end = last.t_b;
    let mut reference = Vec::new();
    let ends: Vec<SampledField> = [last.y.as_ref(), last.w.as_ref()]
        .into_iter()
        .flatten()
        .map(|f| f.slice(AxisRole::Time, t_end).map_err(|e| OracleError::Invalid(e.to_string())))
        .collect::<Result<_, _>>()?;
    for f in &ends {
        for c in f.values() {
            reference.extend_from_slice(c);
        }
    }
    let d = grid.len();
    let mut out = Vec::new();
    for lvl in 0..levels {
        let n: Vec<usize> = grid.iter().map(|a| (a.len() - 1) * (1 << lvl) + 1).collect();
        let (fg, fd) = fd_solve(sys, &n, t_end, cfl)?;
        let mut vals = Vec::with_capacity(reference.len());
        let strides = fg.strides();
        for comp in fd.y.iter().chain(&fd.w) {
            for flat in 0..grid.iter().map(|a| a.len()).product::<usize>() {
                let mut rem = flat;
                let mut idx = vec![0usize; d];
                for j in (0..d).rev() {
                    idx[j] = rem % grid[j].len();
                    rem /= grid[j].len();
                }
                let f: usize = (0..d).map(|j| idx[j] * (1 << lvl) * strides[j]).sum();
                vals.push(comp[f]);
            }
        }
        let h = grid.iter().map(|a| (a[1] - a[0]) / (1 << lvl) as f64).fold(0.0, f64::max);
        out.push(LevelReport {
            h,
            dt: fg.dt,
            gap: discrepancy(&vals, &reference),
            bound: 0.0,
        });
    }
    let c_fit = out[0].gap.linf / out[0].h;
    for l in out.iter_mut() {
        l.bound = c_fit * l.h;
    }
    let ratios: Vec<f64> = out
        .windows(2)
        .map(|p| if p[0].gap.linf > 0.0 { p[1].gap.linf / p[0].gap.linf } else { 0.0 })
        .collect();
    let in_window = ratios.iter().all(|r| *r >= RATIO_WINDOW.0 && *r <= RATIO_WINDOW.1);
    let under = out.iter().all(|l| l.gap.linf <= BOUND_SLACK * l.bound + 1e-14);
    Ok(OracleReport {
        levels: out,
        ratios,
        c_fit,
        pass: in_window && under,
    })
}

/// The system with the velocity reversed in every tangential direction: `v`
/// negated and the horizontal components of `u` negated. Used as a negative
/// control.
pub fn corrupt(sys: &QuasilinearSystem) -> QuasilinearSystem {
    let d = sys.domain.dim();
    let mut s = sys.clone();
    s.v = sys.v.iter().map(|f| f.map_values(|z| -z)).collect();
    s.u = sys
        .u
        .iter()
        .map(|f| {
            let mut g = f.clone();
            for c in 0..d - 1 {
                for z in g.values_mut()[c].iter_mut() {
                    *z = -*z;
                }
            }
            g
        })
        .collect();
    s
}
