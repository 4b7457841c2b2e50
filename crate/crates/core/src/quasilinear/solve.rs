//! Nested fixed-point iterations on one slab, and continuation over slabs.

use super::{certify_slab, Caps, NodeState, LatticeRef, QuasiError, QuasilinearSystem, SlabCertificate, SolverSettings};
use crate::characteristics::{trace_backward, CharacteristicResult, Parametric, TraceMode, VelocityField};
use crate::field::{sup_all, AxisRole, Combine, FieldError, NormQuery, Point, SampledField};
use crate::geometry::StripDomain;
use crate::lattice::Lattice;
use rayon::prelude::*;
use serde::Serialize;

/// Solution lattice of one slab and an interpolation probe on it.
#[derive(Debug, Clone)]
pub struct SlabLattice {
    pub lattice: Lattice,
    probe: SampledField,
}

impl SlabLattice {
    pub fn new(t_a: f64, t_b: f64, grid_dt: f64, grid: &[Vec<f64>]) -> Result<Self, FieldError> {
        let lattice = Lattice::uniform_in_time(t_a, t_b, grid_dt, grid.to_vec());
        let probe = lattice.field(vec!["probe".into()], vec![vec![0.0; lattice.len()]])?;
        Ok(Self { lattice, probe })
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattice.is_empty()
    }

    pub fn field(&self, prefix: &str, values: &[Vec<f64>]) -> Result<SampledField, FieldError> {
        let names = (1..=values.len()).map(|k| format!("{prefix}_{k}")).collect();
        self.lattice.field(names, values.to_vec())
    }
}

/// For every lattice node: the inflow value plus a sparse row that turns
/// node values of a source into its integral along the node's path.
#[derive(Debug, Clone)]
struct PathBundle {
    base: Vec<f64>,
    rows: Vec<(Vec<u32>, Vec<f64>)>,
}

impl PathBundle {
    fn apply(&self, src: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(k, o)| {
            let (idx, wt) = &self.rows[k];
            let mut acc = 0.0;
            for (&i, &w) in idx.iter().zip(wt) {
                acc += w * src[i as usize];
            }
            *o = self.base[k] + acc;
        });
    }
}

/// Midpoint-rule row of one path: weights `h_j` at the panel midpoints,
/// spread onto lattice nodes by multilinear interpolation.
fn path_row(
    path: &CharacteristicResult,
    domain: &StripDomain,
    slab: &SlabLattice,
) -> Result<(Vec<u32>, Vec<f64>), FieldError> {
    let d = path.dim;
    let mut pairs: Vec<(u32, f64)> = Vec::new();
    let mut idx = Vec::new();
    let mut wt = Vec::new();
    let mut mid = vec![0.0; d];
    for j in 0..path.len().saturating_sub(1) {
        let h = path.s[j + 1] - path.s[j];
        if h <= 0.0 {
            continue;
        }
        let s = 0.5 * (path.s[j] + path.s[j + 1]);
        let (a, b) = (path.position(j), path.position(j + 1));
        for i in 0..d {
            mid[i] = 0.5 * (a[i] + b[i]);
        }
        domain.wrap_in_place(&mut mid);
        mid[d - 1] = mid[d - 1].clamp(0.0, 1.0);
        idx.clear();
        wt.clear();
        slab.probe.stencil_into(&Point::tx(s, &mid), &mut idx, &mut wt)?;
        pairs.extend(idx.iter().zip(&wt).map(|(&i, &w)| (i as u32, h * w)));
    }
    pairs.sort_by_key(|p| p.0);
    let mut out_i: Vec<u32> = Vec::with_capacity(pairs.len());
    let mut out_w: Vec<f64> = Vec::with_capacity(pairs.len());
    for (i, w) in pairs {
        if out_i.last() == Some(&i) {
            *out_w.last_mut().unwrap() += w;
        } else {
            out_i.push(i);
            out_w.push(w);
        }
    }
    Ok((out_i, out_w))
}

fn build_bundle(
    slab: &SlabLattice,
    domain: &StripDomain,
    vel: &dyn VelocityField,
    mode: TraceMode,
    settings: &SolverSettings,
    base: &(dyn Fn(&CharacteristicResult) -> Result<f64, QuasiError> + Sync),
) -> Result<PathBundle, QuasiError> {
    let lat = &slab.lattice;
    let items: Vec<(f64, (Vec<u32>, Vec<f64>))> = (0..lat.len())
        .into_par_iter()
        .map(|flat| {
            let (t, x) = lat.coords(flat);
            let path = trace_backward(vel, domain, t, &x, None, mode, &settings.step)?;
            let b = base(&path)?;
            Ok((b, path_row(&path, domain, slab)?))
        })
        .collect::<Result<_, QuasiError>>()?;
    let (base, rows) = items.into_iter().unzip();
    Ok(PathBundle { base, rows })
}

fn v_bundles(
    sys: &QuasilinearSystem,
    slab: &SlabLattice,
    settings: &SolverSettings,
) -> Result<Vec<PathBundle>, QuasiError> {
    (0..sys.p())
        .map(|i| {
            let vel = Parametric::new(&sys.v[i], None);
            let y0 = &sys.y0[i];
            let base = move |p: &CharacteristicResult| -> Result<f64, QuasiError> {
                let x0 = sys.domain.wrap_position(p.position(0));
                Ok(y0.eval_comp(0, &Point::tx(p.s[0], &x0))?)
            };
            build_bundle(slab, &sys.domain, &vel, TraceMode::Tangential, settings, &base)
        })
        .collect()
}

fn u_bundles(
    sys: &QuasilinearSystem,
    slab: &SlabLattice,
    y: &[Vec<f64>],
    settings: &SolverSettings,
) -> Result<Vec<PathBundle>, QuasiError> {
    let h = if sys.p() > 0 {
        Some(slab.field("y", y)?)
    } else {
        None
    };
    (0..sys.q())
        .map(|j| {
            let vel = Parametric::new(&sys.u[j], h.as_ref());
            let data = &sys.w_star[j];
            let base = move |p: &CharacteristicResult| -> Result<f64, QuasiError> {
                let e = p.entry.as_ref().expect("full trace");
                Ok(data.eval_comp(0, e)?)
            };
            build_bundle(slab, &sys.domain, &vel, TraceMode::Entry, settings, &base)
        })
        .collect()
}

/// Node values of the sources in `srcs` for state `(y, w)`.
fn eval_sources(
    srcs: &[std::sync::Arc<dyn super::SourceTerm>],
    slab: &SlabLattice,
    y: &[Vec<f64>],
    w: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, QuasiError> {
    let lat = &slab.lattice;
    let rows: Vec<Vec<f64>> = (0..lat.len())
        .into_par_iter()
        .map(|flat| {
            let (t, x) = lat.coords(flat);
            let yv: Vec<f64> = y.iter().map(|c| c[flat]).collect();
            let wv: Vec<f64> = w.iter().map(|c| c[flat]).collect();
            let st = NodeState {
                t,
                x: &x,
                y: &yv,
                w: &wv,
                lattice: Some(LatticeRef {
                    lattice: lat,
                    flat,
                    y,
                    w,
                }),
            };
            srcs.iter()
                .map(|s| s.eval(&st).map_err(QuasiError::from))
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let n = srcs.len();
    let mut out = vec![vec![0.0; lat.len()]; n];
    for (flat, r) in rows.into_iter().enumerate() {
        for k in 0..n {
            out[k][flat] = r[k];
        }
    }
    Ok(out)
}

fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(u, v)| u.iter().zip(v).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn check_caps(
    slab: &SlabLattice,
    vals: &[Vec<f64>],
    prefix: &str,
    sup_cap: f64,
    grad_cap: f64,
) -> Result<(), QuasiError> {
    let slack = 1.0 + 1e-9;
    let sup = vals.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if sup > sup_cap * slack {
        return Err(QuasiError::BallEscape {
            what: format!("||{prefix}||_inf"),
            value: sup,
            cap: sup_cap,
        });
    }
    if vals.is_empty() {
        return Ok(());
    }
    let f = slab.field(prefix, vals)?;
    for c in 0..vals.len() {
        let g = sup_all(&f, &NormQuery::dx(Combine::Frobenius).comps(vec![c]));
        if g > grad_cap * slack {
            return Err(QuasiError::BallEscape {
                what: format!("||D_x {prefix}{}||_inf", c + 1),
                value: g,
                cap: grad_cap,
            });
        }
    }
    Ok(())
}

/// Fixed point `y = L(y)` for frozen `w_bar`, starting from `start`.
fn inner_loop(
    sys: &QuasilinearSystem,
    slab: &SlabLattice,
    vb: &[PathBundle],
    w_bar: &[Vec<f64>],
    start: Vec<Vec<f64>>,
    caps: Option<&Caps>,
    settings: &SolverSettings,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), QuasiError> {
    let mut y = start;
    let mut trace = Vec::new();
    if sys.p() == 0 {
        return Ok((y, trace));
    }
    let mut next = y.clone();
    for _ in 0..settings.picard.max_iters.max(1) {
        let f = eval_sources(&sys.f, slab, &y, w_bar)?;
        for i in 0..sys.p() {
            vb[i].apply(&f[i], &mut next[i]);
        }
        let diff = sup_diff(&y, &next);
        trace.push(diff);
        if let Some(c) = caps {
            check_caps(slab, &next, "y", c.y_sup, c.y_grad)?;
        }
        std::mem::swap(&mut y, &mut next);
        if diff <= settings.picard.tol {
            return Ok((y, trace));
        }
    }
    Err(QuasiError::NoConvergence {
        stage: "inner y".into(),
        trace,
    })
}

/// Solves the `y` equations on `slab` for the given `w_bar` (node values per
/// component) by successive approximations from the pullback of `y0`.
pub fn solve_semilinear_y(
    sys: &QuasilinearSystem,
    slab: &SlabLattice,
    w_bar: &[Vec<f64>],
    caps: Option<&Caps>,
    settings: &SolverSettings,
) -> Result<(SampledField, Vec<f64>), QuasiError> {
    let sys = at_origin(sys, slab.lattice.t[0]);
    let vb = v_bundles(&sys, slab, settings)?;
    let start: Vec<Vec<f64>> = vb.iter().map(|b| b.base.clone()).collect();
    let (y, tr) = inner_loop(&sys, slab, &vb, w_bar, start, caps, settings)?;
    Ok((slab.field("y", &y)?, tr))
}

fn at_origin(sys: &QuasilinearSystem, t_a: f64) -> QuasilinearSystem {
    let mut s = sys.clone();
    s.domain = sys.domain.with_origin(t_a);
    s
}

/// Solution of one slab with its certificate and iteration logs.
#[derive(Debug, Clone, Serialize)]
pub struct CoupledSolution {
    pub t_a: f64,
    pub t_b: f64,
    #[serde(skip)]
    pub y: Option<SampledField>,
    #[serde(skip)]
    pub w: Option<SampledField>,
    pub certificate: SlabCertificate,
    /// `||w_{k+1} - w_k||_inf` per outer pass.
    pub outer_trace: Vec<f64>,
    /// Inner `y` iteration differences, one list per outer pass (the last one
    /// is the final re-solve).
    pub inner_traces: Vec<Vec<f64>>,
}

impl CoupledSolution {
    pub fn y(&self) -> &SampledField {
        self.y.as_ref().expect("solution fields present")
    }

    pub fn w(&self) -> &SampledField {
        self.w.as_ref().expect("solution fields present")
    }

    /// Ratios of consecutive outer differences.
    pub fn outer_ratios(&self) -> Vec<f64> {
        self.outer_trace
            .windows(2)
            .map(|p| if p[0] > 0.0 { p[1] / p[0] } else { 0.0 })
            .collect()
    }
}

fn node_values(f: Option<&SampledField>) -> Vec<Vec<f64>> {
    f.map(|f| f.values().to_vec()).unwrap_or_default()
}

/// Outer iteration on `w` over the certified slab.
pub fn solve_slab(
    sys: &QuasilinearSystem,
    cert: &SlabCertificate,
    settings: &SolverSettings,
) -> Result<CoupledSolution, QuasiError> {
    let (t_a, t_b) = (cert.t_a, cert.t_b());
    let sys = at_origin(sys, t_a);
    let slab = SlabLattice::new(t_a, t_b, settings.grid_dt, &settings.grid)?;
    let caps = &cert.caps;
    let vb = v_bundles(&sys, &slab, settings)?;
    let mut y: Vec<Vec<f64>> = vb.iter().map(|b| b.base.clone()).collect();
    let ub = u_bundles(&sys, &slab, &y, settings)?;
    let mut w: Vec<Vec<f64>> = ub.iter().map(|b| b.base.clone()).collect();
    let mut outer = Vec::new();
    let mut inner = Vec::new();
    let mut next = w.clone();
    let mut converged = sys.q() == 0;
    for _ in 0..settings.picard.max_iters.max(1) {
        if converged {
            break;
        }
        let (yn, tr) = inner_loop(&sys, &slab, &vb, &w, y, Some(caps), settings)?;
        y = yn;
        inner.push(tr);
        let ub = u_bundles(&sys, &slab, &y, settings)?;
        let g = eval_sources(&sys.g, &slab, &y, &w)?;
        for j in 0..sys.q() {
            ub[j].apply(&g[j], &mut next[j]);
        }
        let diff = sup_diff(&w, &next);
        outer.push(diff);
        check_caps(&slab, &next, "w", caps.w_sup, caps.w_grad)?;
        std::mem::swap(&mut w, &mut next);
        converged = diff <= settings.picard.tol;
    }
    if !converged {
        return Err(QuasiError::NoConvergence {
            stage: "outer w".into(),
            trace: outer,
        });
    }
    let (y, tr) = inner_loop(&sys, &slab, &vb, &w, y, Some(caps), settings)?;
    inner.push(tr);
    Ok(CoupledSolution {
        t_a,
        t_b,
        y: if sys.p() > 0 { Some(slab.field("y", &y)?) } else { None },
        w: if sys.q() > 0 { Some(slab.field("w", &w)?) } else { None },
        certificate: cert.clone(),
        outer_trace: outer,
        inner_traces: inner,
    })
}

/// Applies both integral operators once to a returned solution and reports
/// `(sup |L(y, w) - y|, sup |H(w; y) - w|)`.
pub fn fixed_point_residual(
    sys: &QuasilinearSystem,
    sol: &CoupledSolution,
    settings: &SolverSettings,
) -> Result<(f64, f64), QuasiError> {
    let sys = at_origin(sys, sol.t_a);
    let slab = SlabLattice::new(sol.t_a, sol.t_b, settings.grid_dt, &settings.grid)?;
    let y = node_values(sol.y.as_ref());
    let w = node_values(sol.w.as_ref());
    let vb = v_bundles(&sys, &slab, settings)?;
    let fy = eval_sources(&sys.f, &slab, &y, &w)?;
    let mut ly = y.clone();
    for i in 0..sys.p() {
        vb[i].apply(&fy[i], &mut ly[i]);
    }
    let ub = u_bundles(&sys, &slab, &y, settings)?;
    let gw = eval_sources(&sys.g, &slab, &y, &w)?;
    let mut hw = w.clone();
    for j in 0..sys.q() {
        ub[j].apply(&gw[j], &mut hw[j]);
    }
    Ok((sup_diff(&ly, &y), sup_diff(&hw, &w)))
}

/// Residuals of a continued solution, each slab checked against the system
/// restarted from its predecessor.
pub fn continued_residuals(
    sys: &QuasilinearSystem,
    sols: &[CoupledSolution],
    settings: &SolverSettings,
) -> Result<Vec<(f64, f64)>, QuasiError> {
    let mut cur = sys.clone();
    let mut out = Vec::with_capacity(sols.len());
    for sol in sols {
        out.push(fixed_point_residual(&cur, sol, settings)?);
        cur = restart_from(&cur, sol)?;
    }
    Ok(out)
}

/// The system restarted at the end of `sol`: slab-end values become the new
/// initial data, the top data is kept.
pub fn restart_from(sys: &QuasilinearSystem, sol: &CoupledSolution) -> Result<QuasilinearSystem, QuasiError> {
    let mut next = sys.clone();
    next.domain = sys.domain.with_origin(sol.t_b);
    if let Some(y) = &sol.y {
        let end = y.slice(AxisRole::Time, sol.t_b)?;
        next.y0 = (0..sys.p()).map(|i| end.select(&[i])).collect::<Result<_, _>>()?;
    }
    if let Some(w) = &sol.w {
        let end = w.slice(AxisRole::Time, sol.t_b)?;
        for j in 0..sys.q() {
            next.w_star[j].initial = end.select(&[j])?;
        }
    }
    Ok(next)
}

fn in_slab(e: QuasiError, slab: usize, t_a: f64) -> QuasiError {
    QuasiError::InSlab {
        slab,
        t_a,
        source: Box::new(e),
    }
}

/// Certifies and solves successive slabs up to `horizon`. A failed slab is
/// retried with half the safety factor and half the length; slabs shorter
/// than `min_slab` end the run with [`QuasiError::SlabUnderflow`].
pub fn solve_continued(
    sys: &QuasilinearSystem,
    horizon: f64,
    settings: &SolverSettings,
) -> Result<Vec<CoupledSolution>, QuasiError> {
    let mut cur = sys.clone();
    let mut t = sys.domain.origin();
    let mut out: Vec<CoupledSolution> = Vec::new();
    let mut safety = settings.safety;
    let mut guess = settings.slab_guess;
    let eps = 1e-12 * horizon.abs().max(1.0);
    while t < horizon - eps {
        let cert = certify_slab(&cur, t, horizon, guess, safety).map_err(|e| in_slab(e, out.len(), t))?;
        let remaining = horizon - t;
        if cert.t_star < settings.min_slab.min(remaining) {
            return Err(QuasiError::SlabUnderflow {
                partial: out,
                t_reached: t,
                t_star: cert.t_star,
            });
        }
        match solve_slab(&cur, &cert, settings) {
            Ok(sol) => {
                log::info!(
                    "slab [{}, {}] kappa = {:.3e}, {} outer passes",
                    sol.t_a,
                    sol.t_b,
                    cert.contraction_factor,
                    sol.outer_trace.len()
                );
                cur = restart_from(&cur, &sol).map_err(|e| in_slab(e, out.len(), t))?;
                t = cert.t_b();
                out.push(sol);
                safety = settings.safety;
                guess = settings.slab_guess;
            }
            Err(e) if e.is_recoverable() => {
                log::warn!("slab at t = {t} failed ({e}); shrinking");
                safety *= 0.5;
                guess = 0.5 * cert.t_star;
                if guess < settings.min_slab.min(remaining) {
                    return Err(QuasiError::SlabUnderflow {
                        partial: out,
                        t_reached: t,
                        t_star: guess,
                    });
                }
            }
            Err(e) => return Err(in_slab(e, out.len(), t)),
        }
    }
    Ok(out)
}
