//! Coupled system of `p` tangential equations for `y` and `q` inflow
//! equations for `w`:
//!
//! ```text
//! dy_i/dt + v_i(t, x) . grad y_i           = f_i(t, x, y, w),  y_i(0) = y0_i
//! dw_j/dt + u_j(t, x, y) . grad w_j        = g_j(t, x, y, w),  w_j = w*_j on the inflow surface
//! ```
//!
//! The solver nests a fixed point on `y` (for frozen `w`) inside a fixed point
//! on `w`, on slabs whose length is certified so that both maps contract.

mod certify;
mod solve;
pub mod source;

pub use certify::{certify_slab, evaluate_ledger, Caps, CertLedger, SlabCertificate};
pub use solve::{
    continued_residuals, fixed_point_residual, restart_from, solve_continued, solve_semilinear_y, solve_slab, CoupledSolution,
    SlabLattice,
};
pub use source::{
    AnalyticSource, Ball, LatticeRef, LinearSource, NodeState, SampledSource, Sensitivity,
    SourceFn, SourceTerm,
};

use crate::characteristics::{StepCtrl, TraceError};
use crate::field::{check_cone_membership, AxisRole, FieldError, Point, SampledField};
use crate::geometry::StripDomain;
use crate::transport::{InflowData, PicardSettings, TransportError};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum QuasiError {
    #[error("iterate left the certified ball: {what} = {value} > cap {cap}")]
    BallEscape { what: String, value: f64, cap: f64 },
    #[error("{stage} iteration did not converge; last differences {trace:?}")]
    NoConvergence { stage: String, trace: Vec<f64> },
    #[error("degenerate system: {0}")]
    DegenerateSystem(String),
    #[error("certified slab length {t_star} below minimum at t = {t_reached}")]
    SlabUnderflow {
        partial: Vec<CoupledSolution>,
        t_reached: f64,
        t_star: f64,
    },
    #[error("invalid system: {0}")]
    Invalid(String),
    #[error("slab {slab} starting at t = {t_a}: {source}")]
    InSlab {
        slab: usize,
        t_a: f64,
        source: Box<QuasiError>,
    },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

impl QuasiError {
    /// Whether a shorter slab could help.
    pub fn is_recoverable(&self) -> bool {
        matches!(self, Self::BallEscape { .. } | Self::NoConvergence { .. })
    }
}

#[derive(Debug, Clone)]
pub struct QuasilinearSystem {
    pub domain: StripDomain,
    /// `p` velocity fields over `(t, x)`, tangential at `x_d in {0, 1}`.
    pub v: Vec<SampledField>,
    /// `q` velocity fields over `(t, x, y)` with `u_jd < 0` independent of `y`.
    pub u: Vec<SampledField>,
    pub f: Vec<Arc<dyn SourceTerm>>,
    pub g: Vec<Arc<dyn SourceTerm>>,
    /// Scalar initial data over `x`.
    pub y0: Vec<SampledField>,
    pub w_star: Vec<InflowData>,
}

impl QuasilinearSystem {
    pub fn p(&self) -> usize {
        self.v.len()
    }

    pub fn q(&self) -> usize {
        self.u.len()
    }

    /// Checks counts, component numbers, the tangential condition on `v` and
    /// the cone condition on `u`. Returns every problem found.
    pub fn validate(&self, tol: f64) -> Result<(), Vec<String>> {
        let d = self.domain.dim();
        let (p, q) = (self.p(), self.q());
        let mut errs = Vec::new();
        if self.f.len() != p || self.y0.len() != p {
            errs.push(format!(
                "need {p} sources f and initial data y0, got {} and {}",
                self.f.len(),
                self.y0.len()
            ));
        }
        if self.g.len() != q || self.w_star.len() != q {
            errs.push(format!(
                "need {q} sources g and inflow data w*, got {} and {}",
                self.g.len(),
                self.w_star.len()
            ));
        }
        for (i, v) in self.v.iter().enumerate() {
            if v.ncomp() != d {
                errs.push(format!("v{} has {} components, expected {d}", i + 1, v.ncomp()));
                continue;
            }
            if v.has_role(|r| matches!(r, AxisRole::Y(_) | AxisRole::W(_))) {
                errs.push(format!("v{} must not depend on y or w", i + 1));
            }
            let worst = tangential_defect(v, d);
            if worst > tol {
                errs.push(format!(
                    "v{} is not tangential: |v_d| = {worst} on x_d in {{0, 1}}",
                    i + 1
                ));
            }
        }
        for (j, u) in self.u.iter().enumerate() {
            if u.ncomp() != d {
                errs.push(format!("u{} has {} components, expected {d}", j + 1, u.ncomp()));
                continue;
            }
            let rep = check_cone_membership(u, d);
            if !rep.is_member {
                errs.push(format!(
                    "u{} violates u_d <= -B < 0 at {} nodes (max u_d = {})",
                    j + 1,
                    rep.violation_count,
                    -rep.b_d
                ));
            }
            if rep.y_dependent {
                errs.push(format!("u{}: last component depends on y", j + 1));
            }
        }
        for (i, y) in self.y0.iter().enumerate() {
            if y.has_role(|r| !matches!(r, AxisRole::Space(_))) {
                errs.push(format!("y0 {} must be a function of x only", i + 1));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// `min_j B_jd` over the `u` fields.
    pub fn b_d(&self) -> f64 {
        self.u
            .iter()
            .map(|u| check_cone_membership(u, self.domain.dim()).b_d)
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether every source is pointwise.
    pub fn is_local(&self) -> bool {
        self.f.iter().chain(&self.g).all(|s| s.is_local())
    }

    /// Same system with the `w` equations reordered by `perm`.
    pub fn permute_w(&self, perm: &[usize]) -> Self {
        let mut s = self.clone();
        s.u = perm.iter().map(|&k| self.u[k].clone()).collect();
        s.g = perm.iter().map(|&k| self.g[k].clone()).collect();
        s.w_star = perm.iter().map(|&k| self.w_star[k].clone()).collect();
        s
    }
}

/// Max `|v_d|` on `x_d = 0` and `x_d = 1` (over all nodes when the field has
/// no `x_d` axis).
fn tangential_defect(v: &SampledField, d: usize) -> f64 {
    let vals = v.component(d - 1);
    let Some(j) = v.axis_index(AxisRole::Space(d - 1)) else {
        return vals.iter().fold(0.0, |m, x| m.max(x.abs()));
    };
    let ax = &v.axes()[j];
    let mut worst = 0.0f64;
    for flat in 0..v.node_count() {
        let coords = v.node_coords(flat);
        if coords[j].1 != ax.lo() {
            continue;
        }
        let mut t = 0.0;
        let mut x = vec![0.0; d];
        for &(r, c) in &coords {
            match r {
                AxisRole::Time => t = c,
                AxisRole::Space(k) => x[k] = c,
                _ => {}
            }
        }
        for z in [0.0, 1.0] {
            x[d - 1] = z;
            if let Ok(val) = v.eval_comp(d - 1, &Point::tx(t, &x)) {
                worst = worst.max(val.abs());
            }
        }
    }
    worst
}

/// Solver controls shared by all slabs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub picard: PicardSettings,
    pub step: StepCtrl,
    /// Bound on both contraction factors.
    pub safety: f64,
    /// Longest slab tried.
    pub slab_guess: f64,
    /// Shortest slab accepted before giving up.
    pub min_slab: f64,
    /// Time spacing of the solution lattice.
    pub grid_dt: f64,
    /// Spatial nodes of the solution lattice, one list per axis.
    pub grid: Vec<Vec<f64>>,
}

impl SolverSettings {
    pub fn new(grid: Vec<Vec<f64>>) -> Self {
        Self {
            picard: PicardSettings::default(),
            step: StepCtrl::default(),
            safety: 0.5,
            slab_guess: 1.0,
            min_slab: 1e-4,
            grid_dt: 0.05,
            grid,
        }
    }
}
