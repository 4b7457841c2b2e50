//! Manufactured solution for a scalar `p = q = 1` system in one dimension.
//!
//! With `v = c sin(3 pi x)` the flow keeps each third of `[0, 1]`. Writing
//! `3x = k + r`, the backward foot has `r' = (2/pi) atan(tan(pi r / 2)
//! e^{-(-1)^k 3 c pi t})`, and
//!
//! ```text
//! Y(t, x) = phi(xi) + alpha t,        W(t, x) = psi(x + t)
//! f = alpha + s (sin w - sin W(t, x)),   g = k (y - Y(t, x)),   u = -1
//! ```
//!
//! solve the system exactly. `phi` has a kink at the rest point `x = 1/3`,
//! which never sits on a lattice node of `[0, 1]` with `10 * 2^k` cells and
//! limits the scheme to first order at a rate independent of the lattice.

use crate::field::{linspace, Axis, AxisRole, SampledField};
use crate::geometry::StripDomain;
use crate::quasilinear::{solve_continued, AnalyticSource, QuasiError, QuasilinearSystem, SolverSettings};
use crate::transport::InflowData;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManufacturedCase {
    /// Amplitude of `v`.
    #[serde(default = "defaults::c")]
    pub c: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    /// Coupling strength of `f` in `w`.
    #[serde(default = "defaults::f_coupling")]
    pub f_coupling: f64,
    /// Coupling strength of `g` in `y`.
    #[serde(default = "defaults::g_coupling")]
    pub g_coupling: f64,
    /// Nodes on which the data are sampled.
    #[serde(default = "defaults::data_nodes")]
    pub data_nodes: usize,
    /// Lattice sizes of the convergence study.
    #[serde(default = "defaults::grids")]
    pub grids: Vec<usize>,
}

mod defaults {
    pub fn c() -> f64 {
        -0.25
    }
    pub fn alpha() -> f64 {
        0.3
    }
    pub fn f_coupling() -> f64 {
        0.5
    }
    pub fn g_coupling() -> f64 {
        0.3
    }
    pub fn data_nodes() -> usize {
        4001
    }
    pub fn grids() -> Vec<usize> {
        vec![11, 21, 41, 81]
    }
}

impl Default for ManufacturedCase {
    fn default() -> Self {
        Self {
            c: defaults::c(),
            alpha: defaults::alpha(),
            f_coupling: defaults::f_coupling(),
            g_coupling: defaults::g_coupling(),
            data_nodes: defaults::data_nodes(),
            grids: defaults::grids(),
        }
    }
}

impl ManufacturedCase {
    pub fn phi(&self, x: f64) -> f64 {
        (x - 1.0 / 3.0).abs() + 0.2 * (2.0 * PI * x).sin()
    }

    pub fn psi(&self, s: f64) -> f64 {
        0.2 * s + 0.3 * (PI * s).cos()
    }

    pub fn foot(&self, t: f64, x: f64) -> f64 {
        let z = 3.0 * x;
        let k = z.floor().clamp(0.0, 2.0);
        let r = z - k;
        if r <= 0.0 || r >= 1.0 {
            return x;
        }
        let sign = if k == 1.0 { -1.0 } else { 1.0 };
        let rf = (2.0 / PI) * ((0.5 * PI * r).tan() * (-sign * 3.0 * self.c * PI * t).exp()).atan();
        (k + rf) / 3.0
    }

    pub fn exact_y(&self, t: f64, x: f64) -> f64 {
        self.phi(self.foot(t, x)) + self.alpha * t
    }

    pub fn exact_w(&self, t: f64, x: f64) -> f64 {
        self.psi(x + t)
    }

    /// The system on `[0, t1]` with data sampled on `data_nodes` points.
    pub fn system(&self, t1: f64) -> Result<QuasilinearSystem, QuasiError> {
        let n = self.data_nodes.max(3);
        let xs = || Axis::uniform(AxisRole::Space(0), 0.0, 1.0, n);
        let ts = || Axis::uniform(AxisRole::Time, 0.0, t1, n);
        let c = self.c;
        let v = SampledField::sample(vec![xs()], 1, |p, o| o[0] = c * (3.0 * PI * p.x[0]).sin())?;
        let y0 = SampledField::sample(vec![xs()], 1, |p, o| o[0] = self.phi(p.x[0]))?;
        let w_init = SampledField::sample(vec![xs()], 1, |p, o| o[0] = self.psi(p.x[0]))?;
        let w_top = SampledField::sample(vec![ts()], 1, |p, o| o[0] = self.psi(1.0 + p.t))?;
        let me = self.clone();
        let (alpha, sf) = (self.alpha, self.f_coupling);
        let f = AnalyticSource {
            label: "manufactured f".into(),
            func: Arc::new(move |s| alpha + sf * (s.w[0].sin() - me.exact_w(s.t, s.x[0]).sin())),
            peak: alpha.abs() + 2.0 * sf.abs(),
            dy_rate: 0.0,
            dw_rate: sf.abs(),
        };
        let me = self.clone();
        let kg = self.g_coupling;
        let y_sup = 1.5 + alpha.abs() * t1;
        let g = AnalyticSource {
            label: "manufactured g".into(),
            func: Arc::new(move |s| kg * (s.y[0] - me.exact_y(s.t, s.x[0]))),
            peak: 2.0 * kg.abs() * y_sup,
            dy_rate: kg.abs(),
            dw_rate: 0.0,
        };
        Ok(QuasilinearSystem {
            domain: StripDomain::interval(t1).map_err(|e| QuasiError::Invalid(e.to_string()))?,
            v: vec![v],
            u: vec![SampledField::constant(&[-1.0])],
            f: vec![Arc::new(f)],
            g: vec![Arc::new(g)],
            y0: vec![y0],
            w_star: vec![InflowData::new(w_init, w_top)],
        })
    }
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    /// Max error of `y` and `w` over all lattice nodes.
    pub error: f64,
    /// `error / previous error`; `None` on the first row.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn ratios(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.ratio).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("n h error ratio\n");
        for r in &self.rows {
            let ratio = r.ratio.map_or("nan".to_string(), |q| q.to_string());
            s.push_str(&format!("{} {} {} {}\n", r.n, r.h, r.error, ratio));
        }
        s
    }
}

/// Solves the case on each lattice of `case.grids` (time spacing equal to the
/// space spacing) up to `horizon` and tabulates the errors.
pub fn convergence_study(
    case: &ManufacturedCase,
    t1: f64,
    horizon: f64,
    base: &SolverSettings,
) -> Result<ConvergenceTable, QuasiError> {
    let sys = case.system(t1)?;
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &n in &case.grids {
        let h = 1.0 / (n - 1) as f64;
        let mut s = base.clone();
        s.grid = vec![linspace(0.0, 1.0, n)];
        s.grid_dt = h;
        let sols = solve_continued(&sys, horizon, &s)?;
        let mut err = 0.0f64;
        for sol in &sols {
            let (y, w) = (sol.y(), sol.w());
            for flat in 0..y.node_count() {
                let c = y.node_coords(flat);
                let (t, x) = (c[0].1, c[1].1);
                err = err.max((y.component(0)[flat] - case.exact_y(t, x)).abs());
                err = err.max((w.component(0)[flat] - case.exact_w(t, x)).abs());
            }
        }
        let ratio = rows.last().map(|r| err / r.error);
        rows.push(ConvergenceRow { n, h, error: err, ratio });
    }
    Ok(ConvergenceTable { rows })
}
