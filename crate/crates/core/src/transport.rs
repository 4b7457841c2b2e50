//! Linear transport `dz/dt + b(t, x, h) . grad z + c z = a` with data on the
//! inflow surface, solved by successive approximations along characteristics.

use crate::characteristics::{
    trace_backward, CharacteristicResult, Parametric, StepCtrl, TraceError, TraceMode,
};
use crate::field::{
    l1_time, sup_all, Combine, FieldError, NormQuery, Point, SampledField,
};
use crate::geometry::{InflowKind, InflowPoint, StripDomain};
use crate::lattice::Lattice;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("Picard iteration did not converge in {} iterations", .0.n_iters)]
    NoConvergence(Box<PicardTrace>),
    #[error("a-priori bound violated: sup |z| = {sup} > bound {bound}")]
    BoundViolation { sup: f64, bound: f64 },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Data prescribed on the inflow surface.
///
/// `initial` is evaluated at the initial sheet (its time axis, if any, is
/// read at the slab origin); `top` is evaluated at `(t, x', 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InflowData {
    pub initial: SampledField,
    pub top: SampledField,
}

impl InflowData {
    pub fn new(initial: SampledField, top: SampledField) -> Self {
        Self { initial, top }
    }

    /// One field serving both sheets.
    pub fn single(f: SampledField) -> Self {
        Self {
            initial: f.clone(),
            top: f,
        }
    }

    pub fn ncomp(&self) -> usize {
        self.initial.ncomp()
    }

    pub fn eval_into(&self, entry: &InflowPoint, out: &mut [f64]) -> Result<(), FieldError> {
        let p = Point::tx(entry.t, &entry.x);
        match entry.kind {
            InflowKind::Initial => self.initial.eval_into(&p, out),
            InflowKind::TopBoundary => self.top.eval_into(&p, out),
        }
    }

    pub fn eval_comp(&self, c: usize, entry: &InflowPoint) -> Result<f64, FieldError> {
        let p = Point::tx(entry.t, &entry.x);
        match entry.kind {
            InflowKind::Initial => self.initial.eval_comp(c, &p),
            InflowKind::TopBoundary => self.top.eval_comp(c, &p),
        }
    }

    pub fn sup(&self) -> f64 {
        sup_all(&self.initial, &NormQuery::sup()).max(sup_all(&self.top, &NormQuery::sup()))
    }

    /// Largest spatial slope over both pieces.
    pub fn lipschitz_x(&self) -> f64 {
        let q = NormQuery::dx(Combine::Frobenius);
        sup_all(&self.initial, &q).max(sup_all(&self.top, &q))
    }

    /// Max mismatch between the two pieces along the corner `{t = t0, x_d = 1}`,
    /// probed at the top piece's `x'` nodes (or the single point when it has
    /// none).
    pub fn corner_mismatch(&self, domain: &StripDomain) -> Result<f64, FieldError> {
        let d = domain.dim();
        let mut probes: Vec<Vec<f64>> = vec![vec![]];
        for k in 0..d - 1 {
            let nodes = self
                .top
                .axis(crate::field::AxisRole::Space(k))
                .map(|a| a.nodes.clone())
                .unwrap_or_else(|| vec![domain.window_lo()[k]]);
            probes = probes
                .into_iter()
                .flat_map(|p| {
                    nodes.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        let mut worst = 0.0f64;
        for mut x in probes {
            x.push(1.0);
            let p = Point::tx(domain.origin(), &x);
            let a = self.initial.eval(&p)?;
            let b = self.top.eval(&p)?;
            for (u, v) in a.iter().zip(&b) {
                worst = worst.max((u - v).abs());
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardSettings {
    pub tol: f64,
    pub max_iters: usize,
    /// The constant first iterate.
    pub initial_guess: f64,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 60,
            initial_guess: 0.0,
        }
    }
}

/// Convergence record of one successive-approximation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PicardTrace {
    /// `||z_{n+1} - z_n||` for `n = 1, 2, ..`.
    pub iterates: Vec<f64>,
    /// `||c||^{n-1} ||z_2 - z_1|| T^{n-1} / (n-1)!` for the same `n`.
    pub bound_series: Vec<f64>,
    pub converged: bool,
    pub n_iters: usize,
}

impl PicardTrace {
    /// Largest `iterates[n] / bound_series[n]` (zero bounds with zero
    /// iterates count as ratio 0).
    pub fn worst_ratio(&self) -> f64 {
        self.iterates
            .iter()
            .zip(&self.bound_series)
            .map(|(&d, &b)| {
                if d == 0.0 {
                    0.0
                } else if b == 0.0 {
                    f64::INFINITY
                } else {
                    d / b
                }
            })
            .fold(0.0, f64::max)
    }

    fn dominates(&self, other: &PicardTrace) -> bool {
        (self.n_iters, self.iterates.first().copied().unwrap_or(0.0))
            > (
                other.n_iters,
                other.iterates.first().copied().unwrap_or(0.0),
            )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransportProblem {
    pub domain: StripDomain,
    /// `d` components over `(t, x, y)`.
    pub b: SampledField,
    /// Parametric closure `y = h(t, x)`; `None` when `b`, `c`, `a` carry no
    /// `y` axes.
    pub h: Option<SampledField>,
    pub c: SampledField,
    pub a: SampledField,
    pub z_star: InflowData,
    pub mode: TraceMode,
    pub step: StepCtrl,
}

/// Quantities computed once per problem.
#[derive(Debug, Clone, Copy)]
struct Prepared {
    c_sup: f64,
    y_radius: Option<f64>,
}

impl LinearTransportProblem {
    fn prepare(&self) -> Prepared {
        let y_radius = self.h.as_ref().map(|h| sup_all(h, &NormQuery::sup()));
        let c_sup = sup_all(&self.c, &NormQuery::sup().radii(y_radius, None));
        Prepared { c_sup, y_radius }
    }

    /// `(||z*|| + ||a||_{L^1}) exp ||c||_{L^1}` over `[origin, t_end]`.
    pub fn a_priori_bound(&self, t_end: f64) -> Result<f64, FieldError> {
        let pr = self.prepare();
        let q = NormQuery::sup().radii(pr.y_radius, None);
        let t0 = self.domain.origin();
        let a1 = l1_time(&self.a, t0, t_end, &q)?;
        let c1 = l1_time(&self.c, t0, t_end, &q)?;
        Ok((self.z_star.sup() + a1) * c1.exp())
    }

    pub fn trace(&self, t: f64, x: &[f64]) -> Result<CharacteristicResult, TraceError> {
        let v = Parametric::new(&self.b, self.h.as_ref());
        trace_backward(&v, &self.domain, t, x, None, self.mode, &self.step)
    }
}

/// Solution at a single point together with its Picard record.
pub fn solve_at_point(
    prob: &LinearTransportProblem,
    t: f64,
    x: &[f64],
    picard: &PicardSettings,
) -> Result<(f64, PicardTrace), TransportError> {
    let pr = prob.prepare();
    solve_prepared(prob, &pr, t, x, picard)
}

fn solve_prepared(
    prob: &LinearTransportProblem,
    pr: &Prepared,
    t: f64,
    x: &[f64],
    picard: &PicardSettings,
) -> Result<(f64, PicardTrace), TransportError> {
    let path = prob.trace(t, x)?;
    let entry = path.entry.clone().expect("full trace");
    let z0 = prob.z_star.eval_comp(0, &entry)?;
    let (times, pos) = interleaved_samples(&path, &prob.domain);
    let d = prob.domain.dim();
    let m = times.len();
    let mut cs = Vec::with_capacity(m);
    let mut as_ = Vec::with_capacity(m);
    let mut y = vec![0.0; prob.h.as_ref().map_or(0, |h| h.ncomp())];
    for k in 0..m {
        let x = &pos[k * d..(k + 1) * d];
        if let Some(h) = &prob.h {
            h.eval_into(&Point::tx(times[k], x), &mut y)?;
        }
        let p = Point::txy(times[k], x, &y);
        cs.push(prob.c.eval_comp(0, &p)?);
        as_.push(prob.a.eval_comp(0, &p)?);
    }
    let big_t = t - prob.domain.origin();
    picard_on_path(&path.s, &cs, &as_, z0, pr.c_sup, big_t, picard)
}

/// Quadrature samples along a path: the stored nodes with the panel midpoints
/// interleaved (`node_0, mid_0, node_1, .., node_{n-1}`), positions wrapped
/// into the window and clamped in `x_d`. Midpoint positions are linear
/// interpolants of the neighbouring nodes.
pub fn interleaved_samples(path: &CharacteristicResult, domain: &StripDomain) -> (Vec<f64>, Vec<f64>) {
    let n = path.len();
    let d = path.dim;
    let mut times = Vec::with_capacity(2 * n - 1);
    let mut pos = Vec::with_capacity((2 * n - 1) * d);
    let mut buf = vec![0.0; d];
    for k in 0..n {
        if k > 0 {
            times.push(0.5 * (path.s[k - 1] + path.s[k]));
            let (a, b) = (path.position(k - 1), path.position(k));
            for i in 0..d {
                buf[i] = 0.5 * (a[i] + b[i]);
            }
            push_wrapped(domain, &buf, &mut pos);
        }
        times.push(path.s[k]);
        push_wrapped(domain, path.position(k), &mut pos);
    }
    (times, pos)
}

fn push_wrapped(domain: &StripDomain, x: &[f64], out: &mut Vec<f64>) {
    let start = out.len();
    out.extend_from_slice(x);
    let p = &mut out[start..];
    domain.wrap_in_place(p);
    let d = p.len();
    p[d - 1] = p[d - 1].clamp(0.0, 1.0);
}

/// Successive approximations `z_{n+1}(s) = z0 + int_{s_0}^{s} (-c z_n + a)`
/// along a path with nodes `s`.
///
/// `c` and `a` are given at the interleaved samples of
/// [`interleaved_samples`]. Node values advance by the composite midpoint
/// rule; midpoint values by a half-panel left rectangle from the preceding
/// node. Both rules underestimate integrals of convex increasing functions, so
/// the iterate differences obey the factorial majorant exactly, while the
/// node values stay second-order accurate. Returns the value at the last node.
pub fn picard_on_path(
    s: &[f64],
    c: &[f64],
    a: &[f64],
    z0: f64,
    c_sup: f64,
    big_t: f64,
    picard: &PicardSettings,
) -> Result<(f64, PicardTrace), TransportError> {
    let m = c.len();
    debug_assert_eq!(m, 2 * s.len() - 1);
    let mut trace = PicardTrace::default();
    let mut z = vec![picard.initial_guess; m];
    let mut next = vec![0.0; m];
    let reaction = c.iter().any(|&v| v != 0.0);
    let mut d1 = 0.0;
    for it in 1..=picard.max_iters.max(1) {
        next[0] = z0;
        for j in 0..s.len() - 1 {
            let h = s[j + 1] - s[j];
            let (nd, md) = (2 * j, 2 * j + 1);
            next[md] = next[nd] + 0.5 * h * (a[nd] - c[nd] * z[nd]);
            next[nd + 2] = next[nd] + h * (a[md] - c[md] * z[md]);
        }
        let diff = z
            .iter()
            .zip(&next)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        if it == 1 {
            d1 = diff;
        }
        let k = (it - 1) as i32;
        let bound = d1 * (c_sup * big_t).powi(k) / factorial(it - 1);
        trace.iterates.push(diff);
        trace.bound_series.push(bound);
        trace.n_iters = it;
        std::mem::swap(&mut z, &mut next);
        if !reaction || diff <= picard.tol {
            trace.converged = true;
            return Ok((z[m - 1], trace));
        }
    }
    Err(TransportError::NoConvergence(Box::new(trace)))
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Grid solution with its worst Picard record and the checked bound.
#[derive(Debug, Clone)]
pub struct GridSolution {
    pub field: SampledField,
    pub trace: PicardTrace,
    pub bound: f64,
    pub sup: f64,
}

/// Solves at every node of `lattice` and checks the a-priori sup bound.
pub fn solve_on_grid(
    prob: &LinearTransportProblem,
    lattice: &Lattice,
    picard: &PicardSettings,
) -> Result<GridSolution, TransportError> {
    let pr = prob.prepare();
    let results: Vec<(f64, PicardTrace)> = (0..lattice.len())
        .into_par_iter()
        .map(|flat| {
            let (t, x) = lattice.coords(flat);
            solve_prepared(prob, &pr, t, &x, picard)
        })
        .collect::<Result<_, _>>()?;
    let mut worst = PicardTrace::default();
    let mut values = Vec::with_capacity(results.len());
    for (v, tr) in results {
        if tr.dominates(&worst) {
            worst = tr;
        }
        values.push(v);
    }
    let t_end = lattice.t.iter().copied().fold(prob.domain.origin(), f64::max);
    let bound = prob.a_priori_bound(t_end)?;
    let sup = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if sup > bound * (1.0 + 1e-9) + 10.0 * picard.tol {
        return Err(TransportError::BoundViolation { sup, bound });
    }
    let field = lattice.field(vec!["z".into()], vec![values])?;
    Ok(GridSolution {
        field,
        trace: worst,
        bound,
        sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Axis, AxisRole};

    fn interval_problem(b: f64, c: f64, a: f64, data: SampledField) -> LinearTransportProblem {
        LinearTransportProblem {
            domain: StripDomain::interval(2.0).unwrap(),
            b: SampledField::constant(&[b]),
            h: None,
            c: SampledField::constant(&[c]),
            a: SampledField::constant(&[a]),
            z_star: InflowData::single(data),
            mode: TraceMode::Entry,
            step: StepCtrl::default(),
        }
    }

    fn top_t() -> SampledField {
        SampledField::sample(
            vec![
                Axis::uniform(AxisRole::Time, 0.0, 2.0, 3),
                Axis::uniform(AxisRole::Space(0), 0.0, 1.0, 3),
            ],
            1,
            |p, o| o[0] = p.t,
        )
        .unwrap()
    }

    #[test]
    fn boundary_transport() {
        let p = interval_problem(-1.0, 0.0, 0.0, top_t());
        let (z, tr) = solve_at_point(&p, 0.9, &[0.4], &PicardSettings::default()).unwrap();
        assert!((z - (0.9 - 0.6)).abs() < 1e-9);
        assert_eq!(tr.n_iters, 1);
    }

    #[test]
    fn constant_source() {
        let p = interval_problem(-1.0, 0.0, 0.7, top_t());
        let (z, _) = solve_at_point(&p, 0.9, &[0.4], &PicardSettings::default()).unwrap();
        assert!((z - (0.3 + 0.7 * 0.6)).abs() < 1e-9);
    }

    #[test]
    fn exponential_decay() {
        let z0 = SampledField::sample(vec![Axis::uniform(AxisRole::Space(0), 0.0, 1.0, 2)], 1, |p, o| {
            o[0] = 1.0 + p.x[0]
        })
        .unwrap();
        let p = interval_problem(-1.0, 1.5, 0.0, z0);
        let (z, tr) = solve_at_point(&p, 0.3, &[0.2], &PicardSettings::default()).unwrap();
        // Limit of the iteration: per panel z -> z (1 - ch + (ch)^2 / 2).
        let ch: f64 = 1.5 * 0.01;
        let discrete = 1.5 * (1.0 - ch + 0.5 * ch * ch).powi(30);
        assert!((z - discrete).abs() < 1e-12, "{z} vs {discrete}");
        let exact = 1.5 * (-1.5f64 * 0.3).exp();
        assert!((z - exact).abs() < 1e-4);
        assert!(tr.converged);
        assert!(tr.worst_ratio() <= 1.0 + 1e-12, "{:?}", tr);
    }

    #[test]
    fn grid_constants_transport() {
        let p = interval_problem(-1.0, 0.0, 0.0, SampledField::constant(&[1.0]));
        let l = Lattice::uniform_in_time(0.0, 1.0, 0.25, vec![crate::field::linspace(0.0, 1.0, 5)]);
        let g = solve_on_grid(&p, &l, &PicardSettings::default()).unwrap();
        assert!(g.field.component(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_guesses_agree() {
        let z0 = SampledField::constant(&[2.0]);
        let p = interval_problem(-0.5, 0.8, 0.3, z0);
        let a = PicardSettings::default();
        let b = PicardSettings {
            initial_guess: 5.0,
            ..a
        };
        let (u, _) = solve_at_point(&p, 1.4, &[0.1], &a).unwrap();
        let (v, _) = solve_at_point(&p, 1.4, &[0.1], &b).unwrap();
        assert!((u - v).abs() < 1e-11);
    }

    #[test]
    fn no_convergence_reported() {
        let p = interval_problem(-0.5, 3.0, 0.0, SampledField::constant(&[1.0]));
        let s = PicardSettings {
            max_iters: 3,
            ..Default::default()
        };
        let r = solve_at_point(&p, 1.0, &[0.2], &s);
        assert!(matches!(r, Err(TransportError::NoConvergence(_))));
    }
}
