//! Backward characteristics `dX/ds = b(s, X, h(s, X))`, entry times on the
//! inflow surface, the inverse time map and the flow constants `C1`, `C2`.

use crate::field::{l1_time, sup_in_time, Combine, FieldError, NormQuery, Point, SampledField};
use crate::geometry::{GeometryError, InflowKind, InflowPoint, StripDomain};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("characteristic left the strip at s = {s}: x_d = {xd}")]
    IntegrationEscape { s: f64, xd: f64 },
    #[error("non-finite velocity at s = {0}")]
    NonFiniteField(f64),
    #[error("reciprocal speed diverges at x_d = {w}: |b_d| = {bd} < B_d / 2")]
    DivergentReciprocal { w: f64, bd: f64 },
    #[error("invalid start: {0}")]
    BadStart(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Integrator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCtrl {
    /// Upper bound on the uniform substep (time units).
    pub max_dt: f64,
    /// Bisection tolerance for the crossing of `x_d = 1` (time units).
    pub event_tol: f64,
    /// Geometric tolerance (length units).
    pub geom_tol: f64,
}

impl Default for StepCtrl {
    fn default() -> Self {
        Self {
            max_dt: 1e-2,
            event_tol: 1e-10,
            geom_tol: crate::geometry::DEFAULT_GEOM_TOL,
        }
    }
}

/// Whether the last velocity component is expected to push paths through the
/// top face, or keeps them inside the strip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceMode {
    Entry,
    Tangential,
}

/// A velocity evaluable at wrapped points of the strip.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), FieldError>;
}

/// `b(t, x, h(t, x))` for a sampled `b` and an optional sampled `h`.
#[derive(Debug, Clone, Copy)]
pub struct Parametric<'a> {
    pub b: &'a SampledField,
    pub h: Option<&'a SampledField>,
}

impl<'a> Parametric<'a> {
    pub fn new(b: &'a SampledField, h: Option<&'a SampledField>) -> Self {
        Self { b, h }
    }
}

impl VelocityField for Parametric<'_> {
    fn dim(&self) -> usize {
        self.b.ncomp()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        let mut y = [0.0f64; 16];
        let np = match self.h {
            Some(h) => {
                let np = h.ncomp();
                h.eval_into(&Point::tx(t, x), &mut y[..np])?;
                np
            }
            None => 0,
        };
        self.b.eval_into(&Point::txy(t, x, &y[..np]), out)
    }
}

/// A traced backward characteristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicResult {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub dim: usize,
    /// Sample times, increasing, from `tau_minus` to `t0`.
    pub s: Vec<f64>,
    /// Positions (unwrapped), `dim` values per sample.
    pub x: Vec<f64>,
    pub tau_minus: f64,
    /// Where the path meets the inflow surface; `None` if it was stopped
    /// early by `stop_at`.
    pub entry: Option<InflowPoint>,
    pub tolerance_used: StepCtrl,
}

impl CharacteristicResult {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn position(&self, k: usize) -> &[f64] {
        &self.x[k * self.dim..(k + 1) * self.dim]
    }

    /// Position at `s` by linear interpolation between samples.
    pub fn position_at(&self, s: f64) -> Vec<f64> {
        let n = self.s.len();
        if n == 1 || s <= self.s[0] {
            return self.position(0).to_vec();
        }
        if s >= self.s[n - 1] {
            return self.position(n - 1).to_vec();
        }
        let k = self.s.partition_point(|&z| z <= s).clamp(1, n - 1) - 1;
        let th = (s - self.s[k]) / (self.s[k + 1] - self.s[k]);
        let (a, b) = (self.position(k), self.position(k + 1));
        a.iter().zip(b).map(|(p, q)| p + th * (q - p)).collect()
    }
}

struct Stepper<'a> {
    b: &'a dyn VelocityField,
    domain: &'a StripDomain,
    d: usize,
    scratch: Vec<f64>,
    stages: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(b: &'a dyn VelocityField, domain: &'a StripDomain) -> Self {
        let d = domain.dim();
        Self {
            b,
            domain,
            d,
            scratch: vec![0.0; d],
            stages: vec![0.0; 4 * d],
        }
    }

    /// `b` at a stage point, with `x'` wrapped and `x_d` clamped to `[0, 1]`.
    fn rhs(&mut self, s: f64, x: &[f64], out: &mut [f64]) -> Result<(), TraceError> {
        self.scratch.copy_from_slice(x);
        self.domain.wrap_in_place(&mut self.scratch);
        let d = self.d;
        self.scratch[d - 1] = self.scratch[d - 1].clamp(0.0, 1.0);
        self.b.eval(s, &self.scratch, out).map_err(|e| match e {
            FieldError::NonFinite(_) => TraceError::NonFiniteField(s),
            e => TraceError::Field(e),
        })?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(TraceError::NonFiniteField(s));
        }
        Ok(())
    }

    /// One classical RK4 step from `(s, x)` backward by `dt`, given the
    /// slope `k1` at the start.
    fn step(
        &mut self,
        s: f64,
        x: &[f64],
        k1: &[f64],
        dt: f64,
        out: &mut [f64],
    ) -> Result<(), TraceError> {
        let d = self.d;
        let mut buf = std::mem::take(&mut self.stages);
        let r = (|| {
            let (k2, rest) = buf.split_at_mut(d);
            let (k3, rest) = rest.split_at_mut(d);
            let (k4, tmp) = rest.split_at_mut(d);
            for i in 0..d {
                tmp[i] = x[i] - 0.5 * dt * k1[i];
            }
            self.rhs(s - 0.5 * dt, tmp, k2)?;
            for i in 0..d {
                tmp[i] = x[i] - 0.5 * dt * k2[i];
            }
            self.rhs(s - 0.5 * dt, tmp, k3)?;
            for i in 0..d {
                tmp[i] = x[i] - dt * k3[i];
            }
            self.rhs(s - dt, tmp, k4)?;
            for i in 0..d {
                out[i] = x[i] - dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            Ok(())
        })();
        self.stages = buf;
        r
    }
}

/// Traces the characteristic through `(t0, x0)` backward in time.
///
/// In [`TraceMode::Entry`] the path stops where it first meets `x_d = 1`
/// (refined by bisection to `event_tol`) or at the initial sheet. In
/// [`TraceMode::Tangential`] it always runs back to the initial sheet, with
/// overshoots of `x_d` below `geom_tol` clamped. `stop_at` (if later than
/// the initial sheet) ends the trace early.
pub fn trace_backward(
    b: &dyn VelocityField,
    domain: &StripDomain,
    t0: f64,
    x0: &[f64],
    stop_at: Option<f64>,
    mode: TraceMode,
    ctrl: &StepCtrl,
) -> Result<CharacteristicResult, TraceError> {
    let d = domain.dim();
    if x0.len() != d || b.dim() != d {
        return Err(TraceError::BadStart(format!(
            "expected {d} coordinates, got {} (field has {})",
            x0.len(),
            b.dim()
        )));
    }
    let tol = ctrl.geom_tol;
    let origin = domain.origin();
    let xd0 = x0[d - 1];
    if !(xd0 >= -tol && xd0 <= 1.0 + tol) {
        return Err(TraceError::BadStart(format!("x_d = {xd0} outside [0, 1]")));
    }
    if !(t0 >= origin - tol) {
        return Err(TraceError::BadStart(format!("t0 = {t0} before {origin}")));
    }
    let stop = stop_at.map_or(origin, |s| s.max(origin)).min(t0);
    let mut result = CharacteristicResult {
        t0,
        x0: x0.to_vec(),
        dim: d,
        s: Vec::new(),
        x: Vec::new(),
        tau_minus: t0,
        entry: None,
        tolerance_used: *ctrl,
    };
    let mut st = Stepper::new(b, domain);
    let mut s_rev = vec![t0];
    let mut x_rev: Vec<f64> = x0.to_vec();
    let mut cur = x0.to_vec();
    let mut s = t0;
    let mut hit_top = mode == TraceMode::Entry && xd0 >= 1.0 - tol;
    if hit_top {
        *x_rev.last_mut().unwrap() = 1.0;
    }
    let span = t0 - stop;
    if !hit_top && span > 0.0 {
        let n = (span / ctrl.max_dt).ceil().max(1.0) as usize;
        let dt = span / n as f64;
        let mut k1 = vec![0.0; d];
        let mut next = vec![0.0; d];
        for k in 1..=n {
            st.rhs(s, &cur, &mut k1)?;
            st.step(s, &cur, &k1, dt, &mut next)?;
            let s_next = if k == n { stop } else { t0 - dt * k as f64 };
            if mode == TraceMode::Entry && next[d - 1] >= 1.0 {
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                let mut probe = vec![0.0; d];
                while dt * (hi - lo) > ctrl.event_tol {
                    let mid = 0.5 * (lo + hi);
                    st.step(s, &cur, &k1, mid * dt, &mut probe)?;
                    if probe[d - 1] >= 1.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let th = 0.5 * (lo + hi);
                st.step(s, &cur, &k1, th * dt, &mut probe)?;
                probe[d - 1] = 1.0;
                s -= th * dt;
                s_rev.push(s);
                x_rev.extend_from_slice(&probe);
                hit_top = true;
                break;
            }
            let xd = next[d - 1];
            match mode {
                TraceMode::Entry if xd < -tol => {
                    return Err(TraceError::IntegrationEscape { s: s_next, xd });
                }
                TraceMode::Tangential if !(-tol..=1.0 + tol).contains(&xd) => {
                    return Err(TraceError::IntegrationEscape { s: s_next, xd });
                }
                _ => {}
            }
            next[d - 1] = xd.clamp(0.0, 1.0);
            s = s_next;
            s_rev.push(s);
            x_rev.extend_from_slice(&next);
            std::mem::swap(&mut cur, &mut next);
        }
    }
    result.tau_minus = s;
    let n = s_rev.len();
    result.s = s_rev.into_iter().rev().collect();
    result.x = Vec::with_capacity(n * d);
    for k in (0..n).rev() {
        result.x.extend_from_slice(&x_rev[k * d..(k + 1) * d]);
    }
    let end = domain.wrap_position(result.position(0));
    result.entry = if hit_top {
        domain.classify_inflow(s, &end, tol.max(1e-8))?
    } else if s <= origin + tol {
        Some(InflowPoint {
            kind: InflowKind::Initial,
            t: s,
            x: end,
        })
    } else {
        None
    };
    if hit_top && result.entry.is_none() {
        return Err(TraceError::IntegrationEscape { s, xd: 1.0 });
    }
    Ok(result)
}

/// Entry time and entry point of the characteristic through `(t0, x0)`.
pub fn entry_time(
    b: &dyn VelocityField,
    domain: &StripDomain,
    t0: f64,
    x0: &[f64],
    ctrl: &StepCtrl,
) -> Result<(f64, InflowPoint), TraceError> {
    let r = trace_backward(b, domain, t0, x0, None, TraceMode::Entry, ctrl)?;
    let entry = r.entry.expect("full trace reaches the inflow surface");
    Ok((r.tau_minus, entry))
}

/// Time at which the characteristic through `(t0, x0)` reaches height
/// `xd_target >= x0_d`, found by integrating `dPhi/dw = 1 / b_d` and
/// `dX'/dw = b' / b_d` in the height variable `w`.
///
/// `b_d_bound` is the cone constant `B_d`; a speed below half of it is
/// reported as [`TraceError::DivergentReciprocal`].
pub fn inverse_time_map(
    b: &dyn VelocityField,
    domain: &StripDomain,
    t0: f64,
    x0: &[f64],
    xd_target: f64,
    b_d_bound: f64,
    ctrl: &StepCtrl,
) -> Result<f64, TraceError> {
    let d = domain.dim();
    if x0.len() != d {
        return Err(TraceError::BadStart(format!("expected {d} coordinates")));
    }
    let w0 = x0[d - 1];
    if !(xd_target >= w0 - ctrl.geom_tol && xd_target <= 1.0 + ctrl.geom_tol) {
        return Err(TraceError::BadStart(format!(
            "target {xd_target} not in [{w0}, 1]"
        )));
    }
    let span = xd_target - w0;
    if span <= 0.0 {
        return Ok(t0);
    }
    // State: [Phi, X'_1 .. X'_{d-1}].
    let mut state = vec![0.0; d];
    state[0] = t0;
    state[1..].copy_from_slice(&x0[..d - 1]);
    let n = (span / ctrl.max_dt).ceil().max(1.0) as usize;
    let dw = span / n as f64;
    let mut buf = vec![0.0; d];
    let mut pos = vec![0.0; d];
    let mut rhs = |w: f64, st: &[f64], out: &mut [f64]| -> Result<(), TraceError> {
        pos[..d - 1].copy_from_slice(&st[1..]);
        pos[d - 1] = w.clamp(0.0, 1.0);
        domain.wrap_in_place(&mut pos);
        b.eval(st[0], &pos, &mut buf)?;
        let bd = buf[d - 1];
        if !bd.is_finite() {
            return Err(TraceError::NonFiniteField(st[0]));
        }
        if bd.abs() < 0.5 * b_d_bound {
            return Err(TraceError::DivergentReciprocal { w, bd: bd.abs() });
        }
        out[0] = 1.0 / bd;
        for i in 0..d - 1 {
            out[i + 1] = buf[i] / bd;
        }
        Ok(())
    };
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for k in 0..n {
        let w = w0 + dw * k as f64;
        rhs(w, &state, &mut k1)?;
        for i in 0..d {
            tmp[i] = state[i] + 0.5 * dw * k1[i];
        }
        rhs(w + 0.5 * dw, &tmp, &mut k2)?;
        for i in 0..d {
            tmp[i] = state[i] + 0.5 * dw * k2[i];
        }
        rhs(w + 0.5 * dw, &tmp, &mut k3)?;
        for i in 0..d {
            tmp[i] = state[i] + dw * k3[i];
        }
        rhs(w + dw, &tmp, &mut k4)?;
        for i in 0..d {
            state[i] += dw / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(state[0])
}

/// Lipschitz constants of the flow with respect to start point (`C1`) and to
/// start time, start point and parameter (`C2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConstants {
    pub c1: f64,
    pub c2: f64,
    /// Inputs: `||b||_inf`, `||D_{(x,y)} b||_{L^1}` and `Lambda`.
    pub sup_b: f64,
    pub l1_db: f64,
    pub lambda: f64,
}

impl FlowConstants {
    pub fn from_parts(sup_b: f64, l1_db: f64, lambda: f64) -> Self {
        let e = (lambda * l1_db).exp();
        Self {
            c1: l1_db.max(1.0) * e,
            c2: l1_db.max(sup_b).max(1.0) * e,
            sup_b,
            l1_db,
            lambda,
        }
    }
}

/// Evaluates `C1`, `C2` on `[t2, t3]` from norm estimates of `b`, `h` and
/// `h_bar`. Norms of `b` are restricted to `|y| <= y_radius` when given.
pub fn flow_constants(
    b: &SampledField,
    h: Option<&SampledField>,
    h_bar: Option<&SampledField>,
    t2: f64,
    t3: f64,
    y_radius: Option<f64>,
) -> Result<FlowConstants, FieldError> {
    let sup_b = sup_in_time(b, t2, t3, &NormQuery::sup().radii(y_radius, None))?;
    let q = NormQuery {
        combine: Combine::Frobenius,
        space: true,
        y: true,
        ..NormQuery::sup()
    }
    .radii(y_radius, None);
    let l1_db = l1_time(b, t2, t3, &q)?;
    let mut dh = 0.0f64;
    for f in [h, h_bar].into_iter().flatten() {
        dh = dh.max(sup_in_time(
            f,
            t2,
            t3,
            &NormQuery::dx(Combine::Frobenius),
        )?);
    }
    Ok(FlowConstants::from_parts(sup_b, l1_db, 1.0 + dh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Axis, AxisRole};
    use crate::geometry::Extension;

    fn const_field(d: usize, v: &[f64]) -> SampledField {
        assert_eq!(v.len(), d);
        SampledField::constant(v)
    }

    fn strip(d: usize) -> StripDomain {
        StripDomain::new(
            d,
            2.0,
            vec![-1.0; d - 1],
            vec![1.0; d - 1],
            Extension::Periodic,
        )
        .unwrap()
    }

    #[test]
    fn constant_descent_hits_top() {
        let b = const_field(1, &[-1.0]);
        let r = trace_backward(
            &Parametric::new(&b, None),
            &strip(1),
            0.8,
            &[0.3],
            None,
            TraceMode::Entry,
            &StepCtrl::default(),
        )
        .unwrap();
        assert!((r.tau_minus - 0.1).abs() < 1e-10);
        let e = r.entry.clone().unwrap();
        assert_eq!(e.kind, InflowKind::TopBoundary);
        assert_eq!(e.x, vec![1.0]);
        assert_eq!(*r.s.last().unwrap(), 0.8);
        assert_eq!(r.position(r.len() - 1), &[0.3]);
        for k in 0..r.len() {
            let expect = 0.3 + (0.8 - r.s[k]);
            assert!((r.position(k)[0] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn reaches_initial_sheet() {
        let b = const_field(1, &[-2.0]);
        let (tau, e) =
            entry_time(&Parametric::new(&b, None), &strip(1), 0.2, &[0.5], &StepCtrl::default())
                .unwrap();
        assert_eq!(tau, 0.0);
        assert_eq!(e.kind, InflowKind::Initial);
        assert!((e.x[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn time_dependent_entry() {
        let b = SampledField::sample(vec![Axis::uniform(AxisRole::Time, 0.0, 2.0, 3)], 1, |p, o| {
            o[0] = -(1.0 + p.t)
        })
        .unwrap();
        let (tau, _) =
            entry_time(&Parametric::new(&b, None), &strip(1), 1.0, &[0.3], &StepCtrl::default())
                .unwrap();
        // 2a - a^2/2 = 0.7 with a = 1 - s.
        let a = 2.0 - (4.0f64 - 1.4).sqrt();
        assert!((tau - (1.0 - a)).abs() < 1e-9, "{tau}");
    }

    #[test]
    fn start_on_top_face() {
        let b = const_field(1, &[-1.0]);
        let (tau, e) =
            entry_time(&Parametric::new(&b, None), &strip(1), 0.5, &[1.0], &StepCtrl::default())
                .unwrap();
        assert_eq!(tau, 0.5);
        assert_eq!(e.kind, InflowKind::TopBoundary);
    }

    #[test]
    fn inverse_time_examples() {
        let b = const_field(1, &[-2.0]);
        let v = Parametric::new(&b, None);
        let c = StepCtrl::default();
        let phi = inverse_time_map(&v, &strip(1), 1.0, &[0.5], 1.0, 2.0, &c).unwrap();
        assert!((phi - 0.75).abs() < 1e-14);
        let phi = inverse_time_map(&v, &strip(1), 1.0, &[0.5], 0.5, 2.0, &c).unwrap();
        assert_eq!(phi, 1.0);
        let b = SampledField::sample(vec![Axis::uniform(AxisRole::Space(0), 0.0, 1.0, 2)], 1, |p, o| {
            o[0] = -(1.0 + p.x[0])
        })
        .unwrap();
        let phi =
            inverse_time_map(&Parametric::new(&b, None), &strip(1), 1.0, &[0.0], 1.0, 1.0, &c)
                .unwrap();
        assert!((phi - (1.0 - 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn divergent_reciprocal() {
        let b = const_field(1, &[-0.1]);
        let r = inverse_time_map(
            &Parametric::new(&b, None),
            &strip(1),
            1.0,
            &[0.5],
            1.0,
            1.0,
            &StepCtrl::default(),
        );
        assert!(matches!(r, Err(TraceError::DivergentReciprocal { .. })));
    }

    #[test]
    fn tangential_stays_in_strip() {
        let v = SampledField::sample(
            vec![
                Axis::uniform(AxisRole::Space(0), -1.0, 1.0, 21),
                Axis::uniform(AxisRole::Space(1), 0.0, 1.0, 21),
            ],
            2,
            |p, o| {
                o[0] = 0.7;
                o[1] = 0.8 * (std::f64::consts::PI * p.x[1]).sin();
            },
        )
        .unwrap();
        let r = trace_backward(
            &Parametric::new(&v, None),
            &strip(2),
            1.5,
            &[0.9, 0.02],
            None,
            TraceMode::Tangential,
            &StepCtrl::default(),
        )
        .unwrap();
        assert_eq!(r.tau_minus, 0.0);
        assert_eq!(r.entry.as_ref().unwrap().kind, InflowKind::Initial);
        for k in 0..r.len() {
            let xd = r.position(k)[1];
            assert!((0.0..=1.0).contains(&xd));
        }
        // Unwrapped x' moved by 0.7 * 1.5 backward.
        assert!((r.position(0)[0] - (0.9 - 1.05)).abs() < 1e-12);
    }

    #[test]
    fn stop_at_ends_early() {
        let b = const_field(1, &[-0.1]);
        let r = trace_backward(
            &Parametric::new(&b, None),
            &strip(1),
            1.0,
            &[0.1],
            Some(0.5),
            TraceMode::Entry,
            &StepCtrl::default(),
        )
        .unwrap();
        assert_eq!(r.tau_minus, 0.5);
        assert!(r.entry.is_none());
    }

    #[test]
    fn escape_detected() {
        let b = const_field(1, &[0.5]);
        let r = trace_backward(
            &Parametric::new(&b, None),
            &strip(1),
            1.0,
            &[0.1],
            None,
            TraceMode::Entry,
            &StepCtrl::default(),
        );
        assert!(matches!(r, Err(TraceError::IntegrationEscape { .. })));
    }

    #[test]
    fn flow_constant_examples() {
        let b = SampledField::constant(&[0.5, -2.0]);
        let fc = flow_constants(&b, None, None, 0.0, 1.0, None).unwrap();
        assert_eq!(fc.c1, 1.0);
        assert_eq!(fc.c2, 2.0);
        let fc = FlowConstants::from_parts(0.5, 1.0, 1.0);
        assert!((fc.c1 - std::f64::consts::E).abs() < 1e-15);
    }
}
