//! Norm estimates for sampled fields.
//!
//! Gradients are adjacent-node slopes, which for a piecewise multilinear
//! interpolant are exactly its Lipschitz constants along each axis. Time
//! integrals use the trapezoid rule on the per-slice quantity, which is an
//! upper bound for the interpolant because each value is linear in `t`
//! between nodes.

use super::{AxisRole, FieldError, SampledField};
use serde::{Deserialize, Serialize};

/// How a time slice is reduced to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    /// `max |value|` over nodes and selected components.
    Sup,
    /// Max over components of the sum over selected axes of the axis slope.
    SlopeL1,
    /// Frobenius norm of the (component x axis) matrix of axis slopes.
    Frobenius,
}

/// Which slopes and nodes enter a norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NormQuery {
    pub combine: Combine,
    /// Components to include; `None` means all.
    pub comps: Option<Vec<usize>>,
    pub space: bool,
    pub y: bool,
    pub w: bool,
    /// Only cells meeting `[-r, r]` along every `y` axis are used.
    pub y_radius: Option<f64>,
    pub w_radius: Option<f64>,
    /// When set, slopes are taken along this axis only.
    pub only: Option<AxisRole>,
}

impl NormQuery {
    pub fn sup() -> Self {
        Self {
            combine: Combine::Sup,
            comps: None,
            space: false,
            y: false,
            w: false,
            y_radius: None,
            w_radius: None,
            only: None,
        }
    }

    /// Slopes along the spatial axes.
    pub fn dx(combine: Combine) -> Self {
        Self {
            combine,
            space: true,
            ..Self::sup()
        }
    }

    pub fn dy(combine: Combine) -> Self {
        Self {
            combine,
            y: true,
            ..Self::sup()
        }
    }

    pub fn dw(combine: Combine) -> Self {
        Self {
            combine,
            w: true,
            ..Self::sup()
        }
    }

    pub fn comps(mut self, comps: Vec<usize>) -> Self {
        self.comps = Some(comps);
        self
    }

    pub fn radii(mut self, y: Option<f64>, w: Option<f64>) -> Self {
        self.y_radius = y;
        self.w_radius = w;
        self
    }

    fn uses_axis(&self, role: AxisRole) -> bool {
        if let Some(only) = self.only {
            return role == only;
        }
        match role {
            AxisRole::Time => false,
            AxisRole::Space(_) => self.space,
            AxisRole::Y(_) => self.y,
            AxisRole::W(_) => self.w,
        }
    }
}

/// Summary norms of a field over a time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub sup_norm: f64,
    /// Max adjacent-node slope along each axis, including `t`.
    pub grad_norms: Vec<(AxisRole, f64)>,
    /// `int_{t2}^{t3} sup |f| dt`.
    pub l1_time_norm: f64,
    /// `int_{t2}^{t3} sup |D f| dt` over all non-time axes (Frobenius).
    pub l1_time_grad: f64,
    /// `1 + sup_norm`.
    pub lambda: f64,
}

impl NormEstimate {
    pub fn grad(&self, role: AxisRole) -> f64 {
        self.grad_norms
            .iter()
            .find(|(r, _)| *r == role)
            .map(|(_, g)| *g)
            .unwrap_or(0.0)
    }
}

fn index_ranges(field: &SampledField, q: &NormQuery) -> Vec<(usize, usize)> {
    field
        .axes()
        .iter()
        .map(|a| {
            let n = a.len();
            let r = match a.role {
                AxisRole::Y(_) => q.y_radius,
                AxisRole::W(_) => q.w_radius,
                _ => None,
            };
            match r {
                None => (0, n - 1),
                Some(r) => {
                    let lo = a.nodes.partition_point(|&z| z <= -r).saturating_sub(1);
                    let hi = a.nodes.partition_point(|&z| z < r).min(n - 1);
                    (lo.min(hi), hi.max(lo))
                }
            }
        })
        .collect()
}

/// The per-slice metric at time-node `tk` (ignored when the field has no
/// time axis).
fn slice_metric(field: &SampledField, tk: usize, q: &NormQuery, ranges: &[(usize, usize)]) -> f64 {
    let axes = field.axes();
    let strides = field.strides();
    let all: Vec<usize> = (0..field.ncomp()).collect();
    let comps = q.comps.as_deref().unwrap_or(&all);
    let tj = field.axis_index(AxisRole::Time);
    let mut lo: Vec<usize> = ranges.iter().map(|r| r.0).collect();
    let mut hi: Vec<usize> = ranges.iter().map(|r| r.1).collect();
    if let Some(j) = tj {
        lo[j] = tk;
        hi[j] = tk;
    }
    let slope_axes: Vec<usize> = (0..axes.len())
        .filter(|&j| q.uses_axis(axes[j].role))
        .collect();
    let mut sup = 0.0f64;
    let mut slopes = vec![0.0f64; comps.len() * slope_axes.len()];
    let mut idx = lo.clone();
    loop {
        let flat: usize = idx.iter().zip(strides).map(|(i, s)| i * s).sum();
        for (ci, &c) in comps.iter().enumerate() {
            let v = field.component(c);
            match q.combine {
                Combine::Sup => sup = sup.max(v[flat].abs()),
                _ => {
                    for (ai, &j) in slope_axes.iter().enumerate() {
                        if idx[j] < hi[j] {
                            let nodes = &axes[j].nodes;
                            let h = nodes[idx[j] + 1] - nodes[idx[j]];
                            let s = (v[flat + strides[j]] - v[flat]).abs() / h;
                            let e = &mut slopes[ci * slope_axes.len() + ai];
                            *e = e.max(s);
                        }
                    }
                }
            }
        }
        let mut j = idx.len();
        loop {
            if j == 0 {
                return finish(q.combine, sup, &slopes, slope_axes.len());
            }
            j -= 1;
            if idx[j] < hi[j] {
                idx[j] += 1;
                break;
            }
            idx[j] = lo[j];
        }
    }
}

fn finish(c: Combine, sup: f64, slopes: &[f64], naxes: usize) -> f64 {
    match c {
        Combine::Sup => sup,
        Combine::SlopeL1 => {
            if naxes == 0 {
                return 0.0;
            }
            slopes
                .chunks(naxes)
                .map(|row| row.iter().sum::<f64>())
                .fold(0.0, f64::max)
        }
        Combine::Frobenius => slopes.iter().map(|s| s * s).sum::<f64>().sqrt(),
    }
}

/// Per-slice metrics at the time nodes, with the endpoints `t2`, `t3`
/// inserted by linear interpolation. Returns `(times, metrics)`.
fn metric_profile(
    field: &SampledField,
    t2: f64,
    t3: f64,
    q: &NormQuery,
) -> Result<(Vec<f64>, Vec<f64>), FieldError> {
    if !(t2 <= t3) {
        return Err(FieldError::DegenerateTime(format!("t2 = {t2} > t3 = {t3}")));
    }
    let ranges = index_ranges(field, q);
    let Some(tj) = field.axis_index(AxisRole::Time) else {
        let m = slice_metric(field, 0, q, &ranges);
        return Ok((vec![t2, t3], vec![m, m]));
    };
    let tax = &field.axes()[tj];
    let (i2, th2) = tax.locate(t2)?;
    let (i3, th3) = tax.locate(t3)?;
    let last = if th3 > 0.0 { i3 + 1 } else { i3 };
    let node_metrics: Vec<f64> = (i2..=last.max(i2 + 1).min(tax.len() - 1))
        .map(|k| slice_metric(field, k, q, &ranges))
        .collect();
    let at = |k: usize| node_metrics[k - i2];
    let mut ts = vec![t2];
    let mut ms = vec![(1.0 - th2) * at(i2) + th2 * at(i2 + 1)];
    for k in (i2 + 1)..=i3 {
        if tax.nodes[k] > t2 && tax.nodes[k] < t3 {
            ts.push(tax.nodes[k]);
            ms.push(at(k));
        }
    }
    let m3 = if th3 > 0.0 {
        (1.0 - th3) * at(i3) + th3 * at(i3 + 1)
    } else {
        at(i3)
    };
    ts.push(t3);
    ms.push(m3);
    Ok((ts, ms))
}

/// `int_{t2}^{t3}` of the per-slice metric.
pub fn l1_time(field: &SampledField, t2: f64, t3: f64, q: &NormQuery) -> Result<f64, FieldError> {
    let (ts, ms) = metric_profile(field, t2, t3, q)?;
    Ok(ts
        .windows(2)
        .zip(ms.windows(2))
        .map(|(t, m)| 0.5 * (t[1] - t[0]) * (m[0] + m[1]))
        .sum())
}

/// Supremum over `[t2, t3]` of the per-slice metric.
pub fn sup_in_time(
    field: &SampledField,
    t2: f64,
    t3: f64,
    q: &NormQuery,
) -> Result<f64, FieldError> {
    let (_, ms) = metric_profile(field, t2, t3, q)?;
    Ok(ms.into_iter().fold(0.0, f64::max))
}

/// Supremum over all of the field's nodes.
pub fn sup_all(field: &SampledField, q: &NormQuery) -> f64 {
    let ranges = index_ranges(field, q);
    match field.axis_index(AxisRole::Time) {
        None => slice_metric(field, 0, q, &ranges),
        Some(j) => (0..field.axes()[j].len())
            .map(|k| slice_metric(field, k, q, &ranges))
            .fold(0.0, f64::max),
    }
}

/// Sup, per-axis slopes and time-integrated norms over `[t2, t3]`.
pub fn estimate_norms(field: &SampledField, t2: f64, t3: f64) -> Result<NormEstimate, FieldError> {
    let sup_norm = sup_in_time(field, t2, t3, &NormQuery::sup())?;
    let mut grad_norms = Vec::new();
    for a in field.axes() {
        let g = match a.role {
            AxisRole::Time => time_slope(field, t2, t3)?,
            role => {
                let q = NormQuery {
                    combine: Combine::SlopeL1,
                    only: Some(role),
                    ..NormQuery::sup()
                };
                sup_in_time(field, t2, t3, &q)?
            }
        };
        grad_norms.push((a.role, g));
    }
    let all = NormQuery {
        combine: Combine::Frobenius,
        space: true,
        y: true,
        w: true,
        ..NormQuery::sup()
    };
    Ok(NormEstimate {
        sup_norm,
        grad_norms,
        l1_time_norm: l1_time(field, t2, t3, &NormQuery::sup())?,
        l1_time_grad: l1_time(field, t2, t3, &all)?,
        lambda: 1.0 + sup_norm,
    })
}

fn time_slope(field: &SampledField, t2: f64, t3: f64) -> Result<f64, FieldError> {
    let Some(j) = field.axis_index(AxisRole::Time) else {
        return Ok(0.0);
    };
    let tax = &field.axes()[j];
    let (i2, _) = tax.locate(t2)?;
    let (i3, th3) = tax.locate(t3)?;
    let end = if th3 > 0.0 { i3 + 1 } else { i3.max(i2 + 1) };
    let stride = field.strides()[j];
    let mut best = 0.0f64;
    for v in field.values() {
        for flat in 0..v.len() {
            let k = (flat / stride) % tax.len();
            if k >= i2 && k < end {
                let h = tax.nodes[k + 1] - tax.nodes[k];
                best = best.max((v[flat + stride] - v[flat]).abs() / h);
            }
        }
    }
    Ok(best)
}

/// Result of testing a vector field for membership in the falling cone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeCheckReport {
    pub is_member: bool,
    /// `min(-b_d)` over all samples.
    pub b_d: f64,
    /// Coordinates of offending nodes (at most [`MAX_REPORTED`] are kept).
    pub violations: Vec<Vec<(AxisRole, f64)>>,
    pub violation_count: usize,
    /// The last component varies along a `y` axis.
    pub y_dependent: bool,
}

pub const MAX_REPORTED: usize = 64;

/// Checks `b_d <= -B_d < 0` and that `b_d` does not depend on `y`.
pub fn check_cone_membership(b: &SampledField, dim: usize) -> ConeCheckReport {
    let comp = dim - 1;
    let v = b.component(comp);
    let b_d = v.iter().map(|z| -z).fold(f64::INFINITY, f64::min);
    let mut violations = Vec::new();
    let mut violation_count = 0;
    for (flat, &z) in v.iter().enumerate() {
        if !(-z > 0.0) {
            violation_count += 1;
            if violations.len() < MAX_REPORTED {
                violations.push(b.node_coords(flat));
            }
        }
    }
    let mut y_dependent = false;
    for (j, a) in b.axes().iter().enumerate() {
        if let AxisRole::Y(_) = a.role {
            let s = b.strides()[j];
            for flat in 0..v.len() {
                let k = (flat / s) % a.len();
                if k + 1 < a.len() {
                    let (p, q) = (v[flat], v[flat + s]);
                    if (p - q).abs() > 1e-14 * (1.0 + p.abs()) {
                        y_dependent = true;
                        violation_count += 1;
                        if violations.len() < MAX_REPORTED {
                            violations.push(b.node_coords(flat));
                        }
                        break;
                    }
                }
            }
        }
    }
    ConeCheckReport {
        is_member: b_d > 0.0 && !y_dependent,
        b_d,
        violations,
        violation_count,
        y_dependent,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Axis, SampledField};
    use super::*;

    fn tx(nt: usize, nx: usize, tmax: f64, f: impl Fn(f64, f64) -> f64) -> SampledField {
        SampledField::sample(
            vec![
                Axis::uniform(AxisRole::Time, 0.0, tmax, nt),
                Axis::uniform(AxisRole::Space(0), 0.0, 1.0, nx),
            ],
            1,
            |p, o| o[0] = f(p.t, p.x[0]),
        )
        .unwrap()
    }

    #[test]
    fn linear_field_norms() {
        let f = SampledField::sample(vec![Axis::uniform(AxisRole::Space(0), 0.0, 1.0, 11)], 1, |p, o| {
            o[0] = 3.0 * p.x[0]
        })
        .unwrap();
        let n = estimate_norms(&f, 0.0, 1.0).unwrap();
        assert!((n.sup_norm - 3.0).abs() < 1e-14);
        assert!((n.grad(AxisRole::Space(0)) - 3.0).abs() < 1e-12);
        assert!((n.lambda - 4.0).abs() < 1e-14);
    }

    #[test]
    fn constant_field_norms() {
        let f = tx(5, 5, 2.0, |_, _| -1.5);
        let n = estimate_norms(&f, 0.0, 2.0).unwrap();
        assert_eq!(n.grad(AxisRole::Space(0)), 0.0);
        assert_eq!(n.grad(AxisRole::Time), 0.0);
        assert!((n.l1_time_norm - 3.0).abs() < 1e-14);
        let n = estimate_norms(&f, 0.25, 1.1).unwrap();
        assert!((n.l1_time_norm - 1.5 * 0.85).abs() < 1e-14);
    }

    #[test]
    fn sine_gradient() {
        let f = tx(2, 101, 1.0, |_, x| (std::f64::consts::PI * x).sin());
        let n = estimate_norms(&f, 0.0, 1.0).unwrap();
        assert!((n.grad(AxisRole::Space(0)) - std::f64::consts::PI).abs() < 1e-3);
    }

    #[test]
    fn l1_of_linear_in_time() {
        let f = tx(3, 2, 1.0, |t, _| t);
        let v = l1_time(&f, 0.0, 1.0, &NormQuery::sup()).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let v = l1_time(&f, 0.2, 0.7, &NormQuery::sup()).unwrap();
        assert!((v - 0.5 * (0.49 - 0.04)).abs() < 1e-15);
    }

    #[test]
    fn bad_window() {
        let f = tx(3, 2, 1.0, |t, _| t);
        assert!(matches!(
            estimate_norms(&f, 0.8, 0.2),
            Err(FieldError::DegenerateTime(_))
        ));
    }

    #[test]
    fn restricted_y_norm() {
        let f = SampledField::sample(vec![Axis::uniform(AxisRole::Y(0), -4.0, 4.0, 9)], 1, |p, o| {
            o[0] = p.y[0] * p.y[0]
        })
        .unwrap();
        let q = NormQuery::sup().radii(Some(1.0), None);
        assert_eq!(sup_all(&f, &q), 1.0);
        let q = NormQuery::dy(Combine::SlopeL1).radii(Some(1.0), None);
        assert_eq!(sup_all(&f, &q), 1.0);
        assert_eq!(sup_all(&f, &NormQuery::sup()), 16.0);
    }

    #[test]
    fn cone_examples() {
        let b = tx(3, 3, 2.0, |_, _| -2.0);
        let r = check_cone_membership(&b, 1);
        assert!(r.is_member && r.b_d == 2.0);
        let b = tx(3, 3, 2.0, |t, _| -1.0 + t);
        let r = check_cone_membership(&b, 1);
        assert!(!r.is_member && !r.violations.is_empty());
        let b = tx(2, 11, 1.0, |_, x| -(x + 0.5));
        let r = check_cone_membership(&b, 1);
        assert!(r.is_member && (r.b_d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cone_rejects_y_dependence() {
        let b = SampledField::sample(
            vec![
                Axis::uniform(AxisRole::Space(0), 0.0, 1.0, 3),
                Axis::uniform(AxisRole::Y(0), -1.0, 1.0, 3),
            ],
            1,
            |p, o| o[0] = -2.0 + 0.1 * p.y[0],
        )
        .unwrap();
        let r = check_cone_membership(&b, 1);
        assert!(r.y_dependent && !r.is_member);
    }
}
