//! Grid-sampled fields with multilinear interpolation.
//!
//! Every coefficient of the model (velocities, sources, data, solutions) is a
//! [`SampledField`]: a tensor-product grid over some subset of the coordinates
//! `t, x_1..x_d, y_1..y_p, w_1..w_q`, with one value array per component.
//! A field without an axis for some coordinate is constant along it.

mod io;
mod norms;

pub use io::{parse_label, read_columnar, read_columnar_with, write_columnar, write_columnar_with};
pub use norms::{
    check_cone_membership, estimate_norms, l1_time, sup_all, sup_in_time, Combine,
    ConeCheckReport, NormEstimate, NormQuery,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack, in units of the axis span, within which a query that falls
/// just outside an axis is snapped onto it.
pub const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("axis {0} has fewer than 2 nodes")]
    TooFewNodes(String),
    #[error("axis {0} is not strictly increasing")]
    NotIncreasing(String),
    #[error("axis {0} appears twice")]
    DuplicateAxis(String),
    #[error("component {comp} has {got} values, expected {expected}")]
    ValueCount {
        comp: usize,
        expected: usize,
        got: usize,
    },
    #[error("field needs at least one component")]
    NoComponents,
    #[error("{role} = {value} is outside the axis range [{lo}, {hi}]")]
    OutOfRange {
        role: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("query point has no coordinate {0}")]
    MissingCoordinate(String),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("degenerate time axis: {0}")]
    DegenerateTime(String),
    #[error("component index {0} out of bounds")]
    BadComponent(usize),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

/// The coordinate an axis samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AxisRole {
    Time,
    /// Spatial coordinate `x_{k+1}` (zero-based index `k`).
    Space(usize),
    /// Parameter `y_{k+1}`.
    Y(usize),
    /// Parameter `w_{k+1}`.
    W(usize),
}

impl AxisRole {
    pub fn label(&self) -> String {
        match self {
            AxisRole::Time => "t".to_string(),
            AxisRole::Space(k) => format!("x{}", k + 1),
            AxisRole::Y(k) => format!("y{}", k + 1),
            AxisRole::W(k) => format!("w{}", k + 1),
        }
    }
}

impl std::fmt::Display for AxisRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub role: AxisRole,
    pub nodes: Vec<f64>,
}

impl Axis {
    pub fn new(role: AxisRole, nodes: Vec<f64>) -> Self {
        Self { role, nodes }
    }

    /// `n` equally spaced nodes on `[lo, hi]`.
    pub fn uniform(role: AxisRole, lo: f64, hi: f64, n: usize) -> Self {
        Self {
            role,
            nodes: linspace(lo, hi, n),
        }
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cell index `i` and local coordinate `theta` in `[0, 1]` with
    /// `v = (1 - theta) nodes[i] + theta nodes[i + 1]`.
    pub fn locate(&self, v: f64) -> Result<(usize, f64), FieldError> {
        let n = self.nodes.len();
        let (lo, hi) = (self.lo(), self.hi());
        let slack = RANGE_SLACK * (hi - lo);
        if !v.is_finite() || v < lo - slack || v > hi + slack {
            return Err(FieldError::OutOfRange {
                role: self.role.label(),
                value: v,
                lo,
                hi,
            });
        }
        let v = v.clamp(lo, hi);
        let i = self.nodes.partition_point(|&z| z <= v).clamp(1, n - 1) - 1;
        let (a, b) = (self.nodes[i], self.nodes[i + 1]);
        let theta = ((v - a) / (b - a)).clamp(0.0, 1.0);
        Ok((i, theta))
    }

    fn validate(&self) -> Result<(), FieldError> {
        if self.nodes.len() < 2 {
            return Err(FieldError::TooFewNodes(self.role.label()));
        }
        if self
            .nodes
            .windows(2)
            .any(|w| !(w[0] < w[1]) || !w[0].is_finite() || !w[1].is_finite())
        {
            return Err(FieldError::NotIncreasing(self.role.label()));
        }
        Ok(())
    }
}

/// `n >= 2` equally spaced values from `lo` to `hi`, both endpoints exact.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + h * i as f64 })
        .collect()
}

/// Coordinates of a query. Slices may be longer than what the field uses.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub w: &'a [f64],
}

impl<'a> Point<'a> {
    pub fn tx(t: f64, x: &'a [f64]) -> Self {
        Self {
            t,
            x,
            y: &[],
            w: &[],
        }
    }

    pub fn txy(t: f64, x: &'a [f64], y: &'a [f64]) -> Self {
        Self { t, x, y, w: &[] }
    }

    pub fn coord(&self, role: AxisRole) -> Option<f64> {
        match role {
            AxisRole::Time => Some(self.t),
            AxisRole::Space(k) => self.x.get(k).copied(),
            AxisRole::Y(k) => self.y.get(k).copied(),
            AxisRole::W(k) => self.w.get(k).copied(),
        }
    }
}

/// Multilinear interpolation weights for one query: flat node indices and
/// their weights. Zero weights are dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stencil {
    pub idx: Vec<usize>,
    pub wt: Vec<f64>,
}

impl Stencil {
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.idx
            .iter()
            .zip(&self.wt)
            .map(|(&i, &w)| w * values[i])
            .sum()
    }
}

/// A vector-valued function sampled on a tensor-product grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    axes: Vec<Axis>,
    names: Vec<String>,
    values: Vec<Vec<f64>>,
    strides: Vec<usize>,
}

impl SampledField {
    /// Builds a field; `values[c]` holds component `c` in row-major order of
    /// `axes` (last axis fastest).
    pub fn new(axes: Vec<Axis>, values: Vec<Vec<f64>>) -> Result<Self, FieldError> {
        let names = (0..values.len()).map(|c| format!("c{c}")).collect();
        Self::with_names(axes, names, values)
    }

    pub fn with_names(
        axes: Vec<Axis>,
        names: Vec<String>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, FieldError> {
        if values.is_empty() || names.len() != values.len() {
            return Err(FieldError::NoComponents);
        }
        for (i, a) in axes.iter().enumerate() {
            a.validate()?;
            if axes[..i].iter().any(|b| b.role == a.role) {
                return Err(FieldError::DuplicateAxis(a.role.label()));
            }
        }
        let expected: usize = axes.iter().map(|a| a.len()).product();
        for (comp, v) in values.iter().enumerate() {
            if v.len() != expected {
                return Err(FieldError::ValueCount {
                    comp,
                    expected,
                    got: v.len(),
                });
            }
        }
        let strides = strides_of(&axes);
        Ok(Self {
            axes,
            names,
            values,
            strides,
        })
    }

    /// A field with no axes: constant everywhere.
    pub fn constant(values: &[f64]) -> Self {
        Self::new(vec![], values.iter().map(|&v| vec![v]).collect()).expect("constant field")
    }

    /// Samples `f` at every grid node. `f` receives the point and writes
    /// `ncomp` values.
    pub fn sample<F>(axes: Vec<Axis>, ncomp: usize, mut f: F) -> Result<Self, FieldError>
    where
        F: FnMut(&Point, &mut [f64]),
    {
        let n: usize = axes.iter().map(|a| a.len()).product();
        let mut values = vec![Vec::with_capacity(n); ncomp];
        let dims = coordinate_dims(&axes);
        let mut x = vec![0.0; dims.0];
        let mut y = vec![0.0; dims.1];
        let mut w = vec![0.0; dims.2];
        let mut out = vec![0.0; ncomp];
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..n {
            let mut t = 0.0;
            for (a, &i) in axes.iter().zip(&idx) {
                let v = a.nodes[i];
                match a.role {
                    AxisRole::Time => t = v,
                    AxisRole::Space(k) => x[k] = v,
                    AxisRole::Y(k) => y[k] = v,
                    AxisRole::W(k) => w[k] = v,
                }
            }
            f(
                &Point {
                    t,
                    x: &x,
                    y: &y,
                    w: &w,
                },
                &mut out,
            );
            for (c, &o) in out.iter().enumerate() {
                values[c].push(o);
            }
            increment(&mut idx, &axes);
        }
        Self::new(axes, values)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, role: AxisRole) -> Option<&Axis> {
        self.axes.iter().find(|a| a.role == role)
    }

    pub fn axis_index(&self, role: AxisRole) -> Option<usize> {
        self.axes.iter().position(|a| a.role == role)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn set_names(&mut self, names: Vec<String>) {
        assert_eq!(names.len(), self.values.len());
        self.names = names;
    }

    pub fn ncomp(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    pub fn values_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.values
    }

    pub fn node_count(&self) -> usize {
        self.values[0].len()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    pub fn has_role(&self, pred: impl Fn(AxisRole) -> bool) -> bool {
        self.axes.iter().any(|a| pred(a.role))
    }

    /// Coordinates of node `flat` as (role, value) pairs.
    pub fn node_coords(&self, flat: usize) -> Vec<(AxisRole, f64)> {
        let mut rem = flat;
        self.axes
            .iter()
            .zip(&self.strides)
            .map(|(a, &s)| {
                let i = rem / s;
                rem %= s;
                (a.role, a.nodes[i])
            })
            .collect()
    }

    /// Interpolation stencil at `p`.
    pub fn stencil(&self, p: &Point) -> Result<Stencil, FieldError> {
        let mut s = Stencil::default();
        self.stencil_into(p, &mut s.idx, &mut s.wt)?;
        Ok(s)
    }

    /// Appends the stencil of `p` to `idx`/`wt`.
    pub fn stencil_into(
        &self,
        p: &Point,
        idx: &mut Vec<usize>,
        wt: &mut Vec<f64>,
    ) -> Result<(), FieldError> {
        let k = self.axes.len();
        let mut cell = [(0usize, 0.0f64); 16];
        assert!(k <= 16, "too many axes");
        for (j, a) in self.axes.iter().enumerate() {
            let v = p
                .coord(a.role)
                .ok_or_else(|| FieldError::MissingCoordinate(a.role.label()))?;
            cell[j] = a.locate(v)?;
        }
        for corner in 0..(1usize << k) {
            let mut w = 1.0;
            let mut flat = 0;
            for j in 0..k {
                let (i, th) = cell[j];
                let up = (corner >> j) & 1 == 1;
                let f = if up { th } else { 1.0 - th };
                if f == 0.0 {
                    w = 0.0;
                    break;
                }
                w *= f;
                flat += (i + up as usize) * self.strides[j];
            }
            if w != 0.0 {
                idx.push(flat);
                wt.push(w);
            }
        }
        Ok(())
    }

    /// All components at `p`.
    pub fn eval(&self, p: &Point) -> Result<Vec<f64>, FieldError> {
        let mut out = vec![0.0; self.ncomp()];
        self.eval_into(p, &mut out)?;
        Ok(out)
    }

    /// Writes all components at `p` into `out` without allocating.
    pub fn eval_into(&self, p: &Point, out: &mut [f64]) -> Result<(), FieldError> {
        let k = self.axes.len();
        assert!(k <= 16, "too many axes");
        let mut cell = [(0usize, 0.0f64); 16];
        for (j, a) in self.axes.iter().enumerate() {
            let v = p
                .coord(a.role)
                .ok_or_else(|| FieldError::MissingCoordinate(a.role.label()))?;
            cell[j] = a.locate(v)?;
        }
        let nc = self.ncomp().min(out.len());
        out[..nc].iter_mut().for_each(|o| *o = 0.0);
        for corner in 0..(1usize << k) {
            let mut w = 1.0;
            let mut flat = 0;
            for j in 0..k {
                let (i, th) = cell[j];
                let up = (corner >> j) & 1 == 1;
                let f = if up { th } else { 1.0 - th };
                if f == 0.0 {
                    w = 0.0;
                    break;
                }
                w *= f;
                flat += (i + up as usize) * self.strides[j];
            }
            if w != 0.0 {
                for (c, o) in out[..nc].iter_mut().enumerate() {
                    *o += w * self.values[c][flat];
                }
            }
        }
        if out[..nc].iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite(format!("{p:?}")));
        }
        Ok(())
    }

    /// Component `c` at `p`.
    pub fn eval_comp(&self, c: usize, p: &Point) -> Result<f64, FieldError> {
        if c >= self.ncomp() {
            return Err(FieldError::BadComponent(c));
        }
        let v = self.stencil(p)?.apply(&self.values[c]);
        if !v.is_finite() {
            return Err(FieldError::NonFinite(format!("{p:?}")));
        }
        Ok(v)
    }

    /// The field restricted to `role = value`, with that axis removed.
    pub fn slice(&self, role: AxisRole, value: f64) -> Result<Self, FieldError> {
        let Some(j) = self.axis_index(role) else {
            return Ok(self.clone());
        };
        let (i, th) = self.axes[j].locate(value)?;
        let mut axes = self.axes.clone();
        axes.remove(j);
        let n: usize = axes.iter().map(|a| a.len()).product();
        let stride = self.strides[j];
        let values = self
            .values
            .iter()
            .map(|v| {
                (0..n)
                    .map(|r| {
                        let hi_part = r / stride;
                        let lo_part = r % stride;
                        let base = hi_part * stride * self.axes[j].len() + lo_part;
                        let a = v[base + i * stride];
                        if th == 0.0 {
                            a
                        } else {
                            let b = v[base + (i + 1) * stride];
                            (1.0 - th) * a + th * b
                        }
                    })
                    .collect()
            })
            .collect();
        Self::with_names(axes, self.names.clone(), values)
    }

    /// Keeps only the listed components, in the given order.
    pub fn select(&self, comps: &[usize]) -> Result<Self, FieldError> {
        let mut values = Vec::with_capacity(comps.len());
        let mut names = Vec::with_capacity(comps.len());
        for &c in comps {
            values.push(self.values.get(c).ok_or(FieldError::BadComponent(c))?.clone());
            names.push(self.names[c].clone());
        }
        Self::with_names(self.axes.clone(), names, values)
    }

    /// Stacks fields with identical axes into one multi-component field.
    pub fn stack(parts: &[&SampledField]) -> Result<Self, FieldError> {
        let first = parts.first().ok_or(FieldError::NoComponents)?;
        let mut values = Vec::new();
        let mut names = Vec::new();
        for p in parts {
            if p.axes != first.axes {
                return Err(FieldError::ValueCount {
                    comp: values.len(),
                    expected: first.node_count(),
                    got: p.node_count(),
                });
            }
            values.extend(p.values.iter().cloned());
            names.extend(p.names.iter().cloned());
        }
        Self::with_names(first.axes.clone(), names, values)
    }

    /// Applies `f` to every stored value.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            for z in v.iter_mut() {
                *z = f(*z);
            }
        }
        out
    }

    /// Renames axes according to `f`; used to permute or relabel parameters.
    pub fn relabel(&self, f: impl Fn(AxisRole) -> AxisRole) -> Result<Self, FieldError> {
        let axes = self
            .axes
            .iter()
            .map(|a| Axis::new(f(a.role), a.nodes.clone()))
            .collect();
        Self::with_names(axes, self.names.clone(), self.values.clone())
    }
}

fn strides_of(axes: &[Axis]) -> Vec<usize> {
    let mut s = vec![1usize; axes.len()];
    for j in (0..axes.len().saturating_sub(1)).rev() {
        s[j] = s[j + 1] * axes[j + 1].len();
    }
    s
}

fn increment(idx: &mut [usize], axes: &[Axis]) {
    for j in (0..idx.len()).rev() {
        idx[j] += 1;
        if idx[j] < axes[j].len() {
            return;
        }
        idx[j] = 0;
    }
}

/// Sizes of the (x, y, w) coordinate vectors implied by a set of axes.
fn coordinate_dims(axes: &[Axis]) -> (usize, usize, usize) {
    let mut d = (0, 0, 0);
    for a in axes {
        match a.role {
            AxisRole::Time => {}
            AxisRole::Space(k) => d.0 = d.0.max(k + 1),
            AxisRole::Y(k) => d.1 = d.1.max(k + 1),
            AxisRole::W(k) => d.2 = d.2.max(k + 1),
        }
    }
    d
}
