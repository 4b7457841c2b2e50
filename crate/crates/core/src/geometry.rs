//! Strip geometry `(0, t1) x R^{d-1} x (0, 1)`, the inflow surface and the
//! bounded computational window used for the unbounded coordinates.
//!
//! The last spatial coordinate `x_d` is always confined to `[0, 1]`. The first
//! `d - 1` coordinates are unbounded in the model; numerically they live in a
//! window `[lo, hi)` and points outside it are mapped back by the per-axis
//! [`Extension`] policy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Geometric tolerance used when none is given explicitly.
pub const DEFAULT_GEOM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("spatial dimension must be at least 1")]
    ZeroDimension,
    #[error("t1 > 0 required (got {0})")]
    NonPositiveHorizon(f64),
    #[error("window has {got} axes, expected {expected} (d - 1)")]
    WindowArity { expected: usize, got: usize },
    #[error("window axis {axis}: lo {lo} must be < hi {hi}")]
    EmptyWindow { axis: usize, lo: f64, hi: f64 },
    #[error("point has {got} coordinates, expected {expected}")]
    PointArity { expected: usize, got: usize },
    #[error("malformed inflow query: x_d = {xd} outside [0, 1] by more than {tol}")]
    HeightOutOfStrip { xd: f64, tol: f64 },
    #[error("malformed inflow query: t = {t} precedes the initial sheet at {origin}")]
    TimeBeforeOrigin { t: f64, origin: f64 },
}

/// How fields are evaluated outside the window along an unbounded axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    #[default]
    Periodic,
    ClampToEdge,
}

/// Which sheet of the inflow surface a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflowKind {
    /// The initial slice `{t = origin} x G`.
    Initial,
    /// The top face `x_d = 1`.
    TopBoundary,
}

/// A point of the inflow surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflowPoint {
    pub kind: InflowKind,
    pub t: f64,
    pub x: Vec<f64>,
}

/// Geometry of the strip plus the computational window.
///
/// `origin` is the time of the initial sheet. It is `0` for a fresh problem
/// and is moved forward when a solve is continued over successive slabs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripDomain {
    dim: usize,
    t1: f64,
    origin: f64,
    window_lo: Vec<f64>,
    window_hi: Vec<f64>,
    extension: Vec<Extension>,
}

impl StripDomain {
    /// Builds a domain with the same extension policy on every unbounded axis.
    pub fn new(
        dim: usize,
        t1: f64,
        window_lo: Vec<f64>,
        window_hi: Vec<f64>,
        extension: Extension,
    ) -> Result<Self, GeometryError> {
        let ext = vec![extension; dim.saturating_sub(1)];
        Self::with_extensions(dim, t1, window_lo, window_hi, ext)
    }

    pub fn with_extensions(
        dim: usize,
        t1: f64,
        window_lo: Vec<f64>,
        window_hi: Vec<f64>,
        extension: Vec<Extension>,
    ) -> Result<Self, GeometryError> {
        if dim == 0 {
            return Err(GeometryError::ZeroDimension);
        }
        if !(t1 > 0.0) || !t1.is_finite() {
            return Err(GeometryError::NonPositiveHorizon(t1));
        }
        let expected = dim - 1;
        for len in [window_lo.len(), window_hi.len(), extension.len()] {
            if len != expected {
                return Err(GeometryError::WindowArity { expected, got: len });
            }
        }
        for (axis, (&lo, &hi)) in window_lo.iter().zip(&window_hi).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(GeometryError::EmptyWindow { axis, lo, hi });
            }
        }
        Ok(Self {
            dim,
            t1,
            origin: 0.0,
            window_lo,
            window_hi,
            extension,
        })
    }

    /// A one-dimensional strip `(0, t1) x (0, 1)`.
    pub fn interval(t1: f64) -> Result<Self, GeometryError> {
        Self::new(1, t1, vec![], vec![], Extension::Periodic)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn window_lo(&self) -> &[f64] {
        &self.window_lo
    }

    pub fn window_hi(&self) -> &[f64] {
        &self.window_hi
    }

    pub fn extensions(&self) -> &[Extension] {
        &self.extension
    }

    /// Copy of the domain whose initial sheet sits at `origin`.
    pub fn with_origin(&self, origin: f64) -> Self {
        Self {
            origin,
            ..self.clone()
        }
    }

    /// Copy of the domain with a different horizon.
    pub fn with_horizon(&self, t1: f64) -> Result<Self, GeometryError> {
        if !(t1 > 0.0) {
            return Err(GeometryError::NonPositiveHorizon(t1));
        }
        Ok(Self { t1, ..self.clone() })
    }

    /// Classifies `(t, x)` as a point of the inflow surface, if it is one.
    ///
    /// The corner `t = origin, x_d = 1` belongs to both sheets and is reported
    /// as [`InflowKind::TopBoundary`].
    pub fn classify_inflow(
        &self,
        t: f64,
        x: &[f64],
        tol: f64,
    ) -> Result<Option<InflowPoint>, GeometryError> {
        if x.len() != self.dim {
            return Err(GeometryError::PointArity {
                expected: self.dim,
                got: x.len(),
            });
        }
        let xd = x[self.dim - 1];
        if xd > 1.0 + tol || xd < -tol || !xd.is_finite() {
            return Err(GeometryError::HeightOutOfStrip { xd, tol });
        }
        if t < self.origin - tol || !t.is_finite() {
            return Err(GeometryError::TimeBeforeOrigin {
                t,
                origin: self.origin,
            });
        }
        let kind = if (xd - 1.0).abs() <= tol {
            Some(InflowKind::TopBoundary)
        } else if t - self.origin <= tol {
            Some(InflowKind::Initial)
        } else {
            None
        };
        Ok(kind.map(|kind| InflowPoint {
            kind,
            t,
            x: x.to_vec(),
        }))
    }

    /// Maps the unbounded coordinates into the window; `x_d` is untouched.
    ///
    /// Points already inside the window are returned bit-for-bit, which makes
    /// the map exactly idempotent.
    pub fn wrap_position(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.wrap_in_place(&mut out);
        out
    }

    pub fn wrap_in_place(&self, x: &mut [f64]) {
        for k in 0..self.dim.saturating_sub(1).min(x.len()) {
            x[k] = wrap_axis(x[k], self.window_lo[k], self.window_hi[k], self.extension[k]);
        }
    }
}

pub(crate) fn wrap_axis(v: f64, lo: f64, hi: f64, ext: Extension) -> f64 {
    match ext {
        Extension::ClampToEdge => v.clamp(lo, hi),
        Extension::Periodic => {
            if (lo..hi).contains(&v) {
                return v;
            }
            let len = hi - lo;
            let r = lo + (v - lo).rem_euclid(len);
            if r >= hi || r < lo {
                lo
            } else {
                r
            }
        }
    }
}
