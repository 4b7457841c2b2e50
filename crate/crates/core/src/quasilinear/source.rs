//! Source terms `f_i(t, x, y, w)` and `g_j(t, x, y, w)`.

use super::QuasiError;
use crate::field::{l1_time, sup_in_time, AxisRole, Combine, FieldError, NormQuery, Point, SampledField};
use crate::lattice::Lattice;
use std::fmt;
use std::sync::Arc;

/// Read access to the current iterates on the whole lattice, for sources that
/// integrate over part of the state (e.g. mass integrals over a column).
#[derive(Clone, Copy)]
pub struct LatticeRef<'a> {
    pub lattice: &'a Lattice,
    pub flat: usize,
    /// `y[k][flat]`, `w[k][flat]`.
    pub y: &'a [Vec<f64>],
    pub w: &'a [Vec<f64>],
}

/// Arguments of one source evaluation.
#[derive(Clone, Copy)]
pub struct NodeState<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub w: &'a [f64],
    pub lattice: Option<LatticeRef<'a>>,
}

impl<'a> NodeState<'a> {
    pub fn local(t: f64, x: &'a [f64], y: &'a [f64], w: &'a [f64]) -> Self {
        Self {
            t,
            x,
            y,
            w,
            lattice: None,
        }
    }

    pub fn point(&self) -> Point<'a> {
        Point {
            t: self.t,
            x: self.x,
            y: self.y,
            w: self.w,
        }
    }
}

/// Balls `|y| <= y_radius`, `|w| <= w_radius` on which sources are bounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub y_radius: f64,
    pub w_radius: f64,
}

/// Time-integrated bounds over a slab `[t_a, t_b]` and a ball.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Sensitivity {
    /// `||f||_{L^1}`.
    pub sup: f64,
    /// `sup_t ||f(t)||_inf`.
    pub peak: f64,
    /// `||D_y f||_{L^1}` (sum of partial slopes).
    pub dy: f64,
    /// `||D_w f||_{L^1}`.
    pub dw: f64,
}

impl Sensitivity {
    pub fn is_finite(&self) -> bool {
        self.sup.is_finite() && self.peak.is_finite() && self.dy.is_finite() && self.dw.is_finite()
    }
}

pub trait SourceTerm: Send + Sync + fmt::Debug {
    fn eval(&self, s: &NodeState) -> Result<f64, FieldError>;

    fn sensitivity(&self, t_a: f64, t_b: f64, ball: &Ball) -> Result<Sensitivity, QuasiError>;

    /// Whether `eval` only needs the pointwise state (no lattice access).
    fn is_local(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        "source".into()
    }
}

/// A source sampled on a grid over `(t, x, y, w)`; missing axes mean the
/// source does not depend on that coordinate.
#[derive(Debug, Clone)]
pub struct SampledSource {
    pub field: SampledField,
}

impl SampledSource {
    pub fn new(field: SampledField) -> Self {
        Self { field }
    }

    fn covers(&self, ball: &Ball) -> Result<(), QuasiError> {
        for a in self.field.axes() {
            let r = match a.role {
                AxisRole::Y(_) => ball.y_radius,
                AxisRole::W(_) => ball.w_radius,
                _ => continue,
            };
            if a.lo() > -r || a.hi() < r {
                return Err(QuasiError::DegenerateSystem(format!(
                    "source axis {} spans [{}, {}] but the ball needs [-{r}, {r}]",
                    a.role,
                    a.lo(),
                    a.hi()
                )));
            }
        }
        Ok(())
    }
}

impl SourceTerm for SampledSource {
    fn eval(&self, s: &NodeState) -> Result<f64, FieldError> {
        self.field.eval_comp(0, &s.point())
    }

    fn sensitivity(&self, t_a: f64, t_b: f64, ball: &Ball) -> Result<Sensitivity, QuasiError> {
        self.covers(ball)?;
        let r = |q: NormQuery| q.radii(Some(ball.y_radius), Some(ball.w_radius));
        let f = &self.field;
        let sens = Sensitivity {
            sup: l1_time(f, t_a, t_b, &r(NormQuery::sup()))?,
            peak: sup_in_time(f, t_a, t_b, &r(NormQuery::sup()))?,
            dy: l1_time(f, t_a, t_b, &r(NormQuery::dy(Combine::SlopeL1)))?,
            dw: l1_time(f, t_a, t_b, &r(NormQuery::dw(Combine::SlopeL1)))?,
        };
        Ok(sens)
    }

    fn name(&self) -> String {
        "sampled".into()
    }
}

/// `c0(t, x) + sum_k cy_k y_k + sum_k cw_k w_k`.
#[derive(Debug, Clone)]
pub struct LinearSource {
    pub c0: SampledField,
    pub cy: Vec<f64>,
    pub cw: Vec<f64>,
}

impl LinearSource {
    pub fn new(c0: f64, cy: Vec<f64>, cw: Vec<f64>) -> Self {
        Self {
            c0: SampledField::constant(&[c0]),
            cy,
            cw,
        }
    }
}

impl SourceTerm for LinearSource {
    fn eval(&self, s: &NodeState) -> Result<f64, FieldError> {
        let mut v = self.c0.eval_comp(0, &Point::tx(s.t, s.x))?;
        for (c, y) in self.cy.iter().zip(s.y) {
            v += c * y;
        }
        for (c, w) in self.cw.iter().zip(s.w) {
            v += c * w;
        }
        Ok(v)
    }

    fn sensitivity(&self, t_a: f64, t_b: f64, ball: &Ball) -> Result<Sensitivity, QuasiError> {
        let len = t_b - t_a;
        let sy: f64 = self.cy.iter().map(|c| c.abs()).sum();
        let sw: f64 = self.cw.iter().map(|c| c.abs()).sum();
        let lin = sy * ball.y_radius + sw * ball.w_radius;
        let q = NormQuery::sup();
        Ok(Sensitivity {
            sup: l1_time(&self.c0, t_a, t_b, &q)? + lin * len,
            peak: sup_in_time(&self.c0, t_a, t_b, &q)? + lin,
            dy: sy * len,
            dw: sw * len,
        })
    }

    fn name(&self) -> String {
        "linear".into()
    }
}

pub type SourceFn = dyn Fn(&NodeState) -> f64 + Send + Sync;

/// A closure with user-supplied bounds: `|f| <= peak` and partial slopes
/// summing to at most `dy_rate`, `dw_rate` on every ball it is used on.
#[derive(Clone)]
pub struct AnalyticSource {
    pub label: String,
    pub func: Arc<SourceFn>,
    pub peak: f64,
    pub dy_rate: f64,
    pub dw_rate: f64,
}

impl fmt::Debug for AnalyticSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticSource")
            .field("label", &self.label)
            .field("peak", &self.peak)
            .field("dy_rate", &self.dy_rate)
            .field("dw_rate", &self.dw_rate)
            .finish()
    }
}

impl SourceTerm for AnalyticSource {
    fn eval(&self, s: &NodeState) -> Result<f64, FieldError> {
        let v = (self.func)(s);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(FieldError::NonFinite(format!("{} at t = {}", self.label, s.t)))
        }
    }

    fn sensitivity(&self, t_a: f64, t_b: f64, _ball: &Ball) -> Result<Sensitivity, QuasiError> {
        let len = t_b - t_a;
        Ok(Sensitivity {
            sup: self.peak * len,
            peak: self.peak,
            dy: self.dy_rate * len,
            dw: self.dw_rate * len,
        })
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}
