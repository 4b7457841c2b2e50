//! Slab certificates: explicit slab lengths for which the inner and outer
//! fixed-point maps contract and the iterates stay in their balls.

use super::{Ball, QuasiError, QuasilinearSystem};
use crate::characteristics::FlowConstants;
use crate::field::{l1_time, sup_all, sup_in_time, Combine, NormQuery};
use serde::{Deserialize, Serialize};

/// Radii of the balls the iterates must stay in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    /// `||y0|| + 1`.
    pub y_sup: f64,
    /// `2 p d ||D_x y0|| + 1`.
    pub y_grad: f64,
    /// `||w*|| + 1`.
    pub w_sup: f64,
    /// `2 q d (1 + 1/B_d) L* C2 + 1`.
    pub w_grad: f64,
}

/// Norm quantities entering the contraction factors on one slab.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CertLedger {
    pub dy_f: f64,
    pub dw_f: f64,
    pub dy_g: f64,
    pub dw_g: f64,
    pub f_l1: f64,
    pub g_l1: f64,
    pub g_peak: f64,
    /// `exp ||D_y f||_{L^1}`.
    pub exp_factor: f64,
    /// Constant multiplying the outer factor.
    pub c_const: f64,
    /// `||D_y u||_{L^1}`.
    pub du_y: f64,
    pub sup_u: f64,
    pub c1: f64,
    pub c2: f64,
    pub b_d: f64,
    /// Lipschitz bound of `w` along perturbed paths.
    pub l_path: f64,
    pub kappa_y: f64,
    pub kappa_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabCertificate {
    pub t_a: f64,
    pub t_star: f64,
    pub contraction_factor: f64,
    pub safety: f64,
    pub ledger: CertLedger,
    pub caps: Caps,
}

impl SlabCertificate {
    pub fn t_b(&self) -> f64 {
        self.t_a + self.t_star
    }
}

/// Data-dependent part of the caps (everything but `C2`).
struct DataNorms {
    y_sup: f64,
    y_grad: f64,
    w_sup: f64,
    l_star: f64,
    b_d: f64,
}

fn data_norms(sys: &QuasilinearSystem) -> DataNorms {
    let d = sys.domain.dim() as f64;
    let p = sys.p() as f64;
    let dx = NormQuery::dx(Combine::Frobenius);
    let y_sup = sys.y0.iter().map(|y| sup_all(y, &NormQuery::sup())).fold(0.0, f64::max);
    let dy0 = sys.y0.iter().map(|y| sup_all(y, &dx)).fold(0.0, f64::max);
    let w_sup = sys.w_star.iter().map(|w| w.sup()).fold(0.0, f64::max);
    let l_star = sys.w_star.iter().map(|w| w.lipschitz_x()).fold(0.0, f64::max);
    DataNorms {
        y_sup: y_sup + 1.0,
        y_grad: 2.0 * p * d * dy0 + 1.0,
        w_sup: w_sup + 1.0,
        l_star,
        b_d: if sys.q() == 0 { 1.0 } else { sys.b_d() },
    }
}

/// Ledger and caps for the slab `[t_a, t_a + len]`.
pub fn evaluate_ledger(
    sys: &QuasilinearSystem,
    t_a: f64,
    len: f64,
) -> Result<(CertLedger, Caps), QuasiError> {
    let t_b = t_a + len;
    let dn = data_norms(sys);
    let ball = Ball {
        y_radius: dn.y_sup,
        w_radius: dn.w_sup,
    };
    let ry = Some(dn.y_sup);
    let mut lg = CertLedger {
        b_d: dn.b_d,
        c1: 1.0,
        c2: 1.0,
        ..Default::default()
    };
    for u in &sys.u {
        let sup_b = sup_in_time(u, t_a, t_b, &NormQuery::sup().radii(ry, None))?;
        let q = NormQuery {
            space: true,
            ..NormQuery::dy(Combine::Frobenius)
        }
        .radii(ry, None);
        let l1_db = l1_time(u, t_a, t_b, &q)?;
        let fc = FlowConstants::from_parts(sup_b, l1_db, 1.0 + dn.y_grad);
        lg.c1 = lg.c1.max(fc.c1);
        lg.c2 = lg.c2.max(fc.c2);
        lg.sup_u = lg.sup_u.max(sup_b);
        let du = l1_time(u, t_a, t_b, &NormQuery::dy(Combine::SlopeL1).radii(ry, None))?;
        lg.du_y = lg.du_y.max(du);
    }
    for f in &sys.f {
        let s = f.sensitivity(t_a, t_b, &ball)?;
        if !s.is_finite() {
            return Err(QuasiError::DegenerateSystem(format!("non-finite bounds for {}", f.name())));
        }
        lg.dy_f = lg.dy_f.max(s.dy);
        lg.dw_f = lg.dw_f.max(s.dw);
        lg.f_l1 = lg.f_l1.max(s.sup);
    }
    for g in &sys.g {
        let s = g.sensitivity(t_a, t_b, &ball)?;
        if !s.is_finite() {
            return Err(QuasiError::DegenerateSystem(format!("non-finite bounds for {}", g.name())));
        }
        lg.dy_g = lg.dy_g.max(s.dy);
        lg.dw_g = lg.dw_g.max(s.dw);
        lg.g_l1 = lg.g_l1.max(s.sup);
        lg.g_peak = lg.g_peak.max(s.peak);
    }
    let d = sys.domain.dim() as f64;
    let q = sys.q() as f64;
    let inv_b = 1.0 + 1.0 / dn.b_d;
    let caps = Caps {
        y_sup: dn.y_sup,
        y_grad: dn.y_grad,
        w_sup: dn.w_sup,
        w_grad: 2.0 * q * d * inv_b * dn.l_star * lg.c2 + 1.0,
    };
    lg.kappa_y = lg.dy_f;
    lg.exp_factor = lg.kappa_y.exp();
    lg.l_path = caps.w_grad * (1.0 + lg.sup_u) + lg.g_peak;
    lg.c_const = (lg.dy_g + lg.l_path * lg.du_y * lg.c1 * inv_b).max(1.0);
    lg.kappa_w = lg.c_const * (lg.dw_g + lg.exp_factor * lg.dw_f);
    let all = [lg.kappa_w, lg.c_const, lg.c1, lg.c2, caps.w_grad, caps.y_grad];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(QuasiError::DegenerateSystem("non-finite certificate ledger".into()));
    }
    Ok((lg, caps))
}

fn acceptable(lg: &CertLedger, safety: f64) -> bool {
    lg.kappa_y <= safety && lg.kappa_w <= safety && lg.f_l1 <= 1.0 && lg.g_l1 <= 1.0
}

/// Longest slab `[t_a, t_a + t_star]` with `t_star <= min(slab_guess,
/// t_end - t_a)` on which both contraction factors are at most `safety` and
/// the sources move the iterates by at most 1, found by bisection.
pub fn certify_slab(
    sys: &QuasilinearSystem,
    t_a: f64,
    t_end: f64,
    slab_guess: f64,
    safety: f64,
) -> Result<SlabCertificate, QuasiError> {
    if !(safety > 0.0 && safety < 1.0) {
        return Err(QuasiError::Invalid(format!("safety {safety} not in (0, 1)")));
    }
    let hi0 = slab_guess.min(t_end - t_a);
    if !(hi0 > 0.0) {
        return Err(QuasiError::Invalid(format!("empty slab at t = {t_a}")));
    }
    let (lg, caps) = evaluate_ledger(sys, t_a, hi0)?;
    let (t_star, lg, caps) = if acceptable(&lg, safety) {
        (hi0, lg, caps)
    } else {
        let (mut lo, mut hi) = (0.0f64, hi0);
        let mut best = None;
        for _ in 0..200 {
            if hi - lo <= 1e-13 * hi0 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let (l, c) = evaluate_ledger(sys, t_a, mid)?;
            if acceptable(&l, safety) {
                lo = mid;
                best = Some((l, c));
            } else {
                hi = mid;
            }
        }
        match best {
            Some((l, c)) => (lo, l, c),
            None => (0.0, lg, caps),
        }
    };
    Ok(SlabCertificate {
        t_a,
        t_star,
        contraction_factor: lg.kappa_y.max(lg.kappa_w),
        safety,
        ledger: lg,
        caps,
    })
}
