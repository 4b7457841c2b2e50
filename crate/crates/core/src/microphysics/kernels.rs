//! Mass integrals and the right-hand sides on one column `(t, x)` of mass
//! spectra.

use super::params::{Kernel, MicrophysicsParams, Profile, VapourExchange};
use super::MicroError;
use serde::Serialize;

/// Mass nodes on `[0, M*]` with composite trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MassGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Spacing when the nodes are `k h`, `k = 0..n`.
    step: Option<f64>,
}

impl MassGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self, MicroError> {
        let n = nodes.len();
        if n < 2 {
            return Err(MicroError::Invalid("mass grid needs at least 2 nodes".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MicroError::Invalid("mass grid must be strictly increasing".into()));
        }
        if nodes[0] != 0.0 {
            return Err(MicroError::Invalid(format!("mass grid must start at 0, got {}", nodes[0])));
        }
        let mut weights = vec![0.0; n];
        for k in 0..n - 1 {
            let h = nodes[k + 1] - nodes[k];
            weights[k] += 0.5 * h;
            weights[k + 1] += 0.5 * h;
        }
        let h = nodes[n - 1] / (n - 1) as f64;
        let uniform = nodes
            .iter()
            .enumerate()
            .all(|(k, &m)| (m - k as f64 * h).abs() <= 1e-12 * nodes[n - 1]);
        Ok(Self {
            nodes,
            weights,
            step: uniform.then_some(h),
        })
    }

    pub fn uniform(m_max: f64, n: usize) -> Result<Self, MicroError> {
        Self::new(crate::field::linspace(0.0, m_max, n))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.step.is_some()
    }

    pub fn m_max(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// `int_0^inf weight(m) f(m) dm`.
    pub fn moment(&self, weight: &Profile, f: &[f64]) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .zip(f)
            .map(|((&m, &q), &v)| q * weight.eval(m) * v)
            .sum()
    }

    /// Linear interpolation of node values `f` at `m` (zero beyond the grid).
    fn interp(&self, f: &[f64], m: f64) -> f64 {
        let n = self.nodes.len();
        if m < 0.0 || m > self.m_max() {
            return 0.0;
        }
        let i = self.nodes.partition_point(|&z| z <= m).clamp(1, n - 1) - 1;
        let th = (m - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        (1.0 - th) * f[i] + th * f[i + 1]
    }
}

/// `F = int sbar(m) spectrum(m) dm`.
pub fn eval_f(sbar: &Profile, spectrum: &[f64], grid: &MassGrid) -> f64 {
    grid.moment(sbar, spectrum)
}

/// Vapour turned into liquid or solid per unit time and volume.
pub fn eval_p(pi: f64, temp: f64, f_l: f64, f_s: f64, params: &MicrophysicsParams) -> f64 {
    let dl = pi - params.pi_l.eval(temp);
    let ds = pi - params.pi_s.eval(temp);
    match params.vapour_exchange {
        VapourExchange::Literal => -(dl * f_l - ds * f_s),
        VapourExchange::MassConserving => dl * f_l + ds * f_s,
    }
}

/// Gain `(m/2) int_0^m beta(m', m - m') a(m') b(m - m') dm'` and loss rate
/// `-m int beta(m, m') b(m') dm'` at node `i`; the loss term is `a(m) *
/// loss_rate`.
pub fn eval_coagulation(kernel: &Kernel, a: &[f64], b: &[f64], i: usize, grid: &MassGrid) -> (f64, f64) {
    let m = grid.nodes[i];
    (gain(kernel, a, b, i, grid), loss_rate(kernel, b, m, grid))
}

/// `(m_i/2) int_0^{m_i} kernel(m', m_i - m') a(m') b(m_i - m') dm'`.
fn gain(kernel: &Kernel, a: &[f64], b: &[f64], i: usize, grid: &MassGrid) -> f64 {
    if i == 0 {
        return 0.0;
    }
    let m = grid.nodes[i];
    let mut acc = 0.0;
    if let Some(h) = grid.step {
        for k in 0..=i {
            let wk = if k == 0 || k == i { 0.5 } else { 1.0 };
            let (p, q) = (grid.nodes[k], grid.nodes[i - k]);
            acc += wk * kernel.eval(p, q) * a[k] * b[i - k];
        }
        acc *= h;
    } else {
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..=i {
            let p = grid.nodes[k];
            let val = kernel.eval(p, m - p) * a[k] * grid.interp(b, m - p);
            if let Some((mp, vp)) = prev {
                acc += 0.5 * (p - mp) * (val + vp);
            }
            prev = Some((p, val));
        }
    }
    0.5 * m * acc
}

/// `-m int kernel(m, m') b(m') dm'`.
fn loss_rate(kernel: &Kernel, b: &[f64], m: f64, grid: &MassGrid) -> f64 {
    let s: f64 = grid
        .nodes
        .iter()
        .zip(&grid.weights)
        .zip(b)
        .map(|((&q, &w), &v)| w * kernel.eval(m, q) * v)
        .sum();
    -m * s
}

/// `-m int kernel(m', m) b(m') dm'`, the riming rate with the first kernel
/// argument integrated.
fn riming_rate(kernel: &Kernel, b: &[f64], m: f64, grid: &MassGrid) -> f64 {
    let s: f64 = grid
        .nodes
        .iter()
        .zip(&grid.weights)
        .zip(b)
        .map(|((&q, &w), &v)| w * kernel.eval(q, m) * v)
        .sum();
    -m * s
}

/// Pointwise inputs of one column.
#[derive(Debug, Clone, Copy)]
pub struct Column<'a> {
    pub pi: f64,
    pub temp: f64,
    /// Aerosol capacity `N_aero(t, x)`.
    pub n_aero: f64,
    pub sigma: &'a [f64],
    pub nu: &'a [f64],
}

fn pos(x: f64) -> f64 {
    x.max(0.0)
}

fn neg(x: f64) -> f64 {
    (-x).max(0.0)
}

/// The terms of the droplet source at one mass node.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SigmaTerms {
    pub divergence: f64,
    pub condensation: f64,
    pub phase: f64,
    pub aerosol: f64,
    pub collision: f64,
}

impl SigmaTerms {
    pub fn total(&self) -> f64 {
        self.divergence + self.condensation + self.phase + self.aerosol + self.collision
    }
}

/// The terms of the crystal source at one mass node.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct NuTerms {
    pub divergence: f64,
    pub deposition: f64,
    pub evaporation: f64,
    pub phase: f64,
    pub collision: f64,
}

impl NuTerms {
    pub fn total(&self) -> f64 {
        self.divergence + self.deposition + self.evaporation + self.phase + self.collision
    }
}

/// Column integrals shared by every mass node of a column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnMoments {
    pub f_l: f64,
    pub f_s: f64,
    /// `[N_aero - int n_l sigma - int n_s nu]^+`.
    pub aerosol_room: f64,
}

pub fn column_moments(p: &MicrophysicsParams, grid: &MassGrid, col: &Column) -> ColumnMoments {
    let used = grid.moment(&p.n_l, col.sigma) + grid.moment(&p.n_s, col.nu);
    ColumnMoments {
        f_l: grid.moment(&p.sbar_l, col.sigma),
        f_s: grid.moment(&p.sbar_s, col.nu),
        aerosol_room: pos(col.n_aero - used),
    }
}

pub fn sigma_terms(
    p: &MicrophysicsParams,
    grid: &MassGrid,
    col: &Column,
    mom: &ColumnMoments,
    i: usize,
    div_u: f64,
) -> SigmaTerms {
    let m = grid.nodes[i];
    let s = col.sigma[i];
    let n = col.nu[i];
    let dl = col.pi - p.pi_l.eval(col.temp);
    let (q_gain, j_l) = eval_coagulation(&p.beta_l, col.sigma, col.sigma, i, grid);
    let j_ls = riming_rate(&p.z_ls, col.nu, m, grid);
    SigmaTerms {
        divergence: -div_u * s,
        condensation: p.sbar_l.eval(m) * dl * s,
        phase: -p.k_ls.eval(m, col.temp) * s + p.k_sl.eval(m, col.temp) * n,
        aerosol: p.g_a.eval(m) * mom.aerosol_room * pos(dl) - p.g_l.eval(m) * neg(dl) * s,
        collision: q_gain + j_l * s + j_ls * s,
    }
}

pub fn nu_terms(
    p: &MicrophysicsParams,
    grid: &MassGrid,
    col: &Column,
    i: usize,
    div_w: f64,
) -> NuTerms {
    let m = grid.nodes[i];
    let s = col.sigma[i];
    let n = col.nu[i];
    let ds = col.pi - p.pi_s.eval(col.temp);
    let q_s = gain(p.q_s_kernel(), col.nu, col.nu, i, grid);
    let j_s = loss_rate(&p.beta_s, col.nu, m, grid);
    let q_ls = gain(&p.z_ls, col.sigma, col.nu, i, grid);
    let j_ls = riming_rate(&p.z_ls, col.sigma, m, grid);
    NuTerms {
        divergence: -div_w * n,
        deposition: p.sbar_s.eval(m) * ds * n,
        evaporation: -p.g_s.eval(m) * neg(ds) * n,
        phase: p.k_ls.eval(m, col.temp) * s - p.k_sl.eval(m, col.temp) * n,
        collision: q_s + j_s * n + q_ls + j_ls * n,
    }
}

/// `(R*, P*)` at one point.
pub fn gas_terms(
    p: &MicrophysicsParams,
    rho: f64,
    col: &Column,
    mom: &ColumnMoments,
    div_v: f64,
) -> (f64, f64) {
    let r = -div_v * rho;
    let big_p = eval_p(col.pi, col.temp, mom.f_l, mom.f_s, p);
    (r, -(div_v * col.pi + big_p))
}

/// Mass moved by riming in one column: droplet mass lost, ice mass gained
/// and their sum (zero only if riming conserves mass).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RimingBudget {
    pub liquid: f64,
    pub ice: f64,
    pub residual: f64,
}

pub fn riming_budget(p: &MicrophysicsParams, grid: &MassGrid, sigma: &[f64], nu: &[f64]) -> RimingBudget {
    let n = grid.len();
    let mut liq = vec![0.0; n];
    let mut ice = vec![0.0; n];
    for i in 0..n {
        let m = grid.nodes[i];
        liq[i] = riming_rate(&p.z_ls, nu, m, grid) * sigma[i];
        ice[i] = gain(&p.z_ls, sigma, nu, i, grid) + riming_rate(&p.z_ls, sigma, m, grid) * nu[i];
    }
    let (liquid, ice) = (grid.integrate(&liq), grid.integrate(&ice));
    RimingBudget {
        liquid,
        ice,
        residual: liquid + ice,
    }
}
