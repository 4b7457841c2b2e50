//! Rate functions, kernels and thresholds of the microphysics model.

use super::MicroError;
use crate::field::SampledField;
use serde::{Deserialize, Serialize};

/// A scalar function of one variable (mass or temperature).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Zero,
    /// `value` on `support` (everywhere when absent).
    Constant {
        value: f64,
        #[serde(default)]
        support: Option<[f64; 2]>,
    },
    /// Piecewise linear, zero at `lo` and `hi`, `height` at `peak`.
    Hat { lo: f64, peak: f64, hi: f64, height: f64 },
    /// `height * exp(-((z - centre) / width)^2)` on `support`.
    Gaussian {
        centre: f64,
        width: f64,
        height: f64,
        #[serde(default)]
        support: Option<[f64; 2]>,
    },
    /// `scale * exp(rate * (z - reference))`.
    Exponential { scale: f64, rate: f64, reference: f64 },
    /// Linear interpolation of a table, zero outside it.
    Table { at: Vec<f64>, values: Vec<f64> },
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Profile::Constant { value, support: None }
    }

    pub fn eval(&self, z: f64) -> f64 {
        let inside = |s: &Option<[f64; 2]>| s.is_none_or(|[a, b]| z >= a && z <= b);
        match self {
            Profile::Zero => 0.0,
            Profile::Constant { value, support } => {
                if inside(support) {
                    *value
                } else {
                    0.0
                }
            }
            Profile::Hat { lo, peak, hi, height } => {
                if z <= *lo || z >= *hi {
                    0.0
                } else if z <= *peak {
                    height * (z - lo) / (peak - lo)
                } else {
                    height * (hi - z) / (hi - peak)
                }
            }
            Profile::Gaussian {
                centre,
                width,
                height,
                support,
            } => {
                if inside(support) {
                    height * (-((z - centre) / width).powi(2)).exp()
                } else {
                    0.0
                }
            }
            Profile::Exponential { scale, rate, reference } => scale * (rate * (z - reference)).exp(),
            Profile::Table { at, values } => {
                let n = at.len();
                if n == 0 || z < at[0] || z > at[n - 1] {
                    return 0.0;
                }
                let i = at.partition_point(|&a| a <= z).clamp(1, n.max(2) - 1) - 1;
                if i + 1 >= n {
                    return values[n - 1];
                }
                let th = (z - at[i]) / (at[i + 1] - at[i]);
                (1.0 - th) * values[i] + th * values[i + 1]
            }
        }
    }

    /// Closed interval outside which the profile vanishes, if bounded.
    pub fn support(&self) -> Option<[f64; 2]> {
        match self {
            Profile::Zero => Some([0.0, 0.0]),
            Profile::Constant { support, .. } | Profile::Gaussian { support, .. } => *support,
            Profile::Hat { lo, hi, .. } => Some([*lo, *hi]),
            Profile::Exponential { .. } => None,
            Profile::Table { at, .. } => Some([at[0], at[at.len() - 1]]),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Profile::Zero => true,
            Profile::Constant { value, .. } => *value == 0.0,
            Profile::Hat { height, .. } | Profile::Gaussian { height, .. } => *height == 0.0,
            Profile::Exponential { scale, .. } => *scale == 0.0,
            Profile::Table { values, .. } => values.iter().all(|v| *v == 0.0),
        }
    }
}

/// A function of two masses, set to zero once `m' + m''` reaches `cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Zero,
    Constant {
        value: f64,
        #[serde(default)]
        cutoff: Option<f64>,
    },
    /// `value * (m' + m'')`.
    Sum {
        value: f64,
        #[serde(default)]
        cutoff: Option<f64>,
    },
    /// `value * m' * m''`.
    Product {
        value: f64,
        #[serde(default)]
        cutoff: Option<f64>,
    },
}

impl Kernel {
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        let (v, cut) = match self {
            Kernel::Zero => return 0.0,
            Kernel::Constant { value, cutoff } => (*value, *cutoff),
            Kernel::Sum { value, cutoff } => (value * (a + b), *cutoff),
            Kernel::Product { value, cutoff } => (value * a * b, *cutoff),
        };
        match cut {
            Some(c) if a + b >= c => 0.0,
            _ => v,
        }
    }

    pub fn cutoff(&self) -> Option<f64> {
        match self {
            Kernel::Zero => Some(0.0),
            Kernel::Constant { cutoff, .. } | Kernel::Sum { cutoff, .. } | Kernel::Product { cutoff, .. } => {
                *cutoff
            }
        }
    }

    /// `sup` over `m', m'' in [0, m_max]`.
    pub fn bound(&self, m_max: f64) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::Constant { value, .. } => value.abs(),
            Kernel::Sum { value, .. } => value.abs() * 2.0 * m_max,
            Kernel::Product { value, .. } => value.abs() * m_max * m_max,
        }
    }

    fn min_value_sign(&self) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::Constant { value, .. } | Kernel::Sum { value, .. } | Kernel::Product { value, .. } => *value,
        }
    }
}

/// `mass(m) * temperature(T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub mass: Profile,
    pub temperature: Profile,
}

impl Rate {
    pub fn zero() -> Self {
        Self {
            mass: Profile::Zero,
            temperature: Profile::Zero,
        }
    }

    pub fn eval(&self, m: f64, temp: f64) -> f64 {
        self.mass.eval(m) * self.temperature.eval(temp)
    }

    pub fn is_zero(&self) -> bool {
        self.mass.is_zero() || self.temperature.is_zero()
    }
}

/// Sign convention of the vapour exchange term `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VapourExchange {
    /// `P = -[(pi - pi_l) F_l - (pi - pi_s) F_s]`, as printed.
    #[default]
    Literal,
    /// `P = (pi - pi_l) F_l + (pi - pi_s) F_s`: vapour lost equals the mass
    /// gained by condensation and deposition.
    MassConserving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrophysicsParams {
    pub s_l: Profile,
    pub s_s: Profile,
    pub sbar_l: Profile,
    pub sbar_s: Profile,
    pub g_a: Profile,
    pub g_l: Profile,
    pub g_s: Profile,
    /// Saturation densities as functions of temperature.
    pub pi_l: Profile,
    pub pi_s: Profile,
    /// Freezing rate.
    pub k_ls: Rate,
    /// Melting rate.
    pub k_sl: Rate,
    pub beta_l: Kernel,
    pub beta_s: Kernel,
    pub z_ls: Kernel,
    pub n_l: Profile,
    pub n_s: Profile,
    /// Aerosol capacity over `(t, x)`.
    #[serde(skip, default = "zero_field")]
    pub n_aero: SampledField,
    pub m_a: f64,
    pub big_m_a: f64,
    pub m_star: f64,
    /// Use `beta_l` in the ice gain term.
    #[serde(default)]
    pub literal_qs: bool,
    #[serde(default)]
    pub vapour_exchange: VapourExchange,
}

fn zero_field() -> SampledField {
    SampledField::constant(&[0.0])
}

impl MicrophysicsParams {
    /// Everything zero, on the given thresholds.
    pub fn inert(m_a: f64, big_m_a: f64, m_star: f64) -> Self {
        Self {
            s_l: Profile::Zero,
            s_s: Profile::Zero,
            sbar_l: Profile::Zero,
            sbar_s: Profile::Zero,
            g_a: Profile::Zero,
            g_l: Profile::Zero,
            g_s: Profile::Zero,
            pi_l: Profile::Zero,
            pi_s: Profile::Zero,
            k_ls: Rate::zero(),
            k_sl: Rate::zero(),
            beta_l: Kernel::Zero,
            beta_s: Kernel::Zero,
            z_ls: Kernel::Zero,
            n_l: Profile::Zero,
            n_s: Profile::Zero,
            n_aero: zero_field(),
            m_a,
            big_m_a,
            m_star,
            literal_qs: false,
            vapour_exchange: VapourExchange::Literal,
        }
    }

    /// Kernel of the ice gain term.
    pub fn q_s_kernel(&self) -> &Kernel {
        if self.literal_qs {
            &self.beta_l
        } else {
            &self.beta_s
        }
    }

    /// Checks thresholds, signs and supports by sampling `samples` points of
    /// `[0, 2 M*]` (and of `temps` for temperature profiles). Returns every
    /// problem found.
    pub fn validate(&self, samples: usize, temps: &[f64]) -> Result<(), MicroError> {
        let mut errs = Vec::new();
        if !(0.0 < self.m_a && self.m_a < self.big_m_a && self.big_m_a < self.m_star) {
            errs.push(format!(
                "need 0 < m_a < M_a < M*, got {} {} {}",
                self.m_a, self.big_m_a, self.m_star
            ));
        }
        let n = samples.max(2);
        let masses: Vec<f64> = (0..n).map(|k| 2.0 * self.m_star * k as f64 / (n - 1) as f64).collect();
        let mass_fns = [
            ("s_l", &self.s_l, self.m_star),
            ("s_s", &self.s_s, self.m_star),
            ("sbar_l", &self.sbar_l, self.m_star),
            ("sbar_s", &self.sbar_s, self.m_star),
            ("g_a", &self.g_a, self.big_m_a),
            ("g_l", &self.g_l, self.big_m_a),
            ("g_s", &self.g_s, self.big_m_a),
        ];
        for (name, f, hi) in mass_fns {
            let mut neg = false;
            let mut leak = None;
            for &m in &masses {
                let v = f.eval(m);
                neg |= v < 0.0;
                if v != 0.0 && (m < self.m_a || m > hi) && leak.is_none() {
                    leak = Some(m);
                }
            }
            if neg {
                errs.push(format!("{name} takes negative values"));
            }
            if let Some(m) = leak {
                errs.push(format!("{name} is nonzero at m = {m}, outside [{}, {hi}]", self.m_a));
            }
        }
        for (name, f) in [("n_l", &self.n_l), ("n_s", &self.n_s)] {
            if masses.iter().any(|&m| f.eval(m) < 0.0) {
                errs.push(format!("{name} takes negative values"));
            }
            if f.support().is_none() {
                errs.push(format!("{name} must have bounded support"));
            }
        }
        for (name, f) in [("pi_l", &self.pi_l), ("pi_s", &self.pi_s)] {
            if temps.iter().any(|&t| f.eval(t) < 0.0) {
                errs.push(format!("{name} takes negative values"));
            }
        }
        for (name, r) in [("K_ls", &self.k_ls), ("K_sl", &self.k_sl)] {
            let neg = masses
                .iter()
                .any(|&m| temps.iter().any(|&t| r.eval(m, t) < 0.0));
            if neg {
                errs.push(format!("{name} takes negative values"));
            }
        }
        for (name, k) in [("beta_l", &self.beta_l), ("beta_s", &self.beta_s), ("Z_ls", &self.z_ls)] {
            if k.min_value_sign() < 0.0 {
                errs.push(format!("{name} takes negative values"));
            }
            match k.cutoff() {
                Some(c) if c <= self.m_star * (1.0 + 1e-12) => {}
                _ => errs.push(format!("{name} must vanish for m' + m'' >= M* = {}", self.m_star)),
            }
        }
        if self.n_aero.values().iter().flatten().any(|v| *v < 0.0) {
            errs.push("N_aero takes negative values".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(MicroError::SupportViolation(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_shapes() {
        let h = Profile::Hat {
            lo: 1.0,
            peak: 3.0,
            hi: 5.0,
            height: 1.0,
        };
        assert_eq!(h.eval(3.0), 1.0);
        assert_eq!(h.eval(2.0), 0.5);
        assert_eq!(h.eval(6.0), 0.0);
        let t = Profile::Table {
            at: vec![0.0, 1.0, 2.0],
            values: vec![0.0, 2.0, 0.0],
        };
        assert_eq!(t.eval(0.5), 1.0);
        assert_eq!(t.eval(2.0), 0.0);
        assert_eq!(t.eval(2.5), 0.0);
    }

    #[test]
    fn kernel_cutoff() {
        let k = Kernel::Constant {
            value: 1.0,
            cutoff: Some(2.0),
        };
        assert_eq!(k.eval(0.5, 1.0), 1.0);
        assert_eq!(k.eval(1.0, 1.0), 0.0);
    }

    #[test]
    fn validation_collects_all() {
        let mut p = MicrophysicsParams::inert(0.1, 0.5, 1.0);
        p.beta_l = Kernel::Constant {
            value: 1.0,
            cutoff: None,
        };
        p.s_l = Profile::constant(1.0);
        let Err(MicroError::SupportViolation(errs)) = p.validate(101, &[280.0]) else {
            panic!("expected violations");
        };
        assert_eq!(errs.len(), 2, "{errs:?}");
        let mut ok = MicrophysicsParams::inert(0.1, 0.5, 1.0);
        for k in [&mut ok.beta_l, &mut ok.beta_s, &mut ok.z_ls] {
            *k = Kernel::Constant {
                value: 1.0,
                cutoff: Some(1.0),
            };
        }
        ok.validate(101, &[280.0]).unwrap();
    }
}
