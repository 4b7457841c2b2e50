//! Randomized invariant suites behind `stripflow verify <suite>`.

use crate::characteristics::{trace_backward, Parametric, StepCtrl, TraceMode};
use crate::field::{linspace, Axis, AxisRole, SampledField};
use crate::geometry::{Extension, InflowKind, StripDomain};
use crate::microphysics::{
    column_moments, eval_coagulation, nu_terms, sigma_terms, Column, Kernel, MassGrid, MicrophysicsParams, Profile,
    Rate,
};
use crate::oracle::{compare, corrupt};
use crate::quasilinear::{continued_residuals, solve_continued, LinearSource, QuasilinearSystem, SolverSettings};
use crate::transport::{solve_at_point, InflowData, LinearTransportProblem, PicardSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Geometry,
    Characteristics,
    Transport,
    Quasilinear,
    Microphysics,
    Oracle,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Geometry,
        Suite::Characteristics,
        Suite::Transport,
        Suite::Quasilinear,
        Suite::Microphysics,
        Suite::Oracle,
    ];

    /// Default number of random instances.
    pub fn default_trials(self) -> usize {
        match self {
            Suite::Geometry => 10_000,
            Suite::Characteristics => 10_000,
            Suite::Transport => 100,
            Suite::Quasilinear => 12,
            Suite::Microphysics => 100,
            Suite::Oracle => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Worst value of the checked quantity (its meaning is per property).
    pub worst: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub properties: Vec<PropertyResult>,
    pub pass: bool,
}

/// Tally for one property.
struct Tally {
    name: &'static str,
    trials: usize,
    failures: usize,
    worst: f64,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            trials: 0,
            failures: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, ok: bool, value: f64) {
        self.trials += 1;
        if !ok {
            self.failures += 1;
        }
        if value.is_nan() || value > self.worst {
            self.worst = value;
        }
    }

    fn done(self) -> PropertyResult {
        PropertyResult {
            name: self.name.into(),
            trials: self.trials,
            failures: self.failures,
            worst: self.worst,
            pass: self.failures == 0 && self.trials > 0,
        }
    }
}

/// Runs `suite` with `trials` instances (`None` for the default count).
pub fn verify(suite: Suite, seed: u64, trials: Option<usize>) -> VerifyReport {
    let n = trials.unwrap_or(suite.default_trials()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let properties = match suite {
        Suite::Geometry => geometry(&mut rng, n),
        Suite::Characteristics => characteristics(&mut rng, n),
        Suite::Transport => transport(&mut rng, n),
        Suite::Quasilinear => quasilinear(&mut rng, n),
        Suite::Microphysics => microphysics(&mut rng, n),
        Suite::Oracle => oracle(),
    };
    let pass = properties.iter().all(|p| p.pass);
    VerifyReport {
        suite,
        seed,
        properties,
        pass,
    }
}

/// Generators of random instances shared by the suites and the tests.
pub mod random {
    use super::*;

    /// Strip with window `[-1, 1]^{d-1}` and horizon 2.
    pub fn strip(d: usize) -> StripDomain {
        StripDomain::new(d, 2.0, vec![-1.0; d - 1], vec![1.0; d - 1], Extension::Periodic).expect("valid strip")
    }

    fn axes(d: usize, n: usize) -> Vec<Axis> {
        let mut a = vec![Axis::uniform(AxisRole::Time, 0.0, 2.0, n)];
        for k in 0..d - 1 {
            a.push(Axis::uniform(AxisRole::Space(k), -1.0, 1.0, n));
        }
        a.push(Axis::uniform(AxisRole::Space(d - 1), 0.0, 1.0, n));
        a
    }

    /// Sum of a constant and two random Fourier modes in `(t, x)`, periodic
    /// on the window in the tangential directions.
    pub struct Smooth {
        c: f64,
        modes: Vec<(f64, Vec<f64>, f64, f64)>,
    }

    impl Smooth {
        pub fn new(rng: &mut ChaCha8Rng, d: usize, mean: f64, amp: f64) -> Self {
            let modes = (0..2)
                .map(|_| {
                    let kt = rng.gen_range(0.0..2.0);
                    let mut kx: Vec<f64> = (0..d - 1).map(|_| PI * rng.gen_range(0..=2) as f64).collect();
                    kx.push(rng.gen_range(0.0..3.0));
                    (kt, kx, rng.gen_range(0.0..2.0 * PI), amp * rng.gen_range(0.0..1.0))
                })
                .collect();
            Self { c: mean, modes }
        }

        pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
            let mut v = self.c;
            for (kt, kx, ph, a) in &self.modes {
                let arg: f64 = kt * t + kx.iter().zip(x).map(|(k, y)| k * y).sum::<f64>() + ph;
                v += a * arg.sin();
            }
            v
        }

        /// Largest possible `|v - mean|`.
        pub fn amplitude(&self) -> f64 {
            self.modes.iter().map(|m| m.3.abs()).sum()
        }
    }

    /// A cone member: smooth tangential components and `b_d <= -b_d_bound`.
    /// Returns the field and `B_d`.
    pub fn cone_field(rng: &mut ChaCha8Rng, d: usize) -> (SampledField, f64) {
        let bd = rng.gen_range(0.3..2.0);
        let comps: Vec<Smooth> = (0..d - 1)
            .map(|_| {
                let mean = rng.gen_range(-1.0..1.0);
                Smooth::new(rng, d, mean, 0.5)
            })
            .collect();
        let last = Smooth::new(rng, d, 0.0, 0.5);
        let amp = last.amplitude();
        let f = SampledField::sample(axes(d, 5), d, |p, o| {
            for (k, c) in comps.iter().enumerate() {
                o[k] = c.eval(p.t, p.x);
            }
            o[d - 1] = -bd - amp - last.eval(p.t, p.x);
        })
        .expect("valid field");
        (f, bd)
    }

    /// A scalar smooth field over `(t, x)`.
    pub fn scalar(rng: &mut ChaCha8Rng, d: usize, mean: f64, amp: f64) -> SampledField {
        let s = Smooth::new(rng, d, mean, amp);
        SampledField::sample(axes(d, 5), 1, |p, o| o[0] = s.eval(p.t, p.x)).expect("valid field")
    }

    /// A start point in `[0, 2] x [-1, 1]^{d-1} x [0, 1]`.
    pub fn start(rng: &mut ChaCha8Rng, d: usize) -> (f64, Vec<f64>) {
        let t0 = rng.gen_range(0.0..2.0);
        let mut x: Vec<f64> = (0..d - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        x.push(rng.gen_range(0.0..1.0));
        (t0, x)
    }

    fn bump(lo: f64, hi: f64, h: f64) -> Profile {
        Profile::Hat {
            lo,
            peak: 0.5 * (lo + hi),
            hi,
            height: h,
        }
    }

    /// Every coefficient active, with cutoffs at `M* = 2`, `m_a = 0.1`,
    /// `M_a = 0.4`.
    pub fn micro_params(rng: &mut ChaCha8Rng) -> MicrophysicsParams {
        let (m_a, big_m_a, m_star) = (0.1, 0.4, 2.0);
        let mut p = MicrophysicsParams::inert(m_a, big_m_a, m_star);
        let mut r = || rng.gen_range(0.2..1.0);
        p.s_l = bump(m_a, m_star, r());
        p.s_s = bump(m_a, m_star, r());
        p.sbar_l = bump(m_a, m_star, r());
        p.sbar_s = bump(m_a, m_star, r());
        p.g_a = bump(m_a, big_m_a, r());
        p.g_l = bump(m_a, big_m_a, r());
        p.g_s = bump(m_a, big_m_a, r());
        p.pi_l = Profile::Exponential {
            scale: r(),
            rate: 0.05,
            reference: 273.0,
        };
        p.pi_s = Profile::Exponential {
            scale: r(),
            rate: 0.06,
            reference: 273.0,
        };
        p.k_ls = Rate {
            mass: bump(m_a, m_star, r()),
            temperature: Profile::constant(r()),
        };
        p.k_sl = Rate {
            mass: bump(m_a, m_star, r()),
            temperature: Profile::constant(r()),
        };
        let cutoff = Some(m_star);
        p.beta_l = Kernel::Sum { value: r(), cutoff };
        p.beta_s = Kernel::Constant { value: r(), cutoff };
        p.z_ls = Kernel::Product { value: r(), cutoff };
        p.n_l = bump(m_a, m_star, r());
        p.n_s = bump(m_a, m_star, r());
        p.n_aero = SampledField::constant(&[2.0 * r()]);
        p
    }

    /// Smooth nonnegative spectrum supported in `[m_a, m_star]`.
    pub fn spectrum(rng: &mut ChaCha8Rng, nodes: &[f64], m_a: f64, m_star: f64) -> Vec<f64> {
        let c = rng.gen_range(0.3..1.6);
        let w = rng.gen_range(0.1..0.5);
        let h = rng.gen_range(0.1..2.0);
        nodes
            .iter()
            .map(|&m| {
                if m <= m_a || m >= m_star {
                    0.0
                } else {
                    let taper = ((m - m_a) * (m_star - m)).min(0.05) / 0.05;
                    h * taper * (-((m - c) / w).powi(2)).exp()
                }
            })
            .collect()
    }
}

fn geometry(rng: &mut ChaCha8Rng, n: usize) -> Vec<PropertyResult> {
    let tol = 1e-9;
    let mut corner = Tally::new("corner_is_top_boundary");
    let mut interior = Tally::new("interior_rejected");
    let mut wrap = Tally::new("wrap_idempotent_in_window");
    for _ in 0..n {
        let d = rng.gen_range(1..=3);
        let dom = random::strip(d);
        let (_, mut x) = random::start(rng, d);
        x[d - 1] = 1.0;
        let top = dom.classify_inflow(0.0, &x, tol);
        corner.record(matches!(top, Ok(Some(ref p)) if p.kind == InflowKind::TopBoundary), 0.0);
        let (t, mut x) = random::start(rng, d);
        x[d - 1] = rng.gen_range(0.01..0.99);
        let t = t.max(0.01);
        interior.record(matches!(dom.classify_inflow(t, &x, tol), Ok(None)), 0.0);
        let far: Vec<f64> = x.iter().map(|v| v + 10.0 * rng.gen_range(-1.0..1.0)).collect();
        let a = dom.wrap_position(&far);
        let b = dom.wrap_position(&a);
        let diff = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let inside = a[..d - 1].iter().all(|v| (-1.0..=1.0).contains(v));
        wrap.record(diff <= 1e-12 && inside, diff);
    }
    vec![corner.done(), interior.done(), wrap.done()]
}

fn characteristics(rng: &mut ChaCha8Rng, n: usize) -> Vec<PropertyResult> {
    let ctrl = StepCtrl::default();
    // Substeps straddle the kinks of the interpolant, so the split trace
    // only agrees to integrator accuracy.
    let fine = StepCtrl { max_dt: 1e-3, ..ctrl };
    let mut member = Tally::new("entry_membership");
    let mut semigroup = Tally::new("semigroup");
    let mut ascent = Tally::new("monotone_ascent");
    let mut closed = Tally::new("constant_field_entry_time");
    for _ in 0..n {
        let d = rng.gen_range(1..=3);
        let dom = random::strip(d);
        let (b, _) = random::cone_field(rng, d);
        let field = Parametric::new(&b, None);
        let (t0, x0) = random::start(rng, d);
        let Ok(r) = trace_backward(&field, &dom, t0, &x0, None, TraceMode::Entry, &ctrl) else {
            member.record(false, f64::INFINITY);
            continue;
        };
        let entry = r.entry.clone().expect("full trace");
        member.record(matches!(dom.classify_inflow(entry.t, &entry.x, 1e-8), Ok(Some(_))), 0.0);
        let mut rise = 0.0f64;
        for k in 1..r.len() {
            rise = rise.max(r.position(k)[d - 1] - r.position(k - 1)[d - 1]);
        }
        ascent.record(rise <= 1e-12, rise);
        let s_mid = r.tau_minus + rng.gen_range(0.1..0.9) * (t0 - r.tau_minus);
        let whole = trace_backward(&field, &dom, t0, &x0, None, TraceMode::Entry, &fine);
        let part = trace_backward(&field, &dom, t0, &x0, Some(s_mid), TraceMode::Entry, &fine);
        let rest = part.ok().and_then(|p| {
            let start = dom.wrap_position(p.position(0));
            trace_backward(&field, &dom, p.s[0], &start, None, TraceMode::Entry, &fine).ok()
        });
        let gap = match (whole, rest) {
            (Ok(a), Some(b)) => (a.tau_minus - b.tau_minus).abs(),
            _ => f64::INFINITY,
        };
        semigroup.record(gap <= 1e-6, gap);
        let bd = rng.gen_range(0.2..2.0);
        let mut c: Vec<f64> = (0..d - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        c.push(-bd);
        let cf = SampledField::constant(&c);
        let want = (t0 - (1.0 - x0[d - 1]) / bd).max(0.0);
        let got = trace_backward(&Parametric::new(&cf, None), &dom, t0, &x0, None, TraceMode::Entry, &ctrl)
            .map_or(f64::INFINITY, |q| (q.tau_minus - want).abs());
        closed.record(got <= 1e-10, got);
    }
    vec![member.done(), semigroup.done(), ascent.done(), closed.done()]
}

fn transport(rng: &mut ChaCha8Rng, n: usize) -> Vec<PropertyResult> {
    let picard = PicardSettings::default();
    let mut majorant = Tally::new("picard_majorant");
    let mut converged = Tally::new("converged_within_60");
    let mut bound = Tally::new("a_priori_bound");
    let mut maxp = Tally::new("max_principle");
    for _ in 0..n {
        let d = rng.gen_range(1..=2);
        let (b, _) = random::cone_field(rng, d);
        let c_mean = rng.gen_range(-1.5..1.5);
        let c = random::scalar(rng, d, c_mean, 0.5);
        let a = random::scalar(rng, d, 0.0, 1.0);
        let z = random::scalar(rng, d, 0.0, 1.0);
        let mut prob = LinearTransportProblem {
            domain: random::strip(d),
            b,
            h: None,
            c,
            a,
            z_star: InflowData::single(z.clone()),
            mode: TraceMode::Entry,
            step: StepCtrl::default(),
        };
        let (t, x) = random::start(rng, d);
        match solve_at_point(&prob, t, &x, &picard) {
            Ok((v, tr)) => {
                let excess = tr
                    .iterates
                    .iter()
                    .zip(&tr.bound_series)
                    .map(|(m, b)| m - b * (1.0 + 1e-12))
                    .fold(f64::NEG_INFINITY, f64::max);
                majorant.record(excess <= 0.0, excess);
                converged.record(tr.converged && tr.n_iters <= 60, tr.n_iters as f64);
                let bnd = prob.a_priori_bound(t).unwrap_or(f64::NAN);
                bound.record(v.abs() <= bnd * (1.0 + 1e-9) + 1e-11, v.abs() - bnd);
            }
            Err(_) => {
                majorant.record(false, f64::INFINITY);
                converged.record(false, f64::INFINITY);
                bound.record(false, f64::INFINITY);
            }
        }
        prob.c = SampledField::constant(&[0.0]);
        prob.a = SampledField::constant(&[0.0]);
        let (lo, hi) = z
            .component(0)
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        let out = solve_at_point(&prob, t, &x, &picard).map_or(f64::INFINITY, |(v, _)| {
            (lo - v).max(v - hi).max(0.0)
        });
        maxp.record(out <= 1e-12, out);
    }
    vec![majorant.done(), converged.done(), bound.done(), maxp.done()]
}

/// A random scalar coupled system on the unit interval with a tangential `v`.
pub fn random_coupled(rng: &mut ChaCha8Rng) -> QuasilinearSystem {
    let amp = rng.gen_range(-0.8..0.8);
    let speed = rng.gen_range(0.5..1.5);
    let x_axis = || Axis::uniform(AxisRole::Space(0), 0.0, 1.0, 41);
    let v = SampledField::sample(vec![x_axis()], 1, |p, o| o[0] = amp * (PI * p.x[0]).sin()).expect("valid");
    let (k, ph) = (rng.gen_range(0.5..2.0), rng.gen_range(0.0..PI));
    let y0 = SampledField::sample(vec![x_axis()], 1, |p, o| o[0] = (k * PI * p.x[0] + ph).sin()).expect("valid");
    let ws = SampledField::sample(
        vec![Axis::uniform(AxisRole::Time, 0.0, 1.0, 21), x_axis()],
        1,
        |p, o| o[0] = 0.5 * (PI * (p.x[0] + p.t)).cos(),
    )
    .expect("valid");
    let mut r = || rng.gen_range(-1.0..1.0);
    QuasilinearSystem {
        domain: StripDomain::interval(1.0).expect("valid"),
        v: vec![v],
        u: vec![SampledField::constant(&[-speed])],
        f: vec![Arc::new(LinearSource::new(0.2 * r(), vec![r()], vec![r()]))],
        g: vec![Arc::new(LinearSource::new(0.2 * r(), vec![r()], vec![r()]))],
        y0: vec![y0],
        w_star: vec![InflowData::single(ws)],
    }
}

fn quasilinear(rng: &mut ChaCha8Rng, n: usize) -> Vec<PropertyResult> {
    let mut residual = Tally::new("fixed_point_residual");
    let mut contraction = Tally::new("outer_contraction");
    let mut s = SolverSettings::new(vec![linspace(0.0, 1.0, 11)]);
    s.grid_dt = 0.05;
    for _ in 0..n {
        let sys = random_coupled(rng);
        match solve_continued(&sys, 0.5, &s) {
            Ok(sols) => {
                let worst = continued_residuals(&sys, &sols, &s)
                    .map(|r| r.into_iter().fold(0.0f64, |m, (a, b)| m.max(a).max(b)))
                    .unwrap_or(f64::INFINITY);
                residual.record(worst <= 10.0 * s.picard.tol, worst);
                let (excess, _) = super::run::contraction_excess(&sols, s.picard.tol);
                contraction.record(excess <= 0.05, excess);
            }
            Err(_) => {
                residual.record(false, f64::INFINITY);
                contraction.record(false, f64::INFINITY);
            }
        }
    }
    vec![residual.done(), contraction.done()]
}

fn microphysics(rng: &mut ChaCha8Rng, n: usize) -> Vec<PropertyResult> {
    let mut liquid = Tally::new("coagulation_mass_balance_liquid");
    let mut ice = Tally::new("coagulation_mass_balance_ice");
    let mut anti = Tally::new("phase_exchange_antisymmetry");
    let mut cutoff = Tally::new("cutoff_no_gain_beyond");
    let g = MassGrid::uniform(2.0, 101).expect("valid grid");
    for _ in 0..n {
        let p = random::micro_params(rng);
        let s = random::spectrum(rng, &g.nodes, p.m_a, p.m_star);
        let v = random::spectrum(rng, &g.nodes, p.m_a, p.m_star);
        for (tally, k, a) in [(&mut liquid, &p.beta_l, &s), (&mut ice, p.q_s_kernel(), &v)] {
            let net: Vec<f64> = (0..g.len())
                .map(|i| {
                    let (q, j) = eval_coagulation(k, a, a, i, &g);
                    q + j * a[i]
                })
                .collect();
            let mass: Vec<f64> = g.nodes.iter().zip(a).map(|(m, x)| m * x).collect();
            let rel = g.integrate(&net).abs() / g.integrate(&mass).max(f64::MIN_POSITIVE);
            tally.record(rel <= 1e-6, rel);
        }
        let col = Column {
            pi: rng.gen_range(0.0..2.0),
            temp: rng.gen_range(250.0..290.0),
            n_aero: 1.0,
            sigma: &s,
            nu: &v,
        };
        let mom = column_moments(&p, &g, &col);
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..g.len() {
            let a = sigma_terms(&p, &g, &col, &mom, i, 0.0).phase;
            let b = nu_terms(&p, &g, &col, i, 0.0).phase;
            worst = worst.max((a + b).abs());
            scale = scale.max(a.abs());
        }
        anti.record(worst <= 1e-15 * scale.max(1.0), worst);
        let last = g.len() - 1;
        let (q, j) = eval_coagulation(&p.beta_l, &s, &s, last, &g);
        cutoff.record(q == 0.0 && j == 0.0, q.abs().max(j.abs()));
    }
    vec![liquid.done(), ice.done(), anti.done(), cutoff.done()]
}

/// Smooth coupled transport used by the oracle suite.
pub fn oracle_system() -> QuasilinearSystem {
    let x_axis = || Axis::uniform(AxisRole::Space(0), 0.0, 1.0, 201);
    let v = SampledField::sample(vec![x_axis()], 1, |p, o| o[0] = 0.6 * (PI * p.x[0]).sin()).expect("valid");
    let y0 = SampledField::sample(vec![x_axis()], 1, |p, o| o[0] = (2.0 * PI * p.x[0]).cos()).expect("valid");
    let w0 = SampledField::sample(vec![x_axis()], 1, |p, o| o[0] = 0.5 + 0.5 * (PI * p.x[0]).sin()).expect("valid");
    let top = SampledField::sample(vec![Axis::uniform(AxisRole::Time, 0.0, 1.0, 201)], 1, |p, o| {
        o[0] = 0.5 + 0.2 * (PI * p.t).sin()
    })
    .expect("valid");
    QuasilinearSystem {
        domain: StripDomain::interval(1.0).expect("valid"),
        v: vec![v],
        u: vec![SampledField::constant(&[-1.0])],
        f: vec![Arc::new(LinearSource::new(0.0, vec![-0.5], vec![0.3]))],
        g: vec![Arc::new(LinearSource::new(0.1, vec![0.2], vec![-0.3]))],
        y0: vec![y0],
        w_star: vec![InflowData::new(w0, top)],
    }
}

fn oracle() -> Vec<PropertyResult> {
    let sys = oracle_system();
    let mut s = SolverSettings::new(vec![linspace(0.0, 1.0, 21)]);
    s.grid_dt = 0.05;
    let mut agree = Tally::new("upwind_agreement");
    let mut control = Tally::new("negative_control_detected");
    match solve_continued(&sys, 0.5, &s) {
        Ok(sols) => {
            let good = compare(&sys, &sols, &s.grid, 3, 0.8);
            let bad = compare(&corrupt(&sys), &sols, &s.grid, 3, 0.8);
            let gap = |r: &crate::oracle::OracleReport| r.levels.last().map_or(f64::NAN, |l| l.gap.linf);
            match good {
                Ok(r) => agree.record(r.pass, gap(&r)),
                Err(_) => agree.record(false, f64::INFINITY),
            }
            match bad {
                Ok(r) => control.record(!r.pass, gap(&r)),
                Err(_) => control.record(false, f64::INFINITY),
            }
        }
        Err(_) => {
            agree.record(false, f64::INFINITY);
            control.record(false, f64::INFINITY);
        }
    }
    vec![agree.done(), control.done()]
}
