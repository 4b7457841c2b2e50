use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stripflow::field::{linspace, Axis, AxisRole, SampledField};
use stripflow::geometry::{Extension, StripDomain};
use stripflow::microphysics::*;

const M_A: f64 = 0.1;
const BIG_M_A: f64 = 0.4;
const M_STAR: f64 = 2.0;

fn cut(value: f64) -> Kernel {
    Kernel::Constant {
        value,
        cutoff: Some(M_STAR),
    }
}

fn bump(lo: f64, hi: f64, h: f64) -> Profile {
    Profile::Hat {
        lo,
        peak: 0.5 * (lo + hi),
        hi,
        height: h,
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> MicrophysicsParams {
    let mut p = MicrophysicsParams::inert(M_A, BIG_M_A, M_STAR);
    let mut r = |s: f64| s * rng.gen_range(0.2..1.0);
    p.s_l = bump(M_A, M_STAR, r(1.0));
    p.s_s = bump(M_A, M_STAR, r(1.0));
    p.sbar_l = bump(M_A, M_STAR, r(1.0));
    p.sbar_s = bump(M_A, M_STAR, r(1.0));
    p.g_a = bump(M_A, BIG_M_A, r(1.0));
    p.g_l = bump(M_A, BIG_M_A, r(1.0));
    p.g_s = bump(M_A, BIG_M_A, r(1.0));
    p.pi_l = Profile::Exponential {
        scale: r(1.0),
        rate: 0.05,
        reference: 273.0,
    };
    p.pi_s = Profile::Exponential {
        scale: r(1.0),
        rate: 0.06,
        reference: 273.0,
    };
    p.k_ls = Rate {
        mass: bump(M_A, M_STAR, r(1.0)),
        temperature: Profile::constant(r(1.0)),
    };
    p.k_sl = Rate {
        mass: bump(M_A, M_STAR, r(1.0)),
        temperature: Profile::constant(r(1.0)),
    };
    p.beta_l = Kernel::Sum {
        value: r(1.0),
        cutoff: Some(M_STAR),
    };
    p.beta_s = cut(r(1.0));
    p.z_ls = Kernel::Product {
        value: r(1.0),
        cutoff: Some(M_STAR),
    };
    p.n_l = bump(M_A, M_STAR, r(1.0));
    p.n_s = bump(M_A, M_STAR, r(1.0));
    p.n_aero = SampledField::constant(&[r(2.0)]);
    p
}

/// Smooth nonnegative spectrum supported in `[M_A, M_STAR]`.
fn random_spectrum(rng: &mut ChaCha8Rng, nodes: &[f64]) -> Vec<f64> {
    let c = rng.gen_range(0.3..1.6);
    let w = rng.gen_range(0.1..0.5);
    let h = rng.gen_range(0.1..2.0);
    nodes
        .iter()
        .map(|&m| {
            if m <= M_A || m >= M_STAR {
                0.0
            } else {
                let taper = ((m - M_A) * (M_STAR - m)).min(0.05) / 0.05;
                h * taper * (-((m - c) / w).powi(2)).exp()
            }
        })
        .collect()
}

/// Straight-from-the-equations evaluator with its own loops and weights.
mod reference {
    use super::*;

    pub fn trap(nodes: &[f64], f: impl Fn(usize) -> f64) -> f64 {
        let mut s = 0.0;
        for k in 0..nodes.len() - 1 {
            s += 0.5 * (nodes[k + 1] - nodes[k]) * (f(k) + f(k + 1));
        }
        s
    }

    fn pp(x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            0.0
        }
    }

    fn np(x: f64) -> f64 {
        if x < 0.0 {
            -x
        } else {
            0.0
        }
    }

    /// `(m_i/2) int_0^{m_i} k(m', m_i - m') a(m') b(m_i - m') dm'` on a uniform grid.
    fn q(k: &Kernel, a: &[f64], b: &[f64], nodes: &[f64], i: usize) -> f64 {
        let prod: Vec<f64> = (0..=i).map(|j| k.eval(nodes[j], nodes[i - j]) * a[j] * b[i - j]).collect();
        nodes[i] / 2.0 * trap(&nodes[..=i], |j| prod[j])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn s_star(p: &MicrophysicsParams, nodes: &[f64], sg: &[f64], nu: &[f64], pi: f64, temp: f64, du: f64, i: usize) -> f64 {
        let m = nodes[i];
        let excess = pi - p.pi_l.eval(temp);
        let s_g = p.sbar_l.eval(m) * excess * sg[i];
        let s_s = -p.k_ls.eval(m, temp) * sg[i] + p.k_sl.eval(m, temp) * nu[i];
        let cap = p.n_aero.component(0)[0]
            - trap(nodes, |k| p.n_l.eval(nodes[k]) * sg[k])
            - trap(nodes, |k| p.n_s.eval(nodes[k]) * nu[k]);
        let s_a = p.g_a.eval(m) * pp(cap) * pp(excess) - p.g_l.eval(m) * np(excess) * sg[i];
        let j_l = -m * trap(nodes, |k| p.beta_l.eval(m, nodes[k]) * sg[k]);
        let j_ls = -m * trap(nodes, |k| p.z_ls.eval(nodes[k], m) * nu[k]);
        let s_q = q(&p.beta_l, sg, sg, nodes, i) + j_l * sg[i] + j_ls * sg[i];
        -du * sg[i] + s_g + s_s + s_a + s_q
    }

    #[allow(clippy::too_many_arguments)]
    pub fn n_star(p: &MicrophysicsParams, nodes: &[f64], sg: &[f64], nu: &[f64], pi: f64, temp: f64, dw: f64, i: usize) -> f64 {
        let m = nodes[i];
        let excess = pi - p.pi_s.eval(temp);
        let n_g = p.sbar_s.eval(m) * excess * nu[i];
        let n_s = p.k_ls.eval(m, temp) * sg[i] - p.k_sl.eval(m, temp) * nu[i];
        let n_a = -p.g_s.eval(m) * np(excess) * nu[i];
        let j_s = -m * trap(nodes, |k| p.beta_s.eval(m, nodes[k]) * nu[k]);
        let j_ls = -m * trap(nodes, |k| p.z_ls.eval(nodes[k], m) * sg[k]);
        let n_q = q(&p.beta_s, nu, nu, nodes, i) + j_s * nu[i] + q(&p.z_ls, sg, nu, nodes, i) + j_ls * nu[i];
        -dw * nu[i] + n_g + n_s + n_a + n_q
    }

    pub fn p_star(p: &MicrophysicsParams, nodes: &[f64], sg: &[f64], nu: &[f64], pi: f64, temp: f64, dv: f64) -> f64 {
        let f_l = trap(nodes, |k| p.sbar_l.eval(nodes[k]) * sg[k]);
        let f_s = trap(nodes, |k| p.sbar_s.eval(nodes[k]) * nu[k]);
        let big_p = -((pi - p.pi_l.eval(temp)) * f_l - (pi - p.pi_s.eval(temp)) * f_s);
        -(dv * pi + big_p)
    }
}

/// A column state on `(m, z)` with spectra constant in `z`.
struct ColumnCase {
    state: AtmosphereState,
    grid: MassGrid,
}

fn column_case(sigma: Vec<f64>, nu: Vec<f64>, pi: f64, temp: f64, divs: [f64; 3]) -> ColumnCase {
    let n = sigma.len();
    let grid = MassGrid::uniform(M_STAR, n).unwrap();
    let spec = |vals: &[f64]| {
        SampledField::sample(
            vec![
                Axis::new(AxisRole::Space(0), grid.nodes.clone()),
                Axis::uniform(AxisRole::Space(1), 0.0, 1.0, 2),
            ],
            1,
            |p, o| {
                let k = grid.nodes.iter().position(|&m| m == p.x[0]).unwrap();
                o[0] = vals[k];
            },
        )
        .unwrap()
    };
    let c = |v: f64| SampledField::constant(&[v]);
    let state = AtmosphereState {
        rho: c(1.2),
        pi: c(pi),
        sigma: spec(&sigma),
        nu: spec(&nu),
        temperature: c(temp),
        v: c(0.0),
        u: c(-1.0),
        w_vel: c(-0.5),
        div_v: Some(c(divs[0])),
        div_u: Some(c(divs[1])),
        div_w: Some(c(divs[2])),
    };
    ColumnCase { state, grid }
}

#[test]
fn vacuum_has_no_sources() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = random_params(&mut rng);
    let n = 41;
    let case = column_case(vec![0.0; n], vec![0.0; n], 0.0, 280.0, [0.0; 3]);
    for &m in &case.grid.nodes {
        assert_eq!(assemble_sigma_rhs(&case.state, &p, 0.0, m, &[0.5], &case.grid).unwrap(), 0.0);
        assert_eq!(assemble_nu_rhs(&case.state, &p, 0.0, m, &[0.5], &case.grid).unwrap(), 0.0);
    }
    let (r, pp) = assemble_gas_rhs(&case.state, &p, 0.0, &[0.5], &case.grid).unwrap();
    assert_eq!(r, 0.0);
    assert_eq!(pp, 0.0);
}

#[test]
fn single_term_cases() {
    let n = 41;
    let grid = MassGrid::uniform(M_STAR, n).unwrap();
    let hat: Vec<f64> = grid.nodes.iter().map(|&m| bump(0.5, 1.0, 2.0).eval(m)).collect();
    let mut p = MicrophysicsParams::inert(M_A, BIG_M_A, M_STAR);
    p.sbar_l = bump(M_A, M_STAR, 1.0);
    p.pi_l = Profile::constant(1.0);
    let case = column_case(hat.clone(), vec![0.0; n], 2.0, 280.0, [0.0; 3]);
    for (i, &m) in case.grid.nodes.iter().enumerate() {
        let s = assemble_sigma_rhs(&case.state, &p, 0.0, m, &[0.3], &case.grid).unwrap();
        assert!((s - p.sbar_l.eval(m) * hat[i]).abs() < 1e-15);
    }
    let mut p = MicrophysicsParams::inert(M_A, BIG_M_A, M_STAR);
    p.k_sl = Rate {
        mass: Profile::constant(1.0),
        temperature: Profile::constant(0.7),
    };
    let case = column_case(vec![0.0; n], hat.clone(), 0.0, 280.0, [0.0; 3]);
    for (i, &m) in case.grid.nodes.iter().enumerate() {
        let v = assemble_nu_rhs(&case.state, &p, 0.0, m, &[0.3], &case.grid).unwrap();
        assert!((v + 0.7 * hat[i]).abs() < 1e-15);
    }
    let mut case = column_case(vec![0.0; n], vec![0.0; n], 0.0, 280.0, [0.1, 0.0, 0.0]);
    case.state.rho = SampledField::constant(&[2.0]);
    let (r, _) = assemble_gas_rhs(&case.state, &p, 0.0, &[0.3], &case.grid).unwrap();
    assert!((r + 0.2).abs() < 1e-15);
}

#[test]
fn saturated_balance_gas() {
    let n = 41;
    let grid = MassGrid::uniform(M_STAR, n).unwrap();
    let mut p = MicrophysicsParams::inert(M_A, BIG_M_A, M_STAR);
    p.pi_l = Profile::constant(1.0);
    p.pi_s = Profile::constant(0.5);
    // F_l = 3 and F_s = 2 from constant weights on the spectra.
    p.sbar_l = Profile::Constant {
        value: 1.0,
        support: Some([M_A, M_STAR]),
    };
    p.sbar_s = p.sbar_l.clone();
    let fl = eval_f(&p.sbar_l, &vec![1.0; n], &grid);
    let s: Vec<f64> = vec![3.0 / fl; n];
    let v: Vec<f64> = vec![2.0 / fl; n];
    let case = column_case(s, v, 2.0, 280.0, [0.25, 0.0, 0.0]);
    let (_, ps) = assemble_gas_rhs(&case.state, &p, 0.0, &[0.3], &case.grid).unwrap();
    assert!((ps + 0.25 * 2.0).abs() < 1e-12, "{ps}");
}

#[test]
fn dual_implementation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 61;
    let nodes = linspace(0.0, M_STAR, n);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = random_params(&mut rng);
        let sg = random_spectrum(&mut rng, &nodes);
        let nu = random_spectrum(&mut rng, &nodes);
        let pi = rng.gen_range(0.0..2.0);
        let temp = rng.gen_range(260.0..285.0);
        let divs = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let case = column_case(sg.clone(), nu.clone(), pi, temp, divs);
        for i in 0..n {
            let m = nodes[i];
            let a = assemble_sigma_rhs(&case.state, &p, 0.0, m, &[0.5], &case.grid).unwrap();
            let b = reference::s_star(&p, &nodes, &sg, &nu, pi, temp, divs[1], i);
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
            let a = assemble_nu_rhs(&case.state, &p, 0.0, m, &[0.5], &case.grid).unwrap();
            let b = reference::n_star(&p, &nodes, &sg, &nu, pi, temp, divs[2], i);
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
        }
        let (_, a) = assemble_gas_rhs(&case.state, &p, 0.0, &[0.5], &case.grid).unwrap();
        let b = reference::p_star(&p, &nodes, &sg, &nu, pi, temp, divs[0]);
        worst = worst.max((a - b).abs() / (1.0 + b.abs()));
    }
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn f_matches_refined_quadrature() {
    let gauss = |m: f64| (-((m - 1.0) / 0.3f64).powi(2)).exp();
    let w = Profile::Gaussian {
        centre: 0.8,
        width: 0.5,
        height: 1.0,
        support: None,
    };
    let coarse = MassGrid::uniform(M_STAR, 2001).unwrap();
    let fine = MassGrid::uniform(M_STAR, 20001).unwrap();
    let f = |g: &MassGrid| eval_f(&w, &g.nodes.iter().map(|&m| gauss(m)).collect::<Vec<_>>(), g);
    let (a, b) = (f(&coarse), f(&fine));
    assert!((a - b).abs() / b < 1e-8, "{a} {b}");
}

#[test]
fn cutoff_stops_gain_at_m_star() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = MassGrid::uniform(M_STAR, 81).unwrap();
    let s = random_spectrum(&mut rng, &g.nodes);
    let (gain, loss) = eval_coagulation(&cut(1.0), &s, &s, 80, &g);
    assert_eq!(gain, 0.0);
    assert_eq!(loss, 0.0);
}

#[test]
fn riming_budget_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = MassGrid::uniform(M_STAR, 81).unwrap();
    let mut p = MicrophysicsParams::inert(M_A, BIG_M_A, M_STAR);
    p.z_ls = Kernel::Constant {
        value: 1.0,
        cutoff: Some(M_STAR),
    };
    let s = random_spectrum(&mut rng, &g.nodes);
    let v = random_spectrum(&mut rng, &g.nodes);
    let b = riming_budget(&p, &g, &s, &v);
    assert!(b.liquid < 0.0 && b.ice.is_finite());
    assert!((b.residual - (b.liquid + b.ice)).abs() < 1e-15);
}

#[test]
fn divergence_fallback_is_flagged() {
    let mut case = column_case(vec![0.0; 11], vec![0.0; 11], 0.0, 280.0, [0.0; 3]);
    case.state.div_u = None;
    case.state.u = SampledField::sample(vec![Axis::uniform(AxisRole::Space(1), 0.0, 1.0, 11)], 1, |p, o| {
        o[0] = -1.0 - 0.5 * p.x[1]
    })
    .unwrap();
    let ([_, du, _], fb) = case.state.divergences().unwrap();
    assert!(fb.div_u && !fb.div_v && !fb.div_w);
    assert!(du.component(0).iter().all(|v| (v + 0.5).abs() < 1e-12));
}

fn phys_params() -> MicrophysicsParams {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    random_params(&mut rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coagulation_conserves_mass(seed in 0u64..10_000, value in 0.1f64..3.0, kind in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = MassGrid::uniform(M_STAR, 101).unwrap();
        let s = random_spectrum(&mut rng, &g.nodes);
        let k = match kind {
            0 => cut(value),
            1 => Kernel::Sum { value, cutoff: Some(M_STAR) },
            _ => Kernel::Product { value, cutoff: Some(M_STAR) },
        };
        let mut net = vec![0.0; g.len()];
        for i in 0..g.len() {
            let (q, j) = eval_coagulation(&k, &s, &s, i, &g);
            net[i] = q + j * s[i];
        }
        let mass: Vec<f64> = g.nodes.iter().zip(&s).map(|(m, v)| m * v).collect();
        let scale = g.integrate(&mass);
        prop_assert!(g.integrate(&net).abs() <= 1e-6 * scale);
    }

    #[test]
    fn phase_exchange_is_antisymmetric(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(&mut rng);
        let g = MassGrid::uniform(M_STAR, 41).unwrap();
        let s = random_spectrum(&mut rng, &g.nodes);
        let v = random_spectrum(&mut rng, &g.nodes);
        let col = Column { pi: 1.0, temp: 270.0, n_aero: 1.0, sigma: &s, nu: &v };
        let mom = column_moments(&p, &g, &col);
        for i in 0..g.len() {
            let a = sigma_terms(&p, &g, &col, &mom, i, 0.0).phase;
            let b = nu_terms(&p, &g, &col, i, 0.0).phase;
            prop_assert_eq!(a + b, 0.0);
        }
    }

    #[test]
    fn gain_is_bilinear(seed in 0u64..10_000, alpha in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = MassGrid::uniform(M_STAR, 41).unwrap();
        let a = random_spectrum(&mut rng, &g.nodes);
        let b = random_spectrum(&mut rng, &g.nodes);
        let c = random_spectrum(&mut rng, &g.nodes);
        let k = Kernel::Sum { value: 1.0, cutoff: Some(M_STAR) };
        let mix: Vec<f64> = a.iter().zip(&c).map(|(x, y)| x + alpha * y).collect();
        for i in 0..g.len() {
            let (g1, l1) = eval_coagulation(&k, &mix, &b, i, &g);
            let (ga, _) = eval_coagulation(&k, &a, &b, i, &g);
            let (gc, _) = eval_coagulation(&k, &c, &b, i, &g);
            prop_assert!((g1 - (ga + alpha * gc)).abs() <= 1e-12 * (1.0 + ga.abs() + gc.abs()));
            let (_, la) = eval_coagulation(&k, &b, &a, i, &g);
            let (_, lc) = eval_coagulation(&k, &b, &c, i, &g);
            let (_, lm) = eval_coagulation(&k, &b, &mix, i, &g);
            prop_assert!((lm - (la + alpha * lc)).abs() <= 1e-12 * (1.0 + la.abs() + lc.abs()));
            let _ = l1;
        }
    }

    #[test]
    fn empty_bins_do_not_lose_mass(seed in 0u64..10_000, pi in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = phys_params();
        let g = MassGrid::uniform(M_STAR, 41).unwrap();
        let mut s = random_spectrum(&mut rng, &g.nodes);
        let v = random_spectrum(&mut rng, &g.nodes);
        let hole = rng.gen_range(0..g.len());
        s[hole] = 0.0;
        let col = Column { pi, temp: 270.0, n_aero: 1.0, sigma: &s, nu: &v };
        let mom = column_moments(&p, &g, &col);
        let fd = rng.gen_range(-1.0..1.0);
        prop_assert!(sigma_terms(&p, &g, &col, &mom, hole, fd).total() >= 0.0);
    }
}

fn column_domain() -> StripDomain {
    StripDomain::with_extensions(2, 4.0, vec![0.0], vec![M_STAR], vec![Extension::ClampToEdge]).unwrap()
}

#[test]
fn vacuum_system_is_pure_transport() {
    let n = 21;
    let mut case = column_case(vec![0.0; n], vec![0.0; n], 0.3, 280.0, [0.0; 3]);
    case.state.rho = SampledField::sample(vec![Axis::uniform(AxisRole::Space(1), 0.0, 1.0, 11)], 1, |p, o| {
        o[0] = 1.0 + 0.2 * p.x[1]
    })
    .unwrap();
    let p = MicrophysicsParams::inert(M_A, BIG_M_A, M_STAR);
    let sys = build_system(&case.state, &p, &column_domain(), &case.grid.nodes).unwrap();
    assert!((sys.system.b_d() - 0.5).abs() < 1e-15);
    let mut s = stripflow::quasilinear::SolverSettings::new(vec![case.grid.nodes.clone(), linspace(0.0, 1.0, 11)]);
    s.grid_dt = 0.1;
    let sols = stripflow::quasilinear::solve_continued(&sys.system, 0.5, &s).unwrap();
    for sol in &sols {
        assert!(sol.w().values().iter().flatten().all(|v| *v == 0.0));
        for (flat, v) in sol.y().component(0).iter().enumerate() {
            let z = sol.y().node_coords(flat)[2].1;
            assert!((v - (1.0 + 0.2 * z)).abs() < 1e-12);
        }
    }
}

#[test]
fn falling_at_unit_speed_gives_unit_b() {
    let n = 21;
    let mut case = column_case(vec![0.0; n], vec![0.0; n], 0.3, 280.0, [0.0; 3]);
    case.state.w_vel = SampledField::constant(&[-1.0]);
    let p = MicrophysicsParams::inert(M_A, BIG_M_A, M_STAR);
    let sys = build_system(&case.state, &p, &column_domain(), &case.grid.nodes).unwrap();
    assert_eq!(sys.system.b_d(), 1.0);
}

#[test]
fn rising_particles_are_rejected() {
    let n = 21;
    let mut case = column_case(vec![0.0; n], vec![0.0; n], 0.3, 280.0, [0.0; 3]);
    case.state.u = SampledField::constant(&[0.2]);
    let p = MicrophysicsParams::inert(M_A, BIG_M_A, M_STAR);
    let e = build_system(&case.state, &p, &column_domain(), &case.grid.nodes).unwrap_err();
    assert!(matches!(e, MicroError::ConeViolation(_)), "{e}");
}

#[test]
fn leaking_spectrum_is_rejected() {
    let n = 21;
    let mut s = vec![0.0; n];
    s[0] = 1.0;
    let case = column_case(s, vec![0.0; n], 0.3, 280.0, [0.0; 3]);
    let p = MicrophysicsParams::inert(M_A, BIG_M_A, M_STAR);
    let e = build_system(&case.state, &p, &column_domain(), &case.grid.nodes).unwrap_err();
    assert!(matches!(e, MicroError::SupportViolation(_)), "{e}");
}
