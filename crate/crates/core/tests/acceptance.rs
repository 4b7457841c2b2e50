//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints its verdict line whether it passes or not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use stripflow::characteristics::{entry_time, inverse_time_map, Parametric, StepCtrl, TraceMode};
use stripflow::field::{linspace, Axis, AxisRole, Point, SampledField};
use stripflow::geometry::StripDomain;
use stripflow::microphysics::{column_moments, eval_coagulation, nu_terms, sigma_terms, Column, MassGrid};
use stripflow::quasilinear::{solve_continued, LinearSource, QuasilinearSystem, SolverSettings};
use stripflow::scenario::verify::{oracle_system, random};
use stripflow::scenario::{load_scenario, oracle_compare, run, Scenario};
use stripflow::transport::{solve_at_point, InflowData, LinearTransportProblem, PicardSettings};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn demos() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demos")
}

fn demo(name: &str) -> Scenario {
    load_scenario(&demos().join(name).join("scenario.toml")).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const DEMOS: [&str; 7] = [
    "d1_linear",
    "d1_coupled",
    "d2_periodic",
    "manufactured",
    "atmosphere_vacuum",
    "atmosphere_condensation",
    "atmosphere_full",
];
const SMOOTH: [&str; 3] = ["d1_linear", "d1_coupled", "d2_periodic"];
const COUPLED: [&str; 5] = ["d1_linear", "d1_coupled", "d2_periodic", "manufactured", "atmosphere_full"];

fn entry_membership() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let ctrl = StepCtrl::default();
    let n = 10_000;
    let mut ok = 0;
    for _ in 0..n {
        let d = rng.gen_range(1..=3);
        let dom = random::strip(d);
        let (b, _) = random::cone_field(&mut rng, d);
        let (t0, x0) = random::start(&mut rng, d);
        if let Ok((tau, p)) = entry_time(&Parametric::new(&b, None), &dom, t0, &x0, &ctrl) {
            if p.t == tau && matches!(dom.classify_inflow(p.t, &p.x, 1e-8), Ok(Some(_))) {
                ok += 1;
            }
        }
    }
    verdict(ok == n, format!("{ok}/{n} entry points on the inflow surface"))
}

/// Root of `g` on `[lo, hi]` by bisection, `g(lo) < 0 < g(hi)`.
fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn closed_form_entry_times() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let ctrl = StepCtrl::default();
    let mut worst_const = 0.0f64;
    for _ in 0..1000 {
        let d = rng.gen_range(1..=3);
        let dom = random::strip(d);
        let bd = rng.gen_range(0.2..3.0);
        let mut c: Vec<f64> = (0..d - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        c.push(-bd);
        let f = SampledField::constant(&c);
        let (t0, x0) = random::start(&mut rng, d);
        let want = (t0 - (1.0 - x0[d - 1]) / bd).max(0.0);
        let got = entry_time(&Parametric::new(&f, None), &dom, t0, &x0, &ctrl).map_or(f64::INFINITY, |r| r.0);
        worst_const = worst_const.max((got - want).abs());
    }
    // b_d = -(1 + s): X_d(s) = x0 + (t0 - s) + (t0^2 - s^2) / 2.
    let dom = StripDomain::interval(2.0).expect("strip");
    let b = SampledField::sample(vec![Axis::uniform(AxisRole::Time, 0.0, 2.0, 2)], 1, |p, o| o[0] = -(1.0 + p.t))
        .expect("field");
    let mut worst_time = 0.0f64;
    for _ in 0..1000 {
        let t0 = rng.gen_range(0.0..2.0);
        let x0 = rng.gen_range(0.0..1.0);
        let rise = |s: f64| x0 + (t0 - s) + 0.5 * (t0 * t0 - s * s) - 1.0;
        let want = if rise(0.0) <= 0.0 { 0.0 } else { bisect(|s| -rise(s), 0.0, t0) };
        let got = entry_time(&Parametric::new(&b, None), &dom, t0, &[x0], &ctrl).map_or(f64::INFINITY, |r| r.0);
        worst_time = worst_time.max((got - want).abs());
    }
    verdict(
        worst_const <= 1e-10 && worst_time <= 1e-8,
        format!("constant field {worst_const:e} (<= 1e-10), b_d = -(1+s) {worst_time:e} (<= 1e-8)"),
    )
}

/// A cone member whose last component is bilinear in `(t, x_d)`, so that the
/// interpolant is smooth on the whole strip.
fn smooth_cone_field(rng: &mut ChaCha8Rng, d: usize) -> (SampledField, f64) {
    let bd = rng.gen_range(0.3..2.0);
    let c: Vec<[f64; 4]> = (0..d)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2)])
        .collect();
    let axes = vec![
        Axis::uniform(AxisRole::Time, 0.0, 2.0, 2),
        Axis::uniform(AxisRole::Space(d - 1), 0.0, 1.0, 2),
    ];
    let f = SampledField::sample(axes, d, |p, o| {
        let (t, z) = (p.t, p.x[d - 1]);
        for k in 0..d {
            let [a, bt, bz, btz] = c[k];
            o[k] = a + bt * t + bz * z + btz * t * z;
        }
        let [_, bt, bz, btz] = c[d - 1];
        o[d - 1] = -bd - 2.0 * bt.abs() - bz.abs() - 2.0 * btz.abs() + bt * t + bz * z + btz * t * z;
    })
    .expect("field");
    (f, bd)
}

fn inverse_time_consistency() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let ctrl = StepCtrl::default();
    let mut worst = 0.0f64;
    let mut count = 0;
    while count < 1000 {
        let d = rng.gen_range(1..=3);
        let dom = random::strip(d);
        let (b, bd) = smooth_cone_field(&mut rng, d);
        let (t0, x0) = random::start(&mut rng, d);
        let v = Parametric::new(&b, None);
        let Ok((tau, _)) = entry_time(&v, &dom, t0, &x0, &ctrl) else {
            worst = f64::INFINITY;
            count += 1;
            continue;
        };
        if tau <= 0.0 {
            continue;
        }
        let phi = inverse_time_map(&v, &dom, t0, &x0, 1.0, bd, &ctrl).unwrap_or(f64::INFINITY);
        worst = worst.max((phi - tau).abs());
        count += 1;
    }
    let b = SampledField::sample(vec![Axis::uniform(AxisRole::Space(0), 0.0, 1.0, 2)], 1, |p, o| {
        o[0] = -(1.0 + p.x[0])
    })
    .expect("field");
    let dom = StripDomain::interval(2.0).expect("strip");
    let phi = inverse_time_map(&Parametric::new(&b, None), &dom, 1.0, &[0.0], 1.0, 1.0, &ctrl).unwrap_or(f64::NAN);
    let analytic = (phi - (1.0 - 2f64.ln())).abs();
    verdict(
        worst <= 1e-8 && analytic <= 1e-9,
        format!("max |Phi(1) - tau| = {worst:e} over {count} (<= 1e-8), 1 - ln 2 case {analytic:e} (<= 1e-9)"),
    )
}

struct TransportStats {
    majorant_excess: f64,
    max_iters: usize,
    all_converged: bool,
    bound_excess: f64,
    range_excess: f64,
}

fn transport_suite() -> TransportStats {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let picard = PicardSettings::default();
    let mut st = TransportStats {
        majorant_excess: f64::NEG_INFINITY,
        max_iters: 0,
        all_converged: true,
        bound_excess: f64::NEG_INFINITY,
        range_excess: 0.0,
    };
    for _ in 0..100 {
        let d = rng.gen_range(1..=2);
        let (b, _) = random::cone_field(&mut rng, d);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let c_mean = sign * rng.gen_range(0.3..1.5);
        let c = random::scalar(&mut rng, d, c_mean, 0.25);
        let a = random::scalar(&mut rng, d, 0.0, 1.0);
        let z = random::scalar(&mut rng, d, 0.0, 1.0);
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
        let (t, x) = random::start(&mut rng, d);
        match solve_at_point(&prob, t, &x, &picard) {
            Ok((v, tr)) => {
                for (m, b) in tr.iterates.iter().zip(&tr.bound_series) {
                    st.majorant_excess = st.majorant_excess.max(m - b * (1.0 + 1e-12));
                }
                st.max_iters = st.max_iters.max(tr.n_iters);
                st.all_converged &= tr.converged && tr.n_iters <= 60;
                let bound = prob.a_priori_bound(t).unwrap_or(f64::NAN);
                st.bound_excess = st.bound_excess.max(v.abs() - bound * (1.0 + 1e-9) - 1e-11);
            }
            Err(_) => {
                st.all_converged = false;
                st.majorant_excess = f64::INFINITY;
                st.bound_excess = f64::INFINITY;
            }
        }
        prob.c = SampledField::constant(&[0.0]);
        prob.a = SampledField::constant(&[0.0]);
        let (lo, hi) = z
            .component(0)
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        let out = solve_at_point(&prob, t, &x, &picard).map_or(f64::INFINITY, |(v, _)| (lo - v).max(v - hi).max(0.0));
        st.range_excess = st.range_excess.max(out);
    }
    st
}

fn picard_majorant(st: &TransportStats) -> Verdict {
    verdict(
        st.majorant_excess <= 0.0 && st.all_converged,
        format!(
            "max(iterate - bound) = {:e}, all converged: {}, max iterations {}",
            st.majorant_excess, st.all_converged, st.max_iters
        ),
    )
}

fn a_priori_bound(st: &TransportStats) -> Verdict {
    verdict(
        st.bound_excess <= 0.0,
        format!("max(|z| - bound) = {:e}", st.bound_excess),
    )
}

fn max_principle(st: &TransportStats) -> Verdict {
    verdict(
        st.range_excess <= 1e-12,
        format!("largest excursion outside the data range {:e} (<= 1e-12)", st.range_excess),
    )
}

fn manufactured_convergence() -> Verdict {
    let out = run(&demo("manufactured")).expect("manufactured run");
    let table = out.report.convergence.clone().expect("convergence table");
    let ratios = table.ratios();
    let ok = ratios.len() >= 3 && ratios.iter().all(|r| (0.4..=0.65).contains(r));
    let errs: Vec<String> = table.rows.iter().map(|r| format!("{:.3e}", r.error)).collect();
    verdict(ok, format!("errors [{}], ratios {ratios:.3?}", errs.join(", ")))
}

fn oracle_equivalence() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in SMOOTH {
        let cmp = oracle_compare(&demo(name), 3).expect("oracle compare");
        ok &= cmp.report.pass && !cmp.control.pass;
        parts.push(format!(
            "{name}: ratios {:.3?}, control {}",
            cmp.report.ratios,
            if cmp.control.pass { "NOT detected" } else { "detected" }
        ));
    }
    verdict(ok, parts.join("; "))
}

fn run_demo_check(names: &[&str], check: &str) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in names {
        let out = run(&demo(name)).expect("demo run");
        match out.report.check(check) {
            Some(c) => {
                ok &= c.pass;
                parts.push(format!("{name} {:e}", c.value));
            }
            None => {
                ok = false;
                parts.push(format!("{name} missing"));
            }
        }
    }
    verdict(ok, parts.join(", "))
}

fn outer_contraction() -> Verdict {
    run_demo_check(&COUPLED, "outer_contraction")
}

fn fixed_point_residual() -> Verdict {
    run_demo_check(&DEMOS, "fixed_point_residual")
}

/// `oracle_system` with one datum shifted by `eps`.
fn perturbed(which: &str, eps: f64) -> QuasilinearSystem {
    let mut s = oracle_system();
    let x_axis = || Axis::uniform(AxisRole::Space(0), 0.0, 1.0, 201);
    let bump = |f: &SampledField, h: &dyn Fn(&Point) -> f64| {
        let g = SampledField::sample(f.axes().to_vec(), 1, |p, o| o[0] = f.eval(p).unwrap()[0] + eps * h(p));
        g.expect("field")
    };
    match which {
        "y0" => s.y0[0] = bump(&s.y0[0], &|p| (PI * p.x[0]).cos()),
        "w*" => {
            let w = &s.w_star[0];
            s.w_star[0] = InflowData::new(bump(&w.initial, &|_| 1.0), bump(&w.top, &|_| 1.0));
        }
        "v" => {
            let v = SampledField::sample(vec![x_axis()], 1, |p, o| o[0] = (0.6 + eps) * (PI * p.x[0]).sin());
            s.v[0] = v.expect("field");
        }
        "u" => s.u[0] = SampledField::constant(&[-1.0 - eps]),
        "f" => s.f[0] = Arc::new(LinearSource::new(eps, vec![-0.5], vec![0.3])),
        "g" => s.g[0] = Arc::new(LinearSource::new(0.1 + eps, vec![0.2], vec![-0.3])),
        _ => unreachable!(),
    }
    s
}

fn end_values(sys: &QuasilinearSystem, settings: &SolverSettings, horizon: f64) -> (Vec<f64>, Vec<(f64, f64)>) {
    let sols = solve_continued(sys, horizon, settings).expect("solve");
    let last = sols.last().expect("one slab");
    let mut out = Vec::new();
    for x in linspace(0.0, 1.0, 37) {
        out.push(last.y().eval(&Point::tx(horizon, &[x])).unwrap()[0]);
        out.push(last.w().eval(&Point::tx(horizon, &[x])).unwrap()[0]);
    }
    (out, sols.iter().map(|s| (s.t_a, s.t_b)).collect())
}

fn continuous_dependence() -> Verdict {
    let mut s = SolverSettings::new(vec![linspace(0.0, 1.0, 21)]);
    s.grid_dt = 0.05;
    let horizon = 0.5;
    let (base, layout) = end_values(&oracle_system(), &s, horizon);
    let mut ok = true;
    let mut parts = Vec::new();
    for which in ["y0", "w*", "v", "u", "f", "g"] {
        let mut ratios = Vec::new();
        for eps in [1e-3, 1e-4] {
            let (vals, lay) = end_values(&perturbed(which, eps), &s, horizon);
            ok &= lay == layout;
            let resp = vals.iter().zip(&base).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ratios.push(resp / eps);
        }
        let spread = ratios[0].max(ratios[1]) / ratios[0].min(ratios[1]);
        ok &= ratios.iter().all(|r| r.is_finite() && *r > 0.0) && spread < 2.0;
        parts.push(format!("{which} {:.3}/{:.3}", ratios[0], ratios[1]));
    }
    verdict(ok, format!("response/eps at eps = 1e-3/1e-4: {}", parts.join(", ")))
}

fn coagulation_mass_balance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(112);
    let g = MassGrid::uniform(2.0, 101).expect("grid");
    let h = g.nodes[1] - g.nodes[0];
    let trap = |f: &[f64]| h * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[f.len() - 1]));
    let mut worst = [0.0f64; 2];
    for _ in 0..100 {
        let p = random::micro_params(&mut rng);
        let sigma = random::spectrum(&mut rng, &g.nodes, p.m_a, p.m_star);
        let nu = random::spectrum(&mut rng, &g.nodes, p.m_a, p.m_star);
        for (k, (kernel, a)) in [(&p.beta_l, &sigma), (p.q_s_kernel(), &nu)].into_iter().enumerate() {
            let net: Vec<f64> = (0..g.len())
                .map(|i| {
                    let (q, j) = eval_coagulation(kernel, a, a, i, &g);
                    q + j * a[i]
                })
                .collect();
            let mass: Vec<f64> = g.nodes.iter().zip(a.iter()).map(|(m, s)| m * s).collect();
            worst[k] = worst[k].max(trap(&net).abs() / trap(&mass));
        }
    }
    verdict(
        worst[0] <= 1e-6 && worst[1] <= 1e-6,
        format!("relative imbalance liquid {:e}, ice {:e} (<= 1e-6)", worst[0], worst[1]),
    )
}

fn phase_exchange_antisymmetry() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(113);
    let g = MassGrid::uniform(2.0, 101).expect("grid");
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = random::micro_params(&mut rng);
        let sigma = random::spectrum(&mut rng, &g.nodes, p.m_a, p.m_star);
        let nu = random::spectrum(&mut rng, &g.nodes, p.m_a, p.m_star);
        let col = Column {
            pi: rng.gen_range(0.0..2.0),
            temp: rng.gen_range(250.0..290.0),
            n_aero: 1.0,
            sigma: &sigma,
            nu: &nu,
        };
        let mom = column_moments(&p, &g, &col);
        let mut defect = 0.0f64;
        let mut scale = f64::MIN_POSITIVE;
        for i in 0..g.len() {
            let s = sigma_terms(&p, &g, &col, &mom, i, 0.0).phase;
            let n = nu_terms(&p, &g, &col, i, 0.0).phase;
            defect = defect.max((s + n).abs());
            scale = scale.max(s.abs());
        }
        worst = worst.max(defect / scale);
    }
    verdict(worst <= 1e-15, format!("max |S + N| / scale = {worst:e} (<= 1e-15)"))
}

fn support_and_positivity() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["atmosphere_vacuum", "atmosphere_condensation", "atmosphere_full"] {
        let mut sc = demo(name);
        let first = run(&sc).expect("atmosphere run").report.slabs[0].t_b;
        sc.config.solver.horizon = Some(first);
        let out = run(&sc).expect("one-slab run");
        let pos = out.report.check("positivity").expect("positivity check");
        let sup = out.report.check("support_leak").expect("support check");
        ok &= out.report.slabs.len() == 1 && pos.pass && sup.pass;
        parts.push(format!("{name}: min {:e}, leak {:e}", pos.value, sup.value));
    }
    verdict(ok, parts.join("; "))
}

fn collect_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.file_name().is_some_and(|n| n != "timings.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut ok = true;
    let mut differing = Vec::new();
    for name in DEMOS {
        let cfg = demos().join(name).join("scenario.toml");
        let mut outs = Vec::new();
        for threads in [1, 4] {
            let dir = tmp.path().join(format!("{name}_{threads}"));
            let st = std::process::Command::new(env!("CARGO_BIN_EXE_stripflow"))
                .args(["--threads", &threads.to_string(), "--out"])
                .arg(&dir)
                .arg("run")
                .arg(&cfg)
                .output()
                .expect("spawn");
            ok &= st.status.success();
            outs.push(collect_outputs(&dir));
        }
        if outs[0] != outs[1] || outs[0].is_empty() {
            ok = false;
            differing.push(name);
        }
    }
    verdict(
        ok,
        if differing.is_empty() {
            format!("{} demos byte-identical with 1 and 4 threads", DEMOS.len())
        } else {
            format!("outputs differ: {differing:?}")
        },
    )
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let transport = std::sync::OnceLock::new();
    let ts = || transport.get_or_init(transport_suite);
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("entry_point_membership", Box::new(entry_membership)),
        ("closed_form_entry_times", Box::new(closed_form_entry_times)),
        ("inverse_time_consistency", Box::new(inverse_time_consistency)),
        ("picard_majorant", Box::new(move || picard_majorant(ts()))),
        ("a_priori_sup_bound", Box::new(move || a_priori_bound(ts()))),
        ("max_principle", Box::new(move || max_principle(ts()))),
        ("manufactured_convergence", Box::new(manufactured_convergence)),
        ("oracle_equivalence", Box::new(oracle_equivalence)),
        ("outer_contraction", Box::new(outer_contraction)),
        ("fixed_point_residual", Box::new(fixed_point_residual)),
        ("continuous_dependence", Box::new(continuous_dependence)),
        ("coagulation_mass_balance", Box::new(coagulation_mass_balance)),
        ("phase_exchange_antisymmetry", Box::new(phase_exchange_antisymmetry)),
        ("support_and_positivity", Box::new(support_and_positivity)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        ran += 1;
        let start = std::time::Instant::now();
        let v = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| verdict(false, "panicked"));
        if !v.pass {
            failed += 1;
        }
        println!(
            "[{:2}] {} {name}: {} ({:.1} s)",
            k + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
