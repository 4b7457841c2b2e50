use proptest::prelude::*;
use std::path::{Path, PathBuf};
use std::process::Command;
use stripflow::field::{AxisRole, Point};
use stripflow::microphysics::{eval_f, MassGrid};
use stripflow::scenario::config::SystemConfig;
use stripflow::scenario::{emit, load_scenario, parse_scenario, run, trace, ScenarioError};

fn demos() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demos")
}

fn demo_path(name: &str) -> PathBuf {
    demos().join(name).join("scenario.toml")
}

fn demo_text(name: &str) -> String {
    std::fs::read_to_string(demo_path(name)).unwrap()
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stripflow"))
}

fn validation_errors(e: ScenarioError) -> Vec<String> {
    match e {
        ScenarioError::Validation(v) => v,
        other => panic!("expected a validation error, got {other}"),
    }
}

#[test]
fn shipped_demos_round_trip() {
    for entry in std::fs::read_dir(demos()).unwrap() {
        let path = entry.unwrap().path().join("scenario.toml");
        let sc = load_scenario(&path).unwrap();
        let text = emit(&sc.config);
        assert_eq!(text, std::fs::read_to_string(&path).unwrap(), "{} is not canonical", path.display());
        let again = parse_scenario(&text, &sc.base_dir).unwrap();
        assert_eq!(again.config, sc.config);
    }
}

#[test]
fn zero_horizon_is_rejected() {
    let text = demo_text("d1_linear").replace("t1 = 1.0", "t1 = 0.0");
    let errs = validation_errors(parse_scenario(&text, &demos().join("d1_linear")).unwrap_err());
    assert!(errs.iter().any(|e| e == "t1 > 0 required"), "{errs:?}");
}

#[test]
fn all_violations_are_listed() {
    let text = demo_text("d1_linear")
        .replace("t1 = 1.0", "t1 = 0.0")
        .replace("safety = 0.5", "safety = 2.0")
        .replace("cadence = 1", "cadence = 0");
    let errs = validation_errors(parse_scenario(&text, &demos().join("d1_linear")).unwrap_err());
    assert!(errs.len() >= 3, "{errs:?}");
    assert!(errs.iter().any(|e| e.contains("safety")), "{errs:?}");
    assert!(errs.iter().any(|e| e.contains("cadence")), "{errs:?}");
}

#[test]
fn missing_field_file_names_the_path() {
    let text = demo_text("d1_linear").replace("\"y0.txt\"", "\"no_such_file.txt\"");
    let msg = parse_scenario(&text, &demos().join("d1_linear")).unwrap_err().to_string();
    assert!(msg.contains("no_such_file.txt"), "{msg}");
}

#[test]
fn syntax_errors_carry_position() {
    let text = "name = \"x\"\n[domain]\nd = = 1\n";
    match parse_scenario(text, Path::new(".")).unwrap_err() {
        ScenarioError::Parse { line, column, .. } => {
            assert_eq!(line, 3);
            assert!(column >= 1);
        }
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let text = demo_text("manufactured").replace("[solver]", "[solver]\nbogus = 1");
    let e = parse_scenario(&text, Path::new(".")).unwrap_err();
    assert!(matches!(e, ScenarioError::Parse { .. }), "{e}");
}

#[test]
fn vacuum_atmosphere_is_a_pure_pullback() {
    let sc = load_scenario(&demo_path("atmosphere_vacuum")).unwrap();
    let out = run(&sc).unwrap();
    assert!(out.report.all_pass, "{:?}", out.report.failed());
    let sigma0 = sc.config.system.clone();
    let SystemConfig::Atmosphere(a) = sigma0 else { panic!("atmosphere demo") };
    let sigma0 = a.sigma.load(&sc.base_dir).unwrap();
    let t = sc.config.horizon();
    let last = out.solutions.last().unwrap();
    let w = last.w();
    let mut checked = 0;
    for flat in 0..w.node_count() {
        let c = w.node_coords(flat);
        if c[0].1 != t {
            continue;
        }
        let (m, z) = (c[1].1, c[2].1);
        let got = w.component(0)[flat];
        // Droplets fall at unit speed; above z = 1 - t they came in through
        // the top, where the inflow is the initial spectrum's top value.
        let want = sigma0.eval(&Point::tx(0.0, &[m, (z + t).min(1.0)])).unwrap()[0];
        assert!((got - want).abs() < 1e-10, "m = {m}, z = {z}: {got} vs {want}");
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn rain_leaves_through_the_bottom() {
    let sc = load_scenario(&demo_path("atmosphere_vacuum")).unwrap();
    let rep = trace(&sc, 0.5, &[1.0, 0.0]).unwrap();
    let sigma = rep.paths.iter().find(|p| p.equation == "sigma").unwrap();
    let heights: Vec<f64> = sigma.x.iter().map(|p| p[1]).collect();
    assert!(heights.windows(2).all(|h| h[1] < h[0]), "droplets must fall");
    assert_eq!(*heights.last().unwrap(), 0.0);
    assert!((sigma.entry.as_ref().unwrap().x[1] - 0.5).abs() < 1e-12);
}

#[test]
fn condensation_draws_down_vapour() {
    let sc = load_scenario(&demo_path("atmosphere_condensation")).unwrap();
    let out = run(&sc).unwrap();
    assert!(out.report.all_pass, "{:?}", out.report.failed());
    assert!(out.report.check("water_budget").is_some_and(|c| c.pass));
    let SystemConfig::Atmosphere(a) = &sc.config.system else { panic!("atmosphere demo") };
    let grid = MassGrid::uniform(a.params.m_star, a.mass_nodes).unwrap();
    let sigma0 = a.sigma.load(&sc.base_dir).unwrap();
    let column: Vec<f64> = grid
        .nodes
        .iter()
        .map(|&m| sigma0.eval(&Point::tx(0.0, &[m, 0.5])).unwrap()[0])
        .collect();
    assert!(eval_f(&a.params.sbar_l, &column, &grid) > 0.0);
    let first = out.solutions.first().unwrap().y();
    let last = out.solutions.last().unwrap().y();
    let t_end = sc.config.horizon();
    let pi0 = first.slice(AxisRole::Time, 0.0).unwrap();
    let pi1 = last.slice(AxisRole::Time, t_end).unwrap();
    for (a, b) in pi0.component(1).iter().zip(pi1.component(1)) {
        assert!(*a > 0.8, "initial state is supersaturated");
        assert!(b < a, "pi must fall: {a} -> {b}");
    }
}

#[test]
fn manufactured_demo_writes_a_convergence_table() {
    let tmp = tempfile::tempdir().unwrap();
    let st = cli().arg("run").arg(demo_path("manufactured")).arg("--out").arg(tmp.path()).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let table = std::fs::read_to_string(tmp.path().join("convergence.txt")).unwrap();
    assert!(table.starts_with("n h error ratio"));
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn cli_run_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let st = cli().arg("run").arg(demo_path("d1_linear")).env("STRIPFLOW_OUT", tmp.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    for f in ["slab0_y.txt", "slab0_w.txt", "outer_trace.txt", "report.json", "timings.json"] {
        assert!(tmp.path().join(f).exists(), "{f} missing");
    }
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["all_pass"], true);
    assert!(rep["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
    let y = stripflow::field::read_columnar(&std::fs::read_to_string(tmp.path().join("slab0_y.txt")).unwrap()).unwrap();
    assert!(y.axis(AxisRole::Time).is_some());
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, demo_text("manufactured").replace("t1 = 1.0", "t1 = 0.0")).unwrap();
    let st = cli().arg("run").arg(&bad).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("t1 > 0 required"));

    // Absolute field paths, and a budget tolerance no run can meet.
    let dir = demos().join("atmosphere_condensation").canonicalize().unwrap();
    let mut text = demo_text("atmosphere_condensation").replace("water_budget = 0.0001", "water_budget = 0.0");
    for f in ["rho", "pi", "sigma", "nu", "temperature"] {
        text = text.replace(&format!("\"{f}.txt\""), &format!("{:?}", dir.join(format!("{f}.txt"))));
    }
    let strict = tmp.path().join("strict.toml");
    std::fs::write(&strict, text).unwrap();
    let st = cli().arg("--out").arg(tmp.path().join("o")).arg("run").arg(&strict).output().unwrap();
    assert_eq!(st.status.code(), Some(1), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(String::from_utf8_lossy(&st.stdout).contains("FAIL water_budget"));
}

#[test]
fn cli_trace_and_verify() {
    let tmp = tempfile::tempdir().unwrap();
    let st = cli()
        .args(["trace"])
        .arg(demo_path("d2_periodic"))
        .args(["--t0", "0.2", "--x0", "0.3,0.6", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(rep["paths"].as_array().unwrap().len(), 2);
    assert!(tmp.path().join("trace_u1.txt").exists());

    let st = cli().args(["--seed", "7", "verify", "geometry", "--trials", "200"]).output().unwrap();
    assert!(st.status.success());
    let rep: serde_json::Value = serde_json::from_slice(&st.stdout).unwrap();
    assert_eq!(rep["pass"], true);
    assert_eq!(rep["seed"], 7);
}

#[test]
fn cli_oracle_compare_detects_the_control() {
    let tmp = tempfile::tempdir().unwrap();
    let st = cli().arg("oracle-compare").arg(demo_path("d1_linear")).arg("--out").arg(tmp.path()).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stdout));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("oracle.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], true);
    assert_eq!(rep["control"]["pass"], false);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn emit_then_parse_is_identity(
        name in "[a-z][a-z0-9_]{0,12}",
        t1 in 0.1f64..10.0,
        tol in 1e-14f64..1e-6,
        max_dt in 1e-4f64..0.1,
        safety in 0.05f64..0.95,
        grid_dt in 1e-3f64..0.5,
        n in 3usize..200,
        horizon in proptest::option::of(0.01f64..1.0),
        cadence in 1usize..10,
        residual in any::<bool>(),
        alpha in -2.0f64..2.0,
    ) {
        let mut sc = load_scenario(&demo_path("manufactured")).unwrap();
        let c = &mut sc.config;
        c.name = name;
        c.domain.t1 = t1;
        c.solver.picard_tol = tol;
        c.solver.max_dt = max_dt;
        c.solver.safety = safety;
        c.solver.grid_dt = grid_dt;
        c.solver.grid[0].n = n;
        c.solver.horizon = horizon.map(|h| h * t1);
        c.output.cadence = cadence;
        c.checks.residual = residual;
        if let SystemConfig::Manufactured(m) = &mut c.system {
            m.alpha = alpha;
        }
        let again = parse_scenario(&emit(&sc.config), &sc.base_dir).unwrap();
        prop_assert_eq!(again.config, sc.config);
    }
}
