//! Writes the demo scenarios and their field files.
//!
//! ```text
//! cargo run --release --example make_demos -- [dir]
//! ```
//!
//! The default directory is `demos/` at the workspace root.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use stripflow::field::write_columnar_with;
use stripflow::field::{Axis, AxisRole, Point, SampledField};
use stripflow::microphysics::{Kernel, MicrophysicsParams, Profile, Rate, VapourExchange};
use stripflow::scenario::{emit, parse_scenario};

const M_A: f64 = 0.1;
const BIG_M_A: f64 = 0.4;
const M_STAR: f64 = 2.0;

struct Demo {
    dir: PathBuf,
}

impl Demo {
    fn new(root: &Path, name: &str) -> Self {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).expect("create demo dir");
        Self { dir }
    }

    fn field(&self, file: &str, names: &[&str], axes: Vec<Axis>, f: impl FnMut(&Point, &mut [f64])) -> String {
        let mut field = SampledField::sample(axes, names.len(), f).expect("sample");
        field.set_names(names.iter().map(|s| s.to_string()).collect());
        let mass = file.starts_with("sigma") || file.starts_with("nu");
        let text = write_columnar_with(&field, &|r| match r {
            AxisRole::Space(0) if mass => "m".into(),
            r => r.label(),
        });
        std::fs::write(self.dir.join(file), text).expect("write field");
        file.into()
    }

    /// Parses the skeleton, splices in `params` if given, validates, and
    /// writes the canonical form.
    fn finish(&self, skeleton: &str, params: Option<&MicrophysicsParams>) {
        let mut table: toml::Table = skeleton.parse().expect("skeleton parses");
        if let Some(p) = params {
            let sys = table.get_mut("system").and_then(|s| s.as_table_mut()).expect("system table");
            sys.insert("params".into(), toml::Value::try_from(p).expect("params serialize"));
        }
        let text = toml::to_string(&table).expect("serialize");
        let sc = parse_scenario(&text, &self.dir).unwrap_or_else(|e| panic!("{}: {e}", self.dir.display()));
        std::fs::write(self.dir.join("scenario.toml"), emit(&sc.config)).expect("write scenario");
        println!("wrote {}", self.dir.display());
    }
}

fn x(k: usize, n: usize) -> Axis {
    Axis::uniform(AxisRole::Space(k), 0.0, 1.0, n)
}

fn t_axis(n: usize) -> Axis {
    Axis::uniform(AxisRole::Time, 0.0, 1.0, n)
}

fn d1_linear(root: &Path) {
    let d = Demo::new(root, "d1_linear");
    let v = d.field("v.txt", &["v1"], vec![x(0, 401)], |p, o| o[0] = 0.6 * (PI * p.x[0]).sin());
    let y0 = d.field("y0.txt", &["y_init"], vec![x(0, 401)], |p, o| o[0] = (2.0 * PI * p.x[0]).cos());
    let wi = d.field("w_initial.txt", &["w_init"], vec![x(0, 401)], |p, o| {
        o[0] = 0.5 + 0.5 * (PI * p.x[0]).sin()
    });
    let wt = d.field("w_top.txt", &["w_top"], vec![t_axis(401)], |p, o| o[0] = 0.5 + 0.5 * (PI * p.t).sin());
    d.finish(
        &format!(
            r#"
name = "d1_linear"
[domain]
d = 1
t1 = 1.0
[solver]
grid_dt = 0.05
horizon = 0.5
grid = [{{ lo = 0.0, hi = 1.0, n = 21 }}]
[checks]
oracle_levels = 3
[system]
kind = "generic"
v = ["{v}"]
u = [[-1.0]]
y0 = ["{y0}"]
w_star = [{{ initial = "{wi}", top = "{wt}" }}]
f = [{{ kind = "linear", cy = [-0.5], cw = [0.3] }}]
g = [{{ kind = "linear", c0 = 0.1, cy = [0.2], cw = [-0.3] }}]
"#
        ),
        None,
    );
}

fn d1_coupled(root: &Path) {
    let d = Demo::new(root, "d1_coupled");
    let v = d.field("v.txt", &["v1"], vec![x(0, 401)], |p, o| {
        o[0] = 0.5 * (PI * p.x[0]).sin() * (1.0 + 0.3 * p.x[0])
    });
    let u = d.field("u.txt", &["u1"], vec![t_axis(101), x(0, 101)], |p, o| {
        o[0] = -1.0 - 0.3 * p.x[0] * (1.0 + 0.5 * p.t)
    });
    let y0 = d.field("y0.txt", &["y_init"], vec![x(0, 401)], |p, o| o[0] = 0.8 * (PI * p.x[0]).sin());
    let wi = d.field("w_initial.txt", &["w_init"], vec![x(0, 401)], |p, o| o[0] = 0.4 * (2.0 * PI * p.x[0]).cos());
    let wt = d.field("w_top.txt", &["w_top"], vec![t_axis(401)], |p, o| o[0] = 0.4 + 0.3 * (2.0 * PI * p.t).sin());
    let yw = || {
        vec![
            Axis::uniform(AxisRole::Y(0), -3.0, 3.0, 121),
            Axis::uniform(AxisRole::W(0), -3.0, 3.0, 121),
        ]
    };
    let f = d.field("f.txt", &["f1"], yw(), |p, o| o[0] = 0.6 * p.w[0].sin() - 0.4 * p.y[0]);
    let g = d.field("g.txt", &["g1"], yw(), |p, o| o[0] = 0.5 * (p.y[0] - p.w[0]).tanh());
    d.finish(
        &format!(
            r#"
name = "d1_coupled"
[domain]
d = 1
t1 = 1.0
[solver]
grid_dt = 0.05
horizon = 0.5
grid = [{{ lo = 0.0, hi = 1.0, n = 21 }}]
[checks]
oracle_levels = 3
[system]
kind = "generic"
v = ["{v}"]
u = ["{u}"]
y0 = ["{y0}"]
w_star = [{{ initial = "{wi}", top = "{wt}" }}]
f = [{{ kind = "sampled", field = "{f}" }}]
g = [{{ kind = "sampled", field = "{g}" }}]
"#
        ),
        None,
    );
}

fn d2_periodic(root: &Path) {
    let d = Demo::new(root, "d2_periodic");
    let tx = || vec![x(0, 65), x(1, 65)];
    let v = d.field("v.txt", &["v1", "v2"], tx(), |p, o| {
        o[0] = 0.5 + 0.2 * (2.0 * PI * p.x[1]).cos();
        o[1] = 0.3 * (PI * p.x[1]).sin() * (2.0 * PI * p.x[0]).cos();
    });
    let u = d.field(
        "u.txt",
        &["u1", "u2"],
        vec![x(0, 65), Axis::uniform(AxisRole::Y(0), -3.0, 3.0, 61)],
        |p, o| {
            o[0] = -0.4 + 0.15 * p.y[0].sin();
            o[1] = -1.0 - 0.2 * (2.0 * PI * p.x[0]).cos();
        },
    );
    let y0 = d.field("y0.txt", &["y_init"], tx(), |p, o| {
        o[0] = (2.0 * PI * p.x[0]).sin() * (PI * p.x[1]).cos()
    });
    let wi = d.field("w_initial.txt", &["w_init"], tx(), |p, o| {
        o[0] = 0.5 * (2.0 * PI * p.x[0]).cos() * (PI * p.x[1]).sin()
    });
    let wt = d.field("w_top.txt", &["w_top"], vec![t_axis(201), x(0, 65)], |p, o| {
        o[0] = 0.3 * (PI * p.t).sin() * (1.0 + (2.0 * PI * p.x[0]).cos())
    });
    d.finish(
        &format!(
            r#"
name = "d2_periodic"
[domain]
d = 2
t1 = 1.0
window_lo = [0.0]
window_hi = [1.0]
[solver]
grid_dt = 0.05
horizon = 0.3
grid = [{{ lo = 0.0, hi = 1.0, n = 33 }}, {{ lo = 0.0, hi = 1.0, n = 33 }}]
[checks]
oracle_levels = 3
[system]
kind = "generic"
v = ["{v}"]
u = ["{u}"]
y0 = ["{y0}"]
w_star = [{{ initial = "{wi}", top = "{wt}" }}]
f = [{{ kind = "linear", cy = [-0.3], cw = [0.5] }}]
g = [{{ kind = "linear", cy = [0.4], cw = [-0.2] }}]
"#
        ),
        None,
    );
}

fn manufactured(root: &Path) {
    let d = Demo::new(root, "manufactured");
    d.finish(
        r#"
name = "manufactured"
[domain]
d = 1
t1 = 1.0
[solver]
grid_dt = 0.1
max_dt = 1e-3
slab_guess = 0.1
horizon = 0.5
grid = [{ lo = 0.0, hi = 1.0, n = 11 }]
[system]
kind = "manufactured"
grids = [11, 21, 41, 81]
"#,
        None,
    );
}

fn hat(lo: f64, hi: f64, height: f64) -> Profile {
    Profile::Hat {
        lo,
        peak: 0.5 * (lo + hi),
        hi,
        height,
    }
}

/// A droplet spectrum on `[m_a, 0.8 M*]` peaking low in the column, and a
/// smaller ice spectrum on the upper half of the mass range.
fn spectra(d: &Demo, liquid: f64, ice: f64) -> (String, String) {
    let axes = || vec![Axis::uniform(AxisRole::Space(0), 0.0, M_STAR, 41), x(1, 21)];
    let shape = |m: f64, lo: f64, hi: f64| {
        if m <= lo || m >= hi {
            0.0
        } else {
            (PI * (m - lo) / (hi - lo)).sin().powi(2)
        }
    };
    let s = d.field("sigma.txt", &["sigma"], axes(), |p, o| {
        o[0] = liquid * shape(p.x[0], M_A, 0.8 * M_STAR) * (1.0 - 0.5 * p.x[1])
    });
    let n = d.field("nu.txt", &["nu"], axes(), |p, o| {
        o[0] = ice * shape(p.x[0], 0.5, 0.9 * M_STAR) * (0.5 + 0.5 * p.x[1])
    });
    (s, n)
}

fn atmosphere_skeleton(name: &str, files: &[(&str, String)], water_budget: Option<f64>) -> String {
    let mut s = format!(
        r#"
name = "{name}"
[domain]
d = 2
t1 = 1.0
window_lo = [0.0]
window_hi = [{M_STAR}]
extension = ["clamp_to_edge"]
[solver]
grid_dt = 0.05
horizon = 0.5
grid = [{{ lo = 0.0, hi = 1.0, n = 11 }}]
[output]
fields = ["y", "w"]
"#
    );
    if let Some(tol) = water_budget {
        s.push_str(&format!("[checks]\nwater_budget = {tol:?}\n"));
    }
    s.push_str("[system]\nkind = \"atmosphere\"\nmass_nodes = 21\n");
    for (k, v) in files {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

fn quoted(s: String) -> String {
    format!("{s:?}")
}

fn column_fields(d: &Demo, sigma: String, nu: String, pi: String) -> Vec<(&'static str, String)> {
    let rho = d.field("rho.txt", &["rho"], vec![x(1, 21)], |p, o| o[0] = 1.2 - 0.3 * p.x[1]);
    let temp = d.field("temperature.txt", &["temperature"], vec![x(1, 21)], |p, o| {
        o[0] = 285.0 - 15.0 * p.x[1]
    });
    vec![
        ("rho", quoted(rho)),
        ("pi", pi),
        ("sigma", quoted(sigma)),
        ("nu", quoted(nu)),
        ("temperature", quoted(temp)),
        ("v", "0.0".into()),
        ("u", "-1.0".into()),
        ("w_vel", "-0.5".into()),
    ]
}

fn atmosphere_vacuum(root: &Path) {
    let d = Demo::new(root, "atmosphere_vacuum");
    let (s, n) = spectra(&d, 1.0, 0.4);
    let pi = d.field("pi.txt", &["pi"], vec![x(1, 21)], |p, o| o[0] = 0.6 + 0.2 * p.x[1]);
    let files = column_fields(&d, s, n, quoted(pi));
    let params = MicrophysicsParams::inert(M_A, BIG_M_A, M_STAR);
    d.finish(&atmosphere_skeleton("atmosphere_vacuum", &files, None), Some(&params));
}

fn atmosphere_condensation(root: &Path) {
    let d = Demo::new(root, "atmosphere_condensation");
    let (s, n) = spectra(&d, 1.0, 0.0);
    let pi = d.field("pi.txt", &["pi"], vec![x(1, 21)], |p, o| o[0] = 1.0 + 0.3 * p.x[1]);
    let files = column_fields(&d, s, n, quoted(pi));
    let mut params = MicrophysicsParams::inert(M_A, BIG_M_A, M_STAR);
    params.sbar_l = hat(M_A, M_STAR, 0.5);
    params.pi_l = Profile::constant(0.8);
    params.pi_s = Profile::constant(10.0);
    params.vapour_exchange = VapourExchange::MassConserving;
    d.finish(
        &atmosphere_skeleton("atmosphere_condensation", &files, Some(1e-4)),
        Some(&params),
    );
}

fn atmosphere_full(root: &Path) {
    let d = Demo::new(root, "atmosphere_full");
    let (s, n) = spectra(&d, 1.0, 0.3);
    let pi = d.field("pi.txt", &["pi"], vec![x(1, 21)], |p, o| o[0] = 0.9 - 0.2 * p.x[1]);
    let na = d.field("n_aero.txt", &["n_aero"], vec![x(1, 21)], |p, o| o[0] = 0.5 * (1.0 - p.x[1]));
    let mut files = column_fields(&d, s, n, quoted(pi));
    files.push(("n_aero", quoted(na)));
    let mut p = MicrophysicsParams::inert(M_A, BIG_M_A, M_STAR);
    p.s_l = hat(M_A, M_STAR, 0.2);
    p.s_s = hat(M_A, M_STAR, 0.1);
    p.sbar_l = hat(M_A, M_STAR, 0.4);
    p.sbar_s = hat(M_A, M_STAR, 0.3);
    p.g_a = hat(M_A, BIG_M_A, 0.5);
    p.g_l = hat(M_A, BIG_M_A, 0.3);
    p.g_s = hat(M_A, BIG_M_A, 0.2);
    p.pi_l = Profile::Exponential {
        scale: 0.8,
        rate: 0.05,
        reference: 280.0,
    };
    p.pi_s = Profile::Exponential {
        scale: 0.7,
        rate: 0.06,
        reference: 280.0,
    };
    p.k_ls = Rate {
        mass: hat(M_A, M_STAR, 0.3),
        temperature: Profile::Hat {
            lo: 250.0,
            peak: 270.0,
            hi: 275.0,
            height: 1.0,
        },
    };
    p.k_sl = Rate {
        mass: hat(M_A, M_STAR, 0.2),
        temperature: Profile::Hat {
            lo: 272.0,
            peak: 285.0,
            hi: 300.0,
            height: 1.0,
        },
    };
    p.beta_l = Kernel::Sum {
        value: 0.3,
        cutoff: Some(M_STAR),
    };
    p.beta_s = Kernel::Constant {
        value: 0.2,
        cutoff: Some(M_STAR),
    };
    p.z_ls = Kernel::Product {
        value: 0.1,
        cutoff: Some(M_STAR),
    };
    p.n_l = hat(M_A, M_STAR, 0.2);
    p.n_s = hat(M_A, M_STAR, 0.1);
    p.vapour_exchange = VapourExchange::MassConserving;
    d.finish(&atmosphere_skeleton("atmosphere_full", &files, None), Some(&p));
}

fn main() {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demos"));
    std::fs::create_dir_all(&root).expect("create demo root");
    let root = root.canonicalize().expect("demo root");
    d1_linear(&root);
    d1_coupled(&root);
    d2_periodic(&root);
    manufactured(&root);
    atmosphere_vacuum(&root);
    atmosphere_condensation(&root);
    atmosphere_full(&root);
}
