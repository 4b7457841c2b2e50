use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use stripflow::scenario::{self, load_scenario, verify, Scenario, ScenarioError, Suite};

#[derive(Parser)]
#[command(name = "stripflow", version, about = "Characteristic solver for quasilinear transport on a strip")]
struct Cli {
    /// Output directory (defaults to the scenario's `output.dir`, then
    /// `out/<name>` next to the scenario file).
    #[arg(long, global = true, env = "STRIPFLOW_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed of the randomized suites.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario, run its checks and write outputs.
    Run { config: PathBuf },
    /// Trace the backward characteristics of every equation through a point.
    Trace {
        config: PathBuf,
        #[arg(long)]
        t0: f64,
        #[arg(long, num_args = 1.., value_delimiter = ',', allow_negative_numbers = true)]
        x0: Vec<f64>,
    },
    /// Compare against upwind finite differences, with a negative control.
    OracleCompare {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Run a randomized invariant suite.
    Verify {
        suite: Suite,
        /// Number of random instances (suite default if omitted).
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn out_dir(cli_out: &Option<PathBuf>, sc: &Scenario) -> PathBuf {
    if let Some(p) = cli_out {
        return p.clone();
    }
    match &sc.config.output.dir {
        Some(d) => sc.base_dir.join(d),
        None => sc.base_dir.join("out").join(&sc.config.name),
    }
}

fn save(dir: &Path, name: &str, text: &str) -> Result<(), ScenarioError> {
    std::fs::create_dir_all(dir).map_err(|e| ScenarioError::Io(e.to_string()))?;
    std::fs::write(dir.join(name), text).map_err(|e| ScenarioError::Io(e.to_string()))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn execute(cli: &Cli) -> Result<bool, ScenarioError> {
    match &cli.command {
        Command::Run { config } => {
            let sc = load_scenario(config)?;
            let mut outcome = scenario::run(&sc)?;
            let dir = out_dir(&cli.out, &sc);
            scenario::write_outputs(&sc, &mut outcome, &dir)?;
            let rep = &outcome.report;
            for c in &rep.checks {
                println!(
                    "{} {}: {:e} (threshold {:e})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                );
            }
            println!("{} slabs, outputs in {}", rep.slabs.len(), dir.display());
            Ok(rep.all_pass)
        }
        Command::Trace { config, t0, x0 } => {
            let sc = load_scenario(config)?;
            let rep = scenario::trace(&sc, *t0, x0)?;
            let dir = out_dir(&cli.out, &sc);
            for p in &rep.paths {
                save(&dir, &format!("trace_{}.txt", p.equation), &p.to_text())?;
                println!("{}: tau_minus = {}, entry = {:?}", p.equation, p.tau_minus, p.entry);
            }
            save(&dir, "trace.json", &json(&rep))?;
            Ok(true)
        }
        Command::OracleCompare { config, levels } => {
            let sc = load_scenario(config)?;
            let cmp = scenario::oracle_compare(&sc, *levels)?;
            let dir = out_dir(&cli.out, &sc);
            save(&dir, "oracle.json", &json(&cmp))?;
            for l in &cmp.report.levels {
                println!("h = {}: gap {} (bound {})", l.h, l.gap.linf, l.bound);
            }
            println!("ratios {:?}; control ratios {:?}", cmp.report.ratios, cmp.control.ratios);
            println!("{}", if cmp.pass { "PASS" } else { "FAIL" });
            Ok(cmp.pass)
        }
        Command::Verify { suite, trials } => {
            let rep = verify(*suite, cli.seed, *trials);
            println!("{}", json(&rep).trim_end());
            if let Some(dir) = &cli.out {
                let name = serde_json::to_value(suite).ok().and_then(|v| v.as_str().map(String::from));
                save(dir, &format!("verify_{}.json", name.unwrap_or_default()), &json(&rep))?;
            }
            Ok(rep.pass)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build();
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
