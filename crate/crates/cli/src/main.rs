use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cfdbal::balance::{BalanceMode, Lambda};
use cfdbal::estimators::Estimand;
use cfdbal::inference::{CiChoice, SubsampleSize};
use cfdbal::kernels::DensitySpec;
use cfdbal::sim::{Method, Propensity};
use cfdbal_cli::config::{RunConfig, WeightMethod};
use cfdbal_cli::error::{CliError, Result};
use cfdbal_cli::run::{self, write_table, write_weights};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cfdbal", version, about = "Covariate balancing weights by characteristic-function distance")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON or TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file, or directory for `simulate`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Absolute and relative QP tolerance.
    #[arg(long, global = true)]
    qp_eps: Option<f64>,
    #[arg(long, global = true)]
    qp_max_iter: Option<usize>,
    #[arg(long, global = true)]
    qp_polish: Option<bool>,
    /// subsampling, bootstrap, both or none.
    #[arg(long, global = true)]
    ci: Option<CiChoice>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// rule (2.5·√n), auto (minimum volatility) or an integer.
    #[arg(long, global = true)]
    subsample_size: Option<SubsampleSize>,
    /// Subsample and bootstrap draws.
    #[arg(long, global = true)]
    replications: Option<usize>,
    /// Balancing density, e.g. gaussian, laplacian, matern(nu=2.5), energy.
    #[arg(long, global = true)]
    density: Option<DensitySpec>,
    /// three-way or two-way.
    #[arg(long, global = true)]
    mode: Option<BalanceMode>,
    /// Ridge penalty: auto (n⁻²) or a number.
    #[arg(long, global = true)]
    lambda: Option<Lambda>,
    /// ate or late.
    #[arg(long, global = true)]
    estimand: Option<Estimand>,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    outcome: Option<String>,
    /// Treatment indicator, or the instrument for late.
    #[arg(long)]
    treatment: Option<String>,
    /// Treatment receipt column (late only).
    #[arg(long)]
    receipt: Option<String>,
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Covariates to min-max scale; the rest must be 0/1.
    #[arg(long, value_delimiter = ',')]
    continuous: Option<Vec<String>>,
    /// cfd, ipw or uniform.
    #[arg(long)]
    weights: Option<WeightMethod>,
}

#[derive(Subcommand)]
enum Command {
    /// Write balancing weights as CSV and print diagnostics.
    Weights(DataArgs),
    /// Estimate the ATE or LATE with intervals.
    Estimate(DataArgs),
    /// Run the Monte Carlo study.
    Simulate(SimArgs),
    /// Print gram matrix diagnostics for the configured density.
    KernelCheck(DataArgs),
}

#[derive(Args)]
struct SimArgs {
    /// linear or nonlinear propensity.
    #[arg(long)]
    scenario: Option<Propensity>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Methods, e.g. gaussian,energy,ipw.
    #[arg(long)]
    methods: Option<String>,
    /// Monte Carlo draws for the oracle LATE.
    #[arg(long)]
    oracle_draws: Option<usize>,
}

fn apply_global(cfg: &mut RunConfig, g: &Global) {
    if let Some(v) = g.seed {
        cfg.seed = v;
        cfg.study.seed = v;
    }
    if g.threads.is_some() {
        cfg.threads = g.threads;
    }
    if g.out.is_some() {
        cfg.out = g.out.clone();
    }
    for solver in [&mut cfg.solver, &mut cfg.study.solver] {
        if let Some(v) = g.qp_eps {
            solver.eps_abs = v;
            solver.eps_rel = v;
        }
        if let Some(v) = g.qp_max_iter {
            solver.max_iter = v;
        }
        if let Some(v) = g.qp_polish {
            solver.polish = v;
        }
    }
    for inf in [&mut cfg.inference, &mut cfg.study.inference] {
        if let Some(v) = g.ci {
            inf.ci = v;
        }
        if let Some(v) = g.alpha {
            inf.alpha = v;
        }
        if let Some(v) = g.subsample_size {
            inf.subsample_size = v;
        }
        if let Some(v) = g.replications {
            inf.subsample_draws = v;
            inf.bootstrap_draws = v;
        }
    }
    if let Some(v) = &g.density {
        cfg.density = v.clone();
    }
    if let Some(v) = g.mode {
        cfg.mode = v;
        cfg.study.mode = v;
    }
    if let Some(v) = g.lambda {
        cfg.lambda = v;
        cfg.study.lambda = v;
    }
    if let Some(v) = g.estimand {
        cfg.estimand = v;
        cfg.study.estimand = v;
    }
}

fn apply_data(cfg: &mut RunConfig, a: &DataArgs) {
    if a.data.is_some() {
        cfg.data = a.data.clone();
    }
    let c = &mut cfg.columns;
    if let Some(v) = &a.outcome {
        c.outcome = v.clone();
    }
    if let Some(v) = &a.treatment {
        c.treatment = v.clone();
    }
    if a.receipt.is_some() {
        c.receipt = a.receipt.clone();
    }
    if let Some(v) = &a.covariates {
        c.covariates = v.clone();
    }
    if let Some(v) = &a.continuous {
        c.continuous = v.clone();
    }
    if let Some(v) = a.weights {
        cfg.weights = v;
    }
}

/// Split on commas that are not inside parentheses, so that
/// `matern(nu=2.5,gamma=auto),ipw` yields two methods.
fn split_top_level(s: &str) -> Vec<String> {
    let (mut out, mut cur, mut depth) = (Vec::new(), String::new(), 0i32);
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    out.push(cur);
    out.into_iter().map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect()
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    if let Some(p) = out {
        write_file(p, text.as_bytes())?;
    }
    print_stdout(format!("{text}\n").as_bytes())
}

/// Write to stdout, treating a closed reader (e.g. `| head`) as success.
fn print_stdout(bytes: &[u8]) -> Result<()> {
    match io::stdout().lock().write_all(bytes) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(CliError::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_global(&mut cfg, &cli.global);
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Weights(a) => {
            apply_data(&mut cfg, a);
            let (w, report) = run::run_weights(&cfg)?;
            let json = to_json(&report);
            match &cfg.out {
                Some(p) => {
                    let f = fs::File::create(p).map_err(|e| CliError::io(p, e))?;
                    write_weights(&w, f)?;
                    write_file(&p.with_extension("json"), json.as_bytes())?;
                    print_stdout(format!("{json}\n").as_bytes())?;
                }
                None => {
                    write_weights(&w, io::stdout().lock())?;
                    eprintln!("{json}");
                }
            }
        }
        Command::Estimate(a) => {
            apply_data(&mut cfg, a);
            let report = run::run_estimate(&cfg)?;
            emit(&to_json(&report), cfg.out.as_deref())?;
        }
        Command::KernelCheck(a) => {
            apply_data(&mut cfg, a);
            let report = run::kernel_check(&cfg)?;
            emit(&to_json(&report), cfg.out.as_deref())?;
        }
        Command::Simulate(s) => {
            let study = &mut cfg.study;
            if let Some(v) = s.scenario {
                study.propensity = v;
            }
            if let Some(v) = s.reps {
                study.reps = v;
            }
            if let Some(v) = s.oracle_draws {
                study.oracle_draws = v;
            }
            if let Some(ms) = &s.methods {
                study.methods = split_top_level(ms).iter().map(|m| m.parse::<Method>()).collect::<cfdbal::Result<_>>()?;
            }
            if let Some(n) = s.n.first() {
                study.n = *n;
            }
            let results = run::run_simulation(study, &s.n)?;
            let mut table = Vec::new();
            write_table(&results, &mut table)?;
            if let Some(dir) = &cfg.out {
                fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
                write_file(&dir.join("study.csv"), &table)?;
                write_file(&dir.join("study.json"), to_json(&results).as_bytes())?;
            }
            print_stdout(&table)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn,cfdbal::estimators=error")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.report()).expect("error serializes"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
