//! The `gne` command line: `simulate`, `check`, `oracle` and `sweep`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::analysis::{
    check_double_integrator_conditions, check_chain_conditions, estimate_monotonicity, estimator_abscissa, kkt_report_pair, oracle_gne_with,
    KktReport, OracleOptions,
};
use crate::config::{BuiltScenario, ScenarioConfig};
use crate::dynamics::AgentDynamics;
use crate::report::{write_report, write_trajectory_csv, CheckSummary, OracleSummary, SimulationSummary};
use crate::sim::{integrate, SimError, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_ORACLE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "gne", version, about = "Distributed equilibrium seeking for aggregative games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Seed for sampling-based estimates and the oracle start.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the closed loop and write the trajectory CSV and final residuals.
    Simulate(CommonArgs),
    /// Evaluate graph, monotonicity and gain conditions.
    Check(CommonArgs),
    /// Solve for the equilibrium directly.
    Oracle(CommonArgs),
    /// Simulate once per grid value of a parameter, e.g. `rule.alpha 0.5,1,2` or `rule.alpha 1:5:9`.
    Sweep {
        param: String,
        grid: String,
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Failure with its process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::new(EXIT_CONFIG, format!("output error: {e}"))
}

fn load(args: &CommonArgs) -> Result<ScenarioConfig, CliError> {
    ScenarioConfig::load(&args.config).map_err(|e| CliError::new(EXIT_CONFIG, format!("{}: {e}", args.config.display())))
}

fn build(cfg: &ScenarioConfig) -> Result<BuiltScenario, CliError> {
    cfg.build().map_err(|e| CliError::new(EXIT_VALIDATION, e.to_string()))
}

/// Parses `a,b,c` or `start:stop:count` (inclusive, evenly spaced).
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number"));
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.as_slice() {
        [a, b, c] => {
            let (a, b) = (num(a)?, num(b)?);
            let count: usize = c.trim().parse().map_err(|_| format!("`{c}` is not a count"))?;
            match count {
                0 => return Err("grid count must be positive".into()),
                1 => vec![a],
                _ => (0..count).map(|k| a + (b - a) * k as f64 / (count - 1) as f64).collect(),
            }
        }
        [_] => s.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(format!("cannot parse grid `{s}`")),
    };
    if grid.is_empty() {
        return Err("empty grid".into());
    }
    Ok(grid)
}

/// Outcome of one integration.
#[derive(Debug)]
pub struct SimulationRun {
    pub built: BuiltScenario,
    pub trajectory: Trajectory<KktReport>,
    pub diverged: bool,
}

pub fn run_simulation(cfg: &ScenarioConfig) -> Result<SimulationRun, CliError> {
    let built = build(cfg)?;
    match integrate(&built.closed_loop, built.initial.as_slice(), &built.integrator) {
        Ok(trajectory) => Ok(SimulationRun { built, trajectory, diverged: false }),
        Err(SimError::Diverged { partial, .. }) => Ok(SimulationRun { built, trajectory: *partial, diverged: true }),
        Err(e) => Err(CliError::new(EXIT_VALIDATION, e.to_string())),
    }
}

fn write_csv(path: &Path, run: &SimulationRun) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let file = fs::File::create(path).map_err(io_err)?;
    write_trajectory_csv(&run.built.closed_loop, &run.trajectory, std::io::BufWriter::new(file)).map_err(io_err)
}

fn simulate(args: &CommonArgs) -> Result<String, CliError> {
    let cfg = load(args)?;
    let run = run_simulation(&cfg)?;
    let csv_path = args.out.join(&cfg.outputs.trajectory);
    write_csv(&csv_path, &run)?;
    let summary = SimulationSummary::new(&cfg.name, &run.built.closed_loop, &run.trajectory, run.diverged);
    write_report(&args.out, &cfg.outputs.report, &summary).map_err(io_err)?;
    if run.diverged {
        return Err(CliError::new(
            EXIT_DIVERGED,
            format!("integration diverged at t = {}; partial trajectory in {}", summary.final_time, csv_path.display()),
        ));
    }
    Ok(format!("{summary}\ntrajectory written to {}", csv_path.display()))
}

pub fn check_summary(cfg: &ScenarioConfig, seed: u64) -> Result<CheckSummary, CliError> {
    let built = build(cfg)?;
    let cl = &built.closed_loop;
    let spectral = cl.graph().spectral_summary();
    let mono = estimate_monotonicity(cl.game(), 1000, seed);
    let agents = cl.agents();
    let double_integrator = if agents.iter().all(|a| matches!(a, AgentDynamics::DoubleIntegrator { .. })) {
        let gains: Vec<f64> = agents
            .iter()
            .map(|a| match a {
                AgentDynamics::DoubleIntegrator { gain } => *gain,
                _ => unreachable!(),
            })
            .collect();
        Some(check_double_integrator_conditions(&spectral, cl.game(), &gains, &cl.params(), &mono))
    } else {
        None
    };
    let chain = if agents.iter().all(|a| a.closed_loop_matrix().is_some()) {
        Some(check_chain_conditions(agents, cl.game(), &cl.params(), &spectral, &mono).map_err(|e| CliError::new(EXIT_VALIDATION, e.to_string()))?)
    } else {
        None
    };
    Ok(CheckSummary {
        scenario: cfg.name.clone(),
        estimator_abscissa: estimator_abscissa(cl.graph()),
        spectral,
        monotonicity: mono,
        coupling_norm: cl.game().block_coupling_norm(),
        double_integrator,
        chain,
    })
}

fn check(args: &CommonArgs) -> Result<String, CliError> {
    let cfg = load(args)?;
    let summary = check_summary(&cfg, args.seed)?;
    write_report(&args.out, "check", &summary).map_err(io_err)?;
    Ok(summary.to_string())
}

fn oracle(args: &CommonArgs) -> Result<String, CliError> {
    let cfg = load(args)?;
    let built = build(&cfg)?;
    let game = built.closed_loop.game();
    let opts = OracleOptions { seed: args.seed, ..OracleOptions::default() };
    let sol = oracle_gne_with(game, &opts).map_err(|e| CliError::new(EXIT_ORACLE, e.to_string()))?;
    let summary = OracleSummary::new(&cfg.name, &sol, kkt_report_pair(game, &sol.y, &sol.mu));
    write_report(&args.out, "oracle", &summary).map_err(io_err)?;
    Ok(summary.to_string())
}

fn sweep(param: &str, grid: &str, args: &CommonArgs) -> Result<String, CliError> {
    let base = load(args)?;
    let values = parse_grid(grid).map_err(|e| CliError::new(EXIT_CONFIG, e))?;
    let configs = values
        .iter()
        .map(|&v| base.with_override(param, v).map_err(|e| CliError::new(EXIT_CONFIG, e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(&args.out).map_err(io_err)?;
    let results: Vec<Result<SimulationRun, CliError>> = configs.par_iter().map(run_simulation).collect();

    let mut summary = csv::Writer::from_writer(Vec::new());
    summary
        .write_record([
            "index",
            param,
            "status",
            "final_time",
            "kkt_stationarity",
            "kkt_feasibility",
            "mu_consensus",
            "eta_tracking",
        ])
        .map_err(io_err)?;
    let mut worst = EXIT_OK;
    for (k, (value, res)) in values.iter().zip(results).enumerate() {
        let mut row = vec![k.to_string(), value.to_string()];
        match res {
            Ok(run) => {
                write_csv(&args.out.join(format!("sweep_{k:03}.csv")), &run)?;
                let rep = run.trajectory.final_residual().copied();
                row.push(if run.diverged { "diverged" } else { "ok" }.into());
                row.push(run.trajectory.final_time().to_string());
                match rep {
                    Some(r) => row.extend([r.stationarity, r.feasibility, r.mu_consensus, r.eta_tracking].map(|x| x.to_string())),
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
                if run.diverged {
                    worst = worst.max(EXIT_DIVERGED);
                }
            }
            Err(e) => {
                row.push(format!("error: {}", e.message));
                row.extend(std::iter::repeat_n(String::new(), 5));
                worst = worst.max(e.code);
            }
        }
        summary.write_record(&row).map_err(io_err)?;
    }
    let table = String::from_utf8(summary.into_inner().map_err(io_err)?).expect("utf-8");
    let path = args.out.join("sweep_summary.csv");
    fs::write(&path, &table).map_err(io_err)?;
    if worst != EXIT_OK {
        return Err(CliError::new(worst, format!("some sweep points failed; see {}\n{table}", path.display())));
    }
    Ok(table)
}

pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Check(a) => check(a),
        Command::Oracle(a) => oracle(a),
        Command::Sweep { param, grid, common } => sweep(param, grid, common),
    }
}

/// Parses arguments, runs, prints, and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(msg) => {
            let _ = writeln!(std::io::stdout(), "{msg}");
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {}", e.message);
            e.code
        }
    }
}
