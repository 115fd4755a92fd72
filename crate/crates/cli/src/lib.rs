//! Subcommands of the `aladin` binary: `solve`, `bench` and `trace`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aladin_core::{
    canonical_nearest_minimizer, default_start, iterate_errors, make_canonical, run_solver,
    AladinConfig, MpccOracle, QpccProblem, SolveResult, SolveStatus, SolverKind,
};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

/// Frozen header of the bench CSVs.
pub const BENCH_HEADER: &str = "iter,mu,rho,objective,comp_residual,consensus_residual,local_eq_residual,step_norm,x_error,inner_iters,wall_time_s";
/// Frozen header of the trace CSV.
pub const TRACE_HEADER: &str = "iter,x1,x2,objective,comp_residual";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid input: problem, config or flags.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}

impl From<aladin_core::Error> for CliError {
    fn from(e: aladin_core::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "aladin",
    version,
    about = "ALADIN-β and penalty-barrier solvers for complementarity-constrained programs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one problem and write a JSON summary.
    Solve(SolveArgs),
    /// Run solvers on the canonical problem and write one CSV per solver.
    Bench(BenchArgs),
    /// Write the iterate path of ALADIN-β on the two-dimensional canonical problem.
    Trace(TraceArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON file with `AladinConfig` fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config field, e.g. `--set theta=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> CliResult<AladinConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                AladinConfig::from_json_str(&text)
                    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
            }
            None => AladinConfig::default(),
        };
        for kv in &self.overrides {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Problem JSON file; the canonical problem is used when absent.
    #[arg(long, conflicts_with = "pairs")]
    pub problem: Option<PathBuf>,
    /// Pair count of the canonical problem.
    #[arg(long, default_value_t = 1)]
    pub pairs: usize,
    #[arg(long, default_value = "aladin_beta", value_parser = parse_solver)]
    pub solver: SolverKind,
    /// Comma-separated start point; defaults to unit distance from every bound.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    /// Solvers to run (comma-separated); all four by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_solver)]
    pub solver: Vec<SolverKind>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory for `<solver>.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Start point `x1,x2`; both entries must be positive.
    #[arg(long, value_delimiter = ',', default_value = "1,1")]
    pub start: Vec<f64>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_solver(s: &str) -> Result<SolverKind, String> {
    s.parse::<SolverKind>().map_err(|e| e.to_string())
}

fn load_problem(args: &SolveArgs) -> CliResult<QpccProblem> {
    match &args.problem {
        Some(path) => Ok(QpccProblem::from_json_file(path)?),
        None => Ok(make_canonical(args.pairs)?),
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn exit_for(status: SolveStatus) -> i32 {
    if status == SolveStatus::Converged {
        0
    } else {
        1
    }
}

/// Runs `solve` and returns the process exit code.
pub fn cmd_solve(args: &SolveArgs) -> CliResult<i32> {
    let problem = load_problem(args)?;
    let cfg = args.config.load()?;
    let x0 = args.x0.clone().unwrap_or_else(|| default_start(&problem));
    let result = run_solver(args.solver, &problem, &x0, &cfg)?;
    let x = result.x();
    let summary = json!({
        "solver": args.solver.as_str(),
        "status": result.status.as_str(),
        "final_x": x,
        "objective": problem.eval_f(x),
        "comp_residual": aladin_core::linalg::norm_inf(&problem.eval_g(x)),
        "iterations": result.iterations(),
        "wall_time": result.records.last().map_or(0.0, |r| r.wall_time.as_secs_f64()),
        "error": result.error.as_ref().map(|e| e.to_string()),
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&args.out, &(text + "\n"))?;
    if let Some(e) = &result.error {
        eprintln!("{}: {e}", args.solver);
    }
    Ok(exit_for(result.status))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Bench CSV of one run; `x_error` is measured against the canonical
/// minimizer nearest to the final iterate.
pub fn bench_csv(result: &SolveResult) -> String {
    let reference = canonical_nearest_minimizer(result.x());
    let errors = iterate_errors(result, &reference);
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for (r, err) in result.records.iter().zip(errors) {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{},{},{:e},{:e},{},{:.6}",
            r.k,
            r.mu,
            r.rho,
            r.objective,
            r.comp_residual,
            opt(r.consensus_residual),
            opt(r.local_eq_residual),
            r.step_norm,
            err,
            r.inner_iters,
            r.wall_time.as_secs_f64()
        )
        .expect("writing to a string");
    }
    out
}

/// Runs `bench`. Solver failures are reported on stderr and in the CSVs;
/// the exit code is nonzero only for invalid input or unwritable output.
pub fn cmd_bench(args: &BenchArgs) -> CliResult<i32> {
    let problem = make_canonical(args.pairs)?;
    let cfg = args.config.load()?;
    let solvers = if args.solver.is_empty() {
        SolverKind::ALL.to_vec()
    } else {
        args.solver.clone()
    };
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    let x0 = default_start(&problem);
    for kind in solvers {
        let result = run_solver(kind, &problem, &x0, &cfg)?;
        eprintln!(
            "{kind}: {} after {} iterations{}",
            result.status.as_str(),
            result.iterations(),
            result
                .error
                .as_ref()
                .map(|e| format!(" ({e})"))
                .unwrap_or_default()
        );
        write_file(&args.out.join(format!("{kind}.csv")), &bench_csv(&result))?;
    }
    Ok(0)
}

/// Trace CSV: the start point as iteration 0, then every iterate.
pub fn trace_csv(problem: &QpccProblem, start: &[f64], result: &SolveResult) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    let rows = std::iter::once(start).chain(result.iterates.iter().map(Vec::as_slice));
    for (k, x) in rows.enumerate() {
        let comp = aladin_core::linalg::norm_inf(&problem.eval_g(x));
        writeln!(
            out,
            "{k},{:e},{:e},{:e},{comp:e}",
            x[0],
            x[1],
            problem.eval_f(x)
        )
        .expect("writing to a string");
    }
    out
}

/// Runs `trace` with ALADIN-β and returns the process exit code.
pub fn cmd_trace(args: &TraceArgs) -> CliResult<i32> {
    if args.start.len() != 2 || args.start.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(CliError::Input(format!(
            "--start needs two positive entries, got {:?}",
            args.start
        )));
    }
    let problem = make_canonical(1)?;
    let cfg = args.config.load()?;
    let result = run_solver(SolverKind::AladinBeta, &problem, &args.start, &cfg)?;
    write_file(&args.out, &trace_csv(&problem, &args.start, &result))?;
    if let Some(e) = &result.error {
        eprintln!("aladin_beta: {e}");
    }
    Ok(exit_for(result.status))
}

pub fn run(cli: &Cli) -> CliResult<i32> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Trace(a) => cmd_trace(a),
    }
}
