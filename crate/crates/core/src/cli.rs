//! `clq check|solve|oracle|penalty <file>`.
//!
//! Exit codes: 0 success, 1 a check did not pass, 2 unreadable or invalid
//! problem, 3 uncontrollable, 4 infeasible budgets, 5 numerical failure.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use crate::controllability::{controllability_gramian, kalman_rank};
use crate::dual::{certify, maximize_dual, write_trace_csv};
use crate::error::ClqError;
use crate::model::{validate_spec, LambdaWeights, ProblemSpec};
use crate::options::SolverOptions;
use crate::oracle::{solve_constrained, solve_equality_qp, transcribe};
use crate::par::{self, Execution};
use crate::problem_file::load;
use crate::riccati::solve_penalized;
use crate::synthesis::value_function;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_UNCONTROLLABLE: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

/// Relative gap between the two solution paths accepted by `oracle`.
const ORACLE_GAP: f64 = 0.02;

#[derive(Debug, Parser)]
#[command(name = "clq", version, about = "LQ optimal control with a fixed endpoint and integral quadratic budgets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check controllability on [t0, T].
    Check(Common),
    /// Solve the constrained problem and write trajectory, dual trace and report.
    Solve(Common),
    /// Compare the Riccati path with direct transcription.
    Oracle(Common),
    /// Trace the penalized values V_i against V.
    Penalty(PenaltyArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    pub file: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Terminal standoff.
    #[arg(long = "eps-T")]
    pub eps_t: Option<f64>,
    #[arg(long)]
    pub rtol: Option<f64>,
    #[arg(long)]
    pub atol: Option<f64>,
    #[arg(long = "dual-tol")]
    pub dual_tol: Option<f64>,
    /// Oracle control intervals.
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Terminal miss tolerance, relative to 1 + |y|.
    #[arg(long = "miss-tol")]
    pub miss_tol: Option<f64>,
    /// Run every data-parallel stage sequentially.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct PenaltyArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 10.0, 100.0, 1000.0])]
    pub ladder: Vec<f64>,
    /// Multipliers of the weighted problem; zero by default.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
}

/// Formats with six significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, v)
    } else {
        format!("{v:.5e}")
    }
}

pub fn exit_code(err: &ClqError) -> i32 {
    match err {
        ClqError::Parse(_) | ClqError::InvalidSpec(_) | ClqError::DimensionMismatch(_) => EXIT_PARSE,
        ClqError::SingularGramian { .. } | ClqError::SingularKkt(_) => EXIT_UNCONTROLLABLE,
        ClqError::UnboundedDual { .. } | ClqError::InfeasibleQp(_) => EXIT_INFEASIBLE,
        ClqError::Integrator(_)
        | ClqError::NonPositiveSigma { .. }
        | ClqError::StandoffViolation { .. }
        | ClqError::IllConditioned { .. }
        | ClqError::StandoffMiss { .. }
        | ClqError::EmptyTrajectory => EXIT_NUMERICAL,
        ClqError::MaxIterExceeded { .. } | ClqError::Io(_) => EXIT_CHECK_FAILED,
    }
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join(name))
}

fn options(common: &Common, file_solver: &crate::problem_file::Solver) -> SolverOptions {
    let mut opts = file_solver.apply(SolverOptions::default());
    opts.eps_t = common.eps_t.or(opts.eps_t);
    opts.rtol = common.rtol.unwrap_or(opts.rtol);
    opts.atol = common.atol.unwrap_or(opts.atol);
    opts.dual_tol = common.dual_tol.unwrap_or(opts.dual_tol);
    opts.n_oracle = common.n.unwrap_or(opts.n_oracle);
    opts.miss_tol = common.miss_tol.unwrap_or(opts.miss_tol);
    if common.sequential {
        opts.execution = Execution::Sequential;
    }
    opts
}

type CmdResult = Result<i32, ClqError>;

fn load_valid(common: &Common) -> Result<(ProblemSpec, SolverOptions), ClqError> {
    let (spec, file) = load(&common.file)?;
    spec.ensure_valid()?;
    let opts = options(common, &file.solver);
    Ok((spec, opts))
}

fn require_controllable(spec: &ProblemSpec, opts: &SolverOptions) -> Result<(), ClqError> {
    let gram = controllability_gramian(spec, spec.t0(), spec.horizon(), opts)?;
    if gram.is_controllable() {
        Ok(())
    } else {
        Err(ClqError::SingularGramian {
            min_eig: gram.min_eig,
            tol: gram.tolerance(),
        })
    }
}

fn cmd_check(common: &Common, out: &mut dyn Write) -> CmdResult {
    let (spec, file) = load(&common.file)?;
    let opts = options(common, &file.solver);
    let report = validate_spec(&spec);
    for issue in &report.issues {
        writeln!(out, "invalid: {issue}")?;
    }
    let gram = controllability_gramian(&spec, spec.t0(), spec.horizon(), &opts)?;
    let mut line = format!("min_eig={} tol={}", sig6(gram.min_eig), sig6(gram.tolerance()));
    if spec.a().is_constant() && spec.b().is_constant() {
        let rank = kalman_rank(&spec.a().values()[0], &spec.b().values()[0]);
        line.push_str(&format!(" rank={rank}/{}", spec.n()));
    }
    let controllable = gram.is_controllable();
    line.push_str(if controllable { " controllable" } else { " uncontrollable" });
    writeln!(out, "{line}")?;
    Ok(if !report.is_empty() {
        EXIT_PARSE
    } else if controllable {
        EXIT_OK
    } else {
        EXIT_UNCONTROLLABLE
    })
}

fn cmd_solve(common: &Common, out: &mut dyn Write) -> CmdResult {
    let (spec, opts) = load_valid(common)?;
    require_controllable(&spec, &opts)?;
    let result = maximize_dual(&spec, &opts, None)?;
    let cert = certify(&result, &spec, &opts);

    let mut traj_csv = Vec::new();
    result.primal_traj.write_csv(&mut traj_csv)?;
    let mut trace_csv = Vec::new();
    write_trace_csv(&result.trace, spec.k(), &mut trace_csv)?;

    let mut report = String::new();
    let mut line = |k: &str, v: String| report.push_str(&format!("{k}={v}\n"));
    line("status", if cert.passed() { "certified" } else { "not_certified" }.into());
    for (i, l) in result.lam_star.as_slice().iter().enumerate() {
        line(&format!("lambda_{}", i + 1), sig6(*l));
    }
    line("phi", sig6(result.dual_value));
    for (i, j) in result.primal_traj.functionals.iter().enumerate() {
        line(&format!("J_{i}"), sig6(*j));
    }
    for (i, (s, r)) in cert.slack.iter().zip(&cert.cs_residuals).enumerate() {
        line(&format!("slack_{}", i + 1), sig6(*s));
        line(&format!("cs_residual_{}", i + 1), sig6(*r));
    }
    line("duality_gap", sig6(cert.gap));
    line("terminal_miss", sig6(cert.terminal_miss));
    line("standoff_gap", sig6(result.primal_traj.standoff_gap));
    line("kkt_residual", sig6(result.kkt_residual));
    line("iterations", result.iterations.to_string());
    if let Some(f) = result.neighbor_grad_norm {
        line("neighbor_grad_norm", sig6(f));
    }

    write_atomic(&common.out, "trajectory.csv", &traj_csv)?;
    write_atomic(&common.out, "dual_trace.csv", &trace_csv)?;
    write_atomic(&common.out, "report.txt", report.as_bytes())?;
    out.write_all(report.as_bytes())?;
    Ok(if cert.passed() { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_oracle(common: &Common, out: &mut dyn Write) -> CmdResult {
    let (spec, opts) = load_valid(common)?;
    let tr = transcribe(&spec, opts.n_oracle, &opts)?;
    let (oracle_value, oracle_lam) = if spec.k() == 0 {
        (solve_equality_qp(&tr, &[])?.value, vec![])
    } else {
        let sol = solve_constrained(&tr, &opts)?;
        (sol.value(), sol.lam_star)
    };
    require_controllable(&spec, &opts)?;
    let result = maximize_dual(&spec, &opts, None)?;
    let lam = result.lam_star.as_slice();
    let riccati_value = result.dual_value + lam.iter().zip(spec.bounds()).map(|(l, c)| l * c).sum::<f64>();
    let gap = (oracle_value - riccati_value).abs() / riccati_value.abs().max(f64::MIN_POSITIVE);
    writeln!(out, "N={}", opts.n_oracle)?;
    writeln!(out, "riccati_value={}", sig6(riccati_value))?;
    writeln!(out, "oracle_value={}", sig6(oracle_value))?;
    writeln!(out, "relative_gap={}", sig6(gap))?;
    for (i, (a, b)) in lam.iter().zip(&oracle_lam).enumerate() {
        writeln!(out, "lambda_{}: riccati={} oracle={} gap={}", i + 1, sig6(*a), sig6(*b), sig6((a - b).abs()))?;
    }
    let ok = gap <= ORACLE_GAP || (riccati_value == 0.0 && oracle_value.abs() < 1e-12);
    Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_penalty(args: &PenaltyArgs, out: &mut dyn Write) -> CmdResult {
    let (spec, opts) = load_valid(&args.common)?;
    require_controllable(&spec, &opts)?;
    let lam = LambdaWeights::new(args.lambda.clone().unwrap_or_else(|| vec![0.0; spec.k()]))?;
    if lam.len() != spec.k() {
        return Err(ClqError::DimensionMismatch(format!(
            "--lambda has {} entries for {} constraints",
            lam.len(),
            spec.k()
        )));
    }
    let v = value_function(&spec, &lam, &opts)?;
    let y: DVector<f64> = spec.y().clone();
    let values = par::try_map(opts.execution, &args.ladder, |&w| {
        solve_penalized(&spec, &lam, w, &y, &opts).map(|p| p.value(spec.t0(), spec.x()))
    })?;

    let mut csv = String::from("i,V_i,V,gap\n");
    for (w, vi) in args.ladder.iter().zip(&values) {
        csv.push_str(&format!("{w},{vi},{v},{}\n", v - vi));
    }
    write_atomic(&args.common.out, "penalty.csv", csv.as_bytes())?;

    let slack = 1e-9 * (1.0 + v.abs());
    let monotone = values.windows(2).all(|w| w[1] >= w[0] - slack);
    let below = values.iter().all(|vi| v - vi >= -slack);
    for (w, vi) in args.ladder.iter().zip(&values) {
        writeln!(out, "i={} V_i={} gap={}", sig6(*w), sig6(*vi), sig6(v - vi))?;
    }
    writeln!(out, "V={} monotone={monotone} nonnegative_gap={below}", sig6(v))?;
    Ok(if monotone && below { EXIT_OK } else { EXIT_CHECK_FAILED })
}

/// Runs a parsed command, printing results to `out` and errors to `err`.
pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Check(c) => cmd_check(c, out),
        Command::Solve(c) => cmd_solve(c, out),
        Command::Oracle(c) => cmd_oracle(c, out),
        Command::Penalty(p) => cmd_penalty(p, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli, out, err),
        Err(e) => {
            let _ = write!(err, "{e}");
            match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_PARSE,
            }
        }
    }
}
