//! `monospline`: fit monotone smoothing splines from the command line.

mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use monospline::fixture;
use monospline::problem::{EqualityConstraint, QpProblem, DEFAULT_GRID_CAP, DEFAULT_PROBE_POINTS};
use monospline::qpsolve::{solve, SolveStatus, SolverOptions};
use monospline::spline::{
    prepare, solve_prepared, violation_intervals, BoxBound, FitOptions, Mode, DEFAULT_VERIFY_MULTIPLIER,
};
use monospline::Error;

const EXIT_INPUT: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "monospline",
    version,
    about = "Monotone smoothing splines generated by SISO linear systems"
)]
#[command(args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a quadratic program stored as JSON.
    SolveQp(SolveQpArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Proposed,
    Conventional,
}

#[derive(Args)]
struct FitArgs {
    /// Built-in example data set and system.
    #[arg(long, value_name = "NAME", conflicts_with_all = ["data", "system_tf", "system_ss"])]
    fixture: Option<String>,
    /// Transfer function "NUM,DEN", coefficients space-separated in descending powers.
    #[arg(long, value_name = "NUM,DEN", conflicts_with = "system_ss")]
    system_tf: Option<String>,
    /// JSON file with fields a (rows), b and c.
    #[arg(long, value_name = "FILE")]
    system_ss: Option<PathBuf>,
    /// CSV with header t,alpha[,w].
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Smoothing weight on ∫u².
    #[arg(long, value_parser = input::parse_positive)]
    lambda: Option<f64>,
    /// Weight for data rows without a w column.
    #[arg(long, default_value_t = 1.0, value_parser = input::parse_positive)]
    weight: f64,
    /// Margin on ẏ over the grid; chosen from the data when omitted.
    #[arg(long, value_parser = input::parse_positive)]
    epsilon: Option<f64>,
    /// Box bound on the parameters, a number or "auto".
    #[arg(long, value_name = "X|auto", value_parser = input::parse_box)]
    r: Option<BoxBound>,
    #[arg(long, value_enum, default_value = "proposed")]
    mode: ModeArg,
    /// Equality constraint kind:t:target with kind value or derivative; repeatable.
    #[arg(long = "eq", value_name = "KIND:T:TARGET", value_parser = input::parse_equality)]
    equalities: Vec<EqualityConstraint>,
    /// Probe intervals for the Lipschitz estimate.
    #[arg(long, default_value_t = DEFAULT_PROBE_POINTS)]
    probe_points: usize,
    /// Largest number of grid intervals allowed.
    #[arg(long, default_value_t = DEFAULT_GRID_CAP)]
    grid_cap: usize,
    /// Verification grid refinement over the constraint grid.
    #[arg(long, default_value_t = DEFAULT_VERIFY_MULTIPLIER)]
    verify_multiplier: usize,
    #[arg(long, default_value_t = SolverOptions::default().tol, value_parser = input::parse_positive)]
    tol: f64,
    #[arg(long, default_value_t = SolverOptions::default().max_iter)]
    max_iter: usize,
    /// Number of points in the curve output.
    #[arg(long, default_value_t = 1000)]
    resolution: usize,
    /// Curve samples as CSV t,y,ydot,u.
    #[arg(long, value_name = "FILE")]
    out_curve: Option<PathBuf>,
    /// Run summary as JSON; printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out_summary: Option<PathBuf>,
    /// Verification report as JSON.
    #[arg(long, value_name = "FILE")]
    out_verify: Option<PathBuf>,
    /// The assembled QP as JSON, with every constraint row.
    #[arg(long, value_name = "FILE")]
    out_qp: Option<PathBuf>,
}

#[derive(Args)]
struct SolveQpArgs {
    /// QP as written by --out-qp.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Solution JSON; printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = SolverOptions::default().tol, value_parser = input::parse_positive)]
    tol: f64,
    #[arg(long, default_value_t = SolverOptions::default().max_iter)]
    max_iter: usize,
}

/// Diagnostic plus exit status.
struct Failure {
    code: u8,
    message: String,
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

fn library_error(e: Error) -> Failure {
    let code = match e {
        Error::Infeasible(_) | Error::Unbounded => EXIT_SOLVER,
        _ => EXIT_INPUT,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

struct Loaded {
    system: monospline::kernel::StateSpace,
    data: monospline::problem::DataSet,
    epsilon: Option<f64>,
    r: BoxBound,
}

fn load(args: &FitArgs) -> Result<Loaded, Failure> {
    if let Some(name) = &args.fixture {
        let fx = fixture::load(name).map_err(|e| input_error(format!("--fixture: {e}")))?;
        let data = match args.lambda {
            Some(lambda) => monospline::problem::DataSet::new(
                fx.data.times().to_vec(),
                fx.data.values().to_vec(),
                fx.data.weights().to_vec(),
                lambda,
            )
            .map_err(|e| input_error(format!("--lambda: {e}")))?,
            None => fx.data,
        };
        return Ok(Loaded {
            system: fx.system,
            data,
            epsilon: args.epsilon.or(Some(fx.epsilon)),
            r: args.r.unwrap_or(BoxBound::Fixed(fx.r)),
        });
    }
    let path = args
        .data
        .as_ref()
        .ok_or_else(|| input_error("--data is required unless --fixture is given"))?;
    let lambda = args
        .lambda
        .ok_or_else(|| input_error("--lambda is required with --data"))?;
    let data = input::read_data(path, args.weight, lambda).map_err(input_error)?;
    let horizon = data.horizon();
    let system = match (&args.system_tf, &args.system_ss) {
        (Some(tf), None) => input::system_from_tf(tf, horizon),
        (None, Some(file)) => input::system_from_file(file, horizon),
        _ => Err("one of --system-tf or --system-ss is required with --data".into()),
    }
    .map_err(input_error)?;
    Ok(Loaded {
        system,
        data,
        epsilon: args.epsilon,
        r: args.r.unwrap_or(BoxBound::Auto),
    })
}

fn run_fit(args: &FitArgs) -> Result<u8, Failure> {
    let started = Instant::now();
    if args.resolution < 2 {
        return Err(input_error(format!(
            "--resolution must be at least 2, got {}",
            args.resolution
        )));
    }
    let loaded = load(args)?;
    let opts = FitOptions {
        mode: match args.mode {
            ModeArg::Proposed => Mode::Proposed,
            ModeArg::Conventional => Mode::Conventional,
        },
        epsilon: loaded.epsilon,
        r: loaded.r,
        probe_points: args.probe_points,
        grid_cap: args.grid_cap,
        solver: SolverOptions {
            tol: args.tol,
            max_iter: args.max_iter,
        },
        verify_multiplier: args.verify_multiplier,
        equalities: args.equalities.clone(),
        ..FitOptions::default()
    };

    let prep = prepare(&loaded.system, &loaded.data, &opts).map_err(library_error)?;
    if let Some(path) = &args.out_qp {
        let qp = prep.full_qp().map_err(library_error)?;
        let json = qp.to_json().map_err(library_error)?;
        output::write_text(path, &json)?;
    }
    let sol = solve_prepared(prep, &loaded.data, &opts).map_err(|e| match e {
        Error::Infeasible(_) | Error::Unbounded => library_error(e),
        other => Failure {
            code: EXIT_SOLVER,
            message: other.to_string(),
        },
    })?;
    let violations = violation_intervals(&sol.curve, sol.verification.grid_resolution).map_err(library_error)?;

    let verify_json = output::verification(&sol.verification, &violations);
    let summary = output::summary(&sol, &loaded.data, &opts, verify_json.clone());
    if let Some(path) = &args.out_curve {
        let samples = sol.sample_curve(args.resolution).map_err(library_error)?;
        output::write_curve(path, &samples)?;
    }
    if let Some(path) = &args.out_verify {
        output::write_json(path, &verify_json)?;
    }
    match &args.out_summary {
        Some(path) => output::write_json(path, &summary)?,
        None => println!("{}", output::to_json(&summary)?),
    }
    eprintln!("fit finished in {:.3} s", started.elapsed().as_secs_f64());

    if sol.status != SolveStatus::Optimal {
        eprintln!("error: solver stopped with status {:?}", sol.status);
        return Ok(EXIT_SOLVER);
    }
    if !sol.verification.feasible_everywhere {
        let spans: Vec<String> = violations.iter().map(|(a, b)| format!("[{a:.4}, {b:.4}]")).collect();
        eprintln!(
            "error: ẏ < 0 on {}; minimum {:.6e} at t = {:.6}",
            spans.join(", "),
            sol.verification.min_ydot,
            sol.verification.argmin_t
        );
        return Ok(EXIT_VERIFY);
    }
    Ok(0)
}

fn run_solve_qp(args: &SolveQpArgs) -> Result<u8, Failure> {
    let shown = args.input.display();
    let text = std::fs::read_to_string(&args.input).map_err(|e| input_error(format!("cannot read {shown}: {e}")))?;
    let qp = QpProblem::from_json(&text).map_err(|e| input_error(format!("{shown}: {e}")))?;
    let opts = SolverOptions {
        tol: args.tol,
        max_iter: args.max_iter,
    };
    let sol = solve(&qp, &opts).map_err(|e| input_error(format!("{shown}: {e}")))?;
    let json = output::qp_solution(&qp, &sol);
    match &args.output {
        Some(path) => output::write_json(path, &json)?,
        None => println!("{}", output::to_json(&json)?),
    }
    if sol.status == SolveStatus::Optimal {
        Ok(0)
    } else {
        eprintln!("error: solver stopped with status {:?}", sol.status);
        Ok(EXIT_SOLVER)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with 2 on usage errors, which is reserved for the solver here
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let result = match &cli.command {
        Some(Command::SolveQp(args)) => run_solve_qp(args),
        None => run_fit(&cli.fit),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
