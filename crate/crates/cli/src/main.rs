use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use saddlekit::{
    assemble, eigenvalues_csv, export_system, export_system_2x2, import_system, to_2x2, verify_theorem,
    Approach, AugParams, Direction, Domain, Grid, ImportedSystem, QChoice, Strategy,
};
use saddlekit_cli::{emit, run, CliError, ExperimentSpec, Format, Problem};

#[derive(Parser)]
#[command(name = "bench", version, about = "Saddle-point solver benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep solver configurations and print a result table
    Run(RunArgs),
    /// Write an assembled system as Matrix Market files plus a manifest
    ExportSystem(ExportArgs),
    /// Check the eigenvalue claims for the preconditioned 2x2 operator
    VerifySpectrum(SpectrumArgs),
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    match s {
        "3x3" => Ok(Strategy::ThreeByThree),
        "2x2" => Ok(Strategy::TwoByTwo),
        other => Err(format!("unknown strategy '{other}' (expected 3x3 or 2x2)")),
    }
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    match s {
        "x" => Ok(Direction::X),
        "y" => Ok(Direction::Y),
        other => Err(format!("unknown direction '{other}' (expected x or y)")),
    }
}

fn parse_approach(s: &str) -> Result<Approach, String> {
    match s {
        "independent" => Ok(Approach::Independent),
        "global" => Ok(Approach::Global),
        other => Err(format!(
            "unknown approach '{other}' (expected independent or global)"
        )),
    }
}

fn parse_q(s: &str) -> Result<QChoice, String> {
    match s {
        "identity" => Ok(QChoice::Identity),
        "mass" => Ok(QChoice::PressureMassDiagonal),
        other => Err(format!("unknown weight '{other}' (expected identity or mass)")),
    }
}

fn parse_format(s: &str) -> Result<Format, String> {
    match s {
        "md" => Ok(Format::Markdown),
        "csv" => Ok(Format::Csv),
        other => Err(format!("unknown format '{other}' (expected md or csv)")),
    }
}

#[derive(Args)]
struct RunArgs {
    /// cavity, step, or a path to a system manifest
    #[arg(long, default_value = "cavity")]
    problem: String,
    /// Refinement level, repeatable
    #[arg(long = "level", default_values_t = vec![2u32])]
    levels: Vec<u32>,
    /// Augmentation weight, repeatable
    #[arg(long = "gamma", default_values_t = vec![1e-4, 1e-2])]
    gammas: Vec<f64>,
    /// Preconditioner scaling, repeatable
    #[arg(long = "alpha", default_values_t = vec![10.0])]
    alphas: Vec<f64>,
    /// Block partitioning: 3x3 or 2x2, repeatable
    #[arg(long = "strategy", value_parser = parse_strategy, default_values = ["3x3"])]
    strategies: Vec<Strategy>,
    /// Divergence block for the inner operator: x or y, repeatable
    #[arg(long = "direction", value_parser = parse_direction, default_values = ["x"])]
    directions: Vec<Direction>,
    /// Inner solve layout: independent or global, repeatable
    #[arg(long = "approach", value_parser = parse_approach, default_values = ["independent", "global"])]
    approaches: Vec<Approach>,
    /// Outer relative residual target
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Outer iteration cap
    #[arg(long, default_value_t = 500)]
    maxit: usize,
    /// Seed for the manufactured solution
    #[arg(long, default_value_t = 1234)]
    seed: u64,
    /// Pressure weight matrix: identity or mass
    #[arg(long = "q", value_parser = parse_q, default_value = "identity")]
    q_choice: QChoice,
    /// Inner PCG relative residual target
    #[arg(long, default_value_t = 1e-6)]
    inner_tol: f64,
    /// Inner PCG iteration cap
    #[arg(long, default_value_t = 100)]
    inner_maxit: usize,
    /// Output format: md or csv
    #[arg(long, value_parser = parse_format, default_value = "md")]
    format: Format,
    /// Write the table here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// cavity or step
    #[arg(long, default_value = "cavity")]
    problem: String,
    #[arg(long, default_value_t = 2)]
    level: u32,
    /// 3x3 exports the split blocks, 2x2 the merged velocity form
    #[arg(long, value_parser = parse_strategy, default_value = "3x3")]
    strategy: Strategy,
    /// Directory for the Matrix Market files and manifest
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    /// cavity, step, or a path to a system manifest
    #[arg(long, default_value = "cavity")]
    problem: String,
    #[arg(long, default_value_t = 2)]
    level: u32,
    #[arg(long, default_value_t = 1e-4)]
    gamma: f64,
    #[arg(long, default_value_t = 10.0)]
    alpha: f64,
    /// Pressure weight matrix: identity or mass
    #[arg(long = "q", value_parser = parse_q, default_value = "identity")]
    q_choice: QChoice,
    /// Write the eigenvalues as CSV here
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_or_print(text: &str, out: &Option<PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<u8, CliError> {
    let spec = ExperimentSpec {
        problem: Problem::parse(&args.problem),
        levels: args.levels,
        gammas: args.gammas,
        alphas: args.alphas,
        strategies: args.strategies,
        directions: args.directions,
        approaches: args.approaches,
        tol: args.tol,
        maxit: args.maxit,
        seed: args.seed,
        q_choice: args.q_choice,
        inner_tol: args.inner_tol,
        inner_maxit: args.inner_maxit,
    };
    let table = run(&spec)?;
    write_or_print(&emit(&table, args.format), &args.out)?;
    Ok(if table.all_converged() { 0 } else { 1 })
}

fn cmd_export(args: ExportArgs) -> Result<u8, CliError> {
    let domain = match args.problem.as_str() {
        "cavity" => Domain::Cavity,
        "step" => Domain::Channel,
        other => return Err(CliError::BadSpec(format!("cannot export '{other}'"))),
    };
    let sys = assemble(&Grid::new(domain, args.level)?)?;
    let manifest = match args.strategy {
        Strategy::ThreeByThree => export_system(&sys, &args.out)?,
        Strategy::TwoByTwo => export_system_2x2(&to_2x2(&sys), &args.out)?,
    };
    println!("{}", manifest.display());
    Ok(0)
}

fn cmd_spectrum(args: SpectrumArgs) -> Result<u8, CliError> {
    let sys = match Problem::parse(&args.problem) {
        Problem::Cavity => to_2x2(&assemble(&Grid::new(Domain::Cavity, args.level)?)?),
        Problem::Step => to_2x2(&assemble(&Grid::new(Domain::Channel, args.level)?)?),
        Problem::Manifest(path) => match import_system(&path)? {
            ImportedSystem::ThreeByThree(s) => to_2x2(&s),
            ImportedSystem::TwoByTwo(s) => s,
        },
    };
    let params = AugParams {
        gamma: args.gamma,
        alpha: args.alpha,
        q_choice: args.q_choice,
        ..AugParams::default()
    };
    let report = verify_theorem(&sys, &params)?;

    let real = report.max_imag <= 1e-8 * report.max_abs;
    let positive = report.min_real > 0.0;
    let mult_floor = report.n_u - report.n_p;
    let mult_ok = report.multiplicity_one >= mult_floor;
    let cap = report.n_p + 1;
    let quad_max = report
        .a_q_samples
        .iter()
        .map(|s| s.residual)
        .fold(0.0, f64::max);

    println!(
        "{}: n_u={} n_p={} gamma={:.0e} alpha={:.0e}",
        sys.label, report.n_u, report.n_p, args.gamma, args.alpha
    );
    let flag = |ok: bool| if ok { "ok" } else { "VIOLATED" };
    println!(
        "reality      max|Im| = {:.2e} vs 1e-8*max|lambda| = {:.2e}  [{}]",
        report.max_imag,
        1e-8 * report.max_abs,
        flag(real)
    );
    println!(
        "positivity   min Re = {:.6} > 0  [{}]",
        report.min_real,
        flag(positive)
    );
    println!(
        "bounds       [{:.6}, {:.6}] (sharp lower {:.6}) on non-unit eigenvalues  [{}]",
        report.lambda1_bound,
        report.lambda2_bound,
        report.lambda1_sharp,
        flag(report.bounds_hold)
    );
    println!(
        "multiplicity cluster at 1 holds {} eigenvalues, needs >= {}  [{}]",
        report.multiplicity_one,
        mult_floor,
        flag(mult_ok)
    );
    println!(
        "clusters     {} distinct at tau=1e-6 (cap n_p+1 = {})  [{}]",
        report.distinct_count,
        cap,
        flag(report.distinct_count <= cap)
    );
    println!("quadratic    max |lambda^2 - b lambda + c| = {quad_max:.2e}");

    if let Some(path) = &args.out {
        std::fs::write(path, eigenvalues_csv(&report))?;
    }
    Ok(if real && positive && report.bounds_hold && mult_ok {
        0
    } else {
        1
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::ExportSystem(args) => cmd_export(args),
        Command::VerifySpectrum(args) => cmd_spectrum(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
