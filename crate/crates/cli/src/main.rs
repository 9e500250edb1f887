//! Command-line front end for the congested transport library.
//!
//! Four subcommands cover the workflow: `solve` a problem file into a
//! solution file, `decompose` a solved flux into a path bundle, `norm` a
//! source two independent ways, and `dipole` for the separation/refinement
//! scaling sweep. Exit status 0 means converged or verified; anything else
//! comes with a diagnostic on stderr. Files are the JSON documents from
//! `beckmann_core::formats`.

use beckmann_core::formats::{
    read_json, read_problem, write_paths, write_solution, FormatError, SolutionFile,
};
use beckmann_core::{
    decompose, primal_energy, scaling_experiment, sobolev_dual_norm, solve, wardrop_energy,
    BeckmannError, DipoleError, NormMethod, PathsError, ScalingReport,
};
use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Solve(#[from] BeckmannError),
    #[error(transparent)]
    Paths(#[from] PathsError),
    #[error(transparent)]
    Dipole(#[from] DipoleError),
    #[error("{flag}: {message}")]
    Flag { flag: &'static str, message: String },
}

fn bad_flag(flag: &'static str, message: impl Into<String>) -> CliError {
    CliError::Flag {
        flag,
        message: message.into(),
    }
}

#[derive(Parser)]
#[command(
    name = "beckmann",
    version,
    about = "Congested optimal transport on regular grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    /// p-norm of the optimal flux.
    MinFlux,
    /// Rescaled optimal dual value; no flux needed.
    DualFormula,
    /// Both, plus their relative disagreement.
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem file and write the solution file.
    ///
    /// The solution is written even when the solver stops unconverged; the
    /// exit status tells the two apart.
    Solve {
        /// Problem file to read.
        problem: PathBuf,
        /// Solution file to write.
        out: PathBuf,
        /// Relative duality-gap and divergence target.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Iteration budget across all descent phases.
        #[arg(long, default_value_t = 50_000)]
        max_iters: usize,
    },
    /// Split a solved flux into weighted source-to-sink paths.
    ///
    /// Writes the path bundle and prints how faithfully it reproduces the
    /// flux, the source, and the primal energy. A cyclic flux is an error;
    /// rerun after cycle cancellation.
    Decompose {
        /// Solution file holding the flux.
        solution: PathBuf,
        /// Problem file the solution belongs to.
        problem: PathBuf,
        /// Paths file to write.
        out: PathBuf,
        /// Noise threshold for residual flux; defaults to
        /// 1e-9 * (1 + max |flux|).
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Dual Sobolev norm of a problem's source, one or both ways.
    Norm {
        /// Problem file whose source is measured.
        problem: PathBuf,
        /// Norm exponent; must exceed 1.
        #[arg(long)]
        p: f64,
        /// How to compute it.
        #[arg(long, value_enum, default_value_t = Method::Both)]
        method: Method,
    },
    /// Dipole separation/refinement sweep with the fitted scaling slope.
    Dipole {
        /// Spatial dimension of the experiment.
        #[arg(long = "N", value_name = "DIM")]
        dim: usize,
        /// Norm exponent; must exceed 1.
        #[arg(long)]
        p: f64,
        /// Dipole separations, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        separations: Vec<f64>,
        /// Grid resolutions (cells per unit length), comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        refinements: Vec<usize>,
        /// Table file to write (comment header plus CSV columns).
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Solve {
            problem,
            out,
            tol,
            max_iters,
        } => cmd_solve(&problem, &out, tol, max_iters),
        Command::Decompose {
            solution,
            problem,
            out,
            eps,
        } => cmd_decompose(&solution, &problem, &out, eps),
        Command::Norm { problem, p, method } => cmd_norm(&problem, p, method),
        Command::Dipole {
            dim,
            p,
            separations,
            refinements,
            out,
        } => cmd_dipole(dim, p, &separations, &refinements, &out),
    }
}

fn cmd_solve(
    problem_path: &Path,
    out: &Path,
    tol: f64,
    max_iters: usize,
) -> Result<ExitCode, CliError> {
    let problem = read_problem(problem_path)?;
    let solution = solve(&problem, tol, max_iters)?;
    write_solution(out, &solution)?;
    let report = &solution.report;
    println!("primal energy: {}", report.primal_energy);
    println!("dual energy: {}", report.dual_energy);
    println!("gap: {:e}", report.gap);
    println!("divergence residual: {:e}", report.divergence_residual);
    println!("iterations: {}", report.iterations);
    println!("converged: {}", report.converged);
    if report.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "did not converge within {} iterations (gap {:e}, divergence residual {:e}); solution written anyway",
            report.iterations, report.gap, report.divergence_residual
        );
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_decompose(
    solution_path: &Path,
    problem_path: &Path,
    out: &Path,
    eps: Option<f64>,
) -> Result<ExitCode, CliError> {
    let problem = read_problem(problem_path)?;
    let grid = problem.grid().clone();
    let solution = read_json::<SolutionFile>(solution_path)?.into_solution(&grid)?;
    let eps = eps.unwrap_or_else(|| 1e-9 * (1.0 + solution.flux.max_abs()));
    if !(eps.is_finite() && eps > 0.0) {
        return Err(bad_flag(
            "--eps",
            format!("must be positive and finite, got {eps}"),
        ));
    }

    let bundle = decompose(&solution.flux, problem.source(), eps)?;
    write_paths(out, &bundle, problem.cost())?;

    let rebuilt = bundle.reconstruct_flux();
    let reconstruction = solution
        .flux
        .values()
        .iter()
        .zip(rebuilt.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let pushforward = bundle
        .induced_source()
        .iter()
        .zip(problem.source().values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let primal = primal_energy(&problem, &solution.flux)?;
    let wardrop = wardrop_energy(&bundle, problem.cost())?;

    println!("paths: {}", bundle.len());
    println!("reconstruction residual: {:e}", reconstruction);
    println!("pushforward residual: {:e}", pushforward);
    println!("|wardrop - primal|: {:e}", (wardrop - primal).abs());
    Ok(ExitCode::SUCCESS)
}

fn cmd_norm(problem_path: &Path, p: f64, method: Method) -> Result<ExitCode, CliError> {
    if !(p.is_finite() && p > 1.0) {
        return Err(bad_flag(
            "--p",
            format!("exponent must satisfy p > 1, got {p}"),
        ));
    }
    let problem = read_problem(problem_path)?;
    let source = problem.source();
    let tolerance = 1e-9;
    match method {
        Method::MinFlux => {
            let value = sobolev_dual_norm(source, p, NormMethod::MinFlux, tolerance)?;
            println!("min_flux: {value}");
        }
        Method::DualFormula => {
            let value = sobolev_dual_norm(source, p, NormMethod::DualFormula, tolerance)?;
            println!("dual_formula: {value}");
        }
        Method::Both => {
            let a = sobolev_dual_norm(source, p, NormMethod::MinFlux, tolerance)?;
            let b = sobolev_dual_norm(source, p, NormMethod::DualFormula, tolerance)?;
            println!("min_flux: {a}");
            println!("dual_formula: {b}");
            println!(
                "relative disagreement: {:e}",
                (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_dipole(
    dim: usize,
    p: f64,
    separations: &[f64],
    refinements: &[usize],
    out: &Path,
) -> Result<ExitCode, CliError> {
    if !(p.is_finite() && p > 1.0) {
        return Err(bad_flag(
            "--p",
            format!("exponent must satisfy p > 1, got {p}"),
        ));
    }
    let report = scaling_experiment(dim, p, separations, refinements, 1e-8)?;
    std::fs::write(out, render_scaling_table(&report)).map_err(FormatError::from)?;
    match report.slope {
        Some(slope) => println!(
            "fitted slope: {slope} (predicted: {})",
            report.predicted_slope
        ),
        None => println!(
            "fitted slope: none, fewer than two usable separations (predicted: {})",
            report.predicted_slope
        ),
    }
    Ok(ExitCode::SUCCESS)
}

/// Comment header with the fitted slope, then plot-ready CSV columns.
fn render_scaling_table(report: &ScalingReport) -> String {
    let mut text = String::new();
    match report.slope {
        Some(slope) => text.push_str(&format!(
            "# fitted slope: {slope} (predicted: {})\n",
            report.predicted_slope
        )),
        None => text.push_str(&format!(
            "# fitted slope: none, fewer than two usable separations (predicted: {})\n",
            report.predicted_slope
        )),
    }
    text.push_str("separation,resolution,norm,norm_p\n");
    for row in &report.rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.separation, row.resolution, row.norm, row.norm_p
        ));
    }
    text
}
