//! File formats shared by the library, the command-line tool, and tests.
//!
//! Three JSON documents cover the workflow: a problem (grid, cost, source),
//! a solution (flux, potential, report), and a path bundle (paths plus
//! traffic intensities). Numeric arrays follow the grid's canonical orders:
//! nodes row-major with the last axis fastest, edges grouped by axis with
//! row-major tails. Floats are written in shortest round-trip form, so
//! writing and re-reading a document reproduces every value bit-for-bit and
//! two writes of the same data are byte-identical.

use crate::beckmann::{Problem, Solution, SolveReport};
use crate::cost::{CostError, CostKind, CostModel};
use crate::grid::{FluxField, Grid, GridError, ScalarField, SourceMeasure};
use crate::paths::{traffic_intensity, wardrop_energy, Path, PathMeasure, PathsError};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path as FsPath;
use std::sync::Arc;
use thiserror::Error;

/// Largest tolerated relative imbalance of a source read from a file;
/// smaller imbalances are evened out across nodes before construction.
pub const SOURCE_SUM_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed document: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Paths(#[from] PathsError),
}

fn invalid(path: &str, message: impl Into<String>) -> FormatError {
    FormatError::Invalid {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridSection {
    pub dims: Vec<usize>,
    pub spacing: f64,
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CostSection {
    pub kind: String,
    pub p: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

/// On-disk form of a transport problem.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProblemFile {
    pub grid: GridSection,
    pub cost: CostSection,
    pub source: Vec<f64>,
}

impl ProblemFile {
    pub fn from_problem(problem: &Problem) -> Self {
        let grid = problem.grid();
        let cost = problem.cost();
        ProblemFile {
            grid: GridSection {
                dims: grid.dims().to_vec(),
                spacing: grid.spacing(),
            },
            cost: CostSection {
                kind: match cost.kind() {
                    CostKind::Power => "power".to_string(),
                    CostKind::PowerDelta => "power_delta".to_string(),
                },
                p: cost.p(),
                alpha: cost.alpha(),
                delta: cost.delta(),
                weights: cost.weights().map(|w| w.to_vec()),
            },
            source: problem.source().values().to_vec(),
        }
    }

    /// Validates the document and builds the in-memory problem. Every
    /// violation names the offending key.
    pub fn into_problem(&self) -> Result<Problem, FormatError> {
        if self.grid.dims.is_empty() || self.grid.dims.len() > 3 {
            return Err(invalid(
                "grid.dims",
                format!("need 1 to 3 axes, got {}", self.grid.dims.len()),
            ));
        }
        if self.grid.dims.contains(&0) {
            return Err(invalid("grid.dims", "every axis needs at least one cell"));
        }
        if !(self.grid.spacing.is_finite() && self.grid.spacing > 0.0) {
            return Err(invalid(
                "grid.spacing",
                format!("must be positive and finite, got {}", self.grid.spacing),
            ));
        }
        let grid = Grid::new(&self.grid.dims, self.grid.spacing)?;

        if !(self.cost.p.is_finite() && self.cost.p > 1.0) {
            return Err(invalid(
                "cost.p",
                format!("exponent must satisfy p > 1, got {}", self.cost.p),
            ));
        }
        if !(self.cost.alpha.is_finite() && self.cost.alpha > 0.0) {
            return Err(invalid(
                "cost.alpha",
                format!("must be positive and finite, got {}", self.cost.alpha),
            ));
        }
        if !(self.cost.delta.is_finite() && self.cost.delta >= 0.0) {
            return Err(invalid(
                "cost.delta",
                format!("must be nonnegative and finite, got {}", self.cost.delta),
            ));
        }
        let mut cost = match self.cost.kind.as_str() {
            "power" => {
                if self.cost.delta != 0.0 {
                    return Err(invalid(
                        "cost.delta",
                        "the power kind has no offset; use kind power_delta",
                    ));
                }
                CostModel::power(self.cost.p, self.cost.alpha)?
            }
            "power_delta" => {
                CostModel::power_delta(self.cost.p, self.cost.alpha, self.cost.delta)?
            }
            other => {
                return Err(invalid(
                    "cost.kind",
                    format!("expected \"power\" or \"power_delta\", got \"{other}\""),
                ));
            }
        };
        if let Some(weights) = &self.cost.weights {
            if weights.len() != grid.edge_count() {
                return Err(invalid(
                    "cost.weights",
                    format!(
                        "grid has {} edges, got {} weights",
                        grid.edge_count(),
                        weights.len()
                    ),
                ));
            }
            if let Some((i, w)) = weights
                .iter()
                .enumerate()
                .find(|(_, w)| !(w.is_finite() && **w > 0.0))
            {
                return Err(invalid(
                    "cost.weights",
                    format!("entry {i} must be positive and finite, got {w}"),
                ));
            }
            cost = cost.with_weights(&grid, weights.clone())?;
        }

        if self.source.len() != grid.node_count() {
            return Err(invalid(
                "source",
                format!(
                    "grid has {} nodes, got {} values",
                    grid.node_count(),
                    self.source.len()
                ),
            ));
        }
        if self.source.iter().any(|t| !t.is_finite()) {
            return Err(invalid("source", "every entry must be finite"));
        }
        let sum: f64 = self.source.iter().sum();
        let scale: f64 = self.source.iter().map(|t| t.abs()).sum();
        if sum.abs() > SOURCE_SUM_REL_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(invalid(
                "source",
                format!("must sum to zero, got {sum:e} against size {scale:e}"),
            ));
        }
        let source = match SourceMeasure::new(&grid, self.source.clone()) {
            Ok(s) => s,
            Err(GridError::NotZeroSum { .. }) => {
                // inside the file tolerance but beyond construction rounding:
                // spread the imbalance evenly so downstream sums are clean
                let shift = sum / self.source.len() as f64;
                let balanced: Vec<f64> = self.source.iter().map(|t| t - shift).collect();
                SourceMeasure::new(&grid, balanced)?
            }
            Err(e) => return Err(e.into()),
        };
        Problem::new(source, cost).map_err(|e| invalid("cost", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ReportSection {
    pub primal_energy: f64,
    pub dual_energy: f64,
    pub gap: f64,
    pub divergence_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// On-disk form of a solve result.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolutionFile {
    pub flux: Vec<f64>,
    pub potential: Vec<f64>,
    pub report: ReportSection,
}

impl SolutionFile {
    pub fn from_solution(solution: &Solution) -> Self {
        SolutionFile {
            flux: solution.flux.values().to_vec(),
            potential: solution.potential.values().to_vec(),
            report: ReportSection {
                primal_energy: solution.report.primal_energy,
                dual_energy: solution.report.dual_energy,
                gap: solution.report.gap,
                divergence_residual: solution.report.divergence_residual,
                iterations: solution.report.iterations,
                converged: solution.report.converged,
            },
        }
    }

    pub fn into_solution(&self, grid: &Arc<Grid>) -> Result<Solution, FormatError> {
        if self.flux.len() != grid.edge_count() {
            return Err(invalid(
                "flux",
                format!(
                    "grid has {} edges, got {} values",
                    grid.edge_count(),
                    self.flux.len()
                ),
            ));
        }
        if self.potential.len() != grid.node_count() {
            return Err(invalid(
                "potential",
                format!(
                    "grid has {} nodes, got {} values",
                    grid.node_count(),
                    self.potential.len()
                ),
            ));
        }
        Ok(Solution {
            flux: FluxField::new(grid, self.flux.clone())?,
            potential: ScalarField::new(grid, self.potential.clone())?,
            report: SolveReport {
                primal_energy: self.report.primal_energy,
                dual_energy: self.report.dual_energy,
                gap: self.report.gap,
                divergence_residual: self.report.divergence_residual,
                iterations: self.report.iterations,
                converged: self.report.converged,
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PathEntry {
    pub nodes: Vec<usize>,
    pub weight: f64,
}

/// On-disk form of a path bundle with its derived edge quantities.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PathsFile {
    pub paths: Vec<PathEntry>,
    pub intensity: Vec<f64>,
    pub vector_intensity: Vec<f64>,
    pub wardrop_energy: f64,
}

impl PathsFile {
    pub fn from_bundle(bundle: &PathMeasure, cost: &CostModel) -> Result<Self, FormatError> {
        let pair = traffic_intensity(bundle);
        let energy = wardrop_energy(bundle, cost)?;
        Ok(PathsFile {
            paths: bundle
                .paths()
                .iter()
                .map(|p| PathEntry {
                    nodes: p.nodes.clone(),
                    weight: p.weight,
                })
                .collect(),
            intensity: pair.scalar,
            vector_intensity: pair.vector,
            wardrop_energy: energy,
        })
    }

    pub fn into_bundle(&self, grid: &Arc<Grid>) -> Result<PathMeasure, FormatError> {
        let paths: Vec<Path> = self
            .paths
            .iter()
            .map(|p| Path {
                nodes: p.nodes.clone(),
                weight: p.weight,
            })
            .collect();
        PathMeasure::new(grid, paths).map_err(|e| match &e {
            PathsError::TooShort { path }
            | PathsError::BadWeight { path, .. }
            | PathsError::NodeRange { path, .. }
            | PathsError::NotAdjacent { path, .. } => {
                invalid(&format!("paths[{path}]"), e.to_string())
            }
            _ => e.into(),
        })
    }
}

/// Writes any document as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &FsPath, value: &T) -> Result<(), FormatError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &FsPath) -> Result<T, FormatError> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_problem(path: &FsPath) -> Result<Problem, FormatError> {
    read_json::<ProblemFile>(path)?.into_problem()
}

pub fn write_problem(path: &FsPath, problem: &Problem) -> Result<(), FormatError> {
    write_json(path, &ProblemFile::from_problem(problem))
}

pub fn read_solution(path: &FsPath, grid: &Arc<Grid>) -> Result<Solution, FormatError> {
    read_json::<SolutionFile>(path)?.into_solution(grid)
}

pub fn write_solution(path: &FsPath, solution: &Solution) -> Result<(), FormatError> {
    write_json(path, &SolutionFile::from_solution(solution))
}

pub fn read_paths(path: &FsPath, grid: &Arc<Grid>) -> Result<PathMeasure, FormatError> {
    read_json::<PathsFile>(path)?.into_bundle(grid)
}

pub fn write_paths(
    path: &FsPath,
    bundle: &PathMeasure,
    cost: &CostModel,
) -> Result<(), FormatError> {
    write_json(path, &PathsFile::from_bundle(bundle, cost)?)
}
