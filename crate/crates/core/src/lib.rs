//! Congested optimal transport on regular grids.
//!
//! The crate answers one question in several equivalent languages: how does a
//! unit of mass flow from the negative part of a balanced source to the
//! positive part when moving through crowded space costs a convex,
//! superlinear price per unit density?
//!
//! * [`grid`] fixes the discrete geometry: nodes at cell centers, oriented
//!   axis edges, exact summation-by-parts between gradient and divergence.
//! * [`cost`] holds the congestion cost family and its convex conjugate.
//! * [`beckmann`] solves the flux formulation through its concave dual and
//!   certifies answers with duality gaps; it also evaluates the induced dual
//!   Sobolev norm of a source two independent ways.
//! * [`paths`] turns an acyclic flux into a weighted bundle of source-to-sink
//!   paths and audits Wardrop equilibrium conditions on it.
//! * [`dipole`] builds point-dipole sources, explicit competitor fields, and
//!   the separation/refinement experiments that probe when a dipole has
//!   finite dual norm.
//! * [`formats`] reads and writes the problem, solution, and path-bundle
//!   files shared with the command-line tool.

pub mod beckmann;
pub mod cost;
pub mod dipole;
pub mod formats;
pub mod grid;
pub mod optim;
pub mod paths;

pub use beckmann::{
    dual_energy, duality_gap, primal_energy, project_feasible, recover_flux, sobolev_dual_norm,
    solve, solve_dual, solve_quadratic, BeckmannError, DualSolution, NormMethod, Problem,
    Solution, SolveReport,
};
pub use cost::{CostError, CostKind, CostModel, GrowthReport};
pub use dipole::{
    cloud_layout, dipole_cloud, dipole_source, sample_vab, scaling_experiment, CloudReport,
    Dipole, DipoleError, ScalingReport, ScalingRow,
};
pub use grid::{Edge, FluxField, Grid, GridError, ScalarField, SourceMeasure};
pub use paths::{
    cancel_cycles, decompose, equilibrium_check, find_cycle, is_acyclic, traffic_intensity,
    wardrop_energy, EquilibriumReport, IntensityPair, Path, PathMeasure, PathsError,
};
