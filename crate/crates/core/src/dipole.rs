//! Point dipoles and the experiments built around them.
//!
//! A dipole is a pair of opposite point masses. Its dual Sobolev norm obeys
//! a clean scaling law in the separation: `norm^p ~ C * sep^(N - p(N-1))`,
//! witnessed by an explicit flux supported on the double cone spanning the
//! two points. Since the exponent is positive only for `p < N/(N-1)`, the
//! norm of a fixed dipole stays bounded under grid refinement exactly in
//! that range and blows up otherwise. The functions here build snapped
//! dipole sources, rasterize the witness field, run the separation and
//! refinement sweeps, and assemble disjoint dipole clouds whose path
//! decompositions grow linearly in the dipole count while the flux norm
//! stays summable.

use crate::beckmann::{solve, BeckmannError, NormMethod, Problem};
use crate::cost::{CostError, CostModel};
use crate::grid::{FluxField, Grid, GridError, SourceMeasure};
use crate::paths::{cancel_cycles, decompose, PathsError};
use crate::sobolev_dual_norm;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DipoleError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solve(#[from] BeckmannError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Paths(#[from] PathsError),
    #[error("dipole endpoints must be distinct points")]
    IdenticalEndpoints,
    #[error("dipole endpoints both snap to node {node}; separation is below the grid resolution")]
    DegenerateSnap { node: usize },
    #[error("dipole mass must be positive and finite, got {0}")]
    BadMass(f64),
    #[error("endpoint has {found} coordinates, the grid is {expected}-dimensional")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("double-cone support leaves the box on axis {axis}: needs [{lo:.6}, {hi:.6}], box ends at {side:.6}")]
    ConeOutsideBox { axis: usize, lo: f64, hi: f64, side: f64 },
    #[error("double cones of dipoles {first} and {second} overlap")]
    OverlappingCones { first: usize, second: usize },
    #[error("experiment needs at least one separation and one resolution")]
    EmptyExperiment,
    #[error("separations must be positive, finite, and strictly decreasing")]
    BadSeparations,
    #[error("resolutions must be positive and strictly increasing")]
    BadResolutions,
    #[error("cloud of {count} dipoles needs {needed} cells along axis 0, the grid has {available}")]
    CloudTooLarge {
        count: usize,
        needed: usize,
        available: usize,
    },
}

/// Opposite unit point masses at `a` (negative) and `b` (positive).
#[derive(Debug, Clone, PartialEq)]
pub struct Dipole {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub mass: f64,
}

impl Dipole {
    pub fn new(a: Vec<f64>, b: Vec<f64>, mass: f64) -> Result<Self, DipoleError> {
        if a.len() != b.len() {
            return Err(DipoleError::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        if a == b {
            return Err(DipoleError::IdenticalEndpoints);
        }
        if !(mass.is_finite() && mass > 0.0) {
            return Err(DipoleError::BadMass(mass));
        }
        Ok(Dipole { a, b, mass })
    }

    fn check_dim(&self, grid: &Grid) -> Result<(), DipoleError> {
        if self.a.len() != grid.dim() {
            return Err(DipoleError::DimensionMismatch {
                expected: grid.dim(),
                found: self.a.len(),
            });
        }
        Ok(())
    }

    fn separation(&self) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Snaps the endpoints to their nearest nodes and charges them `-mass` and
/// `+mass`; mass flows from `a` toward `b`. Fails when the separation is
/// below what the grid resolves.
pub fn dipole_source(grid: &Arc<Grid>, dipole: &Dipole) -> Result<SourceMeasure, DipoleError> {
    dipole.check_dim(grid)?;
    let na = grid.nearest_node(&dipole.a)?;
    let nb = grid.nearest_node(&dipole.b)?;
    if na == nb {
        return Err(DipoleError::DegenerateSnap { node: na });
    }
    let mut t = vec![0.0; grid.node_count()];
    t[na] = -dipole.mass;
    t[nb] = dipole.mass;
    Ok(SourceMeasure::new(grid, t)?)
}

/// Cross-section volume of the unit ball in dimension `n - 1`; normalizes
/// the cone field so each cross-section carries exactly the dipole mass.
fn cross_section_volume(n: usize) -> f64 {
    match n {
        1 => 1.0,
        2 => 2.0,
        _ => std::f64::consts::PI,
    }
}

/// Evaluates the double-cone witness field of a dipole at a point. Mass
/// spreads from `a` through a 45-degree cone, crosses the mid-plane, and
/// refocuses onto `b`; the support is the diamond `|s - tau| + r <= tau`
/// in axis/radial coordinates. Divergence vanishes away from the endpoints,
/// each cross-section transports `mass`.
fn cone_field(dipole: &Dipole, e1: &[f64], tau: f64, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    let omega = cross_section_volume(n);
    out.iter_mut().for_each(|v| *v = 0.0);

    let mut s = 0.0;
    for k in 0..n {
        s += (x[k] - dipole.a[k]) * e1[k];
    }
    if s <= 0.0 || s >= 2.0 * tau {
        return;
    }
    let scale = dipole.mass / omega;
    if s <= tau {
        // spreading cone with apex a
        let mut r2 = 0.0;
        for k in 0..n {
            let perp = (x[k] - dipole.a[k]) - s * e1[k];
            r2 += perp * perp;
        }
        if r2 > s * s {
            return;
        }
        let inv = scale / s.powi(n as i32);
        for k in 0..n {
            out[k] = inv * (x[k] - dipole.a[k]);
        }
    } else {
        // refocusing cone with apex b
        let s2 = 2.0 * tau - s;
        let mut r2 = 0.0;
        for k in 0..n {
            let d = (dipole.b[k] - x[k]) - s2 * e1[k];
            r2 += d * d;
        }
        if r2 > s2 * s2 {
            return;
        }
        let inv = scale / s2.powi(n as i32);
        for k in 0..n {
            out[k] = inv * (dipole.b[k] - x[k]);
        }
    }
}

/// Checks that the closed diamond spanned by the dipole stays in the box.
fn check_containment(grid: &Grid, dipole: &Dipole, e1: &[f64], tau: f64) -> Result<(), DipoleError> {
    let sides = grid.side_lengths();
    for k in 0..grid.dim() {
        let mid = 0.5 * (dipole.a[k] + dipole.b[k]);
        // support extent along axis k: optimize |s*u_k + w_k| over the
        // diamond budget |s| + |w| <= tau with w perpendicular to e1
        let u = e1[k].abs();
        let extent = tau * u.max((1.0 - e1[k] * e1[k]).max(0.0).sqrt());
        let (lo, hi) = (mid - extent, mid + extent);
        let slack = 1e-12 * sides[k].max(1.0);
        if lo < -slack || hi > sides[k] + slack {
            return Err(DipoleError::ConeOutsideBox {
                axis: k,
                lo,
                hi,
                side: sides[k],
            });
        }
    }
    Ok(())
}

/// Rasterizes the double-cone witness field: evaluates it at each face
/// center and multiplies by the face area. The result nearly balances the
/// snapped dipole source; its divergence converges weakly to point charges
/// at the endpoints under refinement.
pub fn sample_vab(grid: &Arc<Grid>, dipole: &Dipole) -> Result<FluxField, DipoleError> {
    dipole.check_dim(grid)?;
    if !(dipole.mass.is_finite() && dipole.mass > 0.0) {
        return Err(DipoleError::BadMass(dipole.mass));
    }
    let sep = dipole.separation();
    if sep == 0.0 {
        return Err(DipoleError::IdenticalEndpoints);
    }
    let n = grid.dim();
    let tau = sep / 2.0;
    let e1: Vec<f64> = dipole
        .a
        .iter()
        .zip(&dipole.b)
        .map(|(a, b)| (b - a) / sep)
        .collect();
    check_containment(grid, dipole, &e1, tau)?;

    let area = grid.face_area();
    let mut field = vec![0.0; n];
    let mut values = vec![0.0; grid.edge_count()];
    for (e, edge) in grid.edges().iter().enumerate() {
        let x = grid.edge_midpoint(e);
        cone_field(dipole, &e1, tau, &x, &mut field);
        values[e] = field[edge.axis] * area;
    }
    Ok(FluxField::new(grid, values)?)
}

/// One measurement of the separation/refinement sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    /// Requested endpoint separation before snapping.
    pub separation: f64,
    /// Cells per unit length; the grid spacing is its reciprocal.
    pub resolution: usize,
    /// Dual Sobolev norm of the snapped dipole source.
    pub norm: f64,
    /// The norm raised to `p`, the quantity with the clean scaling law.
    pub norm_p: f64,
}

/// Full sweep output with the fitted scaling exponent.
#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub dim: usize,
    pub p: f64,
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `log(norm^p)` against `log(separation)` over
    /// the smallest separations at the finest resolution; `None` when the
    /// fit is degenerate (fewer than two usable separations).
    pub slope: Option<f64>,
    /// The exponent the scaling law predicts: `N - p(N-1)`.
    pub predicted_slope: f64,
}

/// How many of the smallest separations enter the slope fit; scaling is
/// asymptotic, so larger separations only pollute the estimate.
const FIT_POINTS: usize = 3;

/// Measures the dual norm of a centered dipole for every separation at
/// every resolution on the unit box, then fits the scaling exponent at the
/// finest resolution. Separations must be given in decreasing order and
/// resolutions increasing, so the last rows are the asymptotic regime.
pub fn scaling_experiment(
    dim: usize,
    p: f64,
    separations: &[f64],
    resolutions: &[usize],
    tolerance: f64,
) -> Result<ScalingReport, DipoleError> {
    if separations.is_empty() || resolutions.is_empty() {
        return Err(DipoleError::EmptyExperiment);
    }
    if separations
        .iter()
        .any(|s| !(s.is_finite() && *s > 0.0 && *s < 1.0))
        || separations.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(DipoleError::BadSeparations);
    }
    if resolutions.contains(&0) || resolutions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DipoleError::BadResolutions);
    }

    let mut rows = Vec::with_capacity(separations.len() * resolutions.len());
    for &sep in separations {
        for &res in resolutions {
            let grid = Grid::new(&vec![res; dim], 1.0 / res as f64)?;
            let mut a = vec![0.5; dim];
            let mut b = vec![0.5; dim];
            a[0] -= sep / 2.0;
            b[0] += sep / 2.0;
            let dipole = Dipole::new(a, b, 1.0)?;
            let source = dipole_source(&grid, &dipole)?;
            let norm = sobolev_dual_norm(&source, p, NormMethod::DualFormula, tolerance)?;
            rows.push(ScalingRow {
                separation: sep,
                resolution: res,
                norm,
                norm_p: norm.powf(p),
            });
        }
    }

    let finest = *resolutions.last().expect("nonempty");
    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.resolution == finest && r.norm_p > 0.0)
        .map(|r| (r.separation.ln(), r.norm_p.ln()))
        .collect();
    let tail = fit.len().saturating_sub(FIT_POINTS);
    let slope = fit_slope(&fit[tail..]);

    Ok(ScalingReport {
        dim,
        p,
        rows,
        slope,
        predicted_slope: dim as f64 - p * (dim as f64 - 1.0),
    })
}

/// Least-squares slope through `(x, y)` pairs; `None` when fewer than two
/// distinct abscissae make the fit meaningless.
fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx.is_nan() || sxx <= 0.0 || !sxy.is_finite() {
        return None;
    }
    Some(sxy / sxx)
}

/// A truncated cloud: the first `count` dipoles with geometrically
/// shrinking separations laid out along axis 0 with disjoint double cones.
pub fn cloud_layout(
    grid: &Arc<Grid>,
    count: usize,
    base_separation: f64,
    decay: f64,
) -> Result<Vec<Dipole>, DipoleError> {
    if count == 0 {
        return Err(DipoleError::EmptyExperiment);
    }
    if !(base_separation.is_finite() && base_separation > 0.0) || !(decay > 0.0 && decay < 1.0) {
        return Err(DipoleError::BadSeparations);
    }
    let h = grid.spacing();
    let cells0 = grid.dims()[0];
    let mut mid = vec![0.5; grid.dim()];
    if grid.dim() > 1 {
        // keep the cross-axis midpoint on a node plane so snapping is exact
        for (k, v) in mid.iter_mut().enumerate().skip(1) {
            let c = (grid.dims()[k] as f64 / 2.0).floor();
            *v = (c + 0.5) * h;
        }
    }

    let mut dipoles = Vec::with_capacity(count);
    let mut cursor = 0usize; // cell index along axis 0
    let mut sep = base_separation;
    for i in 0..count {
        let sep_cells = (sep / h).round() as usize;
        if sep_cells < 1 || ((sep / h) - sep_cells as f64).abs() > 1e-9 {
            return Err(DipoleError::DegenerateSnap { node: i });
        }
        let gap_cells = (sep_cells / 4).max(1);
        let end = cursor + sep_cells;
        if end + 1 > cells0 {
            return Err(DipoleError::CloudTooLarge {
                count,
                needed: end + 1,
                available: cells0,
            });
        }
        let mut a = mid.clone();
        let mut b = mid.clone();
        a[0] = (cursor as f64 + 0.5) * h;
        b[0] = (end as f64 + 0.5) * h;
        dipoles.push(Dipole::new(a, b, 1.0)?);
        cursor = end + gap_cells;
        sep *= decay;
    }

    // bounding boxes of the double cones must be pairwise disjoint
    let boxes: Vec<(f64, f64)> = dipoles
        .iter()
        .map(|d| {
            let tau = d.separation() / 2.0;
            let m = 0.5 * (d.a[0] + d.b[0]);
            (m - tau, m + tau)
        })
        .collect();
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            let disjoint = boxes[i].1 < boxes[j].0 || boxes[j].1 < boxes[i].0;
            if !disjoint {
                return Err(DipoleError::OverlappingCones { first: i, second: j });
            }
        }
    }
    Ok(dipoles)
}

/// Summary of one truncated-cloud run.
#[derive(Debug, Clone)]
pub struct CloudReport {
    pub count: usize,
    /// Combined snapped source of all dipoles.
    pub source: SourceMeasure,
    /// Number of paths in the decomposition of the optimal flux.
    pub path_count: usize,
    /// Sum of path weights; grows linearly with `count` because the
    /// dipoles transport independently.
    pub total_path_mass: f64,
    /// p-norm of the optimal flux; stays bounded as long as the
    /// separations' powers `sep^(N - p(N-1))` keep a finite sum.
    pub flux_norm: f64,
    pub flux_norm_p: f64,
}

/// Builds the truncated dipole cloud, solves the transport problem, and
/// decomposes the optimal flux into paths. The headline numbers: total path
/// mass equals the dipole count while the flux norm approaches a finite
/// limit, so the path description grows without bound even though the flux
/// stays small.
pub fn dipole_cloud(
    grid: &Arc<Grid>,
    count: usize,
    base_separation: f64,
    decay: f64,
    p: f64,
    tolerance: f64,
    max_iters: usize,
) -> Result<CloudReport, DipoleError> {
    let dipoles = cloud_layout(grid, count, base_separation, decay)?;
    let mut values = vec![0.0; grid.node_count()];
    for d in &dipoles {
        let na = grid.nearest_node(&d.a)?;
        let nb = grid.nearest_node(&d.b)?;
        if na == nb {
            return Err(DipoleError::DegenerateSnap { node: na });
        }
        values[na] -= d.mass;
        values[nb] += d.mass;
    }
    let source = SourceMeasure::new(grid, values)?;
    let cost = CostModel::power(p, 1.0)?;
    let problem = Problem::new(source.clone(), cost)?;
    let sol = solve(&problem, tolerance, max_iters)?;
    if !sol.report.converged {
        return Err(BeckmannError::NotConverged {
            stationarity: sol.report.gap,
            iterations: sol.report.iterations,
        }
        .into());
    }
    let eps = 1e-11 * (1.0 + sol.flux.max_abs());
    let acyclic = cancel_cycles(&sol.flux, eps);
    let bundle = decompose(&acyclic, &source, eps)?;
    let flux_norm = sol.flux.lp_norm(p);
    Ok(CloudReport {
        count,
        source,
        path_count: bundle.len(),
        total_path_mass: bundle.total_mass(),
        flux_norm,
        flux_norm_p: flux_norm.powf(p),
    })
}
