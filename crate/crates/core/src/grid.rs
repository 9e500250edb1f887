//! Regular grid geometry shared by every solver stage.
//!
//! A grid covers the box `[0, dims[0]*h] x ... x [0, dims[N-1]*h]` with cubic
//! cells of side `h`. Nodes are cell centers, indexed row-major with the last
//! axis fastest. Edges connect axis neighbours and are oriented from the lower
//! node index to the higher. They are enumerated axis by axis (all axis-0
//! edges first, then axis 1, ...), within an axis in row-major order of the
//! tail node. This order is the canonical edge order used by every per-edge
//! array in the crate and by the file formats.

use std::sync::Arc;
use thiserror::Error;

/// Relative tolerance for the zero-sum check on source measures.
pub const ZERO_SUM_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid must have 1 to 3 axes, got {0}")]
    UnsupportedDimension(usize),
    #[error("grid axis {0} has zero cells")]
    EmptyAxis(usize),
    #[error("grid spacing must be positive and finite, got {0}")]
    BadSpacing(f64),
    #[error("expected {expected} values for this grid, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("field belongs to a different grid")]
    GridMismatch,
    #[error("source must sum to zero: |sum| = {sum:e} exceeds tolerance {tol:e}")]
    NotZeroSum { sum: f64, tol: f64 },
    #[error("point {point:?} lies outside the grid box")]
    OutOfDomain { point: Vec<f64> },
}

/// Directed edge between two axis-neighbouring nodes. `tail < head` always.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub axis: usize,
}

#[derive(Debug)]
pub struct Grid {
    dims: Vec<usize>,
    spacing: f64,
    strides: Vec<usize>,
    edges: Vec<Edge>,
    axis_offsets: Vec<usize>, // first edge index of each axis block
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }
}

impl Grid {
    pub fn new(dims: &[usize], spacing: f64) -> Result<Arc<Grid>, GridError> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(GridError::UnsupportedDimension(dims.len()));
        }
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(GridError::EmptyAxis(axis));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(GridError::BadSpacing(spacing));
        }
        let n = dims.len();
        let mut strides = vec![1usize; n];
        for k in (0..n - 1).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let node_count: usize = dims.iter().product();
        let mut edges = Vec::new();
        let mut axis_offsets = Vec::with_capacity(n);
        for axis in 0..n {
            axis_offsets.push(edges.len());
            let mut coords = vec![0usize; n];
            for node in 0..node_count {
                if coords[axis] + 1 < dims[axis] {
                    edges.push(Edge {
                        tail: node,
                        head: node + strides[axis],
                        axis,
                    });
                }
                // advance row-major coordinates, last axis fastest
                for k in (0..n).rev() {
                    coords[k] += 1;
                    if coords[k] < dims[k] {
                        break;
                    }
                    coords[k] = 0;
                }
            }
        }
        Ok(Arc::new(Grid {
            dims: dims.to_vec(),
            spacing,
            strides,
            edges,
            axis_offsets,
        }))
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn node_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Cell volume `h^N`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim() as i32)
    }

    /// Face area `h^(N-1)`; a flux value divided by this is a flux density.
    pub fn face_area(&self) -> f64 {
        self.spacing.powi(self.dim() as i32 - 1)
    }

    /// Box side lengths `dims[k] * h`.
    pub fn side_lengths(&self) -> Vec<f64> {
        self.dims.iter().map(|&d| d as f64 * self.spacing).collect()
    }

    pub fn node_index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dim());
        coords
            .iter()
            .zip(&self.strides)
            .map(|(&c, &s)| c * s)
            .sum()
    }

    pub fn node_coords(&self, node: usize) -> Vec<usize> {
        let mut rem = node;
        self.strides
            .iter()
            .zip(&self.dims)
            .map(|(&s, &d)| {
                let c = rem / s;
                rem %= s;
                debug_assert!(c < d);
                c
            })
            .collect()
    }

    /// Cell-center position of a node.
    pub fn node_position(&self, node: usize) -> Vec<f64> {
        self.node_coords(node)
            .iter()
            .map(|&c| (c as f64 + 0.5) * self.spacing)
            .collect()
    }

    /// Face center the edge's flux value is attached to.
    pub fn edge_midpoint(&self, edge: usize) -> Vec<f64> {
        let e = &self.edges[edge];
        let mut pos = self.node_position(e.tail);
        pos[e.axis] += 0.5 * self.spacing;
        pos
    }

    /// Index of the edge leaving `tail` along `axis`, if one exists.
    pub fn edge_index(&self, tail: usize, axis: usize) -> Option<usize> {
        let c = self.node_coords(tail);
        if c[axis] + 1 >= self.dims[axis] {
            return None;
        }
        // rank of the tail among all tails of this axis, in row-major order
        let mut rank = 0;
        let mut stride = 1;
        for k in (0..self.dim()).rev() {
            let dk = if k == axis { self.dims[k] - 1 } else { self.dims[k] };
            rank += c[k] * stride;
            stride *= dk;
        }
        Some(self.axis_offsets[axis] + rank)
    }

    /// The edge joining two nodes, plus the traversal orientation: `+1.0`
    /// when going `a -> b` follows the edge direction, `-1.0` against it.
    pub fn edge_between(&self, a: usize, b: usize) -> Option<(usize, f64)> {
        let (lo, hi, sign) = match a.cmp(&b) {
            std::cmp::Ordering::Less => (a, b, 1.0),
            std::cmp::Ordering::Greater => (b, a, -1.0),
            std::cmp::Ordering::Equal => return None,
        };
        if hi >= self.node_count() {
            return None;
        }
        let ca = self.node_coords(lo);
        let cb = self.node_coords(hi);
        let mut axis = None;
        for k in 0..self.dim() {
            if cb[k] == ca[k] {
                continue;
            }
            if cb[k] == ca[k] + 1 && axis.is_none() {
                axis = Some(k);
            } else {
                return None;
            }
        }
        self.edge_index(lo, axis?).map(|e| (e, sign))
    }

    /// Node whose cell center is nearest to `point`. Errors if the point lies
    /// outside the grid box (beyond a relative slack of 1e-12).
    pub fn nearest_node(&self, point: &[f64]) -> Result<usize, GridError> {
        if point.len() != self.dim() {
            return Err(GridError::LengthMismatch {
                expected: self.dim(),
                found: point.len(),
            });
        }
        let mut coords = vec![0usize; self.dim()];
        for k in 0..self.dim() {
            let len = self.dims[k] as f64 * self.spacing;
            let slack = 1e-12 * len.max(1.0);
            if point[k] < -slack || point[k] > len + slack {
                return Err(GridError::OutOfDomain {
                    point: point.to_vec(),
                });
            }
            let c = (point[k] / self.spacing - 0.5).round();
            coords[k] = (c.max(0.0) as usize).min(self.dims[k] - 1);
        }
        Ok(self.node_index(&coords))
    }

    /// Net inflow at every node: `d_i = sum of flux into i minus flux out of i`.
    /// The Beckmann feasibility constraint reads `divergence(flux) = source`,
    /// so mass travels from nodes with negative source to nodes with positive.
    pub fn divergence(&self, flux: &FluxField) -> Result<ScalarField, GridError> {
        if flux.grid.as_ref() != self {
            return Err(GridError::GridMismatch);
        }
        let mut d = vec![0.0; self.node_count()];
        for (e, &f) in self.edges.iter().zip(flux.values.iter()) {
            d[e.head] += f;
            d[e.tail] -= f;
        }
        Ok(ScalarField {
            grid: flux.grid.clone(),
            values: d,
        })
    }

    /// Forward difference along each edge: `g_e = (v_head - v_tail) / h`.
    pub fn gradient(&self, potential: &ScalarField) -> Result<Vec<f64>, GridError> {
        if potential.grid.as_ref() != self {
            return Err(GridError::GridMismatch);
        }
        let v = &potential.values;
        Ok(self
            .edges
            .iter()
            .map(|e| (v[e.head] - v[e.tail]) / self.spacing)
            .collect())
    }
}

/// One value per node.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.node_count() {
            return Err(GridError::LengthMismatch {
                expected: grid.node_count(),
                found: values.len(),
            });
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.node_count()],
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Subtracts the mean, the normalization that pins down dual potentials.
    pub fn remove_mean(&mut self) {
        let mean = self.values.iter().sum::<f64>() / self.values.len() as f64;
        for v in &mut self.values {
            *v -= mean;
        }
    }
}

/// One value per edge: signed mass crossing the face per unit time, positive
/// in the edge direction (tail to head).
#[derive(Debug, Clone)]
pub struct FluxField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl FluxField {
    pub fn new(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.edge_count() {
            return Err(GridError::LengthMismatch {
                expected: grid.edge_count(),
                found: values.len(),
            });
        }
        Ok(FluxField {
            grid: grid.clone(),
            values,
        })
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        FluxField {
            grid: grid.clone(),
            values: vec![0.0; grid.edge_count()],
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete L^p norm of the flux density: `(sum_e h^N |f_e / h^(N-1)|^p)^(1/p)`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let area = self.grid.face_area();
        let vol = self.grid.cell_volume();
        let sum: f64 = self
            .values
            .iter()
            .map(|f| vol * (f.abs() / area).powf(p))
            .sum();
        sum.powf(1.0 / p)
    }
}

/// Signed node masses summing to zero; right-hand side of the divergence
/// constraint. Positive entries receive mass, negative entries emit it.
#[derive(Debug, Clone)]
pub struct SourceMeasure {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl SourceMeasure {
    pub fn new(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.node_count() {
            return Err(GridError::LengthMismatch {
                expected: grid.node_count(),
                found: values.len(),
            });
        }
        let sum: f64 = values.iter().sum();
        let abs_sum: f64 = values.iter().map(|v| v.abs()).sum();
        let tol = ZERO_SUM_REL_TOL * abs_sum;
        if sum.abs() > tol {
            return Err(GridError::NotZeroSum {
                sum: sum.abs(),
                tol,
            });
        }
        Ok(SourceMeasure {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Total variation `sum_i |t_i|`; twice the mass actually transported.
    pub fn total_variation(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
