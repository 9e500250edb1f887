//! Edgewise congestion costs and their convex conjugates.
//!
//! Both supported kinds fit one family in the flux density `z`:
//!
//! ```text
//! H(x, z) = w(x) * ( delta*|z| + alpha*|z|^p / p )
//! ```
//!
//! with `delta = 0` for the plain `power` kind. The conjugate and its
//! derivative stay closed-form, with `q = p / (p - 1)`:
//!
//! ```text
//! H*(x, xi)      = w * alpha^(1-q) * ((|xi|/w - delta)_+)^q / q
//! d/dxi H*(x,xi) = alpha^(1-q) * ((|xi|/w - delta)_+)^(q-1) * sign(xi)
//! ```
//!
//! `H(x, 0) = 0` and `H` is strictly convex and increasing in `|z|`, so the
//! pair `(H, H*)` satisfies Fenchel-Young with equality exactly on the graph
//! of the derivative. Everything downstream (dual solves, flux recovery,
//! Wardrop marginals) goes through this module.

use crate::grid::Grid;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("cost.p must be finite and exceed 1, got {0}")]
    BadP(f64),
    #[error("cost.alpha must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error("cost.delta must be nonnegative and finite, got {0}")]
    BadDelta(f64),
    #[error("cost.weights: expected {expected} entries, got {found}")]
    WeightLength { expected: usize, found: usize },
    #[error("cost.weights[{index}] must be positive and finite, got {value}")]
    BadWeight { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    Power,
    PowerDelta,
}

#[derive(Debug, Clone)]
pub struct CostModel {
    kind: CostKind,
    p: f64,
    q: f64,
    alpha: f64,
    alpha_conj: f64, // alpha^(1-q), the conjugate's coefficient
    delta: f64,
    weights: Option<Vec<f64>>,
}

impl CostModel {
    /// `H(z) = alpha * |z|^p / p`.
    pub fn power(p: f64, alpha: f64) -> Result<Self, CostError> {
        Self::build(CostKind::Power, p, alpha, 0.0)
    }

    /// `H(z) = delta * |z| + alpha * |z|^p / p`.
    pub fn power_delta(p: f64, alpha: f64, delta: f64) -> Result<Self, CostError> {
        Self::build(CostKind::PowerDelta, p, alpha, delta)
    }

    fn build(kind: CostKind, p: f64, alpha: f64, delta: f64) -> Result<Self, CostError> {
        if !(p.is_finite() && p > 1.0) {
            return Err(CostError::BadP(p));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(CostError::BadAlpha(alpha));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(CostError::BadDelta(delta));
        }
        let q = p / (p - 1.0);
        Ok(CostModel {
            kind,
            p,
            q,
            alpha,
            alpha_conj: alpha.powf(1.0 - q),
            delta,
            weights: None,
        })
    }

    /// Attaches a positive spatial weight per edge, in canonical edge order.
    pub fn with_weights(mut self, grid: &Grid, weights: Vec<f64>) -> Result<Self, CostError> {
        if weights.len() != grid.edge_count() {
            return Err(CostError::WeightLength {
                expected: grid.edge_count(),
                found: weights.len(),
            });
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(CostError::BadWeight { index, value });
            }
        }
        self.weights = Some(weights);
        Ok(self)
    }

    /// Samples a weight function at every edge midpoint.
    pub fn with_weight_fn(
        self,
        grid: &Grid,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self, CostError> {
        let weights = (0..grid.edge_count())
            .map(|e| f(&grid.edge_midpoint(e)))
            .collect();
        self.with_weights(grid, weights)
    }

    pub fn kind(&self) -> CostKind {
        self.kind
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Conjugate exponent `q = p / (p - 1)`.
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn weight(&self, edge: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[edge])
    }

    /// Whether per-edge values depend on the edge at all.
    pub fn is_uniform(&self) -> bool {
        self.weights.is_none()
    }

    pub fn eval_h(&self, edge: usize, z: f64) -> f64 {
        let az = z.abs();
        self.weight(edge) * (self.delta * az + self.alpha * az.powf(self.p) / self.p)
    }

    pub fn eval_h_star(&self, edge: usize, xi: f64) -> f64 {
        let w = self.weight(edge);
        let r = (xi.abs() / w - self.delta).max(0.0);
        w * self.alpha_conj * r.powf(self.q) / self.q
    }

    pub fn grad_h_star(&self, edge: usize, xi: f64) -> f64 {
        self.h_star_with_grad(edge, xi).1
    }

    /// `(H*(x, xi), d/dxi H*(x, xi))` with a single power evaluation.
    pub fn h_star_with_grad(&self, edge: usize, xi: f64) -> (f64, f64) {
        let w = self.weight(edge);
        let r = (xi.abs() / w - self.delta).max(0.0);
        if r == 0.0 {
            return (0.0, 0.0);
        }
        let rq1 = r.powf(self.q - 1.0);
        (
            w * self.alpha_conj * rq1 * r / self.q,
            self.alpha_conj * rq1 * xi.signum(),
        )
    }

    /// Curvature `d^2/dxi^2 H*(x, xi)`, zero inside the dead zone. Bounded
    /// whenever `q >= 2`; for `q < 2` it blows up at the dead-zone boundary,
    /// so callers building second-order models should stick to `q >= 2`.
    pub fn h_star_second(&self, edge: usize, xi: f64) -> f64 {
        let w = self.weight(edge);
        let r = (xi.abs() / w - self.delta).max(0.0);
        if r == 0.0 {
            return 0.0;
        }
        self.alpha_conj * (self.q - 1.0) * r.powf(self.q - 2.0) / w
    }

    /// Marginal cost `dH/dz` at a nonnegative density, the per-edge congestion
    /// price used by equilibrium checks: `w * (delta + alpha * z^(p-1))`.
    pub fn marginal(&self, edge: usize, z: f64) -> f64 {
        let az = z.abs();
        self.weight(edge) * (self.delta + self.alpha * az.powf(self.p - 1.0))
    }

    /// Checks the two-sided p-growth bounds
    /// `lambda*(z^p - 1) <= H(x,z) <= (1/lambda)*(z^p + 1)` at the given
    /// sample densities, on every edge the model distinguishes.
    pub fn check_growth(&self, lambda: f64, samples: &[f64]) -> GrowthReport {
        let edges: Vec<usize> = match &self.weights {
            Some(w) => (0..w.len()).collect(),
            None => vec![0],
        };
        let mut largest = f64::INFINITY;
        let mut passed = lambda > 0.0;
        for &edge in &edges {
            for &z in samples {
                let zp = z.abs().powf(self.p);
                let h = self.eval_h(edge, z);
                if zp > 1.0 {
                    largest = largest.min(h / (zp - 1.0));
                }
                if h > 0.0 {
                    largest = largest.min((zp + 1.0) / h);
                }
                if lambda * (zp - 1.0) > h || h * lambda > zp + 1.0 {
                    passed = false;
                }
            }
        }
        GrowthReport {
            passed,
            lambda,
            largest_admissible: largest,
        }
    }
}

/// Outcome of a p-growth spot check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthReport {
    pub passed: bool,
    pub lambda: f64,
    pub largest_admissible: f64,
}
