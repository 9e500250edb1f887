//! Congested transport on a grid: primal flux problem, concave dual, and the
//! bridges between them.
//!
//! Primal: minimize `sum_e h^N H(x_e, f_e / h^(N-1))` over fluxes with
//! `divergence(f) = t`. Dual: maximize
//! `D(v) = sum_i t_i v_i - sum_e h^N H*(x_e, (v_head - v_tail)/h)`
//! over potentials, fixed to zero mean. The two optimal values coincide, and
//! an optimal pair is linked edgewise by `f_e = h^(N-1) * dH*/dxi (g_e)`.
//!
//! The solve pipeline follows the dual: minimize `-D` with l-bfgs (falling
//! back to accelerated gradient descent if the line search breaks down, which
//! can happen when q = p/(p-1) is close to 1), recover the flux from the
//! potential, then repair the leftover divergence error with the smallest
//! l2 correction, a single graph-Laplacian solve. The correction is tangent
//! to the primal energy at the recovered flux, so the duality gap it leaves
//! is second order in the dual stationarity error.

use crate::cost::{CostError, CostKind, CostModel};
use crate::grid::{FluxField, Grid, GridError, ScalarField, SourceMeasure};
use crate::optim;
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 50_000;

#[derive(Debug, Error)]
pub enum BeckmannError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("flux is infeasible at node {node}: |divergence - source| = {residual:e} exceeds {tol:e}")]
    Infeasible { node: usize, residual: f64, tol: f64 },
    #[error("projection stalled at residual {residual:e} (target {tol:e}) after {iterations} iterations")]
    ProjectionStalled {
        residual: f64,
        tol: f64,
        iterations: usize,
    },
    #[error("dual solve did not converge: stationarity {stationarity:e} after {iterations} iterations")]
    NotConverged {
        stationarity: f64,
        iterations: usize,
    },
    #[error("direct quadratic route requires the plain power cost with p = 2, got p = {0}")]
    NotQuadratic(f64),
}

/// A congested transport instance: grid, zero-sum source, congestion cost.
#[derive(Debug, Clone)]
pub struct Problem {
    source: SourceMeasure,
    cost: CostModel,
}

impl Problem {
    pub fn new(source: SourceMeasure, cost: CostModel) -> Result<Self, BeckmannError> {
        if let Some(w) = cost.weights() {
            let expected = source.grid().edge_count();
            if w.len() != expected {
                return Err(CostError::WeightLength {
                    expected,
                    found: w.len(),
                }
                .into());
            }
        }
        Ok(Problem { source, cost })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.source.grid()
    }

    pub fn source(&self) -> &SourceMeasure {
        &self.source
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }
}

/// Totals reported by a solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveReport {
    pub primal_energy: f64,
    pub dual_energy: f64,
    /// `primal - dual`; nonnegative up to roundoff.
    pub gap: f64,
    /// Sup-norm of `divergence(flux) - source`.
    pub divergence_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub flux: FluxField,
    pub potential: ScalarField,
    pub report: SolveReport,
}

/// Dual iterate with its certificate data.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub potential: ScalarField,
    pub dual_energy: f64,
    /// Sup-norm of the dual gradient, which equals the divergence mismatch of
    /// the flux recovered from this potential.
    pub stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `sum_e h^N H(x_e, f_e / h^(N-1))`.
pub fn primal_energy(problem: &Problem, flux: &FluxField) -> Result<f64, BeckmannError> {
    let grid = problem.grid();
    if flux.grid() != grid {
        return Err(GridError::GridMismatch.into());
    }
    let vol = grid.cell_volume();
    let area = grid.face_area();
    Ok(flux
        .values()
        .iter()
        .enumerate()
        .map(|(e, &f)| vol * problem.cost.eval_h(e, f / area))
        .sum())
}

/// `sum_i t_i v_i - sum_e h^N H*(x_e, g_e)` with `g` the discrete gradient.
pub fn dual_energy(problem: &Problem, potential: &ScalarField) -> Result<f64, BeckmannError> {
    if potential.grid() != problem.grid() {
        return Err(GridError::GridMismatch.into());
    }
    Ok(dual_energy_from(problem, potential.values()))
}

/// Objective closure for the dual minimization: value and gradient of
/// `F(v) = -D(v)`. The gradient is `divergence(recovered flux) - t`, so
/// stationarity and feasibility of the recovered flux are the same thing.
fn dual_objective<'a>(problem: &'a Problem) -> impl FnMut(&[f64], &mut [f64]) -> f64 + 'a {
    let grid = problem.grid();
    let h = grid.spacing();
    let vol = grid.cell_volume();
    let area = grid.face_area();
    let t = problem.source.values();
    move |v: &[f64], grad: &mut [f64]| {
        let mut f = 0.0;
        for (gi, ti) in grad.iter_mut().zip(t) {
            *gi = -*ti;
        }
        for (e, edge) in grid.edges().iter().enumerate() {
            let xi = (v[edge.head] - v[edge.tail]) / h;
            let (hs, dhs) = problem.cost.h_star_with_grad(e, xi);
            f += vol * hs;
            let flow = area * dhs;
            grad[edge.head] += flow;
            grad[edge.tail] -= flow;
        }
        for (vi, ti) in v.iter().zip(t) {
            f -= vi * ti;
        }
        f
    }
}

/// Dual optimum of the plain quadratic problem (`power`, p = 2, any alpha
/// and weights): one conjugate-gradient solve of the weighted Laplacian
/// system with edge coefficients `h^(N-2) / (alpha w_e)`. The dual gradient
/// at the result is exactly the negated CG residual.
fn quadratic_potential(
    source: &SourceMeasure,
    cost: &CostModel,
    grad_tol: f64,
) -> (Vec<f64>, optim::CgOutcome) {
    let grid = source.grid();
    let n = grid.node_count();
    let h = grid.spacing();
    let kappa: Vec<f64> = (0..grid.edge_count())
        .map(|e| h.powi(grid.dim() as i32 - 2) / (cost.alpha() * cost.weight(e)))
        .collect();
    let apply = |y: &[f64], out: &mut [f64]| {
        for o in out.iter_mut() {
            *o = 0.0;
        }
        for (edge, k) in grid.edges().iter().zip(&kappa) {
            let c = k * (y[edge.head] - y[edge.tail]);
            out[edge.head] += c;
            out[edge.tail] -= c;
        }
    };
    let outcome = optim::conjugate_gradient(
        apply,
        source.values(),
        vec![0.0; n],
        grad_tol,
        8 * n + 200,
    );
    (outcome.x.clone(), outcome)
}

/// Damped Newton iteration on `F = -D`. The exact Hessian is the weighted
/// graph Laplacian with edge coefficients `h^(N-2) * d^2 H*(g_e)`; each step
/// solves the Levenberg-damped system by conjugate gradients and
/// backtracks on `F`. Only used when `q >= 2`, where the coefficients stay
/// bounded; damping absorbs edges whose coefficient vanishes.
fn dual_newton(
    problem: &Problem,
    v0: Vec<f64>,
    grad_tol: f64,
    max_newton: usize,
) -> optim::MinimizeOutcome {
    let grid = problem.grid();
    let n = grid.node_count();
    let h = grid.spacing();
    let hess_scale = h.powi(grid.dim() as i32 - 2);
    let mut objective = dual_objective(problem);

    let mut v = v0;
    let mut grad = vec![0.0; n];
    let mut f = objective(&v, &mut grad);
    let mut gnorm = optim::inf_norm(&grad);
    let mut best = optim::MinimizeOutcome {
        x: v.clone(),
        value: f,
        grad_inf_norm: gnorm,
        iterations: 0,
        converged: gnorm <= grad_tol,
    };
    if best.converged {
        return best;
    }

    // for q < 2 the conjugate's curvature blows up at its kink, so the raw
    // edge weights are unbounded (infinite on an exactly-inactive edge); a
    // clamped model is still symmetric positive definite and damped steps
    // along it still descend
    let kinked = problem.cost.q() < 2.0;
    let mut weights = vec![0.0; grid.edge_count()];
    let mut scratch = vec![0.0; grid.edge_count()];
    let mut trial = vec![0.0; n];
    let mut grad_trial = vec![0.0; n];
    let mut mu = 1e-4f64;
    let mut rejected = 0usize;

    for iter in 1..=max_newton {
        let mut wmax = 0.0f64;
        for (e, edge) in grid.edges().iter().enumerate() {
            let xi = (v[edge.head] - v[edge.tail]) / h;
            let w = hess_scale * problem.cost.h_star_second(e, xi);
            weights[e] = w;
            if w.is_finite() {
                wmax = wmax.max(w);
            }
        }
        if kinked {
            // clamp to a band around the median weight; the band widens as
            // the damping relaxes, so full steps let the true curvature back
            // in while rejections pull the model toward a uniform Laplacian
            scratch.clear();
            scratch.extend(weights.iter().copied().filter(|w| w.is_finite() && *w > 0.0));
            let center = if scratch.is_empty() {
                1.0
            } else {
                let mid = scratch.len() / 2;
                *scratch
                    .select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite weights"))
                    .1
            };
            let half_width = mu.clamp(1e-8, 1.0).sqrt().recip();
            let (lo, hi) = (center / half_width, center * half_width);
            for w in weights.iter_mut() {
                *w = w.clamp(lo, hi);
            }
        } else {
            // floor the edge coefficients instead of damping the diagonal:
            // edges with vanishing curvature then receive a genuine Laplacian
            // correction rather than a pointwise one, which is what keeps the
            // far field moving; wmax = 0 means every edge sits in a dead zone
            // and any uniform coefficient gives the same direction
            let floor = if wmax > 0.0 { mu * wmax } else { 1.0 };
            for w in weights.iter_mut() {
                if *w < floor {
                    *w = floor;
                }
            }
        }
        let apply = |y: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for (edge, w) in grid.edges().iter().zip(&weights) {
                let c = w * (y[edge.head] - y[edge.tail]);
                out[edge.head] += c;
                out[edge.tail] -= c;
            }
        };
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let inner_tol = 0.1 * gnorm;
        let dir = optim::conjugate_gradient(apply, &rhs, vec![0.0; n], inner_tol, 600).x;

        let slope = optim::dot(&grad, &dir);
        if slope.is_nan() || slope >= 0.0 {
            // numerical breakdown of the model: sharpen damping and retry
            mu = (mu * 10.0).min(1e8);
            rejected += 1;
            if rejected > 6 {
                break;
            }
            continue;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..45 {
            for i in 0..n {
                trial[i] = v[i] + step * dir[i];
            }
            let f_trial = objective(&trial, &mut grad_trial);
            if f_trial.is_finite() && f_trial <= f + 1e-4 * step * slope {
                v.copy_from_slice(&trial);
                std::mem::swap(&mut grad, &mut grad_trial);
                f = f_trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        best.iterations = iter;
        if accepted {
            rejected = 0;
            mu = if step == 1.0 {
                (mu * 0.3).max(1e-10)
            } else {
                (mu * 4.0).min(1e8)
            };
            gnorm = optim::inf_norm(&grad);
            if f < best.value {
                best.x.copy_from_slice(&v);
                best.value = f;
                best.grad_inf_norm = gnorm;
            }
            if gnorm <= grad_tol {
                best.x.copy_from_slice(&v);
                best.value = f;
                best.grad_inf_norm = gnorm;
                best.converged = true;
                return best;
            }
        } else {
            mu = (mu * 10.0).min(1e8);
            rejected += 1;
            if rejected > 6 {
                break;
            }
        }
    }
    best
}

/// One descent pass toward a dual gradient target: damped Newton first (with
/// the curvature model clamped where the conjugate kinks), quasi-Newton as
/// polish, and an accelerated-gradient tail if both stall.
fn dual_descent(
    problem: &Problem,
    v0: Vec<f64>,
    grad_tol: f64,
    budget: usize,
) -> optim::MinimizeOutcome {
    let mut out = dual_newton(problem, v0, grad_tol, budget.min(400));
    if !out.converged {
        let polish = optim::lbfgs(
            dual_objective(problem),
            out.x.clone(),
            grad_tol,
            budget.min(4000),
        );
        let spent = out.iterations + polish.iterations;
        if polish.value < out.value || polish.converged {
            out = polish;
        }
        out.iterations = spent;
    }
    if !out.converged && out.iterations < budget {
        let more = optim::accelerated_gradient(
            dual_objective(problem),
            out.x.clone(),
            grad_tol,
            (budget - out.iterations).min(8000),
        );
        let spent = out.iterations + more.iterations;
        if more.value < out.value || more.converged {
            out = more;
        }
        out.iterations = spent;
    }
    out
}

/// Maximizes the dual by descent on `-D`. The quadratic (p = 2) dual is
/// solved outright by conjugate gradients; other costs use that solve as a
/// warm start before the descent pass. Stops when the dual gradient
/// sup-norm reaches `tolerance * (1 + max |t|)`. The returned potential has
/// zero mean.
pub fn solve_dual(problem: &Problem, tolerance: f64, max_iters: usize) -> DualSolution {
    let grid = problem.grid();
    let grad_tol = tolerance * (1.0 + problem.source.max_abs());
    let target = &problem.cost;

    // stage 0: quadratic head start by one linear solve
    let quadratic_target = target.kind() == CostKind::Power && target.p() == 2.0;
    let stage_tol = if quadratic_target {
        grad_tol
    } else {
        30.0 * grad_tol
    };
    let (v, cg) = quadratic_potential(&problem.source, target, stage_tol);
    let mut spent = cg.iterations;
    if quadratic_target {
        let mut potential = ScalarField::new(grid, v).expect("sized by construction");
        potential.remove_mean();
        let value = dual_energy_from(problem, potential.values());
        return DualSolution {
            dual_energy: value,
            stationarity: cg.residual_inf,
            iterations: spent,
            converged: cg.converged,
            potential,
        };
    }

    let budget = max_iters.saturating_sub(spent);
    let outcome = dual_descent(problem, v, grad_tol, budget);
    spent += outcome.iterations;

    let mut potential = ScalarField::new(grid, outcome.x).expect("sized by construction");
    potential.remove_mean();
    DualSolution {
        dual_energy: -outcome.value,
        stationarity: outcome.grad_inf_norm,
        iterations: spent,
        converged: outcome.converged,
        potential,
    }
}

/// Dual value at a raw slice; shares the formula with `dual_energy` without
/// cloning into a field.
fn dual_energy_from(problem: &Problem, v: &[f64]) -> f64 {
    let grid = problem.grid();
    let h = grid.spacing();
    let vol = grid.cell_volume();
    let linear: f64 = problem
        .source
        .values()
        .iter()
        .zip(v)
        .map(|(t, vi)| t * vi)
        .sum();
    let conj: f64 = grid
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| vol * problem.cost.eval_h_star(e, (v[edge.head] - v[edge.tail]) / h))
        .sum();
    linear - conj
}

/// Edgewise primal-dual bridge: `f_e = h^(N-1) * dH*/dxi(x_e, g_e)`.
pub fn recover_flux(problem: &Problem, potential: &ScalarField) -> Result<FluxField, BeckmannError> {
    let grid = problem.grid();
    if potential.grid() != grid {
        return Err(GridError::GridMismatch.into());
    }
    let h = grid.spacing();
    let area = grid.face_area();
    let v = potential.values();
    let values = grid
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| area * problem.cost.grad_h_star(e, (v[edge.head] - v[edge.tail]) / h))
        .collect();
    Ok(FluxField::new(grid, values).expect("sized by construction"))
}

fn laplacian_apply(grid: &Grid) -> impl Fn(&[f64], &mut [f64]) + '_ {
    move |y: &[f64], out: &mut [f64]| {
        for o in out.iter_mut() {
            *o = 0.0;
        }
        for edge in grid.edges() {
            let c = y[edge.head] - y[edge.tail];
            out[edge.head] += c;
            out[edge.tail] -= c;
        }
    }
}

fn project_raw(
    flux: &FluxField,
    source: &SourceMeasure,
    tolerance: f64,
) -> Result<(FluxField, optim::CgOutcome), BeckmannError> {
    let grid = flux.grid();
    if source.grid() != grid {
        return Err(GridError::GridMismatch.into());
    }
    let div = grid.divergence(flux)?;
    let rhs: Vec<f64> = source
        .values()
        .iter()
        .zip(div.values())
        .map(|(t, d)| t - d)
        .collect();
    let max_cg = 8 * grid.node_count() + 200;
    let outcome = optim::conjugate_gradient(
        laplacian_apply(grid),
        &rhs,
        vec![0.0; grid.node_count()],
        tolerance,
        max_cg,
    );
    let y = &outcome.x;
    let values: Vec<f64> = grid
        .edges()
        .iter()
        .zip(flux.values())
        .map(|(edge, &f)| f + (y[edge.head] - y[edge.tail]))
        .collect();
    let projected = FluxField::new(grid, values).expect("sized by construction");
    Ok((projected, outcome))
}

/// Smallest l2 edgewise correction making the flux feasible: adds the
/// discrete gradient of `y` where `laplacian y = source - divergence(flux)`,
/// solved by conjugate gradients to the given absolute residual sup-norm.
pub fn project_feasible(
    flux: &FluxField,
    source: &SourceMeasure,
    tolerance: f64,
) -> Result<FluxField, BeckmannError> {
    let (projected, outcome) = project_raw(flux, source, tolerance)?;
    if !outcome.converged {
        return Err(BeckmannError::ProjectionStalled {
            residual: outcome.residual_inf,
            tol: tolerance,
            iterations: outcome.iterations,
        });
    }
    Ok(projected)
}

/// `primal_energy(flux) - dual_energy(potential)` after checking feasibility
/// of the flux to `feasibility_tol` in sup-norm; weak duality makes the
/// result nonnegative up to roundoff whenever both arguments are admissible.
pub fn duality_gap(
    problem: &Problem,
    flux: &FluxField,
    potential: &ScalarField,
    feasibility_tol: f64,
) -> Result<f64, BeckmannError> {
    let grid = problem.grid();
    if flux.grid() != grid || potential.grid() != grid {
        return Err(GridError::GridMismatch.into());
    }
    let div = grid.divergence(flux)?;
    let mut worst = (0usize, 0.0f64);
    for (i, (d, t)) in div.values().iter().zip(problem.source.values()).enumerate() {
        let r = (d - t).abs();
        if r > worst.1 {
            worst = (i, r);
        }
    }
    if worst.1 > feasibility_tol {
        return Err(BeckmannError::Infeasible {
            node: worst.0,
            residual: worst.1,
            tol: feasibility_tol,
        });
    }
    Ok(primal_energy(problem, flux)? - dual_energy(problem, potential)?)
}

fn divergence_residual(problem: &Problem, flux: &FluxField) -> Result<f64, BeckmannError> {
    let div = problem.grid().divergence(flux)?;
    Ok(div
        .values()
        .iter()
        .zip(problem.source.values())
        .fold(0.0, |m, (d, t)| m.max((d - t).abs())))
}

/// On a 1-d grid the feasibility constraint has exactly one solution: running
/// sums of the source fix every edge. The matching dual potential integrates
/// the marginal congestion price along the line, which certifies optimality
/// through a zero gap. No iteration is involved, so this route stays exact on
/// grids far longer than the iterative dual could handle.
fn solve_line(problem: &Problem, tolerance: f64) -> Result<Solution, BeckmannError> {
    let grid = problem.grid();
    let h = grid.spacing();
    let area = grid.face_area();
    let t = problem.source.values();
    let n = grid.node_count();

    let mut flux_vals = vec![0.0; grid.edge_count()];
    let mut run = 0.0;
    let mut comp = 0.0; // Kahan carry: long chains otherwise drift
    for i in 0..n - 1 {
        let y = -t[i] - comp;
        let s = run + y;
        comp = (s - run) - y;
        run = s;
        flux_vals[i] = run;
    }
    let flux = FluxField::new(grid, flux_vals).expect("sized by construction");

    let mut v = vec![0.0; n];
    for i in 0..n - 1 {
        let f = flux.values()[i];
        let step = if f == 0.0 {
            0.0
        } else {
            h * problem.cost.marginal(i, f / area) * f.signum()
        };
        v[i + 1] = v[i] + step;
    }
    let mut potential = ScalarField::new(grid, v).expect("sized by construction");
    potential.remove_mean();

    let primal = primal_energy(problem, &flux)?;
    let dual = dual_energy(problem, &potential)?;
    let gap = primal - dual;
    let residual = divergence_residual(problem, &flux)?;
    Ok(Solution {
        flux,
        potential,
        report: SolveReport {
            primal_energy: primal,
            dual_energy: dual,
            gap,
            divergence_residual: residual,
            iterations: 0,
            converged: gap <= tolerance * (1.0 + primal.abs()) && residual <= tolerance,
        },
    })
}

/// Full pipeline: dual solve, flux recovery, feasibility projection, gap
/// audit. `converged` in the report requires
/// `gap <= tolerance * (1 + |primal|)` and `divergence_residual <= tolerance`.
///
/// After projection the duality gap is second order in the dual
/// stationarity, so for non-quadratic costs the descent runs in rounds with
/// geometrically tightening gradient targets and stops at the first round
/// whose audited gap passes; grinding the gradient all the way down would do
/// strictly more work for the same certificate.
pub fn solve(problem: &Problem, tolerance: f64, max_iters: usize) -> Result<Solution, BeckmannError> {
    if problem.grid().dim() == 1 {
        return solve_line(problem, tolerance);
    }
    let grid = problem.grid();
    let target = &problem.cost;
    let scale = 1.0 + problem.source.max_abs();
    let grad_floor = tolerance * scale;
    let proj_tol = scale * tolerance.min(1e-13);

    let audit = |v: Vec<f64>, iterations: usize| -> Result<Solution, BeckmannError> {
        let mut potential = ScalarField::new(grid, v).expect("sized by construction");
        potential.remove_mean();
        let recovered = recover_flux(problem, &potential)?;
        let (flux, _) = project_raw(&recovered, &problem.source, proj_tol)?;
        let primal = primal_energy(problem, &flux)?;
        let dual = dual_energy_from(problem, potential.values());
        let gap = primal - dual;
        let residual = divergence_residual(problem, &flux)?;
        Ok(Solution {
            flux,
            potential,
            report: SolveReport {
                primal_energy: primal,
                dual_energy: dual,
                gap,
                divergence_residual: residual,
                iterations,
                converged: gap <= tolerance * (1.0 + primal.abs()) && residual <= tolerance,
            },
        })
    };

    // plain quadratic: the dual solve is a single linear system, no rounds
    if target.kind() == CostKind::Power && target.p() == 2.0 {
        let dual = solve_dual(problem, tolerance, max_iters);
        return audit(dual.potential.into_values(), dual.iterations);
    }

    let (warm, cg) = quadratic_potential(&problem.source, target, 30.0 * grad_floor);
    let mut spent = cg.iterations;
    let mut x = warm;
    let mut grad_target = grad_floor * 1e4;
    let mut last: Option<Solution> = None;
    while spent < max_iters {
        let round = dual_descent(problem, x, grad_target.max(grad_floor), max_iters - spent);
        spent += round.iterations.max(1);
        x = round.x;
        let solution = audit(x.clone(), spent)?;
        let certified = solution.report.converged;
        let at_floor = round.grad_inf_norm <= grad_floor;
        last = Some(solution);
        if certified || at_floor {
            break;
        }
        if round.converged {
            grad_target /= 32.0;
        }
    }
    match last {
        Some(solution) => Ok(solution),
        None => audit(x, spent),
    }
}

/// Direct route for the plain quadratic cost (`power`, p = 2), where the dual
/// optimality condition is one linear system: a weighted graph Laplacian with
/// edge coefficients `h^(N-2) / (alpha w_e)`. Solved by conjugate gradients;
/// serves as an independent cross-check of the general pipeline.
pub fn solve_quadratic(problem: &Problem, tolerance: f64) -> Result<Solution, BeckmannError> {
    let cost = &problem.cost;
    if cost.kind() != CostKind::Power || cost.p() != 2.0 {
        return Err(BeckmannError::NotQuadratic(cost.p()));
    }
    let grid = problem.grid();
    let grad_tol = tolerance * (1.0 + problem.source.max_abs());
    let (v, outcome) = quadratic_potential(&problem.source, cost, grad_tol);
    let mut potential = ScalarField::new(grid, v).expect("sized by construction");
    potential.remove_mean();
    let flux = recover_flux(problem, &potential)?;

    let primal = primal_energy(problem, &flux)?;
    let dual = dual_energy(problem, &potential)?;
    let gap = primal - dual;
    let residual = divergence_residual(problem, &flux)?;
    Ok(Solution {
        flux,
        potential,
        report: SolveReport {
            primal_energy: primal,
            dual_energy: dual,
            gap,
            divergence_residual: residual,
            iterations: outcome.iterations,
            converged: outcome.converged,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMethod {
    /// Norm of the optimal flux for the cost `|z|^p / p`.
    MinFlux,
    /// `p^(1/p) * (max dual value)^(1/p)`, no flux needed.
    DualFormula,
}

/// Discrete negative-Sobolev dual norm of a zero-sum source, computable two
/// algebraically independent ways that agree at strong duality:
/// the p-norm of the optimal flux, or the rescaled optimal dual value.
pub fn sobolev_dual_norm(
    source: &SourceMeasure,
    p: f64,
    method: NormMethod,
    tolerance: f64,
) -> Result<f64, BeckmannError> {
    let cost = CostModel::power(p, 1.0)?;
    let problem = Problem::new(source.clone(), cost)?;
    if source.total_variation() == 0.0 {
        return Ok(0.0);
    }
    match method {
        NormMethod::MinFlux => {
            let sol = solve(&problem, tolerance, DEFAULT_MAX_ITERS)?;
            if !sol.report.converged {
                return Err(BeckmannError::NotConverged {
                    stationarity: sol.report.divergence_residual.max(sol.report.gap),
                    iterations: sol.report.iterations,
                });
            }
            Ok(sol.flux.lp_norm(p))
        }
        NormMethod::DualFormula => {
            // the full pipeline certifies the dual value through the duality
            // gap, which is quadratically small in the dual stationarity;
            // demanding a tiny gradient instead would overshoot by far
            let sol = solve(&problem, tolerance, DEFAULT_MAX_ITERS)?;
            if !sol.report.converged {
                return Err(BeckmannError::NotConverged {
                    stationarity: sol.report.gap,
                    iterations: sol.report.iterations,
                });
            }
            Ok(p.powf(1.0 / p) * sol.report.dual_energy.max(0.0).powf(1.0 / p))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn line3(p: f64) -> Problem {
        let g = Grid::new(&[3], 1.0).unwrap();
        let t = SourceMeasure::new(&g, vec![-1.0, 0.0, 1.0]).unwrap();
        Problem::new(t, CostModel::power(p, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn three_node_chain_settles_exactly() {
        // unique feasible flux (1,1); primal = dual = 1 for p = 2
        let problem = line3(2.0);
        let sol = solve(&problem, 1e-10, 1000).unwrap();
        assert!(sol.report.converged);
        assert!((sol.flux.values()[0] - 1.0).abs() < 1e-12);
        assert!((sol.flux.values()[1] - 1.0).abs() < 1e-12);
        assert!((sol.report.primal_energy - 1.0).abs() < 1e-12);
        assert!((sol.report.dual_energy - 1.0).abs() < 1e-12);
        assert!(sol.report.gap.abs() < 1e-12);
        // optimal potential (-1, 0, 1) after mean removal
        let v = sol.potential.values();
        assert!((v[0] + 1.0).abs() < 1e-12 && (v[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dual_route_matches_line_route() {
        // same fixture through the iterative dual instead of the direct line path
        let problem = line3(2.0);
        let dual = solve_dual(&problem, 1e-10, 1000);
        assert!(dual.converged);
        assert!((dual.dual_energy - 1.0).abs() < 1e-9);
        let flux = recover_flux(&problem, &dual.potential).unwrap();
        let flux = project_feasible(&flux, problem.source(), 1e-13).unwrap();
        assert!((flux.values()[0] - 1.0).abs() < 1e-8);
        let gap = duality_gap(&problem, &flux, &dual.potential, 1e-9).unwrap();
        assert!(gap.abs() < 1e-12, "gap = {gap:e}");
    }

    #[test]
    fn two_node_offset_cost_closed_form() {
        // t = (-s, s), h = 1, p = 2, delta: optimum D = s*delta + s^2/2
        let g = Grid::new(&[2], 1.0).unwrap();
        let s = 0.25;
        let t = SourceMeasure::new(&g, vec![-s, s]).unwrap();
        let problem =
            Problem::new(t, CostModel::power_delta(2.0, 1.0, 5.0).unwrap()).unwrap();
        let expected = s * 5.0 + s * s / 2.0;
        // iterative dual on the kinked conjugate
        let dual = solve_dual(&problem, 1e-10, 2000);
        assert!(dual.converged);
        assert!(
            (dual.dual_energy - expected).abs() < 1e-9,
            "dual = {}, expected = {expected}",
            dual.dual_energy
        );
        // direct line route agrees
        let sol = solve(&problem, 1e-10, 2000).unwrap();
        assert!(sol.report.converged);
        assert!((sol.report.primal_energy - expected).abs() < 1e-12);
        assert!((sol.report.dual_energy - expected).abs() < 1e-12);
    }

    #[test]
    fn square_splits_mass_evenly() {
        // corner-to-corner dipole on a 2x2 grid: both routes carry 1/2
        let g = Grid::new(&[2, 2], 1.0).unwrap();
        let t = SourceMeasure::new(&g, vec![-1.0, 0.0, 0.0, 1.0]).unwrap();
        let problem = Problem::new(t, CostModel::power(2.0, 1.0).unwrap()).unwrap();
        let sol = solve(&problem, 1e-10, 2000).unwrap();
        assert!(sol.report.converged);
        for &f in sol.flux.values() {
            assert!((f - 0.5).abs() < 1e-9, "flux = {f}");
        }
        assert!((sol.report.primal_energy - 0.5).abs() < 1e-9);
        assert!(sol.report.gap.abs() <= 1e-10);
        assert!(sol.report.gap >= -1e-12);
    }

    #[test]
    fn weighted_chain_closed_form() {
        // weights (1, 4), p = 2: unique flux (1,1), energy (1 + 4)/2
        let g = Grid::new(&[3], 1.0).unwrap();
        let t = SourceMeasure::new(&g, vec![-1.0, 0.0, 1.0]).unwrap();
        let cost = CostModel::power(2.0, 1.0)
            .unwrap()
            .with_weights(&g, vec![1.0, 4.0])
            .unwrap();
        let problem = Problem::new(t, cost).unwrap();
        let sol = solve(&problem, 1e-10, 1000).unwrap();
        assert!(sol.report.converged);
        assert!((sol.report.primal_energy - 2.5).abs() < 1e-12);
        assert!((sol.report.dual_energy - 2.5).abs() < 1e-12);
        // iterative route agrees
        let dual = solve_dual(&problem, 1e-11, 2000);
        assert!(dual.converged);
        assert!((dual.dual_energy - 2.5).abs() < 1e-8);
    }

    #[test]
    fn recover_flux_is_zero_inside_offset() {
        // power_delta: gradients below delta move nothing
        let g = Grid::new(&[3], 1.0).unwrap();
        let t = SourceMeasure::new(&g, vec![0.0; 3]).unwrap();
        let problem =
            Problem::new(t, CostModel::power_delta(2.0, 1.0, 1.0).unwrap()).unwrap();
        let v = ScalarField::new(&g, vec![0.0, 0.5, 0.7]).unwrap();
        let f = recover_flux(&problem, &v).unwrap();
        assert_eq!(f.values(), &[0.0, 0.0]);
    }

    #[test]
    fn projection_reaches_feasibility() {
        let g = Grid::new(&[2, 2], 1.0).unwrap();
        let t = SourceMeasure::new(&g, vec![-1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero = FluxField::zeros(&g);
        let f = project_feasible(&zero, &t, 1e-13).unwrap();
        // minimal-norm correction pushes 1/2 along each of the four edges
        for &c in f.values() {
            assert!((c - 0.5).abs() < 1e-12);
        }
        let d = g.divergence(&f).unwrap();
        for (di, ti) in d.values().iter().zip(t.values()) {
            assert!((di - ti).abs() < 1e-13);
        }
    }

    #[test]
    fn duality_gap_rejects_infeasible_flux() {
        let problem = line3(2.0);
        let g = problem.grid().clone();
        let bad = FluxField::new(&g, vec![1.0, 0.0]).unwrap();
        let v = ScalarField::zeros(&g);
        let err = duality_gap(&problem, &bad, &v, 1e-9).unwrap_err();
        match err {
            BeckmannError::Infeasible { node, .. } => assert!(node == 1 || node == 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn quadratic_route_agrees_with_general() {
        let g = Grid::new(&[4, 4], 0.25).unwrap();
        let mut t = vec![0.0; 16];
        t[0] = -1.0;
        t[5] = -0.5;
        t[10] = 0.7;
        t[15] = 0.8;
        let t = SourceMeasure::new(&g, t).unwrap();
        let problem = Problem::new(t, CostModel::power(2.0, 1.0).unwrap()).unwrap();
        let direct = solve_quadratic(&problem, 1e-12).unwrap();
        let general = solve(&problem, 1e-10, 5000).unwrap();
        assert!(direct.report.converged && general.report.converged);
        let rel = (direct.report.primal_energy - general.report.primal_energy).abs()
            / direct.report.primal_energy;
        assert!(rel < 1e-8, "rel = {rel:e}");
        for (a, b) in direct.flux.values().iter().zip(general.flux.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn quadratic_route_demands_p2() {
        let problem = line3(1.5);
        assert!(matches!(
            solve_quadratic(&problem, 1e-10),
            Err(BeckmannError::NotQuadratic(_))
        ));
    }

    #[test]
    fn chain_norm_is_sqrt_two() {
        // 3 nodes, unit dipole at the ends, p = 2: norm = sqrt(2) both ways
        let g = Grid::new(&[3], 1.0).unwrap();
        let t = SourceMeasure::new(&g, vec![-1.0, 0.0, 1.0]).unwrap();
        let a = sobolev_dual_norm(&t, 2.0, NormMethod::MinFlux, 1e-10).unwrap();
        let b = sobolev_dual_norm(&t, 2.0, NormMethod::DualFormula, 1e-10).unwrap();
        assert!((a - 2.0f64.sqrt()).abs() < 1e-6, "min_flux = {a}");
        assert!((b - 2.0f64.sqrt()).abs() < 1e-6, "dual_formula = {b}");
    }

    #[test]
    fn norm_of_zero_source_is_zero() {
        let g = Grid::new(&[3, 3], 1.0).unwrap();
        let t = SourceMeasure::new(&g, vec![0.0; 9]).unwrap();
        assert_eq!(
            sobolev_dual_norm(&t, 1.5, NormMethod::MinFlux, 1e-8).unwrap(),
            0.0
        );
    }

    #[test]
    fn norm_rejects_bad_exponent() {
        let g = Grid::new(&[3], 1.0).unwrap();
        let t = SourceMeasure::new(&g, vec![-1.0, 0.0, 1.0]).unwrap();
        assert!(sobolev_dual_norm(&t, 1.0, NormMethod::MinFlux, 1e-8).is_err());
        assert!(sobolev_dual_norm(&t, 0.8, NormMethod::MinFlux, 1e-8).is_err());
    }

    #[test]
    fn solve_smoke_nonquadratic() {
        let g = Grid::new(&[4, 4], 0.25).unwrap();
        let mut t = vec![0.0; 16];
        t[1] = -0.6;
        t[4] = -0.4;
        t[11] = 0.3;
        t[14] = 0.7;
        let t = SourceMeasure::new(&g, t).unwrap();
        for cost in [
            CostModel::power(1.5, 1.0).unwrap(),
            CostModel::power(3.0, 1.0).unwrap(),
            CostModel::power_delta(2.0, 1.0, 0.5).unwrap(),
        ] {
            let problem = Problem::new(t.clone(), cost).unwrap();
            let sol = solve(&problem, 1e-9, 20000).unwrap();
            assert!(sol.report.converged, "report = {:?}", sol.report);
            assert!(sol.report.gap >= -1e-12);
            assert!(sol.report.gap <= 1e-9 * (1.0 + sol.report.primal_energy));
            assert!(sol.report.divergence_residual <= 1e-9);
        }
    }
}
