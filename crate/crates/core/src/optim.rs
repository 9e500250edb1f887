//! Unconstrained smooth convex minimization and a symmetric linear solver.
//!
//! Everything here is deterministic: fixed seeds aside, two runs on the same
//! inputs take the same iterates bit for bit.

/// Result of an iterative minimization. `x` is the best iterate seen.
#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with Armijo backtracking. Stops when the gradient
/// sup-norm drops to `grad_tol`. On a line-search breakdown it returns the
/// best iterate with `converged = false` so the caller can switch methods.
pub fn lbfgs(
    mut value_grad: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: Vec<f64>,
    grad_tol: f64,
    max_iters: usize,
) -> MinimizeOutcome {
    const MEMORY: usize = 10;
    const C1: f64 = 1e-4;

    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = value_grad(&x, &mut g);
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new(); // (s, y, 1/s.y)

    let mut best = MinimizeOutcome {
        x: x.clone(),
        value: f,
        grad_inf_norm: inf_norm(&g),
        iterations: 0,
        converged: inf_norm(&g) <= grad_tol,
    };
    if best.converged {
        return best;
    }

    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for iter in 1..=max_iters {
        // two-loop recursion: d = -B g with B built from stored pairs
        d.copy_from_slice(&g);
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.last() {
            let gamma = dot(s, y) / dot(y, y);
            for di in d.iter_mut() {
                *di *= gamma;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        for di in d.iter_mut() {
            *di = -*di;
        }

        let mut slope = dot(&g, &d);
        if !slope.is_finite() || slope >= 0.0 {
            // fall back to steepest descent if curvature info went bad
            history.clear();
            for (di, gi) in d.iter_mut().zip(&g) {
                *di = -gi;
            }
            slope = -dot(&g, &g);
            if slope == 0.0 {
                break;
            }
        }

        let mut step = if history.is_empty() {
            1.0 / (1.0 + dot(&g, &g).sqrt())
        } else {
            1.0
        };
        let mut f_new = f64::INFINITY;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            f_new = value_grad(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= f + C1 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            best.converged = false;
            best.iterations = iter;
            return best;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == MEMORY {
                history.remove(0);
            }
            history.push((s, y, 1.0 / sy));
        }

        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;

        let gnorm = inf_norm(&g);
        if f < best.value {
            best.x.copy_from_slice(&x);
            best.value = f;
            best.grad_inf_norm = gnorm;
        }
        best.iterations = iter;
        if gnorm <= grad_tol {
            best.x.copy_from_slice(&x);
            best.value = f;
            best.grad_inf_norm = gnorm;
            best.converged = true;
            return best;
        }
    }
    best
}

/// Nesterov-accelerated gradient descent with a backtracked local Lipschitz
/// estimate and objective-increase restarts. Slower per digit than l-bfgs but
/// tolerant of conjugates whose curvature blows up, as happens for exponents
/// q close to 1.
pub fn accelerated_gradient(
    mut value_grad: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: Vec<f64>,
    grad_tol: f64,
    max_iters: usize,
) -> MinimizeOutcome {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = value_grad(&x, &mut g);
    let gnorm0 = inf_norm(&g);
    let mut best = MinimizeOutcome {
        x: x.clone(),
        value: f,
        grad_inf_norm: gnorm0,
        iterations: 0,
        converged: gnorm0 <= grad_tol,
    };
    if best.converged {
        return best;
    }

    let mut lip = (gnorm0).max(1e-8);
    let mut x_prev = x.clone();
    let mut theta = 1.0f64;
    let mut y = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut x_new = vec![0.0; n];

    for iter in 1..=max_iters {
        let theta_new = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = (theta - 1.0) / theta_new;
        for i in 0..n {
            y[i] = x[i] + beta * (x[i] - x_prev[i]);
        }
        let fy = value_grad(&y, &mut gy);
        let gy2 = dot(&gy, &gy);

        // backtrack the step until the quadratic upper bound holds at y
        let mut f_new = f64::INFINITY;
        for _ in 0..80 {
            for i in 0..n {
                x_new[i] = y[i] - gy[i] / lip;
            }
            f_new = value_grad(&x_new, &mut g);
            if f_new.is_finite() && f_new <= fy - 0.5 * gy2 / lip {
                break;
            }
            lip *= 2.0;
        }

        let gnorm;
        if f_new <= f {
            x_prev.copy_from_slice(&x);
            std::mem::swap(&mut x, &mut x_new);
            theta = theta_new;
            f = f_new;
            gnorm = inf_norm(&g);
        } else {
            // momentum overshot: drop the trial, restart from x; the next
            // step is a plain gradient step, which backtracking makes a
            // guaranteed descent
            theta = 1.0;
            x_prev.copy_from_slice(&x);
            f = value_grad(&x, &mut g);
            gnorm = inf_norm(&g);
        }
        lip *= 0.9;

        if f < best.value {
            best.x.copy_from_slice(&x);
            best.value = f;
            best.grad_inf_norm = gnorm;
        }
        best.iterations = iter;
        if gnorm <= grad_tol {
            best.x.copy_from_slice(&x);
            best.value = f;
            best.grad_inf_norm = gnorm;
            best.converged = true;
            return best;
        }
    }
    best
}

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub residual_inf: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Conjugate gradients for a symmetric positive semidefinite operator, given
/// as a matrix-vector closure. The right-hand side must lie in the range (for
/// a graph Laplacian: sum to zero). Stops at an absolute residual sup-norm.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: Vec<f64>,
    tol_inf: f64,
    max_iters: usize,
) -> CgOutcome {
    let n = b.len();
    let mut x = x0;
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];

    let mut res = inf_norm(&r);
    if res <= tol_inf {
        return CgOutcome {
            x,
            residual_inf: res,
            iterations: 0,
            converged: true,
        };
    }
    for iter in 1..=max_iters {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
        }
        if iter % 50 == 0 {
            // refresh the true residual to curb floating-point drift
            apply(&x, &mut ax);
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
        } else {
            for i in 0..n {
                r[i] -= alpha * ap[i];
            }
        }
        let rr_new = dot(&r, &r);
        res = inf_norm(&r);
        if res <= tol_inf {
            return CgOutcome {
                x,
                residual_inf: res,
                iterations: iter,
                converged: true,
            };
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    CgOutcome {
        x,
        residual_inf: res,
        iterations: max_iters,
        converged: false,
    }
}
