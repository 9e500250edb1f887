//! Randomized invariants. Convex conjugacy identities for the edge costs,
//! exact discrete integration by parts, cycle cancellation and path
//! reconstruction round trips, homogeneity of the dual norm, and the
//! duality-gap certificate on small random instances.

use std::sync::Arc;

use beckmann_core::{
    cancel_cycles, decompose, is_acyclic, sobolev_dual_norm, solve, solve_quadratic, CostModel,
    FluxField, Grid, NormMethod, Problem, ScalarField, SourceMeasure,
};
use proptest::prelude::*;

fn cost_params() -> impl Strategy<Value = (f64, f64, f64)> {
    (1.05f64..4.0, 0.1f64..10.0, prop_oneof![Just(0.0), 0.01f64..1.0])
}

fn small_grid() -> impl Strategy<Value = Arc<Grid>> {
    (prop::collection::vec(2usize..5, 1..=3), 0.1f64..2.0)
        .prop_map(|(dims, h)| Grid::new(&dims, h).expect("dims drawn from valid ranges"))
}

fn grid_with_fields() -> impl Strategy<Value = (Arc<Grid>, Vec<f64>, Vec<f64>)> {
    small_grid().prop_flat_map(|grid| {
        let nodes = grid.node_count();
        let edges = grid.edge_count();
        (
            Just(grid),
            prop::collection::vec(-1.0f64..1.0, nodes),
            prop::collection::vec(-1.0f64..1.0, edges),
        )
    })
}

fn grid_with_flux() -> impl Strategy<Value = (Arc<Grid>, Vec<f64>)> {
    (prop::collection::vec(2usize..6, 2), 0.1f64..2.0)
        .prop_map(|(dims, h)| Grid::new(&dims, h).expect("dims drawn from valid ranges"))
        .prop_flat_map(|grid| {
            let edges = grid.edge_count();
            (Just(grid), prop::collection::vec(-1.0f64..1.0, edges))
        })
}

fn balanced_source(grid: &Arc<Grid>, mut values: Vec<f64>) -> SourceMeasure {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    for v in &mut values {
        *v -= mean;
    }
    SourceMeasure::new(grid, values).expect("mean-centered values sum to zero")
}

fn random_problem() -> impl Strategy<Value = (Problem, f64, f64)> {
    ((4usize..9, 4usize..9), 1.2f64..3.0, prop_oneof![Just(0.0), 0.1f64..0.8])
        .prop_flat_map(|((nx, ny), p, delta)| {
            let grid = Grid::new(&[nx, ny], 1.0 / nx as f64).expect("valid dims");
            let nodes = grid.node_count();
            (
                Just(grid),
                prop::collection::vec(-1.0f64..1.0, nodes),
                Just(p),
                Just(delta),
            )
        })
        .prop_map(|(grid, values, p, delta)| {
            let source = balanced_source(&grid, values);
            let cost = CostModel::power_delta(p, 1.0, delta).expect("valid parameters");
            let problem = Problem::new(source, cost).expect("matching grids");
            (problem, p, delta)
        })
}

proptest! {
    /// `H(z) + H*(xi) >= z * xi` for every density and every price.
    #[test]
    fn fenchel_young_inequality(
        (p, alpha, delta) in cost_params(),
        z in -50.0f64..50.0,
        xi in -50.0f64..50.0,
    ) {
        let cost = CostModel::power_delta(p, alpha, delta).expect("valid parameters");
        let lhs = cost.eval_h(0, z) + cost.eval_h_star(0, xi);
        let rhs = z * xi;
        prop_assert!(lhs >= rhs - 1e-9 * (1.0 + lhs.abs() + rhs.abs()));
    }

    /// Equality holds exactly when the price sits on the subdifferential,
    /// `xi = sign(z) * dH/dz(|z|)`.
    #[test]
    fn fenchel_young_equality_at_matched_price(
        (p, alpha, delta) in cost_params(),
        z in prop_oneof![-50.0f64..-1e-3, 1e-3f64..50.0],
    ) {
        let cost = CostModel::power_delta(p, alpha, delta).expect("valid parameters");
        let xi = z.signum() * cost.marginal(0, z);
        let lhs = cost.eval_h(0, z) + cost.eval_h_star(0, xi);
        let rhs = z * xi;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs() + rhs.abs()));
    }

    /// The conjugate slope inverts the marginal cost outside the dead zone.
    #[test]
    fn conjugate_slope_inverts_marginal(
        (p, alpha, delta) in cost_params(),
        z in prop_oneof![-50.0f64..-1e-3, 1e-3f64..50.0],
    ) {
        let cost = CostModel::power_delta(p, alpha, delta).expect("valid parameters");
        let xi = z.signum() * cost.marginal(0, z);
        let back = cost.grad_h_star(0, xi);
        prop_assert!((back - z).abs() <= 1e-7 * (1.0 + z.abs()));
    }

    /// Prices inside the dead zone move no mass and cost nothing.
    #[test]
    fn dead_zone_prices_are_inert(
        p in 1.05f64..4.0,
        alpha in 0.1f64..10.0,
        delta in 0.01f64..1.0,
        frac in -1.0f64..1.0,
    ) {
        let cost = CostModel::power_delta(p, alpha, delta).expect("valid parameters");
        let xi = frac * delta;
        prop_assert_eq!(cost.eval_h_star(0, xi), 0.0);
        prop_assert_eq!(cost.grad_h_star(0, xi), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// `sum_e (v_head - v_tail) f_e == sum_i v_i (div f)_i` to roundoff, on
    /// grids of every supported dimension.
    #[test]
    fn gradient_divergence_adjoint((grid, v_vals, f_vals) in grid_with_fields()) {
        let v = ScalarField::new(&grid, v_vals.clone()).expect("sized by construction");
        let f = FluxField::new(&grid, f_vals.clone()).expect("sized by construction");
        let grad = grid.gradient(&v).expect("matching grid");
        let lhs: f64 = grad
            .iter()
            .zip(&f_vals)
            .map(|(g, fv)| g * fv * grid.spacing())
            .sum();
        let div = grid.divergence(&f).expect("matching grid");
        let rhs: f64 = v_vals.iter().zip(div.values()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    /// Cancellation keeps the divergence, never raises any edge magnitude,
    /// and leaves no cycle behind.
    #[test]
    fn cancellation_shrinks_without_moving_mass((grid, f_vals) in grid_with_flux()) {
        let flux = FluxField::new(&grid, f_vals).expect("sized by construction");
        let cancelled = cancel_cycles(&flux, 1e-9);
        let before = grid.divergence(&flux).expect("matching grid");
        let after = grid.divergence(&cancelled).expect("matching grid");
        for (a, b) in before.values().iter().zip(after.values()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
        for (a, b) in flux.values().iter().zip(cancelled.values()) {
            prop_assert!(b.abs() <= a.abs() + 1e-12);
        }
        prop_assert!(is_acyclic(&cancelled, 1e-9));
    }

    /// Decomposing an acyclic flux and replaying the paths reproduces both
    /// the flux and the source it transports.
    #[test]
    fn decomposition_round_trip((grid, f_vals) in grid_with_flux()) {
        let flux = FluxField::new(&grid, f_vals).expect("sized by construction");
        let cancelled = cancel_cycles(&flux, 1e-9);
        let div = grid.divergence(&cancelled).expect("matching grid");
        let source = balanced_source(&grid, div.values().to_vec());
        let scale = 1.0 + cancelled.max_abs();
        let paths = decompose(&cancelled, &source, 1e-9 * scale).expect("cancelled flux is acyclic");
        let rebuilt = paths.reconstruct_flux();
        for (a, b) in cancelled.values().iter().zip(rebuilt.values()) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
        for (a, b) in paths.induced_source().iter().zip(source.values()) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// `norm(c * t) == |c| * norm(t)` for the dual-formula route.
    #[test]
    fn dual_norm_is_absolutely_homogeneous(
        values in prop::collection::vec(-1.0f64..1.0, 36),
        c in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0],
        p in prop_oneof![Just(1.3), Just(2.0), Just(3.0)],
    ) {
        let grid = Grid::new(&[6, 6], 1.0 / 6.0).expect("valid dims");
        let source = balanced_source(&grid, values);
        let scaled = balanced_source(&grid, source.values().iter().map(|t| c * t).collect());
        let base = sobolev_dual_norm(&source, p, NormMethod::DualFormula, 1e-10)
            .expect("small instance converges");
        let big = sobolev_dual_norm(&scaled, p, NormMethod::DualFormula, 1e-10)
            .expect("small instance converges");
        prop_assert!((big - c.abs() * base).abs() <= 1e-7 * (1.0 + big.abs()));
    }

    /// Every solve that reports convergence backs it with a certificate:
    /// small duality gap and a feasible flux.
    #[test]
    fn solve_certificate_holds((problem, _p, _delta) in random_problem()) {
        let tol = 1e-8;
        let solution = solve(&problem, tol, 50_000).expect("well-posed instance");
        let report = &solution.report;
        prop_assert!(report.converged);
        prop_assert!(report.gap <= tol * (1.0 + report.primal_energy.abs()));
        prop_assert!(report.divergence_residual <= tol);
        prop_assert!(report.primal_energy >= report.dual_energy - tol);
    }

    /// The general pipeline agrees with the direct quadratic solve.
    #[test]
    fn general_pipeline_matches_quadratic_solve(
        values in prop::collection::vec(-1.0f64..1.0, 64),
    ) {
        let grid = Grid::new(&[8, 8], 0.125).expect("valid dims");
        let source = balanced_source(&grid, values);
        let direct = Problem::new(source.clone(), CostModel::power(2.0, 1.0).expect("valid"))
            .expect("matching grids");
        let general = Problem::new(
            source,
            CostModel::power_delta(2.0, 1.0, 0.0).expect("valid"),
        )
        .expect("matching grids");
        let a = solve_quadratic(&direct, 1e-10).expect("linear solve");
        let b = solve(&general, 1e-10, 50_000).expect("well-posed instance");
        let rel = (a.report.primal_energy - b.report.primal_energy).abs()
            / (1.0 + a.report.primal_energy.abs());
        prop_assert!(rel <= 1e-8);
    }
}
