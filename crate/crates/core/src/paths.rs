//! Path bundles: the route-based view of a flux.
//!
//! A feasible acyclic flux decomposes into weighted source-to-sink paths.
//! The bundle carries the same mass as the flux (edgewise, the flux is the
//! signed sum of path weights), and at an optimum every used route is a
//! shortest path for the congested marginal cost, the equilibrium property
//! checked at the end of this module.

use crate::cost::{CostError, CostModel};
use crate::grid::{FluxField, Grid, GridError, ScalarField, SourceMeasure};
use std::collections::BinaryHeap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PathsError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("flux carries a directed cycle through nodes {cycle:?}; cancel cycles first")]
    CyclicFlux { cycle: Vec<usize> },
    #[error("divergence(flux) misses the source by {residual:e} at node {node}, above eps = {eps:e}")]
    DivergenceMismatch { node: usize, residual: f64, eps: f64 },
    #[error("mass {mass:e} stranded at node {node}: flux and source are numerically inconsistent")]
    StrandedMass { node: usize, mass: f64 },
    #[error("path {path} has fewer than 2 nodes")]
    TooShort { path: usize },
    #[error("path {path} weight must be positive and finite, got {weight}")]
    BadWeight { path: usize, weight: f64 },
    #[error("path {path} visits node {node}, outside the grid")]
    NodeRange { path: usize, node: usize },
    #[error("path {path} step {step} joins non-adjacent nodes {a} and {b}")]
    NotAdjacent {
        path: usize,
        step: usize,
        a: usize,
        b: usize,
    },
}

/// A simple path through grid nodes carrying a positive mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub nodes: Vec<usize>,
    pub weight: f64,
}

/// A weighted bundle of paths on one grid.
#[derive(Debug, Clone)]
pub struct PathMeasure {
    grid: Arc<Grid>,
    paths: Vec<Path>,
}

impl PathMeasure {
    pub fn new(grid: &Arc<Grid>, paths: Vec<Path>) -> Result<Self, PathsError> {
        for (i, path) in paths.iter().enumerate() {
            if path.nodes.len() < 2 {
                return Err(PathsError::TooShort { path: i });
            }
            if !(path.weight.is_finite() && path.weight > 0.0) {
                return Err(PathsError::BadWeight {
                    path: i,
                    weight: path.weight,
                });
            }
            for &node in &path.nodes {
                if node >= grid.node_count() {
                    return Err(PathsError::NodeRange { path: i, node });
                }
            }
            for (step, pair) in path.nodes.windows(2).enumerate() {
                if grid.edge_between(pair[0], pair[1]).is_none() {
                    return Err(PathsError::NotAdjacent {
                        path: i,
                        step,
                        a: pair[0],
                        b: pair[1],
                    });
                }
            }
        }
        Ok(PathMeasure {
            grid: grid.clone(),
            paths,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Total transported mass, `sum of weights`. For a bundle decomposed from
    /// a source `t` this equals `sum_i |t_i| / 2`: half the variation of the
    /// boundary measure the bundle induces.
    pub fn total_mass(&self) -> f64 {
        self.paths.iter().map(|p| p.weight).sum()
    }

    /// Node measure the bundle induces: `+weight` at each path's end,
    /// `-weight` at its start. Matches the source after an exact decomposition.
    pub fn induced_source(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.grid.node_count()];
        for p in &self.paths {
            t[*p.nodes.last().expect("validated nonempty")] += p.weight;
            t[p.nodes[0]] -= p.weight;
        }
        t
    }

    /// Signed edgewise sum of path weights; reproduces the decomposed flux.
    pub fn reconstruct_flux(&self) -> FluxField {
        let mut f = vec![0.0; self.grid.edge_count()];
        for p in &self.paths {
            for pair in p.nodes.windows(2) {
                let (e, sign) = self
                    .grid
                    .edge_between(pair[0], pair[1])
                    .expect("validated adjacency");
                f[e] += sign * p.weight;
            }
        }
        FluxField::new(&self.grid, f).expect("sized by construction")
    }
}

/// Per-node incidence: `(edge, neighbour, +1.0 if the node is the tail)`.
fn adjacency(grid: &Grid) -> Vec<Vec<(u32, u32, f64)>> {
    let mut adj = vec![Vec::with_capacity(2 * grid.dim()); grid.node_count()];
    for (e, edge) in grid.edges().iter().enumerate() {
        adj[edge.tail].push((e as u32, edge.head as u32, 1.0));
        adj[edge.head].push((e as u32, edge.tail as u32, -1.0));
    }
    adj
}

/// Finds a directed cycle among edges with `|flux| > eps`, oriented by flux
/// sign. Returns its nodes in flow order, or `None` when the flux is acyclic.
pub fn find_cycle(flux: &FluxField, eps: f64) -> Option<Vec<usize>> {
    let grid = flux.grid();
    let n = grid.node_count();
    let f = flux.values();
    let adj = adjacency(grid);

    // colors: 0 unvisited, 1 on the current stack, 2 finished
    let mut color = vec![0u8; n];
    let mut parent = vec![usize::MAX; n];
    let mut pos = vec![0usize; n];
    let mut stack: Vec<usize> = Vec::new();

    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        color[root] = 1;
        stack.push(root);
        while let Some(&u) = stack.last() {
            let mut advanced = false;
            while pos[u] < adj[u].len() {
                let (e, v, orient) = adj[u][pos[u]];
                pos[u] += 1;
                let (e, v) = (e as usize, v as usize);
                // edge leaves u when the flux sign matches the incidence
                if f[e] * orient <= eps {
                    continue;
                }
                match color[v] {
                    0 => {
                        parent[v] = u;
                        color[v] = 1;
                        stack.push(v);
                        advanced = true;
                        break;
                    }
                    1 => {
                        // walk back from u to v along parents: cycle in flow order
                        let mut cyc = vec![u];
                        let mut w = u;
                        while w != v {
                            w = parent[w];
                            cyc.push(w);
                        }
                        cyc.reverse();
                        return Some(cyc);
                    }
                    _ => {}
                }
            }
            if !advanced {
                color[u] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Whether no directed cycle of above-threshold flux exists.
pub fn is_acyclic(flux: &FluxField, eps: f64) -> bool {
    find_cycle(flux, eps).is_none()
}

/// Removes circulation: repeatedly finds a directed cycle and subtracts its
/// minimum flux. Divergence is untouched and no edge magnitude ever grows,
/// so any congestion energy built from a monotone cost can only decrease.
pub fn cancel_cycles(flux: &FluxField, eps: f64) -> FluxField {
    let grid = flux.grid().clone();
    let mut current = flux.clone();
    while let Some(cycle) = find_cycle(&current, eps) {
        let k = cycle.len();
        let mut step = f64::INFINITY;
        let mut hops = Vec::with_capacity(k);
        for i in 0..k {
            let (a, b) = (cycle[i], cycle[(i + 1) % k]);
            let (e, sign) = grid.edge_between(a, b).expect("cycle edges exist");
            step = step.min(current.values()[e] * sign);
            hops.push((e, sign));
        }
        debug_assert!(step > eps);
        for (e, sign) in hops {
            current.values_mut()[e] -= sign * step;
        }
    }
    current
}

/// Splits an acyclic feasible flux into weighted source-to-sink paths.
///
/// Repeatedly walks from the lowest remaining origin downstream along
/// residual flux, preferring the lowest edge index, until a node with
/// remaining positive source is hit; ships the bottleneck weight and
/// subtracts it, draining each origin all the way to zero. The walk
/// backtracks out of pockets of sub-threshold residue rather than failing in
/// them, so only supply above `eps` with no outlet is an error. Terminates
/// after at most `edges + 2 * nodes` extractions since each one zeroes an
/// edge or drains an endpoint exactly.
pub fn decompose(
    flux: &FluxField,
    source: &SourceMeasure,
    eps: f64,
) -> Result<PathMeasure, PathsError> {
    let grid = flux.grid().clone();
    if source.grid() != &grid {
        return Err(GridError::GridMismatch.into());
    }
    let div = grid.divergence(flux)?;
    for (node, (d, t)) in div.values().iter().zip(source.values()).enumerate() {
        let residual = (d - t).abs();
        if residual > eps {
            return Err(PathsError::DivergenceMismatch {
                node,
                residual,
                eps,
            });
        }
    }
    if let Some(cycle) = find_cycle(flux, eps) {
        return Err(PathsError::CyclicFlux { cycle });
    }

    let n = grid.node_count();
    let adj = adjacency(&grid);
    let mut rf = flux.values().to_vec();
    let mut rs = source.values().to_vec();
    let mut paths = Vec::new();

    // continuations at a node, in shipping preference: edges above eps by
    // index order, then positive trickles by descending residual (the bulk
    // of sub-threshold residue leads out of noise pockets, not into them)
    let candidates = |u: usize, rf: &[f64]| -> Vec<(usize, usize, f64)> {
        let mut strong = Vec::new();
        let mut weak: Vec<(usize, usize, f64)> = Vec::new();
        for &(e, v, orient) in &adj[u] {
            let r = rf[e as usize] * orient;
            if r > eps {
                strong.push((e as usize, v as usize, orient));
            } else if r > 0.0 {
                weak.push((e as usize, v as usize, orient));
            }
        }
        weak.sort_by(|a, b| {
            let ra = rf[a.0] * a.2;
            let rb = rf[b.0] * b.2;
            rb.partial_cmp(&ra).expect("finite residuals")
        });
        strong.append(&mut weak);
        strong
    };

    // depth-first walk along positive residuals until `accept` likes a node;
    // returns the simple path with its bottleneck. Visit marks are permanent
    // within one walk (a node that dead-ends once cannot reach a sink
    // through any other entry either), which keeps the search linear and
    // backs out of pockets of sub-eps residue without touching the flux.
    let walk = |start: usize, rf: &[f64], accept: &dyn Fn(usize) -> bool| {
        let mut visited = vec![false; n];
        visited[start] = true;
        let mut nodes = vec![start];
        let mut hops: Vec<(usize, f64)> = Vec::new();
        let mut narrow: Vec<f64> = Vec::new();
        let mut frames = vec![(candidates(start, rf), 0usize)];
        while let Some((cand, cursor)) = frames.last_mut() {
            let Some(&(e, v, orient)) = cand.get(*cursor) else {
                frames.pop();
                nodes.pop();
                hops.pop();
                narrow.pop();
                continue;
            };
            *cursor += 1;
            if visited[v] {
                continue;
            }
            visited[v] = true;
            let r = rf[e] * orient;
            let b = narrow.last().copied().unwrap_or(f64::INFINITY).min(r);
            nodes.push(v);
            hops.push((e, orient));
            narrow.push(b);
            if accept(v) {
                return Some((nodes, hops, b));
            }
            frames.push((candidates(v, rf), 0));
        }
        None
    };

    for start in 0..n {
        // drain to exactly zero: settling for `> -eps` would let each origin
        // keep up to eps of supply, and the mirror-image positive residue can
        // then pile past eps at a single sink even though no one origin is over
        while rs[start] < 0.0 {
            // prefer sinks with supply above eps; settle for any remnant
            let found = walk(start, &rf, &|u| rs[u] > eps)
                .or_else(|| walk(start, &rf, &|u| rs[u] > 0.0));
            let Some((nodes, hops, bottleneck)) = found else {
                if rs[start] >= -eps {
                    break; // sub-threshold remnant with no outlet, audited below
                }
                return Err(PathsError::StrandedMass {
                    node: start,
                    mass: -rs[start],
                });
            };
            let sink = *nodes.last().expect("walk paths are nonempty");
            // the min of positive quantities; zeroes its argument exactly,
            // so every extraction retires an edge or drains an endpoint
            let weight = bottleneck.min(rs[sink]).min(-rs[start]);
            debug_assert!(weight > 0.0);
            for &(e, orient) in &hops {
                rf[e] -= orient * weight;
            }
            rs[start] += weight;
            rs[sink] -= weight;
            paths.push(Path { nodes, weight });
        }
    }

    for (node, &m) in rs.iter().enumerate() {
        if m.abs() > eps {
            return Err(PathsError::StrandedMass { node, mass: m.abs() });
        }
    }
    Ok(PathMeasure { grid, paths })
}

/// Scalar and vector traffic intensities of a bundle, per edge.
#[derive(Debug, Clone)]
pub struct IntensityPair {
    /// `i_e = sum of weights of paths crossing e`, direction-blind.
    pub scalar: Vec<f64>,
    /// Signed version; equals the decomposed flux edgewise.
    pub vector: Vec<f64>,
}

pub fn traffic_intensity(paths: &PathMeasure) -> IntensityPair {
    let grid = paths.grid();
    let mut scalar = vec![0.0; grid.edge_count()];
    let mut vector = vec![0.0; grid.edge_count()];
    for p in paths.paths() {
        for pair in p.nodes.windows(2) {
            let (e, sign) = grid
                .edge_between(pair[0], pair[1])
                .expect("validated adjacency");
            scalar[e] += p.weight;
            vector[e] += sign * p.weight;
        }
    }
    IntensityPair { scalar, vector }
}

/// Congestion energy of the bundle: the primal energy evaluated at the
/// scalar intensity, `sum_e h^N H(x_e, i_e / h^(N-1))`.
pub fn wardrop_energy(paths: &PathMeasure, cost: &CostModel) -> Result<f64, PathsError> {
    let grid = paths.grid();
    check_cost_weights(grid, cost)?;
    let intensity = traffic_intensity(paths);
    let vol = grid.cell_volume();
    let area = grid.face_area();
    Ok(intensity
        .scalar
        .iter()
        .enumerate()
        .map(|(e, &i)| vol * cost.eval_h(e, i / area))
        .sum())
}

fn check_cost_weights(grid: &Grid, cost: &CostModel) -> Result<(), PathsError> {
    if let Some(w) = cost.weights() {
        if w.len() != grid.edge_count() {
            return Err(CostError::WeightLength {
                expected: grid.edge_count(),
                found: w.len(),
            }
            .into());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Potential gain along the path differs from its marginal-cost length.
    PriceMismatch,
    /// A strictly cheaper marginal-cost route joins the same endpoints.
    CheaperRoute,
}

#[derive(Debug, Clone, Copy)]
pub struct Violation {
    pub path: usize,
    pub kind: ViolationKind,
    pub magnitude: f64,
}

/// Outcome of the equilibrium audit over every path in a bundle.
#[derive(Debug, Clone)]
pub struct EquilibriumReport {
    pub checked: usize,
    pub violations: Vec<Violation>,
    /// Largest `|potential gain - marginal length|` seen.
    pub max_price_error: f64,
    /// Largest `marginal length - shortest length` seen.
    pub max_detour: f64,
}

impl EquilibriumReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Wardrop equilibrium audit. Each edge gets the congested marginal length
/// `h * dH/dz(x_e, i_e / h^(N-1))`, which on unused edges reduces to the
/// zero-load floor `h * dH/dz(x_e, 0)`. For every path the audit demands,
/// within `tol`:
/// 1. the potential gain `v(end) - v(start)` pays exactly the path's
///    marginal length, and
/// 2. no strictly cheaper route joins the same endpoints (Dijkstra).
pub fn equilibrium_check(
    paths: &PathMeasure,
    potential: &ScalarField,
    cost: &CostModel,
    tol: f64,
) -> Result<EquilibriumReport, PathsError> {
    let grid = paths.grid();
    if potential.grid() != grid {
        return Err(GridError::GridMismatch.into());
    }
    check_cost_weights(grid, cost)?;

    let h = grid.spacing();
    let area = grid.face_area();
    let intensity = traffic_intensity(paths);
    let lengths: Vec<f64> = intensity
        .scalar
        .iter()
        .enumerate()
        .map(|(e, &i)| h * cost.marginal(e, i / area))
        .collect();

    let adj = adjacency(grid);
    let v = potential.values();
    let mut dist_cache: Vec<Option<Vec<f64>>> = vec![None; grid.node_count()];
    let mut violations = Vec::new();
    let mut max_price_error = 0.0f64;
    let mut max_detour = 0.0f64;

    for (i, p) in paths.paths().iter().enumerate() {
        let (start, end) = (p.nodes[0], *p.nodes.last().expect("nonempty"));
        let marginal_length: f64 = p
            .nodes
            .windows(2)
            .map(|pair| {
                let (e, _) = grid.edge_between(pair[0], pair[1]).expect("adjacent");
                lengths[e]
            })
            .sum();
        let gain = v[end] - v[start];
        let price_error = (gain - marginal_length).abs();
        max_price_error = max_price_error.max(price_error);
        if price_error > tol {
            violations.push(Violation {
                path: i,
                kind: ViolationKind::PriceMismatch,
                magnitude: price_error,
            });
        }

        if dist_cache[start].is_none() {
            dist_cache[start] = Some(dijkstra(&adj, &lengths, start));
        }
        let shortest = dist_cache[start].as_ref().expect("just filled")[end];
        let detour = marginal_length - shortest;
        max_detour = max_detour.max(detour);
        if detour > tol {
            violations.push(Violation {
                path: i,
                kind: ViolationKind::CheaperRoute,
                magnitude: detour,
            });
        }
    }

    Ok(EquilibriumReport {
        checked: paths.len(),
        violations,
        max_price_error,
        max_detour,
    })
}

/// Shortest path distances from `start` over undirected edges with
/// nonnegative lengths. Finite nonnegative floats compare correctly as raw
/// bits, which keeps the heap free of wrapper types.
fn dijkstra(adj: &[Vec<(u32, u32, f64)>], lengths: &[f64], start: usize) -> Vec<f64> {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    dist[start] = 0.0;
    let mut heap: BinaryHeap<std::cmp::Reverse<(u64, u32)>> = BinaryHeap::new();
    heap.push(std::cmp::Reverse((0u64, start as u32)));
    while let Some(std::cmp::Reverse((bits, u))) = heap.pop() {
        let d = f64::from_bits(bits);
        let u = u as usize;
        if d > dist[u] {
            continue;
        }
        for &(e, w, _) in &adj[u] {
            let nd = d + lengths[e as usize];
            let w = w as usize;
            if nd < dist[w] {
                dist[w] = nd;
                heap.push(std::cmp::Reverse((nd.to_bits(), w as u32)));
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beckmann::{primal_energy, solve, Problem};
    use crate::cost::CostModel;
    use crate::grid::Grid;

    fn square_cycle_flux() -> FluxField {
        // unit circulation 0 -> 2 -> 3 -> 1 -> 0 on a 2x2 grid
        // edges: e0: 0->2, e1: 1->3, e2: 0->1, e3: 2->3
        let g = Grid::new(&[2, 2], 1.0).unwrap();
        FluxField::new(&g, vec![1.0, -1.0, -1.0, 1.0]).unwrap()
    }

    #[test]
    fn detects_square_circulation() {
        let f = square_cycle_flux();
        assert!(!is_acyclic(&f, 1e-12));
        let cycle = find_cycle(&f, 1e-12).unwrap();
        assert_eq!(cycle.len(), 4);
        // the witness walks in flow order
        for i in 0..4 {
            let (a, b) = (cycle[i], cycle[(i + 1) % 4]);
            let (e, sign) = f.grid().edge_between(a, b).unwrap();
            assert!(f.values()[e] * sign > 0.0);
        }
    }

    #[test]
    fn chain_is_acyclic() {
        let g = Grid::new(&[3], 1.0).unwrap();
        let f = FluxField::new(&g, vec![1.0, 1.0]).unwrap();
        assert!(is_acyclic(&f, 1e-12));
        // sub-threshold edges are invisible to the cycle search
        let f = square_cycle_flux();
        assert!(is_acyclic(&f, 2.0));
    }

    #[test]
    fn cancelling_removes_circulation_exactly() {
        let f = square_cycle_flux();
        let cancelled = cancel_cycles(&f, 1e-12);
        assert_eq!(cancelled.values(), &[0.0, 0.0, 0.0, 0.0]);
        // divergence is preserved
        let g = f.grid();
        let before = g.divergence(&f).unwrap();
        let after = g.divergence(&cancelled).unwrap();
        assert_eq!(before.values(), after.values());
    }

    #[test]
    fn cancelling_superposition_keeps_transport() {
        // circulation plus a plain left-to-right chain flow
        let g = Grid::new(&[2, 2], 1.0).unwrap();
        let circ = [1.0, -1.0, -1.0, 1.0];
        let through = [0.7, 0.0, 0.0, 0.7]; // 0 -> 2 -> 3
        let vals: Vec<f64> = circ.iter().zip(&through).map(|(a, b)| a + b).collect();
        let f = FluxField::new(&g, vals).unwrap();
        let cancelled = cancel_cycles(&f, 1e-12);
        assert!(is_acyclic(&cancelled, 1e-12));
        let d = g.divergence(&cancelled).unwrap();
        assert!((d.values()[0] + 0.7).abs() < 1e-12);
        assert!((d.values()[3] - 0.7).abs() < 1e-12);
        // no edge magnitude grew
        for (a, b) in cancelled.values().iter().zip(f.values()) {
            assert!(a.abs() <= b.abs() + 1e-15);
        }
    }

    #[test]
    fn cancelling_never_raises_congestion_energy() {
        let g = Grid::new(&[3, 3], 0.5).unwrap();
        let vals: Vec<f64> = (0..g.edge_count())
            .map(|e| ((e * 7919 % 23) as f64 - 11.0) / 7.0)
            .collect();
        let f = FluxField::new(&g, vals).unwrap();
        let cancelled = cancel_cycles(&f, 1e-12);
        for cost in [
            CostModel::power(1.5, 1.0).unwrap(),
            CostModel::power(3.0, 2.0).unwrap(),
            CostModel::power_delta(2.0, 1.0, 0.7).unwrap(),
        ] {
            let before: f64 = (0..g.edge_count())
                .map(|e| cost.eval_h(e, f.values()[e]))
                .sum();
            let after: f64 = (0..g.edge_count())
                .map(|e| cost.eval_h(e, cancelled.values()[e]))
                .sum();
            assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn decomposes_chain_into_one_path() {
        let g = Grid::new(&[3], 1.0).unwrap();
        let f = FluxField::new(&g, vec![1.0, 1.0]).unwrap();
        let t = SourceMeasure::new(&g, vec![-1.0, 0.0, 1.0]).unwrap();
        let bundle = decompose(&f, &t, 1e-12).unwrap();
        assert_eq!(bundle.len(), 1);
        assert_eq!(bundle.paths()[0].nodes, vec![0, 1, 2]);
        assert!((bundle.paths()[0].weight - 1.0).abs() < 1e-15);
        assert!((bundle.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decomposition_tie_break_is_lowest_edge_index() {
        // symmetric corner-to-corner square: the first extracted path must
        // leave node 0 through edge 0 (axis 0), i.e. 0 -> 2 -> 3
        let g = Grid::new(&[2, 2], 1.0).unwrap();
        let f = FluxField::new(&g, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let t = SourceMeasure::new(&g, vec![-1.0, 0.0, 0.0, 1.0]).unwrap();
        let bundle = decompose(&f, &t, 1e-12).unwrap();
        assert_eq!(bundle.len(), 2);
        assert_eq!(bundle.paths()[0].nodes, vec![0, 2, 3]);
        assert_eq!(bundle.paths()[1].nodes, vec![0, 1, 3]);
        assert!((bundle.paths()[0].weight - 0.5).abs() < 1e-15);
        assert!((bundle.paths()[1].weight - 0.5).abs() < 1e-15);
    }

    #[test]
    fn decompose_rejects_cycles_and_mismatch() {
        let f = square_cycle_flux();
        let g = f.grid().clone();
        let t = SourceMeasure::new(&g, vec![0.0; 4]).unwrap();
        assert!(matches!(
            decompose(&f, &t, 1e-12),
            Err(PathsError::CyclicFlux { .. })
        ));
        let chain = Grid::new(&[3], 1.0).unwrap();
        let f = FluxField::new(&chain, vec![1.0, 0.5]).unwrap();
        let t = SourceMeasure::new(&chain, vec![-1.0, 0.0, 1.0]).unwrap();
        match decompose(&f, &t, 1e-9) {
            Err(PathsError::DivergenceMismatch { node, .. }) => assert!(node >= 1),
            other => panic!("expected divergence mismatch, got {other:?}"),
        }
    }

    #[test]
    fn reconstruction_matches_flux_and_source() {
        // a split-and-merge flow: 0 -> {1, 2} -> 3 with uneven shares;
        // route 0->2->3 uses edges 0 and 3, route 0->1->3 uses edges 2 and 1
        let g = Grid::new(&[2, 2], 1.0).unwrap();
        let f = FluxField::new(&g, vec![0.3, 0.7, 0.7, 0.3]).unwrap();
        let t = SourceMeasure::new(&g, vec![-1.0, 0.0, 0.0, 1.0]).unwrap();
        let bundle = decompose(&f, &t, 1e-12).unwrap();
        assert!(bundle.len() <= g.edge_count() + 2);
        let rebuilt = bundle.reconstruct_flux();
        for (a, b) in rebuilt.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        let induced = bundle.induced_source();
        for (a, b) in induced.iter().zip(t.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((bundle.total_mass() - t.total_variation() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn intensities_bound_each_other() {
        let g = Grid::new(&[2, 2], 1.0).unwrap();
        // two opposite traversals of edge 2 by hand-built paths
        let bundle = PathMeasure::new(
            &g,
            vec![
                Path {
                    nodes: vec![0, 1, 3],
                    weight: 1.0,
                },
                Path {
                    nodes: vec![3, 1, 0],
                    weight: 0.4,
                },
            ],
        )
        .unwrap();
        let pair = traffic_intensity(&bundle);
        for (s, v) in pair.scalar.iter().zip(&pair.vector) {
            assert!(v.abs() <= s + 1e-15);
        }
        // edge 0->1 carries 1.0 + 0.4 scalar, 1.0 - 0.4 vector
        assert!((pair.scalar[2] - 1.4).abs() < 1e-15);
        assert!((pair.vector[2] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn intensity_equals_flux_magnitude_after_decomposition() {
        let g = Grid::new(&[2, 2], 1.0).unwrap();
        let f = FluxField::new(&g, vec![0.3, 0.7, 0.7, 0.3]).unwrap();
        let t = SourceMeasure::new(&g, vec![-1.0, 0.0, 0.0, 1.0]).unwrap();
        let bundle = decompose(&f, &t, 1e-12).unwrap();
        let pair = traffic_intensity(&bundle);
        for e in 0..g.edge_count() {
            assert!((pair.scalar[e] - f.values()[e].abs()).abs() < 1e-12);
            assert!((pair.vector[e] - f.values()[e]).abs() < 1e-12);
        }
    }

    #[test]
    fn wardrop_energy_matches_primal_on_decomposed_optimum() {
        let g = Grid::new(&[2, 2], 1.0).unwrap();
        let t = SourceMeasure::new(&g, vec![-1.0, 0.0, 0.0, 1.0]).unwrap();
        let cost = CostModel::power(2.0, 1.0).unwrap();
        let problem = Problem::new(t.clone(), cost.clone()).unwrap();
        let sol = solve(&problem, 1e-10, 2000).unwrap();
        let bundle = decompose(&sol.flux, &t, 1e-12).unwrap();
        let we = wardrop_energy(&bundle, &cost).unwrap();
        let pe = primal_energy(&problem, &sol.flux).unwrap();
        assert!((we - pe).abs() <= 1e-9 * (1.0 + pe));
    }

    #[test]
    fn equilibrium_holds_on_square_fixture() {
        let g = Grid::new(&[2, 2], 1.0).unwrap();
        let t = SourceMeasure::new(&g, vec![-1.0, 0.0, 0.0, 1.0]).unwrap();
        let cost = CostModel::power(2.0, 1.0).unwrap();
        let problem = Problem::new(t.clone(), cost.clone()).unwrap();
        let sol = solve(&problem, 1e-10, 2000).unwrap();
        let bundle = decompose(&sol.flux, &t, 1e-12).unwrap();
        let report = equilibrium_check(&bundle, &sol.potential, &cost, 1e-6).unwrap();
        assert!(report.passed(), "violations: {:?}", report.violations);
        assert!(report.checked == 2);

        // a skewed potential breaks the price identity
        let mut bad = sol.potential.clone();
        bad.values_mut()[0] += 0.1;
        let report = equilibrium_check(&bundle, &bad, &cost, 1e-6).unwrap();
        assert!(!report.passed());
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::PriceMismatch));
    }

    #[test]
    fn equilibrium_flags_cheaper_route() {
        // force all mass around three sides of the square; the direct two-edge
        // route is strictly cheaper at these loads
        let g = Grid::new(&[2, 2], 1.0).unwrap();
        let cost = CostModel::power(2.0, 1.0).unwrap();
        let bundle = PathMeasure::new(
            &g,
            vec![Path {
                nodes: vec![0, 1, 3, 2],
                weight: 1.0,
            }],
        )
        .unwrap();
        // potential consistent with nothing in particular
        let v = ScalarField::new(&g, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let report = equilibrium_check(&bundle, &v, &cost, 1e-6).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::CheaperRoute));
    }

    #[test]
    fn path_measure_validation() {
        let g = Grid::new(&[2, 2], 1.0).unwrap();
        let too_short = PathMeasure::new(
            &g,
            vec![Path {
                nodes: vec![0],
                weight: 1.0,
            }],
        );
        assert!(matches!(too_short, Err(PathsError::TooShort { path: 0 })));
        let bad_weight = PathMeasure::new(
            &g,
            vec![Path {
                nodes: vec![0, 1],
                weight: 0.0,
            }],
        );
        assert!(matches!(bad_weight, Err(PathsError::BadWeight { .. })));
        let jump = PathMeasure::new(
            &g,
            vec![Path {
                nodes: vec![0, 3],
                weight: 1.0,
            }],
        );
        assert!(matches!(jump, Err(PathsError::NotAdjacent { .. })));
        let range = PathMeasure::new(
            &g,
            vec![Path {
                nodes: vec![0, 9],
                weight: 1.0,
            }],
        );
        assert!(matches!(range, Err(PathsError::NodeRange { node: 9, .. })));
    }
}
