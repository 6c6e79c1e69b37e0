//! Visiting-order optimization over the hover-point cost matrix: an exact
//! Held-Karp dynamic program for small instances and a mixed-integer
//! formulation with Miller-Tucker-Zemlin subtour elimination solved by
//! branch-and-bound over LP relaxations.

use super::cost::CostMatrix;
use crate::conic::simplex::{solve_lp, LpStatus, RowKind};

/// Open path from the start node through every centroid to the end node.
#[derive(Debug, Clone)]
pub struct VisitOrder {
    /// Centroid indices in visiting sequence.
    pub sequence: Vec<usize>,
    /// MTZ order value per centroid (1-based visit position).
    pub positions: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderMethod {
    ExactDp,
    Milp,
}

#[derive(Debug, thiserror::Error)]
pub enum OrderError {
    #[error("exact DP limited to 18 centroids, got {0}")]
    TooLarge(usize),
    #[error("branch-and-bound found no feasible path")]
    NoPath,
}

/// Solve the open-path visiting order with the requested method.
pub fn solve_visit_order(costs: &CostMatrix, method: OrderMethod) -> Result<VisitOrder, OrderError> {
    let e = costs.num_centroids;
    if e == 0 {
        return Ok(VisitOrder { sequence: vec![], positions: vec![], cost: costs.cost[(costs.start(), costs.end())] });
    }
    match method {
        OrderMethod::ExactDp => {
            if e + 2 > 20 {
                return Err(OrderError::TooLarge(e));
            }
            Ok(held_karp(costs))
        }
        OrderMethod::Milp => milp_branch_and_bound(costs),
    }
}

fn path_cost(costs: &CostMatrix, seq: &[usize]) -> f64 {
    let s = costs.start();
    let t = costs.end();
    let mut total = 0.0;
    let mut prev = s;
    for &c in seq {
        total += costs.cost[(prev, c)];
        prev = c;
    }
    total + costs.cost[(prev, t)]
}

fn order_from_sequence(costs: &CostMatrix, seq: Vec<usize>) -> VisitOrder {
    let mut positions = vec![0.0; costs.num_centroids];
    for (pos, &c) in seq.iter().enumerate() {
        positions[c] = (pos + 1) as f64;
    }
    let cost = path_cost(costs, &seq);
    VisitOrder { sequence: seq, positions, cost }
}

/// Exact dynamic program over subsets (open path variant).
fn held_karp(costs: &CostMatrix) -> VisitOrder {
    let e = costs.num_centroids;
    let s = costs.start();
    let full = (1usize << e) - 1;
    let mut dp = vec![vec![f64::INFINITY; e]; 1 << e];
    let mut parent = vec![vec![usize::MAX; e]; 1 << e];
    for j in 0..e {
        dp[1 << j][j] = costs.cost[(s, j)];
    }
    for mask in 1..=full {
        for last in 0..e {
            if mask & (1 << last) == 0 || !dp[mask][last].is_finite() {
                continue;
            }
            let base = dp[mask][last];
            for next in 0..e {
                if mask & (1 << next) != 0 {
                    continue;
                }
                let nm = mask | (1 << next);
                let cand = base + costs.cost[(last, next)];
                if cand < dp[nm][next] {
                    dp[nm][next] = cand;
                    parent[nm][next] = last;
                }
            }
        }
    }
    let t = costs.end();
    let (mut best_j, mut best) = (0, f64::INFINITY);
    for j in 0..e {
        let cand = dp[full][j] + costs.cost[(j, t)];
        if cand < best {
            best = cand;
            best_j = j;
        }
    }
    let mut seq = Vec::with_capacity(e);
    let mut mask = full;
    let mut j = best_j;
    while j != usize::MAX {
        seq.push(j);
        let pj = parent[mask][j];
        mask &= !(1 << j);
        j = pj;
    }
    seq.reverse();
    order_from_sequence(costs, seq)
}

/// Nearest-neighbor start improved by repeated single-node reinsertion,
/// used as the branch-and-bound incumbent.
fn heuristic_sequence(costs: &CostMatrix) -> Vec<usize> {
    let e = costs.num_centroids;
    let s = costs.start();
    let mut seq: Vec<usize> = Vec::with_capacity(e);
    let mut used = vec![false; e];
    let mut at = s;
    for _ in 0..e {
        let next = (0..e)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| {
                costs.cost[(at, a)].partial_cmp(&costs.cost[(at, b)]).expect("finite")
            })
            .expect("unused centroid");
        used[next] = true;
        seq.push(next);
        at = next;
    }
    // Or-opt: move one node to its best position until no improvement.
    let mut improved = true;
    while improved {
        improved = false;
        let base = path_cost(costs, &seq);
        'outer: for i in 0..seq.len() {
            for j in 0..seq.len() {
                if i == j {
                    continue;
                }
                let mut cand = seq.clone();
                let node = cand.remove(i);
                cand.insert(j, node);
                if path_cost(costs, &cand) < base - 1e-12 {
                    seq = cand;
                    improved = true;
                    break 'outer;
                }
            }
        }
    }
    seq
}

struct MilpData {
    arcs: Vec<(usize, usize)>,
    n_arcs: usize,
    n_u: usize,
    cost: Vec<f64>,
    rows: Vec<(Vec<f64>, f64, RowKind)>,
}

/// Assemble the path model: degree constraints on every node and MTZ order
/// variables eliminating subtours.
fn build_milp(costs: &CostMatrix) -> MilpData {
    let e = costs.num_centroids;
    let s = costs.start();
    let t = costs.end();
    let mut arcs: Vec<(usize, usize)> = Vec::new();
    for j in 0..e {
        arcs.push((s, j));
    }
    for i in 0..e {
        for j in 0..e {
            if i != j {
                arcs.push((i, j));
            }
        }
        arcs.push((i, t));
    }
    let n_arcs = arcs.len();
    // Order variables: one per centroid plus the end node.
    let n_u = e + 1;
    let u_col = |node: usize| -> usize {
        if node < e {
            n_arcs + node
        } else {
            n_arcs + e // end node
        }
    };
    let n_cols = n_arcs + n_u;
    let mut cost = vec![0.0; n_cols];
    for (k, &(i, j)) in arcs.iter().enumerate() {
        cost[k] = costs.cost[(i, j)];
    }
    let mut rows: Vec<(Vec<f64>, f64, RowKind)> = Vec::new();
    // Start leaves once; end entered once; centroids have one entry and one
    // exit each.
    let mut row = vec![0.0; n_cols];
    for (k, &(i, _)) in arcs.iter().enumerate() {
        if i == s {
            row[k] = 1.0;
        }
    }
    rows.push((row, 1.0, RowKind::Eq));
    let mut row = vec![0.0; n_cols];
    for (k, &(_, j)) in arcs.iter().enumerate() {
        if j == t {
            row[k] = 1.0;
        }
    }
    rows.push((row, 1.0, RowKind::Eq));
    for c in 0..e {
        let mut row_in = vec![0.0; n_cols];
        let mut row_out = vec![0.0; n_cols];
        for (k, &(i, j)) in arcs.iter().enumerate() {
            if j == c {
                row_in[k] = 1.0;
            }
            if i == c {
                row_out[k] = 1.0;
            }
        }
        rows.push((row_in, 1.0, RowKind::Eq));
        rows.push((row_out, 1.0, RowKind::Eq));
    }
    // MTZ: u_i - u_j + (E+1) x_ij <= E for arcs not touching start.
    let big = (e + 1) as f64;
    for (k, &(i, j)) in arcs.iter().enumerate() {
        if i == s {
            continue;
        }
        let mut row = vec![0.0; n_cols];
        row[u_col(i)] = 1.0;
        row[u_col(j)] = -1.0;
        row[k] = big;
        rows.push((row, e as f64, RowKind::Le));
    }
    MilpData { arcs, n_arcs, n_u, cost, rows }
}

fn milp_branch_and_bound(costs: &CostMatrix) -> Result<VisitOrder, OrderError> {
    let e = costs.num_centroids;
    let data = build_milp(costs);
    let n_cols = data.n_arcs + data.n_u;
    let mut base_bounds = vec![(0.0, 1.0); data.n_arcs];
    base_bounds.extend(vec![(1.0, (e + 1) as f64); data.n_u]);
    let _ = n_cols;

    // Incumbent from the insertion heuristic.
    let mut best_seq = heuristic_sequence(costs);
    let mut best_cost = path_cost(costs, &best_seq);

    // Depth-first with best-bound ordering inside the stack.
    let mut stack: Vec<(f64, Vec<(f64, f64)>)> = vec![(f64::NEG_INFINITY, base_bounds)];
    let mut nodes = 0usize;
    while let Some((parent_bound, bounds)) = stack.pop() {
        if parent_bound >= best_cost - 1e-9 {
            continue;
        }
        nodes += 1;
        if nodes > 200_000 {
            break; // fall back to the incumbent
        }
        let sol = solve_lp(&data.cost, &data.rows, &bounds);
        match sol.status {
            LpStatus::Optimal => {}
            _ => continue,
        }
        if sol.objective >= best_cost - 1e-9 {
            continue;
        }
        // Most fractional arc.
        let mut frac: Option<(usize, f64)> = None;
        for k in 0..data.n_arcs {
            let v = sol.x[k];
            let dist = (v - v.round()).abs();
            if dist > 1e-6 && frac.map_or(true, |(_, d)| dist > d) {
                frac = Some((k, dist));
            }
        }
        match frac {
            None => {
                // Integral: walk the successor chain.
                if let Some(seq) = extract_sequence(&data, &sol.x, costs) {
                    let c = path_cost(costs, &seq);
                    if c < best_cost - 1e-12 {
                        best_cost = c;
                        best_seq = seq;
                    }
                }
            }
            Some((k, _)) => {
                let mut zero = bounds.clone();
                zero[k] = (0.0, 0.0);
                let mut one = bounds;
                one[k] = (1.0, 1.0);
                // Explore the x = 1 branch first.
                stack.push((sol.objective, zero));
                stack.push((sol.objective, one));
            }
        }
    }
    if best_seq.len() != e {
        return Err(OrderError::NoPath);
    }
    Ok(order_from_sequence(costs, best_seq))
}

fn extract_sequence(data: &MilpData, x: &[f64], costs: &CostMatrix) -> Option<Vec<usize>> {
    let e = costs.num_centroids;
    let s = costs.start();
    let t = costs.end();
    let mut succ = vec![usize::MAX; e + 2];
    for (k, &(i, j)) in data.arcs.iter().enumerate() {
        if x[k] > 0.5 {
            succ[i] = j;
        }
    }
    let mut seq = Vec::with_capacity(e);
    let mut at = s;
    for _ in 0..=e {
        let nxt = succ[at];
        if nxt == t {
            return (seq.len() == e).then_some(seq);
        }
        if nxt == usize::MAX || nxt >= e {
            return None;
        }
        seq.push(nxt);
        at = nxt;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix_from(e: usize, f: impl Fn(usize, usize) -> f64) -> CostMatrix {
        let n = e + 2;
        let cost = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { f(i, j) });
        CostMatrix { num_centroids: e, cost }
    }

    fn brute_force(costs: &CostMatrix) -> f64 {
        let e = costs.num_centroids;
        let mut idx: Vec<usize> = (0..e).collect();
        let mut best = f64::INFINITY;
        permute(&mut idx, 0, &mut |seq| {
            let c = path_cost(costs, seq);
            if c < best {
                best = c;
            }
        });
        best
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn single_centroid_is_trivial() {
        let m = matrix_from(1, |_, _| 1.0);
        let o = solve_visit_order(&m, OrderMethod::ExactDp).unwrap();
        assert_eq!(o.sequence, vec![0]);
        assert_relative_eq!(o.cost, 2.0);
        let o2 = solve_visit_order(&m, OrderMethod::Milp).unwrap();
        assert_eq!(o2.sequence, vec![0]);
    }

    #[test]
    fn detour_beats_direct_when_cheap() {
        // One centroid, costs force s -> c -> t at total 2 over s -> t at 5
        // (the direct arc is not even allowed when a centroid must be visited).
        let m = matrix_from(1, |i, j| match (i, j) {
            (1, 0) => 1.0, // s -> c
            (0, 2) => 1.0, // c -> t
            _ => 5.0,
        });
        let o = solve_visit_order(&m, OrderMethod::ExactDp).unwrap();
        assert_relative_eq!(o.cost, 2.0);
    }

    #[test]
    fn milp_matches_exact_dp_and_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..25 {
            let e = rng.random_range(2..=6usize);
            let m = matrix_from(e, |_, _| 0.0);
            let m = {
                let mut mm = m;
                for i in 0..e + 2 {
                    for j in 0..e + 2 {
                        if i != j {
                            mm.cost[(i, j)] = rng.random_range(1.0..100.0);
                        }
                    }
                }
                mm
            };
            let dp = solve_visit_order(&m, OrderMethod::ExactDp).unwrap();
            let milp = solve_visit_order(&m, OrderMethod::Milp).unwrap();
            let brute = brute_force(&m);
            assert_relative_eq!(dp.cost, brute, epsilon = 1e-9, max_relative = 1e-9);
            assert_relative_eq!(milp.cost, brute, epsilon = 1e-7, max_relative = 1e-7);
            assert_eq!(dp.sequence.len(), e, "trial {trial}");
            // Order variables are a permutation of 1..=E.
            let mut pos = dp.positions.clone();
            pos.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            for (i, p) in pos.iter().enumerate() {
                assert_relative_eq!(*p, (i + 1) as f64);
            }
        }
    }

    #[test]
    fn milp_matches_dp_on_larger_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for e in [7usize, 8, 9] {
            let m = matrix_from(e, |_, _| 0.0);
            let m = {
                let mut mm = m;
                for i in 0..e + 2 {
                    for j in 0..e + 2 {
                        if i != j {
                            mm.cost[(i, j)] = rng.random_range(1.0..100.0);
                        }
                    }
                }
                mm
            };
            let dp = solve_visit_order(&m, OrderMethod::ExactDp).unwrap();
            let milp = solve_visit_order(&m, OrderMethod::Milp).unwrap();
            assert_relative_eq!(dp.cost, milp.cost, epsilon = 1e-7, max_relative = 1e-7);
        }
    }

    #[test]
    fn dp_size_limit_enforced() {
        let m = matrix_from(19, |_, _| 1.0);
        assert!(matches!(
            solve_visit_order(&m, OrderMethod::ExactDp),
            Err(OrderError::TooLarge(_))
        ));
    }
}
