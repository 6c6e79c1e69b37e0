//! Dense bounded-variable primal simplex used for the LP relaxations inside
//! the routing branch-and-bound. Two phases with artificial variables,
//! Dantzig pricing with a Bland fallback on degeneracy stalls.

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Eq,
    Le,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
}

struct Tableau {
    /// Rows of B^{-1} A over all columns.
    t: Vec<Vec<f64>>,
    /// Values of the basic variables.
    xb: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    ncols: usize,
}

impl Tableau {
    fn var_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::Basic(r) => self.xb[r],
            VarState::AtLower => self.lower[j],
            VarState::AtUpper => self.upper[j],
        }
    }

    /// Reduced costs for the given cost vector: z_j = c_j - c_B' T_j.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.basis.len();
        let cb: Vec<f64> = self.basis.iter().map(|&j| cost[j]).collect();
        let mut z = cost.to_vec();
        for r in 0..m {
            if cb[r] != 0.0 {
                for j in 0..self.ncols {
                    z[j] -= cb[r] * self.t[r][j];
                }
            }
        }
        z
    }

    /// Run primal simplex for the given costs. Returns false on unbounded.
    fn optimize(&mut self, cost: &[f64]) -> bool {
        let m = self.basis.len();
        let mut degenerate_streak = 0usize;
        for _iter in 0..20_000 {
            let z = self.reduced_costs(cost);
            // Entering variable: best improving nonbasic direction.
            let use_bland = degenerate_streak > 60;
            let mut enter: Option<(usize, f64)> = None; // (col, direction)
            let mut best_score = EPS;
            for j in 0..self.ncols {
                let (dir, score) = match self.state[j] {
                    VarState::Basic(_) => continue,
                    VarState::AtLower => (1.0, -z[j]),
                    VarState::AtUpper => (-1.0, z[j]),
                };
                if score > best_score {
                    if use_bland {
                        enter = Some((j, dir));
                        break;
                    }
                    best_score = score;
                    enter = Some((j, dir));
                }
            }
            let Some((e, dir)) = enter else {
                return true; // optimal
            };
            // Ratio test: basic variables move by -theta * dir * y.
            let range_e = self.upper[e] - self.lower[e];
            let mut theta = range_e;
            let mut leave: Option<(usize, bool)> = None; // (row, hits_upper)
            for r in 0..m {
                let y = self.t[r][e] * dir;
                let b = self.basis[r];
                if y > EPS {
                    // Basic value decreases toward its lower bound.
                    let room = (self.xb[r] - self.lower[b]) / y;
                    if room < theta - EPS {
                        theta = room.max(0.0);
                        leave = Some((r, false));
                    }
                } else if y < -EPS {
                    let room = (self.upper[b] - self.xb[r]) / (-y);
                    if room < theta - EPS {
                        theta = room.max(0.0);
                        leave = Some((r, true));
                    }
                }
            }
            if theta.is_infinite() {
                return false; // unbounded direction
            }
            if theta <= EPS {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
            }
            // Move basic values.
            for r in 0..m {
                self.xb[r] -= theta * dir * self.t[r][e];
            }
            match leave {
                None => {
                    // Bound flip of the entering variable.
                    self.state[e] = if dir > 0.0 { VarState::AtUpper } else { VarState::AtLower };
                }
                Some((r, hits_upper)) => {
                    let old = self.basis[r];
                    self.state[old] =
                        if hits_upper { VarState::AtUpper } else { VarState::AtLower };
                    // Entering variable becomes basic with updated value.
                    let enter_val = match self.state[e] {
                        VarState::AtLower => self.lower[e] + theta * dir,
                        VarState::AtUpper => self.upper[e] + theta * dir,
                        VarState::Basic(_) => unreachable!(),
                    };
                    self.state[e] = VarState::Basic(r);
                    self.basis[r] = e;
                    self.xb[r] = enter_val;
                    // Pivot the tableau on (r, e).
                    let piv = self.t[r][e];
                    let inv = 1.0 / piv;
                    for j in 0..self.ncols {
                        self.t[r][j] *= inv;
                    }
                    let pivot_row = self.t[r].clone();
                    for rr in 0..m {
                        if rr == r {
                            continue;
                        }
                        let f = self.t[rr][e];
                        if f != 0.0 {
                            for j in 0..self.ncols {
                                self.t[rr][j] -= f * pivot_row[j];
                            }
                        }
                    }
                }
            }
        }
        true // iteration guard hit; treat best as optimal for our sizes
    }
}

/// Solve `min cost . x` subject to the rows and simple bounds. Upper bounds
/// may be `f64::INFINITY`.
pub fn solve_lp(
    cost: &[f64],
    rows: &[(Vec<f64>, f64, RowKind)],
    bounds: &[(f64, f64)],
) -> LpSolution {
    let n = cost.len();
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.2 == RowKind::Le).count();
    let ncols = n + n_slack + m; // structurals, slacks, artificials
    let mut lower = vec![0.0; ncols];
    let mut upper = vec![f64::INFINITY; ncols];
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        lower[j] = lo;
        upper[j] = hi;
    }
    // Build the row matrix over all columns.
    let mut t: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut slack_idx = n;
    let mut slack_of_row = vec![usize::MAX; m];
    for (r, (row, _, kind)) in rows.iter().enumerate() {
        let mut full = vec![0.0; ncols];
        full[..n].copy_from_slice(row);
        if *kind == RowKind::Le {
            full[slack_idx] = 1.0;
            slack_of_row[r] = slack_idx;
            slack_idx += 1;
        }
        t.push(full);
    }
    // Nonbasic start: structurals at the finite bound of smaller magnitude,
    // slacks at 0. Residuals absorbed by artificials.
    let mut state = vec![VarState::AtLower; ncols];
    for j in 0..n {
        if lower[j].is_infinite() {
            state[j] = VarState::AtUpper;
        }
    }
    let mut basis = Vec::with_capacity(m);
    let mut xb = Vec::with_capacity(m);
    for r in 0..m {
        let mut resid = rows[r].1;
        for j in 0..(n + n_slack) {
            let v = match state[j] {
                VarState::AtLower => lower[j],
                VarState::AtUpper => upper[j],
                VarState::Basic(_) => 0.0,
            };
            if v != 0.0 {
                resid -= t[r][j] * v;
            }
        }
        let art = n + n_slack + r;
        if resid < 0.0 {
            for j in 0..ncols {
                t[r][j] = -t[r][j];
            }
            resid = -resid;
        }
        t[r][art] = 1.0;
        lower[art] = 0.0;
        upper[art] = f64::INFINITY;
        state[art] = VarState::Basic(r);
        basis.push(art);
        xb.push(resid);
    }
    let mut tab = Tableau { t, xb, basis, state, lower, upper, ncols };

    // Phase 1: drive artificials to zero.
    let mut phase1 = vec![0.0; ncols];
    for j in (n + n_slack)..ncols {
        phase1[j] = 1.0;
    }
    tab.optimize(&phase1);
    let art_sum: f64 = (0..m)
        .map(|r| {
            let j = tab.basis[r];
            if j >= n + n_slack {
                tab.xb[r]
            } else {
                0.0
            }
        })
        .sum();
    let infeas: f64 = ((n + n_slack)..ncols).map(|j| tab.var_value(j)).sum::<f64>() + 0.0 * art_sum;
    if infeas > 1e-7 {
        return LpSolution { status: LpStatus::Infeasible, x: vec![0.0; n], objective: 0.0 };
    }
    // Freeze artificials at zero.
    for j in (n + n_slack)..ncols {
        tab.upper[j] = 0.0;
        if !matches!(tab.state[j], VarState::Basic(_)) {
            tab.state[j] = VarState::AtLower;
        }
    }

    // Phase 2.
    let mut full_cost = vec![0.0; ncols];
    full_cost[..n].copy_from_slice(cost);
    if !tab.optimize(&full_cost) {
        return LpSolution { status: LpStatus::Unbounded, x: vec![0.0; n], objective: 0.0 };
    }
    let x: Vec<f64> = (0..n).map(|j| tab.var_value(j)).collect();
    let objective = cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    LpSolution { status: LpStatus::Optimal, x, objective }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::program::{LinExpr, Model};
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn textbook_lp() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6, x,y >= 0.
        let sol = solve_lp(
            &[-1.0, -1.0],
            &[
                (vec![1.0, 2.0], 4.0, RowKind::Le),
                (vec![3.0, 1.0], 6.0, RowKind::Le),
            ],
            &[(0.0, f64::INFINITY), (0.0, f64::INFINITY)],
        );
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.objective, -(1.6 + 1.2), epsilon = 1e-9);
    }

    #[test]
    fn equality_and_bounds() {
        // min x - y s.t. x + y = 1, 0 <= x <= 0.3, 0 <= y <= 1.
        let sol = solve_lp(
            &[1.0, -1.0],
            &[(vec![1.0, 1.0], 1.0, RowKind::Eq)],
            &[(0.0, 0.3), (0.0, 1.0)],
        );
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 0.0, epsilon = 1e-9);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        let sol = solve_lp(
            &[1.0],
            &[(vec![1.0], 2.0, RowKind::Eq)],
            &[(0.0, 1.0)],
        );
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let sol = solve_lp(&[-1.0], &[], &[(0.0, f64::INFINITY)]);
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn matches_interior_point_on_random_lps() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..30 {
            let n = rng.random_range(3..8usize);
            let m_rows = rng.random_range(2..6usize);
            let cost: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut rows = Vec::new();
            for _ in 0..m_rows {
                let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                // Feasible at the box center by construction.
                let mid: f64 = a.iter().sum::<f64>() * 0.5;
                let b = mid + rng.random_range(0.1..2.0);
                rows.push((a, b, RowKind::Le));
            }
            let bounds = vec![(0.0, 1.0); n];
            let sx = solve_lp(&cost, &rows, &bounds);
            assert_eq!(sx.status, LpStatus::Optimal, "trial {trial}");

            let mut model = Model::new();
            let xs = model.vars(n);
            let mut obj = LinExpr::default();
            for i in 0..n {
                obj = obj.add_term(xs[i], cost[i]);
            }
            model.minimize(obj);
            for (a, b, _) in &rows {
                let mut e = LinExpr::constant(*b);
                for i in 0..n {
                    e = e.add_term(xs[i], -a[i]);
                }
                model.add_nonneg(e);
            }
            for i in 0..n {
                model.add_box(xs[i], 0.0, 1.0);
            }
            let si = model.solve(1e-9).unwrap();
            assert_relative_eq!(sx.objective, si.objective, epsilon = 1e-5);
        }
    }
}
