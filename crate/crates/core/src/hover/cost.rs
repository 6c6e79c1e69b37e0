//! Hybrid travel-cost indicator between hover points: UAV propulsion energy
//! at its average speed plus USV drag energy against the current, sampled
//! along the straight segment at the current-field resolution. The matrix is
//! asymmetric whenever the current has a direction.

use nalgebra::DMatrix;

use crate::energy::{uav_power_flying, usv_mean_power};
use crate::scenario::{CurrentField, SystemParams};
use crate::Vec2;

/// Node-to-node energy costs over centroids plus the start and end nodes.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    /// Number of centroid nodes E; node E is the start, node E+1 the end.
    pub num_centroids: usize,
    pub cost: DMatrix<f64>,
}

impl CostMatrix {
    pub fn start(&self) -> usize {
        self.num_centroids
    }

    pub fn end(&self) -> usize {
        self.num_centroids + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.num_centroids + 2
    }
}

/// Travel speeds used when evaluating the coarse routing cost.
#[derive(Debug, Clone, Copy)]
pub struct CostSpeeds {
    pub uav: f64,
    pub usv: f64,
}

/// UAV speed minimizing energy per meter, p_f(v)/v, found by golden-section
/// search over (0, v_max].
pub fn max_range_speed(params: &SystemParams) -> f64 {
    let f = |v: f64| uav_power_flying(v, params) / v;
    let (mut lo, mut hi) = (0.5, params.uav_speed_max);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = f(b);
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Cost speeds used throughout coarse planning: the USV at its speed limit,
/// the UAV at its maximum-range speed.
pub fn planning_speeds(params: &SystemParams) -> CostSpeeds {
    CostSpeeds { uav: max_range_speed(params), usv: params.usv_speed_max }
}

/// Energy of moving both vehicles from `from` to `to` in a straight line:
/// `d/v_uav * p_f(v_uav) + (d/v_usv) * mean_k alpha ||v_usv - v_w(b_k)||^2`
/// with the current sampled every `current_resolution_m` at segment starts.
pub fn bi_tspn_cost(
    from: Vec2,
    to: Vec2,
    field: &CurrentField,
    speeds: CostSpeeds,
    params: &SystemParams,
) -> f64 {
    let d = (to - from).norm();
    if d == 0.0 {
        return 0.0;
    }
    let uav = d / speeds.uav * uav_power_flying(speeds.uav, params);
    let usv = d / speeds.usv * usv_mean_power(from, to, speeds.usv, field, params);
    uav + usv
}

/// Assemble the full routing matrix over centroids + start + end. UAV-only
/// mode drops the USV term so a leader's plan ignores the current entirely.
pub fn build_cost_matrix(
    centroids: &[Vec2],
    start: Vec2,
    end: Vec2,
    field: &CurrentField,
    params: &SystemParams,
    uav_only: bool,
) -> CostMatrix {
    let speeds = planning_speeds(params);
    let e = centroids.len();
    let node = |i: usize| -> Vec2 {
        if i < e {
            centroids[i]
        } else if i == e {
            start
        } else {
            end
        }
    };
    let n = e + 2;
    let mut cost = DMatrix::zeros(n, n);
    let still = CurrentField::zero();
    let fld = if uav_only { &still } else { field };
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            cost[(i, j)] = if uav_only {
                let d = (node(j) - node(i)).norm();
                d / speeds.uav * uav_power_flying(speeds.uav, params)
            } else {
                bi_tspn_cost(node(i), node(j), fld, speeds, params)
            };
        }
    }
    CostMatrix { num_centroids: e, cost }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::reference_params;
    use approx::assert_relative_eq;

    #[test]
    fn zero_distance_is_free() {
        let p = reference_params();
        let speeds = planning_speeds(&p);
        let c = bi_tspn_cost(
            Vec2::new(10.0, 20.0),
            Vec2::new(10.0, 20.0),
            &CurrentField::analytic(3.0),
            speeds,
            &p,
        );
        assert_eq!(c, 0.0);
    }

    #[test]
    fn still_water_matches_closed_form() {
        let p = reference_params();
        let speeds = planning_speeds(&p);
        let from = Vec2::zeros();
        let to = Vec2::new(300.0, 400.0); // d = 500
        let d = 500.0;
        let expect = d / speeds.uav * uav_power_flying(speeds.uav, &p)
            + d / speeds.usv * p.usv_drag_kg * speeds.usv * speeds.usv;
        let got = bi_tspn_cost(from, to, &CurrentField::zero(), speeds, &p);
        assert_relative_eq!(got, expect, epsilon = 1e-9 * expect);
    }

    #[test]
    fn against_current_costs_more_than_with_it() {
        let p = reference_params();
        let speeds = planning_speeds(&p);
        let field = CurrentField::uniform(Vec2::new(2.0, 0.0));
        let a = Vec2::zeros();
        let b = Vec2::new(200.0, 0.0);
        let with = bi_tspn_cost(a, b, &field, speeds, &p);
        let against = bi_tspn_cost(b, a, &field, speeds, &p);
        assert!(against > with);
    }

    #[test]
    fn refining_resolution_converges() {
        // Halving the sampling resolution changes the cost by well under 1%
        // on the analytic field at moderate leg lengths.
        let mut p = reference_params();
        let field = CurrentField::analytic(3.0);
        let speeds = planning_speeds(&p);
        let a = Vec2::new(0.0, 0.0);
        let b = Vec2::new(350.0, 350.0);
        p.current_resolution_m = 10.0;
        let c10 = bi_tspn_cost(a, b, &field, speeds, &p);
        p.current_resolution_m = 5.0;
        let c5 = bi_tspn_cost(a, b, &field, speeds, &p);
        assert!((c10 - c5).abs() / c5 < 0.01, "c10={c10} c5={c5}");
    }

    #[test]
    fn max_range_speed_beats_neighbors() {
        let p = reference_params();
        let v = max_range_speed(&p);
        let per_meter = |v: f64| uav_power_flying(v, &p) / v;
        assert!(per_meter(v) <= per_meter(v - 0.5));
        assert!(per_meter(v) <= per_meter(v + 0.5).min(per_meter(p.uav_speed_max)));
    }

    #[test]
    fn matrix_is_asymmetric_under_current_with_zero_diagonal() {
        let p = reference_params();
        let cents = vec![Vec2::new(100.0, 50.0), Vec2::new(200.0, 250.0)];
        let m = build_cost_matrix(
            &cents,
            Vec2::zeros(),
            Vec2::new(300.0, 300.0),
            &CurrentField::analytic(3.0),
            &p,
            false,
        );
        assert_eq!(m.num_nodes(), 4);
        for i in 0..4 {
            assert_eq!(m.cost[(i, i)], 0.0);
            for j in 0..4 {
                assert!(m.cost[(i, j)] >= 0.0);
            }
        }
        assert!((m.cost[(0, 1)] - m.cost[(1, 0)]).abs() > 1e-6);
    }

    #[test]
    fn uav_only_matrix_ignores_current() {
        let p = reference_params();
        let cents = vec![Vec2::new(100.0, 50.0), Vec2::new(200.0, 250.0)];
        let down = build_cost_matrix(
            &cents,
            Vec2::zeros(),
            Vec2::new(300.0, 300.0),
            &CurrentField::analytic(3.0),
            &p,
            true,
        );
        let up = build_cost_matrix(
            &cents,
            Vec2::zeros(),
            Vec2::new(300.0, 300.0),
            &CurrentField::analytic(-3.0),
            &p,
            true,
        );
        assert_eq!(down.cost, up.cost);
    }
}
