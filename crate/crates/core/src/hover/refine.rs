//! Hover-point refinement and time allocation: given the clusters and the
//! visiting order, jointly optimize hover positions, USV anchor points, and
//! flying/hovering durations by successive convex approximation, then
//! discretize durations to whole slots (rounding up, so sensing never loses
//! SNR) with speeds rescaled to preserve positions.

use serde::{Deserialize, Serialize};

use super::cluster::{ClusterAssignment, SensingCoverage};
use super::cost::planning_speeds;
use super::order::VisitOrder;
use crate::channel::{comm_distance_threshold, sensing_snr_coef};
use crate::conic::{sca_loop, LinExpr, Model, ScaProblem, ScaState, SolveStatus, SolverError};
use crate::energy::{uav_power_flying, usv_mean_power, xi_from_speed};
use crate::scenario::{current_at, CurrentField, Scenario};
use crate::Vec2;

/// Refined hover plan: positions, anchors, schedule, and slot counts for
/// every stage. Stage `e` (1-based) flies leg `e-1` then hovers at point
/// `e-1`; the final leg has no hover.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoverPlan {
    /// Hover positions in visit order (surface plane; UAV altitude fixed).
    pub hover_points: Vec<Vec2>,
    /// USV position when hovering starts (b_f) and ends (b_h), per stage.
    pub usv_arrive: Vec<Vec2>,
    pub usv_depart: Vec<Vec2>,
    /// Target indices sensed at each hover point.
    pub schedule: Vec<Vec<usize>>,
    /// Flying slots per leg (len E+1, final leg last).
    pub fly_slots: Vec<usize>,
    /// Hovering slots per stage (len E).
    pub hover_slots: Vec<usize>,
    /// Average speeds after discretization.
    pub uav_speed: Vec<f64>,
    pub usv_fly_speed: Vec<f64>,
    pub usv_hover_speed: Vec<f64>,
    /// Slant communication radius used for anchor feasibility.
    pub comm_radius: f64,
    /// Objective history of the refinement loop.
    pub objective_history: Vec<f64>,
}

impl HoverPlan {
    pub fn num_stages(&self) -> usize {
        self.hover_points.len()
    }

    pub fn total_slots(&self) -> usize {
        self.fly_slots.iter().sum::<usize>() + self.hover_slots.iter().sum::<usize>()
    }

    /// Hover boundaries (m_e, n_e): first and last hovering slot per stage
    /// (1-based slot indices).
    pub fn boundaries(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_stages());
        let mut at = 0usize;
        for e in 0..self.num_stages() {
            at += self.fly_slots[e];
            let m_e = at + 1;
            at += self.hover_slots[e];
            out.push((m_e, at));
        }
        out
    }
}

/// Which variables the refinement owns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineMode {
    /// Joint UAV + USV refinement.
    Joint,
    /// Leader plan: UAV terms only; USV anchors are filled with hover-point
    /// projections and the USV is re-planned afterwards.
    UavOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    pub mode: RefineMode,
    /// Keep hover points fixed at the cluster centroids (the sequential
    /// baseline hovers directly above each target).
    pub pin_hover_points: bool,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions { mode: RefineMode::Joint, pin_hover_points: false }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("communication radius smaller than flight altitude: D_c = {0:.1} m")]
    CommBelowAltitude(f64),
    #[error("surrogate solve failed: {0}")]
    Solver(#[from] SolverError),
    #[error("hover geometry infeasible at stage {stage}: {what}")]
    Infeasible { stage: usize, what: String },
}

#[derive(Clone)]
struct Iterate {
    q: Vec<Vec2>,
    bf: Vec<Vec2>,
    bh: Vec<Vec2>,
    /// Flying durations, len E+1.
    tf: Vec<f64>,
    /// Hover durations, len E.
    th: Vec<f64>,
}

struct P3<'a> {
    scenario: &'a Scenario,
    opts: RefineOptions,
    /// Targets per stage in visit order.
    stages: Vec<Vec<usize>>,
    /// Horizontal coverage radius per stage.
    cover_radius: Vec<f64>,
    /// Sensing coefficient per stage: gamma = snr_coef / slant^4.
    snr_coef: Vec<f64>,
    /// Horizontal communication radius for anchors.
    comm_radius_2d: f64,
    /// Standoff ring each stage's anchors should sit on (0 = free).
    ring: Vec<f64>,
    uav_from: Vec2,
    uav_to: Vec2,
    usv_from: Vec2,
    usv_to: Vec2,
}

impl P3<'_> {
    fn num_stages(&self) -> usize {
        self.stages.len()
    }

    fn uav_leg(&self, x: &Iterate, e: usize) -> (Vec2, Vec2) {
        let from = if e == 0 { self.uav_from } else { x.q[e - 1] };
        let to = if e == self.num_stages() { self.uav_to } else { x.q[e] };
        (from, to)
    }

    fn usv_leg(&self, x: &Iterate, e: usize) -> (Vec2, Vec2) {
        let from = if e == 0 { self.usv_from } else { x.bh[e - 1] };
        let to = if e == self.num_stages() { self.usv_to } else { x.bf[e] };
        (from, to)
    }

    /// Minimum hover time meeting the cumulative SNR at hover point `q`:
    /// the larger of the nominal simultaneous-sensing bound and the
    /// time-division dwell with nulling toward the USV.
    fn hover_time_needed(&self, e: usize, q: Vec2) -> f64 {
        let h = self.scenario.system.altitude_m;
        let total = self.scenario.requirements.total_snr;
        let mut worst: f64 = 0.0;
        let mut dwell = 0.0;
        for &k in &self.stages[e] {
            let t = self.scenario.world.targets[k];
            let slant2 = (q - t).norm_squared() + h * h;
            let gamma = self.snr_coef[e] / (slant2 * slant2);
            worst = worst.max(total / gamma);
            dwell += loss_aware_dwell(q, t, self.scenario);
        }
        worst.max(dwell)
    }
}

fn lerp(a: Vec2, b: Vec2, t: f64) -> Vec2 {
    a + (b - a) * t
}

/// Mean current vector and mean squared speed along a straight segment,
/// sampled at the field resolution.
fn current_stats(from: Vec2, to: Vec2, field: &CurrentField, resolution: f64) -> (Vec2, f64) {
    let d = (to - from).norm();
    let n = (d / resolution).ceil().max(1.0) as usize;
    let mut mean = Vec2::zeros();
    let mut mean_sq = 0.0;
    for k in 0..n {
        let b = lerp(from, to, k as f64 / n as f64);
        let v = current_at(field, b);
        mean += v;
        mean_sq += v.norm_squared();
    }
    (mean / n as f64, mean_sq / n as f64)
}

impl ScaProblem for P3<'_> {
    type Iterate = Iterate;
    type Error = RefineError;

    fn objective(&self, x: &Iterate) -> f64 {
        let sys = &self.scenario.system;
        let field = &self.scenario.current;
        let mut total = 0.0;
        for e in 0..=self.num_stages() {
            let (qa, qb) = self.uav_leg(x, e);
            let tf = x.tf[e];
            let v_uav = (qb - qa).norm() / tf;
            total += tf * uav_power_flying(v_uav, sys);
            if self.opts.mode == RefineMode::Joint {
                let (ba, bb) = self.usv_leg(x, e);
                let v_usv = (bb - ba).norm() / tf;
                total += tf * usv_mean_power(ba, bb, v_usv, field, sys);
            }
        }
        for e in 0..self.num_stages() {
            let th = x.th[e];
            total += th * sys.hover_power_w();
            if self.opts.mode == RefineMode::Joint {
                let v = (x.bh[e] - x.bf[e]).norm() / th;
                total += th * usv_mean_power(x.bf[e], x.bh[e], v, field, sys);
            }
        }
        total
    }

    fn is_feasible(&self, x: &Iterate) -> bool {
        match self.infeasibility(x) {
            None => true,
            Some(why) => {
                if std::env::var("AIRSEA_P3_LOG").is_ok() {
                    eprintln!("  [p3] reject: {why}");
                }
                false
            }
        }
    }

    fn blend(&self, from: &Iterate, to: &Iterate, t: f64) -> Iterate {
        let mix =
            |a: &[Vec2], b: &[Vec2]| -> Vec<Vec2> { a.iter().zip(b).map(|(x, y)| lerp(*x, *y, t)).collect() };
        let mixf =
            |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + (y - x) * t).collect() };
        Iterate {
            q: mix(&from.q, &to.q),
            bf: mix(&from.bf, &to.bf),
            bh: mix(&from.bh, &to.bh),
            tf: mixf(&from.tf, &to.tf),
            th: mixf(&from.th, &to.th),
        }
    }

    fn solve_surrogate(&mut self, at: &Iterate) -> Result<Iterate, RefineError> {
        self.solve_surrogate_impl(at)
    }
}

impl P3<'_> {
    /// First violated exact constraint, if any.
    fn infeasibility(&self, x: &Iterate) -> Option<String> {
        let sys = &self.scenario.system;
        let tol = 1e-7;
        for e in 0..self.num_stages() {
            for &k in &self.stages[e] {
                let t = self.scenario.world.targets[k];
                if (x.q[e] - t).norm() > self.cover_radius[e] + tol {
                    return Some(format!("stage {e}: coverage"));
                }
            }
            // Lenient: the dwell budget drifts as q moves between SCA
            // expansions; discretization re-enforces the exact need.
            let need = self.hover_time_needed(e, x.q[e]);
            if x.th[e] < need * 0.85 - 1e-6 {
                return Some(format!("stage {e}: hover time"));
            }
            if self.opts.mode == RefineMode::Joint {
                for b in [x.bf[e], x.bh[e]] {
                    let d = (x.q[e] - b).norm();
                    if d > self.comm_radius_2d + tol {
                        return Some(format!("stage {e}: comm radius"));
                    }
                    if d < self.ring[e] - 1e-4 {
                        return Some(format!("stage {e}: ring"));
                    }
                    for o in &self.scenario.world.obstacles {
                        if (b - o).norm() < self.scenario.system.obstacle_radius_m - tol {
                            return Some(format!("stage {e}: anchor obstacle"));
                        }
                    }
                }
                if (x.bh[e] - x.bf[e]).norm() / x.th[e] > sys.usv_speed_max + tol {
                    return Some(format!("stage {e}: hover usv speed"));
                }
            }
        }
        for e in 0..=self.num_stages() {
            if x.tf[e] <= 0.0 {
                return Some(format!("leg {e}: nonpositive time"));
            }
            let (qa, qb) = self.uav_leg(x, e);
            if (qb - qa).norm() / x.tf[e] > sys.uav_speed_max + tol {
                return Some(format!("leg {e}: uav speed"));
            }
            if self.opts.mode == RefineMode::Joint {
                let (ba, bb) = self.usv_leg(x, e);
                if (bb - ba).norm() / x.tf[e] > sys.usv_speed_max + tol {
                    return Some(format!("leg {e}: usv speed"));
                }
            }
        }
        None
    }

    fn solve_surrogate_impl(&mut self, at: &Iterate) -> Result<Iterate, RefineError> {
        let sys = &self.scenario.system;
        let joint = self.opts.mode == RefineMode::Joint;
        let e_cnt = self.num_stages();
        let mut m = Model::new();

        let q_vars: Vec<Option<[crate::conic::Var; 2]>> = (0..e_cnt)
            .map(|_| (!self.opts.pin_hover_points).then(|| [m.var(), m.var()]))
            .collect();
        let b_vars: Vec<Option<([crate::conic::Var; 2], [crate::conic::Var; 2])>> =
            (0..e_cnt).map(|_| joint.then(|| ([m.var(), m.var()], [m.var(), m.var()]))).collect();
        let tf: Vec<_> = (0..=e_cnt).map(|_| m.var()).collect();
        let th: Vec<_> = (0..e_cnt).map(|_| m.var()).collect();
        let v_uav: Vec<_> = (0..=e_cnt).map(|_| m.var()).collect();
        let xi: Vec<_> = (0..=e_cnt).map(|_| m.var()).collect();
        let tau: Vec<_> = (0..=e_cnt).map(|_| m.var()).collect();
        let v_usv_f: Vec<_> = (0..=e_cnt).map(|_| m.var()).collect();
        let v_usv_h: Vec<_> = (0..e_cnt).map(|_| m.var()).collect();

        let q_expr = |e: usize| -> [LinExpr; 2] {
            match &q_vars[e] {
                Some([x, y]) => [(*x).into(), (*y).into()],
                None => [LinExpr::constant(at.q[e].x), LinExpr::constant(at.q[e].y)],
            }
        };
        let bf_expr = |e: usize| -> [LinExpr; 2] {
            match &b_vars[e] {
                Some((bf, _)) => [bf[0].into(), bf[1].into()],
                None => [LinExpr::constant(at.q[e].x), LinExpr::constant(at.q[e].y)],
            }
        };
        let bh_expr = |e: usize| -> [LinExpr; 2] {
            match &b_vars[e] {
                Some((_, bh)) => [bh[0].into(), bh[1].into()],
                None => [LinExpr::constant(at.q[e].x), LinExpr::constant(at.q[e].y)],
            }
        };
        let const2 = |p: Vec2| [LinExpr::constant(p.x), LinExpr::constant(p.y)];
        let diff2 = |a: &[LinExpr; 2], b: &[LinExpr; 2]| -> Vec<LinExpr> {
            vec![a[0].clone().sub(&b[0]), a[1].clone().sub(&b[1])]
        };
        // lin(v * t) around (vk, tk): upper bound replaced by its expansion.
        let lin_vt = |v: crate::conic::Var, t: crate::conic::Var, vk: f64, tk: f64| -> LinExpr {
            LinExpr::term(t, vk).add_term(v, tk).add_const(-vk * tk)
        };

        let mut objective = LinExpr::default();
        let c2 = 3.0 * sys.blade_profile_power_w / (sys.tip_speed_ms * sys.tip_speed_ms);
        let c3 = 0.5 * sys.fuselage_drag * sys.air_density * sys.rotor_solidity * sys.disc_area_m2;

        for e in 0..=e_cnt {
            let (qa, qb) = self.uav_leg(at, e);
            let tfk = at.tf[e];
            let vk = ((qb - qa).norm() / tfk).max(1e-3);
            let xik = xi_from_speed(vk, sys);

            let from = if e == 0 { const2(self.uav_from) } else { q_expr(e - 1) };
            let to = if e == e_cnt { const2(self.uav_to) } else { q_expr(e) };
            m.add_soc(lin_vt(v_uav[e], tf[e], vk, tfk), diff2(&to, &from));

            // Induced-power device: tau*xi >= 1 and tau^2 <= g(xi, v), the
            // first-order expansion of xi^2 + v^2/v0^2 at the iterate.
            let tx = LinExpr::term(tau[e], 1.0).add_term(xi[e], 1.0);
            m.add_soc(
                tx,
                vec![LinExpr::constant(2.0), LinExpr::term(tau[e], 1.0).add_term(xi[e], -1.0)],
            );
            let v0 = sys.induced_speed_ms;
            let g = LinExpr::constant(-xik * xik - vk * vk / (v0 * v0))
                .add_term(xi[e], 2.0 * xik)
                .add_term(v_uav[e], 2.0 * vk / (v0 * v0));
            m.add_rsoc(g, LinExpr::constant(1.0), vec![tau[e].into()]);

            objective = objective
                .add_term(tf[e], sys.blade_profile_power_w)
                .add(
                    &LinExpr::term(tf[e], c2 * vk * vk)
                        .add_term(v_uav[e], 2.0 * c2 * vk * tfk)
                        .add_const(-2.0 * c2 * tfk * vk * vk),
                )
                .add(
                    &LinExpr::term(tf[e], c3 * vk.powi(3))
                        .add_term(v_uav[e], 3.0 * c3 * vk * vk * tfk)
                        .add_const(-3.0 * c3 * tfk * vk.powi(3)),
                )
                .add(
                    &LinExpr::term(tf[e], sys.induced_power_w * xik)
                        .add_term(xi[e], sys.induced_power_w * tfk)
                        .add_const(-sys.induced_power_w * tfk * xik),
                );

            m.add_box(v_uav[e], 1e-3, sys.uav_speed_max);
            m.add_box(xi[e], 1e-4, 1.0);
            m.add_nonneg(LinExpr::term(tau[e], 1.0).add_const(-1e-4));
            // Trust region keeps the linearized objective bounded; the line
            // search still validates every accepted step exactly.
            let t_lo = (tfk * 0.5).max(1e-3);
            let t_hi = tfk * 1.6 + 10.0;
            m.add_box(tf[e], t_lo, t_hi);

            if joint {
                let (ba, bb) = self.usv_leg(at, e);
                let vfk = ((bb - ba).norm() / tfk).max(1e-6);
                let from = if e == 0 { const2(self.usv_from) } else { bh_expr(e - 1) };
                let to = if e == e_cnt { const2(self.usv_to) } else { bf_expr(e) };
                m.add_soc(lin_vt(v_usv_f[e], tf[e], vfk, tfk), diff2(&to, &from));
                m.add_box(v_usv_f[e], 0.0, sys.usv_speed_max);

                let d = (bb - ba).norm();
                let dir = if d > 1e-9 { (bb - ba) / d } else { Vec2::zeros() };
                let (wbar, wsq) =
                    current_stats(ba, bb, &self.scenario.current, sys.current_resolution_m);
                let a = sys.usv_drag_kg;
                let dw = dir.dot(&wbar);
                objective = objective
                    .add(
                        &LinExpr::term(tf[e], a * vfk * vfk)
                            .add_term(v_usv_f[e], 2.0 * a * vfk * tfk)
                            .add_const(-2.0 * a * tfk * vfk * vfk),
                    )
                    .add(
                        &LinExpr::term(tf[e], -2.0 * a * dw * vfk)
                            .add_term(v_usv_f[e], -2.0 * a * dw * tfk)
                            .add_const(2.0 * a * dw * vfk * tfk),
                    )
                    .add(&LinExpr::term(tf[e], a * wsq));
            }
        }

        let h = sys.altitude_m;
        let comm_radius = standoff_comm_radius(self.scenario);
        let snr_per_watt_h4 = sensing_snr_coef(sys) / h.powi(4);
        for e in 0..e_cnt {
            let q = q_expr(e);
            // Time-division dwell: t_h >= sum_k dwell_k(q), each dwell a
            // convex quartic of the slant range (expressed in altitude units).
            let mut dwell_sum = LinExpr::default();
            for &k in &self.stages[e] {
                let tpos = self.scenario.world.targets[k];
                let d = diff2(&q, &const2(tpos));
                m.add_soc(LinExpr::constant(self.cover_radius[e]), d.clone());
                let d_scaled: Vec<LinExpr> = d.into_iter().map(|e| e.scale(1.0 / h)).collect();
                let s = m.var();
                m.add_rsoc(
                    LinExpr::term(s, 1.0).add_const(-1.0),
                    LinExpr::constant(1.0),
                    d_scaled,
                );
                m.add_nonneg(LinExpr::term(s, 1.0).add_const(-1.0));
                // Nominal simultaneous bound: slant^4 <= coef * th.
                let coef = self.snr_coef[e]
                    / (self.scenario.requirements.total_snr * h.powi(4));
                m.add_rsoc(LinExpr::term(th[e], coef), LinExpr::constant(1.0), vec![s.into()]);
                // Dwell epigraph: w >= total/(K_s budget_k) * slant^4/h^4,
                // with the per-target budget frozen at the expansion point.
                let w = m.var();
                let cos_t = {
                    let slant2 = (at.q[e] - tpos).norm_squared() + h * h;
                    h / slant2.sqrt()
                };
                let budget_k = best_standoff(cos_t, comm_radius, self.scenario).1.max(1e-3);
                let c_k = self.scenario.requirements.total_snr
                    / (snr_per_watt_h4 * budget_k);
                m.add_rsoc(
                    LinExpr::term(w, 1.0 / c_k),
                    LinExpr::constant(1.0),
                    vec![s.into()],
                );
                m.add_nonneg(w.into());
                dwell_sum = dwell_sum.add_term(w, 1.0);
            }
            m.add_nonneg(LinExpr::term(th[e], 1.0).sub(&dwell_sum));
            objective = objective.add_term(th[e], sys.hover_power_w());
            let thk = at.th[e];
            m.add_box(th[e], (thk * 0.5).max(1e-3), thk * 1.6 + 10.0);

            if joint {
                for (b, bk) in [(bf_expr(e), at.bf[e]), (bh_expr(e), at.bh[e])] {
                    m.add_soc(LinExpr::constant(self.comm_radius_2d), diff2(&q, &b));
                    if self.ring[e] > 0.0 {
                        // Supporting hyperplane of ||b - q|| >= ring at the
                        // iterate (both endpoints are variables).
                        let rel = bk - at.q[e];
                        let d = rel.norm().max(1e-6);
                        let dir = rel / d;
                        let row = b[0]
                            .clone()
                            .sub(&q[0])
                            .scale(dir.x)
                            .add(&b[1].clone().sub(&q[1]).scale(dir.y))
                            .add_const(-self.ring[e]);
                        m.add_nonneg(row);
                    }
                }
                let thk = at.th[e];
                let vhk = ((at.bh[e] - at.bf[e]).norm() / thk).max(1e-6);
                m.add_soc(lin_vt(v_usv_h[e], th[e], vhk, thk), diff2(&bh_expr(e), &bf_expr(e)));
                m.add_box(v_usv_h[e], 0.0, sys.usv_speed_max);
                let d = (at.bh[e] - at.bf[e]).norm();
                let dir = if d > 1e-9 { (at.bh[e] - at.bf[e]) / d } else { Vec2::zeros() };
                let (wbar, wsq) = current_stats(
                    at.bf[e],
                    at.bh[e],
                    &self.scenario.current,
                    sys.current_resolution_m,
                );
                let a = sys.usv_drag_kg;
                let dw = dir.dot(&wbar);
                objective = objective
                    .add(
                        &LinExpr::term(th[e], a * vhk * vhk)
                            .add_term(v_usv_h[e], 2.0 * a * vhk * thk)
                            .add_const(-2.0 * a * thk * vhk * vhk),
                    )
                    .add(
                        &LinExpr::term(th[e], -2.0 * a * dw * vhk)
                            .add_term(v_usv_h[e], -2.0 * a * dw * thk)
                            .add_const(2.0 * a * dw * vhk * thk),
                    )
                    .add(&LinExpr::term(th[e], a * wsq));
            }
        }

        m.minimize(objective);
        let sol = m.solve(1e-8)?;
        if std::env::var("AIRSEA_P3_LOG").is_ok() {
            let tf_dbg: Vec<f64> = tf.iter().map(|v| sol.x[v.index()]).collect();
            let vu_dbg: Vec<f64> = v_uav.iter().map(|v| sol.x[v.index()]).collect();
            let vf_dbg: Vec<f64> = v_usv_f.iter().map(|v| sol.x[v.index()]).collect();
            eprintln!(
                "  [p3] {:?} it {} viol {:.1e} obj {:.1} | tf {:?} vu {:?} vf {:?}",
                sol.status, sol.iterations, sol.max_violation, sol.objective,
                tf_dbg.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
                vu_dbg.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>(),
                vf_dbg.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>()
            );
        }
        if sol.status != SolveStatus::Optimal && sol.max_violation > 1e-5 {
            return Err(RefineError::Infeasible {
                stage: 0,
                what: format!(
                    "surrogate status {:?}, violation {:.2e}",
                    sol.status, sol.max_violation
                ),
            });
        }
        let q: Vec<Vec2> = (0..e_cnt)
            .map(|e| match &q_vars[e] {
                Some([x, y]) => Vec2::new(sol.x[x.index()], sol.x[y.index()]),
                None => at.q[e],
            })
            .collect();
        let bf: Vec<Vec2> = (0..e_cnt)
            .map(|e| match &b_vars[e] {
                Some((bf, _)) => Vec2::new(sol.x[bf[0].index()], sol.x[bf[1].index()]),
                None => q[e],
            })
            .collect();
        let bh: Vec<Vec2> = (0..e_cnt)
            .map(|e| match &b_vars[e] {
                Some((_, bh)) => Vec2::new(sol.x[bh[0].index()], sol.x[bh[1].index()]),
                None => q[e],
            })
            .collect();
        let tf_out: Vec<f64> = tf.iter().map(|v| sol.x[v.index()].max(1e-3)).collect();
        let th_out: Vec<f64> = th.iter().map(|v| sol.x[v.index()].max(1e-3)).collect();
        Ok(Iterate { q, bf, bh, tf: tf_out, th: th_out })
    }
}

/// Amplitude correlation of two steering vectors separated by `delta` in
/// cos(phi) for the scenario's array.
pub fn steering_corr(delta: f64, sys: &crate::scenario::SystemParams) -> f64 {
    let m = sys.num_antennas as f64;
    let x = std::f64::consts::PI * sys.antenna_spacing_m / sys.wavelength_m * 2.0 * delta;
    if x.abs() < 1e-12 {
        return 1.0;
    }
    (((m * x / 2.0).sin()) / (m * (x / 2.0).sin())).abs().min(1.0)
}

/// Best USV standoff radius for sensing a target whose cone cosine is
/// `cos_t`: maximizes the per-slot sensing budget
/// `avail(rho) * (1 - corr(|cos_usv(rho) - cos_t|)^2)`, where `avail` is the
/// transmit power left after communication at that offset. Returns
/// `(rho, budget_w)`.
pub fn best_standoff(
    cos_t: f64,
    comm_radius_2d: f64,
    scenario: &Scenario,
) -> (f64, f64) {
    let sys = &scenario.system;
    let h = sys.altitude_m;
    let mut best = (0.0, 0.0f64);
    let steps = 64;
    for i in 0..=steps {
        let rho = comm_radius_2d * i as f64 / steps as f64;
        let slant = (rho * rho + h * h).sqrt();
        let p_w = crate::channel::comm_power_for_rate(
            scenario.requirements.rate_hover,
            slant,
            sys,
        );
        let avail = 0.85 * sys.power_budget_w - p_w;
        if avail <= 0.0 {
            continue;
        }
        let cos_u = h / slant;
        let c = steering_corr((cos_u - cos_t).abs(), sys);
        let budget = avail * (1.0 - c * c);
        if budget > best.1 {
            best = (rho, budget);
        }
    }
    best
}

/// Communication radius (horizontal) used for hover standoff planning.
pub fn standoff_comm_radius(scenario: &Scenario) -> f64 {
    let sys = &scenario.system;
    let d = crate::channel::comm_distance_threshold(
        scenario.requirements.rate_hover.max(scenario.requirements.rate_fly),
        0.6 * sys.power_budget_w,
        sys,
    )
    .unwrap_or(sys.altitude_m);
    (d * d - sys.altitude_m * sys.altitude_m).max(0.0).sqrt()
}

/// Expected dwell in seconds to collect the cumulative SNR from one target
/// at the given hover point, with the USV parked at the target's best
/// standoff radius.
pub fn loss_aware_dwell(hover: Vec2, target: Vec2, scenario: &Scenario) -> f64 {
    let sys = &scenario.system;
    let h = sys.altitude_m;
    let slant2 = (hover - target).norm_squared() + h * h;
    let cos_t = h / slant2.sqrt();
    let (_, budget) = best_standoff(cos_t, standoff_comm_radius(scenario), scenario);
    let gamma_per_watt = sensing_snr_coef(sys) / (slant2 * slant2);
    scenario.requirements.total_snr / (gamma_per_watt * budget.max(1e-3))
}

/// Representative per-slot sensing budget for the surrogate's dwell pricing
/// (evaluated for an overhead target; the slant factor handles the rest).
pub fn sensing_slot_budget(scenario: &Scenario) -> f64 {
    best_standoff(1.0, standoff_comm_radius(scenario), scenario).1.max(1e-3)
}

/// Standoff radius the stage's anchors should sit on: the largest
/// best-standoff radius over the stage's targets.
pub fn standoff_ring_radius(
    hover_point: Vec2,
    targets: &[usize],
    scenario: &Scenario,
    comm_radius_2d: f64,
) -> f64 {
    let h = scenario.system.altitude_m;
    let mut worst: f64 = 0.0;
    for &k in targets {
        let t = scenario.world.targets[k];
        let cos_t = h / ((hover_point - t).norm_squared() + h * h).sqrt();
        let (rho, _) = best_standoff(cos_t, comm_radius_2d, scenario);
        worst = worst.max(rho);
    }
    worst.min(comm_radius_2d)
}

/// Hover slots needed when targets are sensed one at a time: the sum over
/// targets of the dwell needed at the nominal sensing power.
pub fn time_division_slots(
    hover_point: Vec2,
    targets: &[usize],
    scenario: &Scenario,
) -> usize {
    targets
        .iter()
        .map(|&k| {
            (loss_aware_dwell(hover_point, scenario.world.targets[k], scenario)
                / scenario.system.slot_s)
                .ceil()
                .max(1.0) as usize
        })
        .sum()
}

/// Rotate a ring anchor around the hover point until it clears every
/// obstacle (falling back to the original point if no angle works).
fn clear_of_obstacles(anchor: Vec2, center: Vec2, rho: f64, scenario: &Scenario) -> Vec2 {
    let r1 = scenario.system.obstacle_radius_m * 1.1;
    let clear = |p: Vec2| scenario.world.obstacles.iter().all(|o| (p - o).norm() >= r1);
    if clear(anchor) || rho < 1e-6 {
        return anchor;
    }
    let base = (anchor - center).y.atan2((anchor - center).x);
    for step in 1..48 {
        let delta = step as f64 * std::f64::consts::TAU / 48.0;
        for sign in [1.0, -1.0] {
            let a = base + sign * delta;
            let p = center + Vec2::new(a.cos(), a.sin()) * rho;
            if clear(p) {
                return p;
            }
        }
    }
    anchor
}

/// Refine the hover plan for the given clustering and visiting order.
pub fn refine_hover_plan(
    assignment: &ClusterAssignment,
    order: &VisitOrder,
    coverage: &SensingCoverage,
    scenario: &Scenario,
    opts: RefineOptions,
) -> Result<HoverPlan, RefineError> {
    let sys = &scenario.system;
    let req = &scenario.requirements;
    // Anchor proximity uses the comm range at a 60% power budget: generous
    // enough that anchors can sit on a sensing standoff ring, while leaving
    // transmit headroom for the sensing beams.
    let d_c = comm_distance_threshold(
        req.rate_hover.max(req.rate_fly),
        0.6 * sys.power_budget_w,
        sys,
    )
    .map_err(|_| RefineError::CommBelowAltitude(0.0))?;
    if d_c < sys.altitude_m {
        return Err(RefineError::CommBelowAltitude(d_c));
    }
    let comm_radius_2d = (d_c * d_c - sys.altitude_m * sys.altitude_m).sqrt();

    let stages: Vec<Vec<usize>> =
        order.sequence.iter().map(|&c| assignment.clusters[c].clone()).collect();
    let cover_radius: Vec<f64> = stages.iter().map(|s| coverage.radius(s.len())).collect();
    for (e, r) in cover_radius.iter().enumerate() {
        if *r < 0.0 {
            return Err(RefineError::Infeasible {
                stage: e + 1,
                what: "sensing radius below altitude for this cluster size".into(),
            });
        }
    }
    let snr = sensing_snr_coef(sys);
    let snr_coef: Vec<f64> =
        stages.iter().map(|s| snr * sys.sense_power_w / s.len() as f64).collect();

    let centroids0: Vec<Vec2> =
        order.sequence.iter().map(|&c| assignment.centroids[c]).collect();
    let ring: Vec<f64> = if opts.mode == RefineMode::Joint {
        (0..stages.len())
            .map(|e| standoff_ring_radius(centroids0[e], &stages[e], scenario, comm_radius_2d))
            .collect()
    } else {
        vec![0.0; stages.len()]
    };
    let mut p3 = P3 {
        scenario,
        opts,
        stages,
        cover_radius,
        snr_coef,
        comm_radius_2d,
        ring,
        uav_from: scenario.world.uav_start,
        uav_to: scenario.world.uav_end,
        usv_from: scenario.world.usv_start,
        usv_to: scenario.world.usv_end,
    };

    // Initial iterate: hover at centroids, anchors underneath, durations from
    // planning speeds clipped to reachability.
    let speeds = planning_speeds(sys);
    let e_cnt = p3.num_stages();
    let q0 = centroids0;
    let init = {
        // Both anchors start at the forward ring point so the standoff
        // distance rides on the flying legs (where both vehicles move
        // anyway) instead of forcing a crossing mid-hover.
        let mut bf = Vec::with_capacity(e_cnt);
        let mut bh = Vec::with_capacity(e_cnt);
        for e in 0..e_cnt {
            let next = if e + 1 == e_cnt { scenario.world.usv_end } else { q0[e + 1] };
            let dir_out = {
                let d = next - q0[e];
                let n = d.norm();
                if n > 1e-6 { d / n } else { Vec2::new(1.0, 0.0) }
            };
            let rho = p3.ring[e].min(comm_radius_2d * 0.98);
            let anchor = clear_of_obstacles(q0[e] + dir_out * rho, q0[e], rho, scenario);
            bf.push(anchor);
            bh.push(anchor);
        }
        let mut x = Iterate {
            q: q0.clone(),
            bf,
            bh,
            tf: vec![1.0; e_cnt + 1],
            th: vec![1.0; e_cnt],
        };
        for e in 0..=e_cnt {
            let (qa, qb) = p3.uav_leg(&x, e);
            let (ba, bb) = p3.usv_leg(&x, e);
            let d_uav = (qb - qa).norm();
            let d_usv = (bb - ba).norm();
            x.tf[e] = (d_uav / speeds.uav).max(d_usv / (0.85 * sys.usv_speed_max)).max(1.0);
        }
        for e in 0..e_cnt {
            x.th[e] = p3.hover_time_needed(e, x.q[e]).max(1.0);
        }
        x
    };
    debug_assert!(p3.is_feasible(&init), "initial refinement iterate must be feasible");

    let out = sca_loop(&mut p3, init, sys.sca_tolerance, sys.max_iterations)?;
    let ScaState { objective_history, .. } = out.state;
    let mut x = out.iterate;

    // Discretize durations upward and rescale speeds to preserve positions.
    let dt = sys.slot_s;
    let mut fly_slots = Vec::with_capacity(e_cnt + 1);
    let mut uav_speed = Vec::with_capacity(e_cnt + 1);
    let mut usv_fly_speed = Vec::with_capacity(e_cnt + 1);
    for e in 0..=e_cnt {
        let (qa, qb) = p3.uav_leg(&x, e);
        let (ba, bb) = p3.usv_leg(&x, e);
        let d_uav = (qb - qa).norm();
        let d_usv = (bb - ba).norm();
        let n = if d_uav < 1e-9 && d_usv < 1e-9 {
            0
        } else {
            ((x.tf[e] / dt - 1e-9).ceil() as usize)
                .max((d_uav / (sys.uav_speed_max * dt) - 1e-9).ceil() as usize)
                .max((d_usv / (sys.usv_speed_max * dt) - 1e-9).ceil() as usize)
                .max(1)
        };
        fly_slots.push(n);
        let t = (n as f64) * dt;
        uav_speed.push(if n == 0 { 0.0 } else { d_uav / t });
        usv_fly_speed.push(if n == 0 { 0.0 } else { d_usv / t });
    }
    let mut hover_slots = Vec::with_capacity(e_cnt);
    let mut usv_hover_speed = Vec::with_capacity(e_cnt);
    for e in 0..e_cnt {
        let need = p3.hover_time_needed(e, x.q[e]);
        let d_usv = (x.bh[e] - x.bf[e]).norm();
        let n = ((x.th[e] / dt - 1e-9).ceil() as usize)
            .max((need / dt - 1e-9).ceil() as usize)
            .max(time_division_slots(x.q[e], &p3.stages[e], scenario))
            .max((d_usv / (sys.usv_speed_max * dt) - 1e-9).ceil() as usize)
            .max(1);
        hover_slots.push(n);
        usv_hover_speed.push(d_usv / (n as f64 * dt));
    }

    Ok(HoverPlan {
        hover_points: x.q,
        usv_arrive: x.bf,
        usv_depart: x.bh,
        schedule: p3.stages.clone(),
        fly_slots,
        hover_slots,
        uav_speed,
        usv_fly_speed,
        usv_hover_speed,
        comm_radius: d_c,
        objective_history,
    })
}
