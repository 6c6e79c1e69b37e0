//! Hovering-mode USV trajectory refinement for fixed beams: minimize drag
//! energy against the current subject to speed, obstacle clearance, and the
//! hover rate constraint linearized at the current path.

use super::{HoverStage, StageError};
use crate::conic::{sca_loop, LinExpr, Model, ScaProblem, SolveStatus, Var};
use crate::energy::usv_slot_energy;
use crate::mission::BeamSlot;
use crate::scenario::{current_at, Scenario, SystemParams};
use crate::{at_altitude, CVec, Vec2, C64};

/// `h(b)^H u` as a function of the slant distance only: the steering phase
/// and the path gain both depend on `b` through `d`.
fn beam_response(d: f64, u: &CVec, sys: &SystemParams) -> (C64, C64) {
    let gain = sys.channel_gain * sys.small_scale_fading;
    let phase_c = 2.0 * std::f64::consts::PI * sys.antenna_spacing_m * sys.altitude_m
        / sys.wavelength_m;
    let mut s = C64::new(0.0, 0.0);
    let mut s_prime = C64::new(0.0, 0.0);
    for (mi, um) in u.iter().enumerate() {
        let m = mi as f64;
        let e = C64::from_polar(1.0, -phase_c * m / d);
        s += um * e;
        s_prime += um * e * C64::new(0.0, phase_c * m / (d * d));
    }
    let f = s * (gain / (d * d));
    let f_prime = (s_prime * d - s * 2.0) * (gain / (d * d * d));
    (f, f_prime)
}

/// Left-hand side of the hover rate constraint,
/// `|h^H w|^2 - (2^rate - 1) sum_k |h^H v_k|^2`, and its 2-D gradient in b.
pub fn rate_margin_terms(
    hover_point: Vec2,
    b: Vec2,
    comm: &CVec,
    sense: &[CVec],
    rate: f64,
    sys: &SystemParams,
) -> (f64, Vec2) {
    let q3 = at_altitude(hover_point, sys.altitude_m);
    let b3 = at_altitude(b, 0.0);
    let d = (q3 - b3).norm();
    let grad_d = (b - hover_point) / d;
    let snr = 2f64.powf(rate) - 1.0;
    let term = |u: &CVec| -> (f64, f64) {
        let (f, fp) = beam_response(d, u, sys);
        (f.norm_sqr(), 2.0 * (f.conj() * fp).re)
    };
    let (fw, fw_d) = term(comm);
    let mut val = fw;
    let mut dval = fw_d;
    for v in sense {
        let (fv, fv_d) = term(v);
        val -= snr * fv;
        dval -= snr * fv_d;
    }
    (val, grad_d * dval)
}

/// Rate threshold constant: the margin must stay at or above
/// `rho * sigma_h^2` with `rho = (2^rate - 1) delta / (N_s t_p)`.
pub fn rate_margin_floor(rate: f64, sys: &SystemParams) -> f64 {
    (2f64.powf(rate) - 1.0) / sys.scan_duty() * sys.noise_hover_w
}

#[derive(Clone)]
struct UsvPath {
    /// Interior slot-end positions 1..n-1; ends are fixed.
    b: Vec<Vec2>,
}

struct P7<'a> {
    stage: &'a HoverStage,
    scenario: &'a Scenario,
    beams: &'a [BeamSlot],
    floor: f64,
    rate: f64,
    penalized: bool,
    /// Set when the penalty fallback actually engaged.
    pub used_penalty: bool,
}

impl P7<'_> {
    fn n(&self) -> usize {
        self.stage.n_slots
    }

    fn b_at(&self, x: &UsvPath, i: usize) -> Vec2 {
        if i == 0 {
            self.stage.usv_from
        } else if i == self.n() {
            self.stage.usv_to
        } else {
            x.b[i - 1]
        }
    }
}

impl ScaProblem for P7<'_> {
    type Iterate = UsvPath;
    type Error = StageError;

    fn objective(&self, x: &UsvPath) -> f64 {
        let sys = &self.scenario.system;
        (1..=self.n())
            .map(|i| {
                usv_slot_energy(self.b_at(x, i - 1), self.b_at(x, i), &self.scenario.current, sys)
            })
            .sum()
    }

    fn is_feasible(&self, x: &UsvPath) -> bool {
        let sys = &self.scenario.system;
        let dt = sys.slot_s;
        let tol = 1e-7;
        for i in 1..=self.n() {
            if (self.b_at(x, i) - self.b_at(x, i - 1)).norm() > sys.usv_speed_max * dt + tol {
                return false;
            }
            let sense: Vec<CVec> =
                self.beams[i - 1].sense.iter().map(|s| s.vector.clone()).collect();
            let (margin, _) = rate_margin_terms(
                self.stage.hover_point,
                self.b_at(x, i),
                &self.beams[i - 1].comm,
                &sense,
                self.rate,
                sys,
            );
            if margin < self.floor * (1.0 - 1e-9) - 1e-30 {
                return false;
            }
        }
        for i in 1..self.n() {
            for o in &self.scenario.world.obstacles {
                if (self.b_at(x, i) - o).norm() < sys.obstacle_radius_m - tol {
                    return false;
                }
            }
        }
        true
    }

    fn blend(&self, from: &UsvPath, to: &UsvPath, t: f64) -> UsvPath {
        UsvPath {
            b: from.b.iter().zip(&to.b).map(|(a, c)| a + (c - a) * t).collect(),
        }
    }

    fn solve_surrogate(&mut self, at: &UsvPath) -> Result<UsvPath, StageError> {
        let sys = &self.scenario.system;
        let n = self.n();
        let dt = sys.slot_s;
        let mut m = Model::new();
        let b: Vec<[Var; 2]> = (1..n).map(|_| [m.var(), m.var()]).collect();
        let b_expr = |i: usize| -> [LinExpr; 2] {
            if i == 0 || i == n {
                let p = if i == 0 { self.stage.usv_from } else { self.stage.usv_to };
                [LinExpr::constant(p.x), LinExpr::constant(p.y)]
            } else {
                [b[i - 1][0].into(), b[i - 1][1].into()]
            }
        };
        let mut objective = LinExpr::default();
        let mut penalty_slacks: Vec<Var> = Vec::new();
        for i in 1..=n {
            let r_usv = m.var();
            let vw = current_at(&self.scenario.current, self.b_at(at, i));
            let prev = b_expr(i - 1);
            let cur = b_expr(i);
            let vel: Vec<LinExpr> = (0..2)
                .map(|c| {
                    cur[c]
                        .clone()
                        .sub(&prev[c])
                        .scale(1.0 / dt)
                        .add_const(-[vw.x, vw.y][c])
                })
                .collect();
            m.add_rsoc(r_usv.into(), LinExpr::constant(1.0), vel);
            objective = objective.add_term(r_usv, sys.usv_drag_kg * dt);
            m.add_soc(
                LinExpr::constant(sys.usv_speed_max * dt),
                vec![cur[0].clone().sub(&prev[0]), cur[1].clone().sub(&prev[1])],
            );
            if i < n {
                for o in &self.scenario.world.obstacles {
                    let bk = self.b_at(at, i);
                    let dist = (bk - o).norm().max(1e-6);
                    let dir = (bk - o) / dist;
                    let row = cur[0]
                        .clone()
                        .scale(dir.x)
                        .add(&cur[1].clone().scale(dir.y))
                        .add_const(-dir.dot(o) - sys.obstacle_radius_m);
                    m.add_nonneg(row);
                }
                // Linearized rate constraint at the iterate.
                let bk = self.b_at(at, i);
                let sense: Vec<CVec> =
                    self.beams[i - 1].sense.iter().map(|s| s.vector.clone()).collect();
                let (val, grad) = rate_margin_terms(
                    self.stage.hover_point,
                    bk,
                    &self.beams[i - 1].comm,
                    &sense,
                    self.rate,
                    sys,
                );
                let mut row = cur[0]
                    .clone()
                    .scale(grad.x)
                    .add(&cur[1].clone().scale(grad.y))
                    .add_const(val - grad.dot(&bk) - self.floor);
                if self.penalized {
                    let sl = m.var();
                    m.add_nonneg(sl.into());
                    // Slack is in margin units; weight dominates the drag term.
                    row = row.add_term(sl, self.floor.max(1e-30));
                    penalty_slacks.push(sl);
                }
                m.add_nonneg(row);
            }
        }
        for &sl in &penalty_slacks {
            objective = objective.add_term(sl, 1e4);
        }
        m.minimize(objective);
        let sol = m.solve(1e-8).map_err(|e| StageError::Solver {
            stage: self.stage.stage,
            source: e,
        })?;
        if sol.status == SolveStatus::PrimalInfeasible && !self.penalized {
            self.penalized = true;
            self.used_penalty = true;
            return self.solve_surrogate(at);
        }
        if sol.status != SolveStatus::Optimal && sol.max_violation > 1e-5 {
            return Err(StageError::Infeasible {
                stage: self.stage.stage,
                what: format!("USV surrogate {:?}, violation {:.2e}", sol.status, sol.max_violation),
            });
        }
        Ok(UsvPath {
            b: b.iter().map(|[x, y]| Vec2::new(sol.x[x.index()], sol.x[y.index()])).collect(),
        })
    }
}

/// Refine the USV path of a hovering stage for fixed beams. `path` holds the
/// slot-end positions (length n_slots, last one the fixed endpoint); returns
/// the improved path and the SCA objective history.
pub fn optimize_hover_usv(
    stage: &HoverStage,
    beams: &[BeamSlot],
    path: &[Vec2],
    scenario: &Scenario,
) -> Result<(Vec<Vec2>, Vec<f64>, bool), StageError> {
    let sys = &scenario.system;
    let n = stage.n_slots;
    assert_eq!(beams.len(), n);
    assert_eq!(path.len(), n);
    let rate = scenario.requirements.rate_hover;
    let mut p7 = P7 {
        stage,
        scenario,
        beams,
        floor: rate_margin_floor(rate, sys),
        rate,
        penalized: false,
        used_penalty: false,
    };
    if n <= 1 {
        // No interior freedom.
        let x = UsvPath { b: vec![] };
        let obj = p7.objective(&x);
        return Ok((path.to_vec(), vec![obj], false));
    }
    let init = UsvPath { b: path[..n - 1].to_vec() };
    let out = sca_loop(&mut p7, init, sys.sca_tolerance, sys.max_iterations)?;
    let mut full = Vec::with_capacity(n);
    full.extend(out.iterate.b.iter().cloned());
    full.push(stage.usv_to);
    Ok((full, out.state.objective_history, p7.used_penalty))
}

/// Build a hover-stage solution skeleton (positions only) used before beams
/// exist: straight-line interpolation nudged off obstacles.
pub fn initial_usv_path(stage: &HoverStage, scenario: &Scenario) -> Vec<Vec2> {
    let n = stage.n_slots;
    let r1 = scenario.system.obstacle_radius_m;
    let mut path: Vec<Vec2> = (1..=n)
        .map(|i| stage.usv_from + (stage.usv_to - stage.usv_from) * (i as f64 / n as f64))
        .collect();
    for p in path.iter_mut().take(n.saturating_sub(1)) {
        for o in &scenario.world.obstacles {
            let d = (*p - o).norm();
            if d < r1 * 1.05 {
                let dir = if d > 1e-9 { (*p - o) / d } else { Vec2::new(1.0, 0.0) };
                *p = o + dir * (r1 * 1.05);
            }
        }
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{hover_rate, mrt_transmit};
    use crate::scenario::{
        reference_params, reference_requirements, CurrentField, Scenario, World,
    };

    fn scenario(current: CurrentField) -> Scenario {
        Scenario {
            system: reference_params(),
            requirements: reference_requirements(),
            world: World {
                targets: vec![Vec2::new(150.0, 150.0)],
                obstacles: vec![],
                uav_start: Vec2::zeros(),
                uav_end: Vec2::new(300.0, 300.0),
                usv_start: Vec2::zeros(),
                usv_end: Vec2::new(300.0, 300.0),
            },
            current,
        }
    }

    fn mrt_beams(stage: &HoverStage, path: &[Vec2], power: f64, sc: &Scenario) -> Vec<BeamSlot> {
        let sys = &sc.system;
        path.iter()
            .map(|&b| BeamSlot {
                comm: mrt_transmit(
                    at_altitude(stage.hover_point, sys.altitude_m),
                    at_altitude(b, 0.0),
                    power,
                    sys,
                )
                .unwrap(),
                sense: vec![],
            })
            .collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let sc = scenario(CurrentField::zero());
        let sys = &sc.system;
        let q = Vec2::new(150.0, 150.0);
        let w = mrt_transmit(
            at_altitude(q, sys.altitude_m),
            at_altitude(Vec2::new(160.0, 140.0), 0.0),
            4.0,
            sys,
        )
        .unwrap();
        let v = mrt_transmit(
            at_altitude(q, sys.altitude_m),
            at_altitude(Vec2::new(120.0, 170.0), 0.0),
            2.0,
            sys,
        )
        .unwrap();
        for b in [Vec2::new(158.0, 147.0), Vec2::new(140.0, 160.0), Vec2::new(151.0, 152.0)] {
            let (_, grad) =
                rate_margin_terms(q, b, &w, std::slice::from_ref(&v), 13.0, sys);
            let h = 1e-5;
            for (axis, g) in [(Vec2::new(h, 0.0), grad.x), (Vec2::new(0.0, h), grad.y)] {
                let (fp, _) =
                    rate_margin_terms(q, b + axis, &w, std::slice::from_ref(&v), 13.0, sys);
                let (fm, _) =
                    rate_margin_terms(q, b - axis, &w, std::slice::from_ref(&v), 13.0, sys);
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (fd - g).abs() <= 1e-4 * g.abs().max(1e-12),
                    "grad {g} vs fd {fd} at {b:?}"
                );
            }
        }
    }

    #[test]
    fn zero_rate_lets_usv_drift_with_current() {
        let mut sc = scenario(CurrentField::uniform(Vec2::new(1.0, 1.0)));
        sc.requirements.rate_hover = 0.0;
        let n = 8;
        // Endpoints exactly drift-reachable.
        let from = Vec2::new(150.0, 150.0);
        let to = from + Vec2::new(1.0, 1.0) * (n as f64);
        let stage = HoverStage {
            stage: 1,
            n_slots: n,
            hover_point: Vec2::new(150.0, 150.0),
            usv_from: from,
            usv_to: to,
            targets: vec![0],
        };
        let path = initial_usv_path(&stage, &sc);
        let beams = vec![BeamSlot { comm: CVec::zeros(4), sense: vec![] }; n];
        let (out, hist, penalized) = optimize_hover_usv(&stage, &beams, &path, &sc).unwrap();
        assert!(!penalized);
        assert!(hist.last().unwrap() < &1e-6, "drift should be free: {hist:?}");
        assert_eq!(out.len(), n);
    }

    #[test]
    fn inactive_rate_constraint_changes_nothing() {
        // Huge beam power makes the rate constraint slack everywhere the
        // speed limit allows; the solution must match the unconstrained one.
        let sc = scenario(CurrentField::uniform(Vec2::new(0.5, -0.2)));
        let n = 6;
        let stage = HoverStage {
            stage: 1,
            n_slots: n,
            hover_point: Vec2::new(150.0, 150.0),
            usv_from: Vec2::new(148.0, 150.0),
            usv_to: Vec2::new(156.0, 151.0),
            targets: vec![0],
        };
        let path = initial_usv_path(&stage, &sc);
        let strong = mrt_beams(&stage, &path, 19.9, &sc);
        let (with, hist_a, _) = optimize_hover_usv(&stage, &strong, &path, &sc).unwrap();
        let mut free_sc = sc.clone();
        free_sc.requirements.rate_hover = 0.0;
        let (without, hist_b, _) = optimize_hover_usv(&stage, &strong, &path, &free_sc).unwrap();
        let last_a = hist_a.last().unwrap();
        let last_b = hist_b.last().unwrap();
        assert!(
            (last_a - last_b).abs() <= 1e-4 * last_b.max(1e-9) + 1e-7,
            "constrained {last_a} vs unconstrained {last_b}"
        );
        for (a, b) in with.iter().zip(&without) {
            assert!((a - b).norm() < 0.5, "paths differ: {a:?} vs {b:?}");
        }
    }

    #[test]
    fn tight_rate_pulls_path_toward_hover_point() {
        // Beams sized so the rate just holds near the hover point: the USV
        // cannot wander to the energy-optimal drift line.
        let sc = scenario(CurrentField::uniform(Vec2::new(0.0, 2.0)));
        let sys = &sc.system;
        let n = 8;
        let q = Vec2::new(150.0, 150.0);
        let stage = HoverStage {
            stage: 1,
            n_slots: n,
            hover_point: q,
            usv_from: Vec2::new(150.0, 145.0),
            usv_to: Vec2::new(150.0, 155.0),
            targets: vec![0],
        };
        let path = initial_usv_path(&stage, &sc);
        // Power for the rate at ~8 m horizontal offset.
        let d8 = (at_altitude(q, sys.altitude_m) - at_altitude(q + Vec2::new(8.0, 0.0), 0.0)).norm();
        let p_needed =
            crate::channel::comm_power_for_rate(sc.requirements.rate_hover, d8, sys);
        let beams = mrt_beams(&stage, &path, p_needed.min(sys.power_budget_w * 0.99), &sc);
        let (tight, _, _) = optimize_hover_usv(&stage, &beams, &path, &sc).unwrap();
        let mut free_sc = sc.clone();
        free_sc.requirements.rate_hover = 0.0;
        let (free, _, _) = optimize_hover_usv(&stage, &beams, &path, &free_sc).unwrap();
        let spread = |p: &[Vec2]| -> f64 {
            p.iter().map(|b| (b - q).norm()).fold(0.0f64, f64::max)
        };
        assert!(
            spread(&tight) <= spread(&free) + 1e-6,
            "rate-constrained path should hug the hover point: {} vs {}",
            spread(&tight),
            spread(&free)
        );
        // Every slot still meets the hover rate exactly.
        for (i, b) in tight.iter().enumerate() {
            let r = hover_rate(
                at_altitude(q, sys.altitude_m),
                at_altitude(*b, 0.0),
                &beams[i].comm,
                &[],
                &[],
                sys,
            )
            .unwrap();
            assert!(r >= sc.requirements.rate_hover - 1e-6, "slot {i}: rate {r}");
        }
    }
}
