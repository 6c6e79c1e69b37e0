//! Mission runners: the proposed joint pipeline, the sequential-access
//! baseline (hover over every target), and the leader-follower baseline
//! (UAV plans alone, USV follows within communication range).

use std::time::Instant;

use super::audit::audit_mission;
use super::{MissionResult, PhaseTimings, PipelineError, Strategy};
use crate::channel::{comm_distance_threshold, comm_power_for_rate, mrt_transmit};
use crate::conic::{sca_loop, LinExpr, Model, ScaProblem, SolveStatus, Var};
use crate::energy::{account_trajectory, usv_slot_energy};
use crate::hover::cluster::{vbsc_cluster, ClusterAssignment, SensingCoverage};
use crate::hover::cost::build_cost_matrix;
use crate::hover::order::{solve_visit_order, OrderMethod, VisitOrder};
use crate::hover::refine::{refine_hover_plan, HoverPlan, RefineMode, RefineOptions};
use crate::mission::{
    BeamSlot, BeamformingSchedule, EnergyReport, SlotMode, Trajectory, TrajectorySlot,
};
use crate::scenario::{current_at, Scenario};
use crate::stage::ao::{alternate_optimize_hover, beams_for_path, schedule_hover_windows};
use crate::stage::flying::optimize_flying;
use crate::stage::{FlyingStage, HoverStage, StageSolution};
use crate::{at_altitude, Vec2};

/// Run one mission with the requested strategy.
pub fn run_mission(
    scenario: &Scenario,
    strategy: Strategy,
    seed: u64,
) -> Result<MissionResult, PipelineError> {
    match strategy {
        Strategy::Proposed => run_proposed(scenario, seed),
        Strategy::Sequential => run_sequential(scenario, seed),
        Strategy::LeaderFollower => run_leader_follower(scenario, seed),
    }
}

/// Joint pipeline: cluster, order, refine, then per-stage optimization.
pub fn run_proposed(scenario: &Scenario, seed: u64) -> Result<MissionResult, PipelineError> {
    joint_mission(scenario, seed, Strategy::Proposed)
}

/// Sequential-access baseline: one hover point pinned above every target.
pub fn run_sequential(scenario: &Scenario, seed: u64) -> Result<MissionResult, PipelineError> {
    joint_mission(scenario, seed, Strategy::Sequential)
}

fn joint_mission(
    scenario: &Scenario,
    seed: u64,
    strategy: Strategy,
) -> Result<MissionResult, PipelineError> {
    let t0 = Instant::now();
    let mut timings = PhaseTimings::default();
    let cov = SensingCoverage::from_scenario(&scenario.system, &scenario.requirements);

    let t = Instant::now();
    let assignment = match strategy {
        Strategy::Sequential => singleton_clusters(scenario),
        _ => vbsc_cluster(
            &scenario.world.targets,
            &cov,
            scenario.system.max_simultaneous_targets,
            seed,
        )?,
    };
    timings.clustering_ms = t.elapsed().as_millis();

    let t = Instant::now();
    let order = order_clusters(scenario, &assignment, false)?;
    timings.ordering_ms = t.elapsed().as_millis();

    let t = Instant::now();
    let opts = RefineOptions {
        mode: RefineMode::Joint,
        pin_hover_points: strategy == Strategy::Sequential,
    };
    let plan = refine_hover_plan(&assignment, &order, &cov, scenario, opts)?;
    timings.refinement_ms = t.elapsed().as_millis();

    let t = Instant::now();
    let pieces = solve_stages(scenario, &plan)?;
    timings.stages_ms = t.elapsed().as_millis();
    timings.total_ms = t0.elapsed().as_millis();

    finish(scenario, strategy, seed, plan, pieces, timings)
}

fn singleton_clusters(scenario: &Scenario) -> ClusterAssignment {
    let k = scenario.world.targets.len();
    ClusterAssignment {
        count: k,
        clusters: (0..k).map(|t| vec![t]).collect(),
        centroids: scenario.world.targets.clone(),
        cluster_of: (0..k).collect(),
    }
}

fn order_clusters(
    scenario: &Scenario,
    assignment: &ClusterAssignment,
    uav_only: bool,
) -> Result<VisitOrder, PipelineError> {
    let costs = build_cost_matrix(
        &assignment.centroids,
        scenario.world.usv_start,
        scenario.world.usv_end,
        &scenario.current,
        &scenario.system,
        uav_only,
    );
    let method = if assignment.count + 2 <= 20 { OrderMethod::ExactDp } else { OrderMethod::Milp };
    Ok(solve_visit_order(&costs, method)?)
}

/// Optimize every stage of a refined plan, chaining boundary positions.
fn solve_stages(
    scenario: &Scenario,
    plan: &HoverPlan,
) -> Result<Vec<StageSolution>, PipelineError> {
    let e_cnt = plan.num_stages();
    let mut pieces = Vec::with_capacity(2 * e_cnt + 1);
    let mut uav = scenario.world.uav_start;
    let mut usv = scenario.world.usv_start;
    for e in 0..=e_cnt {
        let (uav_to, usv_to) = if e == e_cnt {
            (scenario.world.uav_end, scenario.world.usv_end)
        } else {
            (plan.hover_points[e], plan.usv_arrive[e])
        };
        if plan.fly_slots[e] > 0 {
            let stage = FlyingStage {
                stage: e + 1,
                n_slots: plan.fly_slots[e],
                uav_from: uav,
                uav_to,
                usv_from: usv,
                usv_to,
            };
            pieces.push(optimize_flying(&stage, scenario)?);
        }
        uav = uav_to;
        usv = usv_to;
        if e < e_cnt {
            let stage = HoverStage {
                stage: e + 1,
                n_slots: plan.hover_slots[e],
                hover_point: plan.hover_points[e],
                usv_from: usv,
                usv_to: plan.usv_depart[e],
                targets: plan.schedule[e].clone(),
            };
            pieces.push(alternate_optimize_hover(&stage, scenario)?);
            usv = plan.usv_depart[e];
        }
    }
    Ok(pieces)
}

fn assemble(scenario: &Scenario, pieces: &[StageSolution]) -> (Trajectory, BeamformingSchedule) {
    let mut slots = vec![TrajectorySlot {
        stage: 0,
        mode: SlotMode::Start,
        uav: scenario.world.uav_start,
        usv: scenario.world.usv_start,
    }];
    let mut beams = Vec::new();
    for piece in pieces {
        let n = piece.beams.len();
        for i in 1..=n {
            slots.push(TrajectorySlot {
                stage: piece.stage,
                mode: if piece.hovering { SlotMode::Hovering } else { SlotMode::Flying },
                uav: piece.uav[i],
                usv: piece.usv[i],
            });
            beams.push(piece.beams[i - 1].clone());
        }
    }
    (
        Trajectory { slot_s: scenario.system.slot_s, slots },
        BeamformingSchedule { slots: beams },
    )
}

fn finish(
    scenario: &Scenario,
    strategy: Strategy,
    seed: u64,
    plan: HoverPlan,
    pieces: Vec<StageSolution>,
    timings: PhaseTimings,
) -> Result<MissionResult, PipelineError> {
    let (mut trajectory, mut beams) = assemble(scenario, &pieces);
    if strategy != Strategy::LeaderFollower {
        // One more block-descent round with the UAV fixed: re-optimize the
        // whole USV path globally (the per-stage anchors were only a coarse
        // planning device), redesign the hover beams at the new positions,
        // and refresh the flying-mode transmit powers.
        polish_usv(scenario, &plan, &mut trajectory, &mut beams)?;
    }
    let energy = account_trajectory(&trajectory, &beams, &scenario.current, &scenario.system)?;
    let n = trajectory.num_slots();
    let hovering_slots = trajectory
        .slots
        .iter()
        .filter(|s| s.mode == SlotMode::Hovering)
        .count();
    let report = EnergyReport {
        strategy: strategy.name().to_string(),
        seed,
        hover_points: plan.num_stages(),
        uav_propulsion_j: energy.uav_propulsion_j,
        uav_transmit_j: energy.uav_transmit_j,
        usv_propulsion_j: energy.usv_propulsion_j,
        total_j: energy.total_j(),
        per_stage: energy.per_stage.clone(),
        total_s: n as f64 * scenario.system.slot_s,
        flying_s: (n - hovering_slots) as f64 * scenario.system.slot_s,
        hovering_s: hovering_slots as f64 * scenario.system.slot_s,
    };
    let audit = audit_mission(scenario, &trajectory, &beams);
    if !audit.pass {
        let worst = audit
            .families
            .iter()
            .max_by(|a, b| a.max_violation.partial_cmp(&b.max_violation).expect("finite"))
            .expect("families");
        return Err(PipelineError::Audit(format!(
            "{} violated by {:.3e}",
            worst.name, worst.max_violation
        )));
    }
    Ok(MissionResult { strategy, seed, plan, trajectory, beams, energy, report, audit, timings })
}

// ---------------------------------------------------------------------------
// Global USV polish.
// ---------------------------------------------------------------------------

struct GlobalUsv<'a> {
    scenario: &'a Scenario,
    traj: &'a Trajectory,
    /// Hover point per slot (uav position) and minimum standoff per slot.
    ring_min: &'a [f64],
    /// Horizontal proximity keeping the flying rate affordable.
    r_fly: f64,
    /// Weight of the squared radius tracking error, J per m^2.
    ring_weight: f64,
}

#[derive(Clone)]
struct GlobalPath {
    /// Positions for slots 1..n-1; the final slot is pinned.
    b: Vec<Vec2>,
}

impl GlobalUsv<'_> {
    fn n(&self) -> usize {
        self.traj.num_slots()
    }

    fn b_at(&self, x: &GlobalPath, i: usize) -> Vec2 {
        if i == 0 {
            self.scenario.world.usv_start
        } else if i == self.n() {
            self.scenario.world.usv_end
        } else {
            x.b[i - 1]
        }
    }

    fn q_at(&self, i: usize) -> Vec2 {
        self.traj.slots[i].uav
    }

    fn hovering(&self, i: usize) -> bool {
        self.traj.slots[i].mode == SlotMode::Hovering
    }
}

impl ScaProblem for GlobalUsv<'_> {
    type Iterate = GlobalPath;
    type Error = PipelineError;

    fn objective(&self, x: &GlobalPath) -> f64 {
        let sys = &self.scenario.system;
        let mut total = 0.0;
        for i in 1..=self.n() {
            total +=
                usv_slot_energy(self.b_at(x, i - 1), self.b_at(x, i), &self.scenario.current, sys);
            if self.ring_min[i - 1] > 0.0 {
                let err = (self.b_at(x, i) - self.q_at(i)).norm() - self.ring_min[i - 1];
                total += self.ring_weight * err * err;
            }
        }
        total
    }

    fn is_feasible(&self, x: &GlobalPath) -> bool {
        let sys = &self.scenario.system;
        let tol = 1e-6;
        for i in 1..=self.n() {
            let b = self.b_at(x, i);
            if (b - self.b_at(x, i - 1)).norm() > sys.usv_speed_max * sys.slot_s + tol {
                return false;
            }
            for o in &self.scenario.world.obstacles {
                if (b - o).norm() < sys.obstacle_radius_m - tol {
                    return false;
                }
            }
            if (b - self.q_at(i)).norm() > self.r_fly + tol {
                return false;
            }
        }
        true
    }

    fn blend(&self, from: &GlobalPath, to: &GlobalPath, t: f64) -> GlobalPath {
        GlobalPath { b: from.b.iter().zip(&to.b).map(|(a, c)| a + (c - a) * t).collect() }
    }

    fn solve_surrogate(&mut self, at: &GlobalPath) -> Result<GlobalPath, PipelineError> {
        let sys = &self.scenario.system;
        let n = self.n();
        let dt = sys.slot_s;
        let mut m = Model::new();
        let vars: Vec<[Var; 2]> = (1..n).map(|_| [m.var(), m.var()]).collect();
        let b_expr = |i: usize| -> [LinExpr; 2] {
            if i == 0 {
                let p = self.scenario.world.usv_start;
                [LinExpr::constant(p.x), LinExpr::constant(p.y)]
            } else if i == n {
                let p = self.scenario.world.usv_end;
                [LinExpr::constant(p.x), LinExpr::constant(p.y)]
            } else {
                [vars[i - 1][0].into(), vars[i - 1][1].into()]
            }
        };
        let mut objective = LinExpr::default();
        for i in 1..=n {
            let cur = b_expr(i);
            let prev = b_expr(i - 1);
            let r_usv = m.var();
            let vw = current_at(&self.scenario.current, self.b_at(at, i));
            let vel: Vec<LinExpr> = (0..2)
                .map(|c| cur[c].clone().sub(&prev[c]).scale(1.0 / dt).add_const(-[vw.x, vw.y][c]))
                .collect();
            m.add_rsoc(r_usv.into(), LinExpr::constant(1.0), vel);
            objective = objective.add_term(r_usv, sys.usv_drag_kg * dt);
            m.add_soc(
                LinExpr::constant(sys.usv_speed_max * dt),
                vec![cur[0].clone().sub(&prev[0]), cur[1].clone().sub(&prev[1])],
            );
            let q = self.q_at(i);
            if i < n {
                for o in &self.scenario.world.obstacles {
                    let bk = self.b_at(at, i);
                    let dvec = bk - o;
                    let d = dvec.norm().max(1e-6);
                    let dir = dvec / d;
                    m.add_nonneg(
                        cur[0]
                            .clone()
                            .scale(dir.x)
                            .add(&cur[1].clone().scale(dir.y))
                            .add_const(-dir.dot(o) - sys.obstacle_radius_m),
                    );
                }
                m.add_soc(
                    LinExpr::constant(self.r_fly),
                    vec![cur[0].clone().add_const(-q.x), cur[1].clone().add_const(-q.y)],
                );
            }
            if self.ring_min[i - 1] > 0.0 {
                // Track the window's optimal standoff radius: penalize
                // (dir.(b - q) - ring)^2 with the direction frozen at the
                // iterate (radial linearization of the distance).
                let bk = self.b_at(at, i);
                let rel = bk - q;
                let d = rel.norm().max(1e-6);
                let dir = rel / d;
                let pen = m.var();
                let err = cur[0]
                    .clone()
                    .scale(dir.x)
                    .add(&cur[1].clone().scale(dir.y))
                    .add_const(-dir.dot(&q) - self.ring_min[i - 1]);
                m.add_rsoc(pen.into(), LinExpr::constant(1.0), vec![err]);
                objective = objective.add_term(pen, self.ring_weight);
            }
        }
        m.minimize(objective);
        let sol = m
            .solve(1e-8)
            .map_err(|e| PipelineError::Other(format!("usv polish surrogate: {e}")))?;
        if sol.status != SolveStatus::Optimal && sol.max_violation > 1e-5 {
            return Err(PipelineError::Other(format!(
                "usv polish surrogate {:?} violation {:.2e}",
                sol.status, sol.max_violation
            )));
        }
        Ok(GlobalPath {
            b: vars.iter().map(|[x, y]| Vec2::new(sol.x[x.index()], sol.x[y.index()])).collect(),
        })
    }
}

/// Re-optimize the whole USV path for a fixed UAV timeline with geometric
/// standoff penalties, redesign the hover beams at the new positions, and
/// refresh the flying-mode MRT powers.
fn polish_usv(
    scenario: &Scenario,
    plan: &HoverPlan,
    traj: &mut Trajectory,
    beams: &mut BeamformingSchedule,
) -> Result<(), PipelineError> {
    let sys = &scenario.system;
    let n = traj.num_slots();
    if n <= 1 {
        return Ok(());
    }
    let d_fly = comm_distance_threshold(
        scenario.requirements.rate_fly.max(scenario.requirements.rate_hover),
        0.9 * sys.power_budget_w,
        sys,
    )?;
    let r_fly = (d_fly * d_fly - sys.altitude_m * sys.altitude_m).max(0.0).sqrt();
    // Ring floor per slot from the stage schedule (the active window target
    // is whatever the per-stage design sensed in that slot).
    let comm_radius = crate::hover::refine::standoff_comm_radius(scenario);
    let h = sys.altitude_m;
    let ring_min: Vec<f64> = (1..=n)
        .map(|i| {
            if traj.slots[i].mode != SlotMode::Hovering {
                return 0.0;
            }
            match beams.slots[i - 1].sense.first() {
                Some(sb) => {
                    let t = scenario.world.targets[sb.target];
                    let q = traj.slots[i].uav;
                    let cos_t = h / ((q - t).norm_squared() + h * h).sqrt();
                    crate::stage::ao::ring_floor(cos_t, comm_radius, 0.6, scenario)
                }
                None => 0.0,
            }
        })
        .collect();
    // Prefer the follower machinery (shared with the leader-follower
    // baseline): greedy projection through the proximity disks and rings,
    // then the energy-optimizing sweep. Fall back to a penalty-based pass
    // seeded from the current path when the greedy cannot thread the rings.
    let leader: Vec<LeaderSlot> = (1..=n)
        .map(|i| LeaderSlot {
            stage: traj.slots[i].stage,
            uav: traj.slots[i].uav,
            hovering: traj.slots[i].mode == SlotMode::Hovering,
            ring_min: ring_min[i - 1],
        })
        .collect();
    let mut replaced = false;
    // Seed the follower from the current (feasible) USV path; the greedy
    // projection is a fallback seed only.
    let seeds: [Option<Vec<Vec2>>; 2] = [
        Some((1..=n).map(|i| traj.slots[i].usv).collect()),
        greedy_follow(scenario, &leader, r_fly),
    ];
    for seed in seeds.into_iter().flatten() {
        if let Ok(path) = follow_usv(scenario, &leader, seed, r_fly) {
            for i in 1..n {
                traj.slots[i].usv = path[i - 1];
            }
            replaced = true;
            break;
        }
    }
    if !replaced {
        let mut problem = GlobalUsv {
            scenario,
            traj,
            ring_min: &ring_min,
            r_fly,
            ring_weight: 12.0,
        };
        let init = GlobalPath { b: (1..n).map(|i| traj.slots[i].usv).collect() };
        if problem.is_feasible(&init) {
            let out = sca_loop(&mut problem, init, sys.sca_tolerance, sys.max_iterations)?;
            let path = out.iterate;
            for i in 1..n {
                traj.slots[i].usv = path.b[i - 1];
            }
        }
    }
    rebeam(scenario, plan, traj, beams)?;
    Ok(())
}

/// Redesign every beam slot for the current positions: windowed sensing per
/// hover stage (holding position on extra slots if the SNR budget falls
/// short) and MRT powers on flying slots.
fn rebeam(
    scenario: &Scenario,
    plan: &HoverPlan,
    traj: &mut Trajectory,
    beams: &mut BeamformingSchedule,
) -> Result<(), PipelineError> {
    let sys = &scenario.system;
    // Hover stages, processed back-to-front so insertions keep indices valid.
    let mut groups: Vec<(usize, usize, usize)> = Vec::new(); // (stage, first_slot, last_slot)
    {
        let mut i = 1usize;
        while i <= traj.num_slots() {
            if traj.slots[i].mode == SlotMode::Hovering {
                let stage = traj.slots[i].stage;
                let first = i;
                while i <= traj.num_slots()
                    && traj.slots[i].mode == SlotMode::Hovering
                    && traj.slots[i].stage == stage
                {
                    i += 1;
                }
                groups.push((stage, first, i - 1));
            } else {
                i += 1;
            }
        }
    }
    for &(stage_id, first, last) in groups.iter().rev() {
        let e = stage_id - 1;
        let hover_point = traj.slots[first].uav;
        let targets = plan.schedule[e].clone();
        let base: Vec<Vec2> = (first..=last).map(|i| traj.slots[i].usv).collect();
        let exit = *base.last().expect("hover nonempty");
        let usv_from = traj.slots[first - 1].usv;
        let step = sys.usv_speed_max * sys.slot_s * 0.9;
        let mut solved = None;
        let mut positions = base.clone();
        let mut hold_len = 0usize;
        let mut ramp_target = exit;
        for attempt in 0..6 {
            let stage = HoverStage {
                stage: stage_id,
                n_slots: positions.len(),
                hover_point,
                usv_from,
                usv_to: exit,
                targets: targets.clone(),
            };
            // First attempt keeps the window map the polish tracked (from
            // the per-stage design); extensions re-window from scratch.
            let schedule = if attempt == 0 && positions.len() == base.len() {
                (first..=last)
                    .map(|i| crate::stage::ao::SlotSchedule {
                        target: beams.slots[i - 1].sense.first().map(|sb| sb.target),
                        snr_floor: 0.0,
                    })
                    .collect()
            } else {
                schedule_hover_windows(&stage, scenario)
            };
            let (b, deficits) = beams_for_path(&stage, &schedule, &positions, scenario)?;
            if deficits.iter().all(|&d| d <= 1e-9) {
                solved = Some((b, positions.clone()));
                break;
            }
            if std::env::var("AIRSEA_POLISH_LOG").is_ok() {
                let radii: Vec<f64> = positions
                    .iter()
                    .map(|b| ((b - hover_point).norm() * 10.0).round() / 10.0)
                    .collect();
                eprintln!("  [rebeam] stage {stage_id} deficits {deficits:?} radii {radii:?}");
            }
            // Grow a detour: ramp from the exit to the starving target's
            // standoff ring, hold, and ramp back, keeping steps feasible.
            let worst = deficits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
                .map(|(i, _)| targets[i])
                .expect("has targets");
            let t = scenario.world.targets[worst];
            let h = sys.altitude_m;
            let cos_t = h / ((hover_point - t).norm_squared() + h * h).sqrt();
            let comm_radius = crate::hover::refine::standoff_comm_radius(scenario);
            let (rho_star, _) = crate::hover::refine::best_standoff(cos_t, comm_radius, scenario);
            let dir = {
                let rel = exit - hover_point;
                let d = rel.norm();
                if d > 1e-6 { rel / d } else { Vec2::new(1.0, 0.0) }
            };
            ramp_target = hover_point + dir * rho_star;
            hold_len = (hold_len * 2).max(4);
            positions = base.clone();
            // Out.
            let mut cur = exit;
            while (ramp_target - cur).norm() > step {
                cur += (ramp_target - cur).normalize() * step;
                positions.push(cur);
            }
            positions.push(ramp_target);
            for _ in 0..hold_len {
                positions.push(ramp_target);
            }
            // Back.
            let mut cur = ramp_target;
            while (exit - cur).norm() > step {
                cur += (exit - cur).normalize() * step;
                positions.push(cur);
            }
            positions.push(exit);
        }
        let _ = ramp_target;
        let (new_beams, positions) = solved.ok_or_else(|| {
            PipelineError::Other("hover re-beam could not close the SNR budget".into())
        })?;
        // Splice: positions may have grown; rebuild the slot range.
        let extra = positions.len() - (last - first + 1);
        if extra > 0 {
            let template = traj.slots[last];
            for k in 0..extra {
                traj.slots.insert(last + 1, template);
                beams.slots.insert(last, beams.slots[last - 1].clone());
                let _ = k;
            }
        }
        for (offset, b) in positions.iter().enumerate() {
            traj.slots[first + offset].usv = *b;
        }
        for (offset, nb) in new_beams.into_iter().enumerate() {
            beams.slots[first - 1 + offset] = nb;
        }
    }
    // Flying-mode MRT refresh.
    for i in 1..=traj.num_slots() {
        if traj.slots[i].mode == SlotMode::Flying {
            let q3 = at_altitude(traj.slots[i].uav, sys.altitude_m);
            let b3 = at_altitude(traj.slots[i].usv, 0.0);
            let power =
                comm_power_for_rate(scenario.requirements.rate_fly, (q3 - b3).norm(), sys)
                    * (1.0 + 1e-9);
            beams.slots[i - 1] =
                BeamSlot { comm: mrt_transmit(q3, b3, power, sys)?, sense: vec![] };
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Leader-follower baseline.
// ---------------------------------------------------------------------------

/// Per-slot description of the leader's fixed timeline.
struct LeaderSlot {
    stage: usize,
    uav: Vec2,
    hovering: bool,
    /// Minimum standoff from the hover point during this slot (0 if none).
    ring_min: f64,
}

/// Leader-follower: the UAV timeline is planned without the USV or the
/// current; the USV then minimizes its own energy subject to per-slot
/// communication proximity. If the follower cannot keep up at top speed the
/// flying legs are stretched uniformly until it can.
pub fn run_leader_follower(scenario: &Scenario, seed: u64) -> Result<MissionResult, PipelineError> {
    let t0 = Instant::now();
    let mut timings = PhaseTimings::default();
    let sys = &scenario.system;
    let cov = SensingCoverage::from_scenario(sys, &scenario.requirements);

    let t = Instant::now();
    let assignment = vbsc_cluster(
        &scenario.world.targets,
        &cov,
        sys.max_simultaneous_targets,
        seed,
    )?;
    timings.clustering_ms = t.elapsed().as_millis();

    let t = Instant::now();
    let order = order_clusters(scenario, &assignment, true)?;
    timings.ordering_ms = t.elapsed().as_millis();

    let t = Instant::now();
    let opts = RefineOptions { mode: RefineMode::UavOnly, pin_hover_points: false };
    let plan = refine_hover_plan(&assignment, &order, &cov, scenario, opts)?;
    timings.refinement_ms = t.elapsed().as_millis();

    let t = Instant::now();
    // Follower proximity radius: comm range at a 60% power budget so hover
    // slots keep sensing headroom.
    let d_c = comm_distance_threshold(
        scenario.requirements.rate_hover.max(scenario.requirements.rate_fly),
        0.6 * sys.power_budget_w,
        sys,
    )?;
    if d_c <= sys.altitude_m {
        return Err(PipelineError::Follower("comm radius below altitude".into()));
    }
    let r_follow = (d_c * d_c - sys.altitude_m * sys.altitude_m).sqrt();

    // Hover windows per stage (geometry only, current-independent).
    let hover_slots: Vec<usize> = (0..plan.num_stages())
        .map(|e| {
            let stage = HoverStage {
                stage: e + 1,
                n_slots: plan.hover_slots[e],
                hover_point: plan.hover_points[e],
                usv_from: plan.hover_points[e],
                usv_to: plan.hover_points[e],
                targets: plan.schedule[e].clone(),
            };
            plan.hover_slots[e].max(crate::stage::ao::estimate_hover_slots(&stage, scenario))
        })
        .collect();

    // Find the smallest uniform stretch of the flying legs that the USV can
    // track; the check and the timeline are current-independent.
    let mut chosen: Option<(Vec<LeaderSlot>, Vec<Vec2>)> = None;
    for factor in [1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0, 8.0] {
        let leader = leader_timeline(scenario, &plan, &hover_slots, factor, r_follow);
        if let Some(path) = greedy_follow(scenario, &leader, r_follow) {
            chosen = Some((leader, path));
            break;
        }
    }
    let (leader, init_path) =
        chosen.ok_or_else(|| PipelineError::Follower("no feasible stretch factor".into()))?;

    // Follower optimization under the fixed leader timeline.
    let usv_path = follow_usv(scenario, &leader, init_path, r_follow)?;
    timings.refinement_ms += t.elapsed().as_millis();

    let t = Instant::now();
    let pieces = leader_follower_stages(scenario, &plan, &leader, &usv_path)?;
    timings.stages_ms = t.elapsed().as_millis();
    timings.total_ms = t0.elapsed().as_millis();
    finish(scenario, Strategy::LeaderFollower, seed, plan, pieces, timings)
}

/// Build the leader's per-slot timeline: straight constant-speed legs (the
/// UAV-optimal shape in free space) and fixed hover windows.
fn leader_timeline(
    scenario: &Scenario,
    plan: &HoverPlan,
    hover_slots: &[usize],
    stretch: f64,
    r_follow: f64,
) -> Vec<LeaderSlot> {
    let sys = &scenario.system;
    let mut out = Vec::new();
    let mut uav = scenario.world.uav_start;
    let e_cnt = plan.num_stages();
    for e in 0..=e_cnt {
        let uav_to = if e == e_cnt { scenario.world.uav_end } else { plan.hover_points[e] };
        let n0 = plan.fly_slots[e];
        if n0 > 0 || (uav_to - uav).norm() > 1e-9 {
            let n = ((n0 as f64 * stretch).ceil() as usize).max(n0).max(
                ((uav_to - uav).norm() / (sys.uav_speed_max * sys.slot_s)).ceil() as usize,
            );
            for i in 1..=n {
                out.push(LeaderSlot {
                    stage: e + 1,
                    uav: uav + (uav_to - uav) * (i as f64 / n as f64),
                    hovering: false,
                    ring_min: 0.0,
                });
            }
        }
        uav = uav_to;
        if e < e_cnt {
            let stage = HoverStage {
                stage: e + 1,
                n_slots: hover_slots[e],
                hover_point: plan.hover_points[e],
                usv_from: plan.hover_points[e],
                usv_to: plan.hover_points[e],
                targets: plan.schedule[e].clone(),
            };
            let schedule = schedule_hover_windows(&stage, scenario);
            for s in schedule {
                let ring_min = match s.target {
                    Some(k) => standoff_radius(
                        plan.hover_points[e],
                        scenario.world.targets[k],
                        r_follow,
                        scenario,
                    ),
                    None => 0.0,
                };
                out.push(LeaderSlot {
                    stage: e + 1,
                    uav: plan.hover_points[e],
                    hovering: true,
                    ring_min,
                });
            }
        }
    }
    out
}

/// Standoff ring the follower should reach while this target is sensed.
fn standoff_radius(
    hover: Vec2,
    target: Vec2,
    r_follow: f64,
    scenario: &Scenario,
) -> f64 {
    let h = scenario.system.altitude_m;
    let cos_t = h / ((hover - target).norm_squared() + h * h).sqrt();
    crate::stage::ao::ring_floor(cos_t, r_follow, 0.6, scenario)
}

/// Greedy reachability check: project the follower forward through the
/// proximity disks and rings; `None` if tracking or arrival fails.
fn greedy_follow(
    scenario: &Scenario,
    leader: &[LeaderSlot],
    r_follow: f64,
) -> Option<Vec<Vec2>> {
    let sys = &scenario.system;
    let step = sys.usv_speed_max * sys.slot_s * 0.999;
    let n = leader.len();
    // Upcoming ring radius per slot so the follower pre-positions during
    // flight instead of sprinting when the hover starts.
    let mut lookahead = vec![0.0f64; n];
    let mut coming = 0.0;
    let mut dist = 0usize;
    for i in (0..n).rev() {
        if leader[i].ring_min > 0.0 {
            coming = leader[i].ring_min;
            dist = 0;
        } else {
            dist += 1;
            if dist > 12 {
                coming = 0.0;
            }
        }
        lookahead[i] = coming;
        if i + 1 < n && !leader[i].hovering && leader[i + 1].hovering {
            // keep the value
        }
    }
    let mut b = scenario.world.usv_start;
    let mut path = Vec::with_capacity(n);
    for (i, slot) in leader.iter().enumerate() {
        let bearing = {
            let rel = b - slot.uav;
            let d = rel.norm();
            if d > 1e-6 { rel / d } else { Vec2::new(1.0, 0.0) }
        };
        let want_radius = slot.ring_min.max(lookahead[i].min(r_follow * 0.9));
        let goal = if i + 1 == n {
            scenario.world.usv_end
        } else if want_radius > 0.0 {
            slot.uav + bearing * want_radius * 1.02
        } else {
            slot.uav
        };
        let mut next = b + (goal - b).cap_norm(step);
        // Project into the proximity disk.
        let rel = next - slot.uav;
        if rel.norm() > r_follow {
            next = slot.uav + rel * (r_follow / rel.norm()) * 0.999;
        }
        // Project out of the standoff ring.
        if slot.ring_min > 0.0 {
            let rel = next - slot.uav;
            let d = rel.norm();
            if d < slot.ring_min {
                let dir = if d > 1e-9 { rel / d } else { Vec2::new(1.0, 0.0) };
                next = slot.uav + dir * slot.ring_min * 1.001;
            }
        }
        if (next - b).norm() > step * 1.001 {
            return None;
        }
        b = next;
        path.push(b);
    }
    if (b - scenario.world.usv_end).norm() > 1e-6 {
        return None;
    }
    Some(path)
}

trait CapNorm {
    fn cap_norm(self, cap: f64) -> Self;
}

impl CapNorm for Vec2 {
    fn cap_norm(self, cap: f64) -> Self {
        let n = self.norm();
        if n > cap {
            self * (cap / n)
        } else {
            self
        }
    }
}

struct Follow<'a> {
    scenario: &'a Scenario,
    leader: &'a [LeaderSlot],
    r_follow: f64,
}

#[derive(Clone)]
struct FollowPath {
    /// Slot-end positions 1..n-1 (the last is pinned to the USV end point).
    b: Vec<Vec2>,
}

impl Follow<'_> {
    fn n(&self) -> usize {
        self.leader.len()
    }

    fn b_at(&self, x: &FollowPath, i: usize) -> Vec2 {
        if i == 0 {
            self.scenario.world.usv_start
        } else if i == self.n() {
            self.scenario.world.usv_end
        } else {
            x.b[i - 1]
        }
    }
}

impl ScaProblem for Follow<'_> {
    type Iterate = FollowPath;
    type Error = PipelineError;

    fn objective(&self, x: &FollowPath) -> f64 {
        let sys = &self.scenario.system;
        (1..=self.n())
            .map(|i| {
                usv_slot_energy(
                    self.b_at(x, i - 1),
                    self.b_at(x, i),
                    &self.scenario.current,
                    sys,
                )
            })
            .sum()
    }

    fn is_feasible(&self, x: &FollowPath) -> bool {
        let sys = &self.scenario.system;
        let tol = 1e-6;
        for i in 1..=self.n() {
            let b = self.b_at(x, i);
            let slot = &self.leader[i - 1];
            if (b - self.b_at(x, i - 1)).norm() > sys.usv_speed_max * sys.slot_s + tol {
                return false;
            }
            if (b - slot.uav).norm() > self.r_follow + tol {
                return false;
            }
            if slot.ring_min > 0.0 && (b - slot.uav).norm() < slot.ring_min - tol {
                return false;
            }
            for o in &self.scenario.world.obstacles {
                if (b - o).norm() < sys.obstacle_radius_m - tol {
                    return false;
                }
            }
        }
        true
    }

    fn blend(&self, from: &FollowPath, to: &FollowPath, t: f64) -> FollowPath {
        FollowPath {
            b: from.b.iter().zip(&to.b).map(|(a, c)| a + (c - a) * t).collect(),
        }
    }

    fn solve_surrogate(&mut self, at: &FollowPath) -> Result<FollowPath, PipelineError> {
        let sys = &self.scenario.system;
        let n = self.n();
        let dt = sys.slot_s;
        let mut m = Model::new();
        let vars: Vec<[Var; 2]> = (1..n).map(|_| [m.var(), m.var()]).collect();
        let b_expr = |i: usize| -> [LinExpr; 2] {
            if i == 0 {
                let p = self.scenario.world.usv_start;
                [LinExpr::constant(p.x), LinExpr::constant(p.y)]
            } else if i == n {
                let p = self.scenario.world.usv_end;
                [LinExpr::constant(p.x), LinExpr::constant(p.y)]
            } else {
                [vars[i - 1][0].into(), vars[i - 1][1].into()]
            }
        };
        let mut objective = LinExpr::default();
        for i in 1..=n {
            let slot = &self.leader[i - 1];
            let cur = b_expr(i);
            let prev = b_expr(i - 1);
            let r_usv = m.var();
            let vw = current_at(&self.scenario.current, self.b_at(at, i));
            let vel: Vec<LinExpr> = (0..2)
                .map(|c| {
                    cur[c].clone().sub(&prev[c]).scale(1.0 / dt).add_const(-[vw.x, vw.y][c])
                })
                .collect();
            m.add_rsoc(r_usv.into(), LinExpr::constant(1.0), vel);
            objective = objective.add_term(r_usv, sys.usv_drag_kg * dt);
            m.add_soc(
                LinExpr::constant(sys.usv_speed_max * dt),
                vec![cur[0].clone().sub(&prev[0]), cur[1].clone().sub(&prev[1])],
            );
            if i < n {
                m.add_soc(
                    LinExpr::constant(self.r_follow),
                    vec![
                        cur[0].clone().add_const(-slot.uav.x),
                        cur[1].clone().add_const(-slot.uav.y),
                    ],
                );
                if slot.ring_min > 0.0 {
                    let bk = self.b_at(at, i);
                    let rel = bk - slot.uav;
                    let d = rel.norm().max(1e-6);
                    let dir = rel / d;
                    let row = cur[0]
                        .clone()
                        .scale(dir.x)
                        .add(&cur[1].clone().scale(dir.y))
                        .add_const(-dir.dot(&slot.uav) - slot.ring_min);
                    m.add_nonneg(row);
                }
                for o in &self.scenario.world.obstacles {
                    let bk = self.b_at(at, i);
                    let dvec = bk - o;
                    let d = dvec.norm().max(1e-6);
                    let dir = dvec / d;
                    let row = cur[0]
                        .clone()
                        .scale(dir.x)
                        .add(&cur[1].clone().scale(dir.y))
                        .add_const(-dir.dot(o) - sys.obstacle_radius_m);
                    m.add_nonneg(row);
                }
            }
        }
        m.minimize(objective);
        let sol = m
            .solve(1e-8)
            .map_err(|e| PipelineError::Follower(format!("follower surrogate: {e}")))?;
        if sol.status != SolveStatus::Optimal && sol.max_violation > 1e-5 {
            return Err(PipelineError::Follower(format!(
                "follower surrogate {:?} violation {:.2e}",
                sol.status, sol.max_violation
            )));
        }
        Ok(FollowPath {
            b: vars.iter().map(|[x, y]| Vec2::new(sol.x[x.index()], sol.x[y.index()])).collect(),
        })
    }
}

fn follow_usv(
    scenario: &Scenario,
    leader: &[LeaderSlot],
    init: Vec<Vec2>,
    r_follow: f64,
) -> Result<Vec<Vec2>, PipelineError> {
    let n = leader.len();
    let mut problem = Follow { scenario, leader, r_follow };
    if n <= 1 {
        return Ok(init);
    }
    let start = FollowPath { b: init[..n - 1].to_vec() };
    if !problem.is_feasible(&start) {
        return Err(PipelineError::Follower("follower seed is infeasible".into()));
    }
    let out = sca_loop(
        &mut problem,
        start,
        scenario.system.sca_tolerance,
        scenario.system.max_iterations,
    )?;
    let mut full: Vec<Vec2> = out.iterate.b;
    full.push(scenario.world.usv_end);
    Ok(full)
}

/// Turn the leader timeline plus follower path into stage solutions with
/// beams: MRT power on flying slots, windowed sensing designs on hover slots
/// (extending a hover in place when the SNR budget falls short).
fn leader_follower_stages(
    scenario: &Scenario,
    plan: &HoverPlan,
    leader: &[LeaderSlot],
    usv_path: &[Vec2],
) -> Result<Vec<StageSolution>, PipelineError> {
    let sys = &scenario.system;
    let mut pieces: Vec<StageSolution> = Vec::new();
    let mut i = 0usize;
    let mut prev_uav = scenario.world.uav_start;
    let mut prev_usv = scenario.world.usv_start;
    while i < leader.len() {
        let stage_id = leader[i].stage;
        let hovering = leader[i].hovering;
        let mut uav = vec![prev_uav];
        let mut usv = vec![prev_usv];
        let mut idxs = Vec::new();
        while i < leader.len() && leader[i].stage == stage_id && leader[i].hovering == hovering {
            uav.push(leader[i].uav);
            usv.push(usv_path[i]);
            idxs.push(i);
            i += 1;
        }
        let beams = if !hovering {
            idxs.iter()
                .enumerate()
                .map(|(j, _)| -> Result<BeamSlot, PipelineError> {
                    let q3 = at_altitude(uav[j + 1], sys.altitude_m);
                    let b3 = at_altitude(usv[j + 1], 0.0);
                    let power = comm_power_for_rate(
                        scenario.requirements.rate_fly,
                        (q3 - b3).norm(),
                        sys,
                    ) * (1.0 + 1e-9);
                    Ok(BeamSlot {
                        comm: mrt_transmit(q3, b3, power, sys)?,
                        sense: vec![],
                    })
                })
                .collect::<Result<Vec<_>, _>>()?
        } else {
            // Hover: design beams for the fixed follower positions, holding
            // position on extra slots if the SNR budget falls short.
            let e = stage_id - 1;
            let hover_point = plan.hover_points[e];
            let targets = plan.schedule[e].clone();
            let mut positions: Vec<Vec2> = idxs.iter().map(|&k| usv_path[k]).collect();
            let mut beams = None;
            for _ in 0..6 {
                let stage = HoverStage {
                    stage: stage_id,
                    n_slots: positions.len(),
                    hover_point,
                    usv_from: prev_usv,
                    usv_to: *positions.last().expect("hover has slots"),
                    targets: targets.clone(),
                };
                let schedule = schedule_hover_windows(&stage, scenario);
                let (b, deficits) = beams_for_path(&stage, &schedule, &positions, scenario)?;
                if deficits.iter().all(|&d| d <= 1e-9) {
                    beams = Some(b);
                    break;
                }
                // Extend in place: repeat the best-separated position.
                let hold = *positions.last().expect("nonempty");
                positions.extend(std::iter::repeat_n(hold, positions.len().max(2)));
            }
            let beams = beams.ok_or_else(|| {
                PipelineError::Follower("hover SNR unreachable for the follower path".into())
            })?;
            uav = vec![prev_uav];
            usv = vec![prev_usv];
            for p in &positions {
                uav.push(hover_point);
                usv.push(*p);
            }
            beams
        };
        prev_uav = *uav.last().expect("nonempty");
        prev_usv = *usv.last().expect("nonempty");
        pieces.push(StageSolution {
            stage: stage_id,
            hovering,
            uav,
            usv,
            beams,
            objective_history: vec![],
        });
    }
    Ok(pieces)
}
