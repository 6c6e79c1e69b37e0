//! Independent constraint audit: re-evaluates every mission constraint with
//! the exact closed-form expressions, straight from a trajectory and beam
//! schedule (in memory or reloaded from emitted files).

use serde::{Deserialize, Serialize};

use crate::channel::{flying_rate, hover_rate, matched_combiner, sensing_snr};
use crate::mission::{BeamformingSchedule, SlotMode, Trajectory};
use crate::scenario::Scenario;
use crate::{at_altitude, CVec};

/// Audit tolerance on every constraint family.
pub const AUDIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditFamily {
    pub name: String,
    /// Worst violation observed (nonpositive means satisfied).
    pub max_violation: f64,
    /// Number of individual checks evaluated.
    pub checks: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub tolerance: f64,
    pub pass: bool,
    pub families: Vec<AuditFamily>,
}

impl AuditReport {
    pub fn family(&self, name: &str) -> Option<&AuditFamily> {
        self.families.iter().find(|f| f.name == name)
    }
}

struct Family {
    name: &'static str,
    worst: f64,
    checks: usize,
}

impl Family {
    fn new(name: &'static str) -> Self {
        Family { name, worst: f64::NEG_INFINITY, checks: 0 }
    }

    fn push(&mut self, violation: f64) {
        self.worst = self.worst.max(violation);
        self.checks += 1;
    }

    fn into_report(self) -> AuditFamily {
        AuditFamily {
            name: self.name.to_string(),
            max_violation: if self.checks == 0 { 0.0 } else { self.worst },
            checks: self.checks,
        }
    }
}

/// Re-audit a mission against the scenario. Pure function of its inputs.
pub fn audit_mission(
    scenario: &Scenario,
    traj: &Trajectory,
    beams: &BeamformingSchedule,
) -> AuditReport {
    let sys = &scenario.system;
    let req = &scenario.requirements;
    let n = traj.num_slots();
    let mut fly_rate = Family::new("flying_rate");
    let mut hov_rate = Family::new("hover_rate");
    let mut cum_snr = Family::new("cumulative_snr");
    let mut obstacle = Family::new("obstacle_clearance");
    let mut uav_speed = Family::new("uav_speed");
    let mut usv_speed = Family::new("usv_speed");
    let mut power = Family::new("power_budget");
    let mut endpoints = Family::new("endpoint_sync");

    let mut accumulated = vec![0.0f64; scenario.world.targets.len()];

    for i in 1..=n.min(beams.slots.len()) {
        let slot = &traj.slots[i];
        let beam = &beams.slots[i - 1];
        let q3 = at_altitude(slot.uav, sys.altitude_m);
        let b3 = at_altitude(slot.usv, 0.0);

        uav_speed.push(traj.uav_velocity(i).norm() - sys.uav_speed_max);
        usv_speed.push(traj.usv_velocity(i).norm() - sys.usv_speed_max);
        power.push(beam.comm_power() + beam.sense_power() - sys.power_budget_w);
        for o in &scenario.world.obstacles {
            obstacle.push(sys.obstacle_radius_m - (slot.usv - o).norm());
        }

        match slot.mode {
            SlotMode::Flying => {
                let r = flying_rate(q3, b3, &beam.comm, sys).unwrap_or(0.0);
                fly_rate.push(req.rate_fly - r);
            }
            SlotMode::Hovering => {
                let vs: Vec<CVec> = beam.sense.iter().map(|s| s.vector.clone()).collect();
                let active: Vec<usize> = (0..vs.len()).collect();
                let r = hover_rate(q3, b3, &beam.comm, &vs, &active, sys).unwrap_or(0.0);
                hov_rate.push(req.rate_hover - r);
                for (idx, s) in beam.sense.iter().enumerate() {
                    let t3 = at_altitude(scenario.world.targets[s.target], 0.0);
                    if let Ok(u) = matched_combiner(q3, t3, sys) {
                        if let Ok(snr) = sensing_snr(q3, t3, &vs, &u, idx, &active, sys) {
                            accumulated[s.target] += snr;
                        }
                    }
                }
            }
            SlotMode::Start => {}
        }
    }

    for (k, acc) in accumulated.iter().enumerate() {
        let _ = k;
        cum_snr.push((req.total_snr - acc) / req.total_snr.max(1e-12));
    }

    if let (Some(first), Some(last)) = (traj.slots.first(), traj.slots.last()) {
        endpoints.push((first.uav - scenario.world.uav_start).norm());
        endpoints.push((first.usv - scenario.world.usv_start).norm());
        endpoints.push((last.uav - scenario.world.uav_end).norm());
        endpoints.push((last.usv - scenario.world.usv_end).norm());
    }

    let families: Vec<AuditFamily> = vec![
        fly_rate.into_report(),
        hov_rate.into_report(),
        cum_snr.into_report(),
        obstacle.into_report(),
        uav_speed.into_report(),
        usv_speed.into_report(),
        power.into_report(),
        endpoints.into_report(),
    ];
    let pass = families.iter().all(|f| f.max_violation <= AUDIT_TOL);
    AuditReport { tolerance: AUDIT_TOL, pass, families }
}
