//! File emission and reloading: trajectory CSV, beam schedule JSON, metrics
//! JSON, audit JSON, plus the resolved scenario so a result directory is
//! self-contained for independent validation. Output bytes are deterministic
//! for a fixed seed (timings live in their own file).

use std::fmt::Write as _;
use std::path::Path;

use super::audit::{audit_mission, AuditReport};
use super::{MissionResult, PipelineError};
use crate::energy::uav_power_flying;
use crate::mission::{
    BeamformingSchedule, SlotMode, Trajectory, TrajectorySlot,
};
use crate::scenario::{current_at, Scenario};
use crate::Vec2;

pub const TRAJECTORY_HEADER: &str =
    "stage,slot,time_s,mode,uav_x,uav_y,uav_z,usv_x,usv_y,p_comm_W,p_sense_W,uav_prop_W,usv_prop_W";

fn mode_str(m: SlotMode) -> &'static str {
    match m {
        SlotMode::Start => "start",
        SlotMode::Flying => "flying",
        SlotMode::Hovering => "hovering",
    }
}

fn parse_mode(s: &str) -> Result<SlotMode, PipelineError> {
    match s {
        "start" => Ok(SlotMode::Start),
        "flying" => Ok(SlotMode::Flying),
        "hovering" => Ok(SlotMode::Hovering),
        other => Err(PipelineError::Other(format!("bad mode '{other}' in trajectory"))),
    }
}

/// Render the trajectory CSV (row count = slots + 1, slot 0 first).
pub fn trajectory_csv(scenario: &Scenario, result: &MissionResult) -> String {
    let sys = &scenario.system;
    let traj = &result.trajectory;
    let mut out = String::new();
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for (i, slot) in traj.slots.iter().enumerate() {
        let (p_comm, p_sense, uav_prop, usv_prop) = if i == 0 {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            let beam = &result.beams.slots[i - 1];
            let prop = match slot.mode {
                SlotMode::Hovering => sys.hover_power_w(),
                _ => uav_power_flying(traj.uav_velocity(i).norm(), sys),
            };
            let rel = traj.usv_velocity(i) - current_at(&scenario.current, slot.usv);
            (
                beam.comm_power(),
                beam.sense_power(),
                prop,
                sys.usv_drag_kg * rel.norm_squared(),
            )
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            slot.stage,
            i,
            i as f64 * traj.slot_s,
            mode_str(slot.mode),
            slot.uav.x,
            slot.uav.y,
            sys.altitude_m,
            slot.usv.x,
            slot.usv.y,
            p_comm,
            p_sense,
            uav_prop,
            usv_prop,
        );
    }
    out
}

/// Write every artifact of a finished mission into `dir`.
pub fn emit_outputs(
    scenario: &Scenario,
    result: &MissionResult,
    dir: impl AsRef<Path>,
) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trajectory.csv"), trajectory_csv(scenario, result))?;
    std::fs::write(dir.join("beams.json"), serde_json::to_string_pretty(&result.beams)?)?;
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&result.report)?)?;
    std::fs::write(dir.join("audit.json"), serde_json::to_string_pretty(&result.audit)?)?;
    std::fs::write(dir.join("hover_plan.json"), serde_json::to_string_pretty(&result.plan)?)?;
    std::fs::write(dir.join("scenario.json"), serde_json::to_string_pretty(scenario)?)?;
    std::fs::write(dir.join("timings.json"), serde_json::to_string_pretty(&result.timings)?)?;
    Ok(())
}

/// Reload the pieces needed for an independent audit from a result directory.
pub fn load_result(
    dir: impl AsRef<Path>,
) -> Result<(Scenario, Trajectory, BeamformingSchedule), PipelineError> {
    let dir = dir.as_ref();
    let scenario: Scenario =
        serde_json::from_str::<Scenario>(&std::fs::read_to_string(dir.join("scenario.json"))?)?
            .validate()?;
    let beams: BeamformingSchedule =
        serde_json::from_str(&std::fs::read_to_string(dir.join("beams.json"))?)?;
    let csv = std::fs::read_to_string(dir.join("trajectory.csv"))?;
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| PipelineError::Other("empty trajectory".into()))?;
    if header != TRAJECTORY_HEADER {
        return Err(PipelineError::Other("unexpected trajectory header".into()));
    }
    let mut slots = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(PipelineError::Other(format!("bad trajectory row: {line}")));
        }
        let num = |s: &str| -> Result<f64, PipelineError> {
            s.parse::<f64>().map_err(|e| PipelineError::Other(format!("bad number {s}: {e}")))
        };
        slots.push(TrajectorySlot {
            stage: f[0]
                .parse()
                .map_err(|e| PipelineError::Other(format!("bad stage: {e}")))?,
            mode: parse_mode(f[3])?,
            uav: Vec2::new(num(f[4])?, num(f[5])?),
            usv: Vec2::new(num(f[7])?, num(f[8])?),
        });
    }
    let traj = Trajectory { slot_s: scenario.system.slot_s, slots };
    Ok((scenario, traj, beams))
}

/// Re-audit an emitted result directory from its files alone.
pub fn validate_dir(dir: impl AsRef<Path>) -> Result<AuditReport, PipelineError> {
    let (scenario, traj, beams) = load_result(dir)?;
    Ok(audit_mission(&scenario, &traj, &beams))
}
