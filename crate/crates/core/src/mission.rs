//! Shared mission data: per-slot trajectories, beamforming schedules, and
//! decomposed energy reports. These are the types that flow between the
//! stage optimizers, the accounting layer, and the file emitters.

use serde::{Deserialize, Serialize};

use crate::{CVec, Vec2, C64};

/// What the UAV is doing in a given slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotMode {
    /// Initial positions before the first slot elapses.
    Start,
    Flying,
    Hovering,
}

/// One row of the discretized joint trajectory.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrajectorySlot {
    /// Stage index (1-based; 0 for the start row).
    pub stage: usize,
    pub mode: SlotMode,
    /// UAV surface-plane position; altitude is constant.
    pub uav: Vec2,
    /// USV position.
    pub usv: Vec2,
}

/// Discretized UAV/USV trajectory: slot 0 holds the start positions, slot n
/// (n >= 1) the positions at the end of the n-th slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub slot_s: f64,
    pub slots: Vec<TrajectorySlot>,
}

impl Trajectory {
    /// Number of elapsed slots N (rows minus the start row).
    pub fn num_slots(&self) -> usize {
        self.slots.len().saturating_sub(1)
    }

    /// Velocity of the UAV over slot n (1-based).
    pub fn uav_velocity(&self, n: usize) -> Vec2 {
        (self.slots[n].uav - self.slots[n - 1].uav) / self.slot_s
    }

    /// Velocity of the USV over slot n (1-based).
    pub fn usv_velocity(&self, n: usize) -> Vec2 {
        (self.slots[n].usv - self.slots[n - 1].usv) / self.slot_s
    }
}

/// One sensing beam: which target it illuminates and the transmit vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SenseBeam {
    pub target: usize,
    #[serde(with = "cvec_serde")]
    pub vector: CVec,
}

/// Transmit beams active during one slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamSlot {
    /// Communication beam (MRT while flying, optimized while hovering).
    #[serde(with = "cvec_serde")]
    pub comm: CVec,
    /// Sensing beams, empty while flying.
    pub sense: Vec<SenseBeam>,
}

impl BeamSlot {
    pub fn comm_power(&self) -> f64 {
        self.comm.norm_squared()
    }

    pub fn sense_power(&self) -> f64 {
        self.sense.iter().map(|s| s.vector.norm_squared()).sum()
    }
}

/// Per-slot transmit schedule aligned with `Trajectory` (entry n-1 covers
/// slot n).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamformingSchedule {
    pub slots: Vec<BeamSlot>,
}

/// Energy of one stage split into its flying and hovering legs, joules.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StageEnergy {
    pub stage: usize,
    pub flying_j: f64,
    pub hovering_j: f64,
}

/// Decomposed mission energy, joules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerBreakdown {
    pub uav_propulsion_j: f64,
    pub uav_transmit_j: f64,
    pub usv_propulsion_j: f64,
    pub per_stage: Vec<StageEnergy>,
}

impl PowerBreakdown {
    pub fn total_j(&self) -> f64 {
        self.uav_propulsion_j + self.uav_transmit_j + self.usv_propulsion_j
    }
}

/// Mission-level metrics serialized to `metrics.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    pub strategy: String,
    pub seed: u64,
    pub hover_points: usize,
    pub uav_propulsion_j: f64,
    pub uav_transmit_j: f64,
    pub usv_propulsion_j: f64,
    pub total_j: f64,
    pub per_stage: Vec<StageEnergy>,
    pub total_s: f64,
    pub flying_s: f64,
    pub hovering_s: f64,
}

/// Complex vectors serialize as `[re, im]` pairs.
mod cvec_serde {
    use super::*;
    use serde::de::Deserializer;
    use serde::ser::Serializer;

    pub fn serialize<S: Serializer>(v: &CVec, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        serde::Serialize::serialize(&pairs, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CVec, D::Error> {
        let pairs: Vec<[f64; 2]> = serde::Deserialize::deserialize(d)?;
        Ok(CVec::from_iterator(pairs.len(), pairs.into_iter().map(|[re, im]| C64::new(re, im))))
    }
}
