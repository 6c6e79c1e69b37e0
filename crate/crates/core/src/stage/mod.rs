//! Per-stage joint trajectory and beamforming optimization: flying legs
//! (trajectories plus MRT power allocation) and hovering stages (alternating
//! beamforming SDPs and USV trajectory refinement).

pub mod ao;
pub mod beams;
pub mod flying;
pub mod usv;

use crate::mission::BeamSlot;
use crate::Vec2;

/// Boundary data of a flying leg: both vehicles move between fixed
/// endpoints over a fixed number of slots.
#[derive(Debug, Clone)]
pub struct FlyingStage {
    pub stage: usize,
    pub n_slots: usize,
    pub uav_from: Vec2,
    pub uav_to: Vec2,
    pub usv_from: Vec2,
    pub usv_to: Vec2,
}

/// Boundary data of a hovering stage: the UAV parks at the hover point while
/// the USV moves between fixed endpoints and the assigned targets are sensed.
#[derive(Debug, Clone)]
pub struct HoverStage {
    pub stage: usize,
    pub n_slots: usize,
    pub hover_point: Vec2,
    pub usv_from: Vec2,
    pub usv_to: Vec2,
    /// Indices into the scenario target list.
    pub targets: Vec<usize>,
}

/// Solved stage: positions for slots 0..=n (0 is the boundary start) and one
/// beam slot per elapsed slot.
#[derive(Debug, Clone)]
pub struct StageSolution {
    pub stage: usize,
    pub hovering: bool,
    pub uav: Vec<Vec2>,
    pub usv: Vec<Vec2>,
    pub beams: Vec<BeamSlot>,
    pub objective_history: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("stage {stage}: {what}")]
    Infeasible { stage: usize, what: String },
    #[error("stage {stage}: solver failure: {source}")]
    Solver {
        stage: usize,
        #[source]
        source: crate::conic::SolverError,
    },
    #[error("stage {stage}: channel degenerate: {source}")]
    Channel {
        stage: usize,
        #[source]
        source: crate::channel::ChannelError,
    },
}
