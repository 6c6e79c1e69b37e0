//! End-to-end mission pipeline: strategy runners (proposed, sequential
//! access, leader-follower), the constraint audit, parameter sweeps, and all
//! file I/O behind the command-line interface.

pub mod audit;
pub mod emit;
pub mod run;
pub mod sweep;

use serde::{Deserialize, Serialize};

use crate::hover::HoverPlan;
use crate::mission::{BeamformingSchedule, EnergyReport, PowerBreakdown, Trajectory};

/// Planning strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Joint hover-point selection and coupled trajectory optimization.
    Proposed,
    /// Hover directly over every target (worst-case hover count).
    Sequential,
    /// UAV plans alone; the USV follows within communication range.
    LeaderFollower,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Proposed => "proposed",
            Strategy::Sequential => "sequential",
            Strategy::LeaderFollower => "leader-follower",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(Strategy::Proposed),
            "sequential" => Ok(Strategy::Sequential),
            "leader-follower" => Ok(Strategy::LeaderFollower),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

/// Wall-clock milliseconds per pipeline phase (informational; kept out of
/// the deterministic metrics file).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub clustering_ms: u128,
    pub ordering_ms: u128,
    pub refinement_ms: u128,
    pub stages_ms: u128,
    pub total_ms: u128,
}

/// A finished mission with everything needed to audit and serialize it.
#[derive(Debug, Clone)]
pub struct MissionResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub plan: HoverPlan,
    pub trajectory: Trajectory,
    pub beams: BeamformingSchedule,
    pub energy: PowerBreakdown,
    pub report: EnergyReport,
    pub audit: audit::AuditReport,
    pub timings: PhaseTimings,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("clustering failed: {0}")]
    Cluster(#[from] crate::hover::cluster::ClusterError),
    #[error("visit ordering failed: {0}")]
    Order(#[from] crate::hover::order::OrderError),
    #[error("hover refinement failed: {0}")]
    Refine(#[from] crate::hover::refine::RefineError),
    #[error("stage optimization failed: {0}")]
    Stage(#[from] crate::stage::StageError),
    #[error("energy accounting failed: {0}")]
    Energy(#[from] crate::energy::EnergyError),
    #[error("channel math failed: {0}")]
    Channel(#[from] crate::channel::ChannelError),
    #[error("audit failed: {0}")]
    Audit(String),
    #[error("leader-follower plan infeasible: {0}")]
    Follower(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("scenario: {0}")]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error("{0}")]
    Other(String),
}
