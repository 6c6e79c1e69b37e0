//! Dense conic solvers the planning subproblems compile into: an
//! interior-point method over nonnegative/second-order/PSD cones, a
//! bounded-variable simplex for LP relaxations, rank-1 extraction for lifted
//! beamformers, and the SCA outer loop with its linearization checker.

pub mod cones;
pub mod program;
pub mod rank1;
pub mod sca;
pub mod simplex;
pub mod solver;

pub use program::{ConicProgram, LinExpr, Model, Var};
pub use rank1::{extract_rank1, RankOne};
pub use sca::{check_linearization, sca_loop, ScaOutcome, ScaProblem, ScaState};
pub use solver::{solve_conic, Solution, SolveStatus, SolverError};
