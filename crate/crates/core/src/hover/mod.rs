//! Hover-point selection: coverage clustering, visiting-order routing over
//! the hybrid energy cost, and joint refinement of hover positions, USV
//! anchors, and stage durations.

pub mod cluster;
pub mod cost;
pub mod order;
pub mod refine;

pub use cluster::{initial_cluster_count, vbsc_cluster, ClusterAssignment, SensingCoverage};
pub use cost::{bi_tspn_cost, build_cost_matrix, CostMatrix};
pub use order::{solve_visit_order, OrderMethod, VisitOrder};
pub use refine::{refine_hover_plan, HoverPlan, RefineError, RefineMode, RefineOptions};
