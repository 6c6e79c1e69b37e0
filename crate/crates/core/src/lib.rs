//! Energy-aware joint inspection planning for an ISAC-equipped UAV paired
//! with a USV.
//!
//! The library plans a multi-stage flying/hovering mission: it clusters the
//! sensing targets into hover points, orders the visits, allocates flying and
//! hovering time, and then jointly optimizes per-slot trajectories and
//! transmit beamformers so that total UAV + USV energy is minimized while
//! per-slot communication rate, cumulative sensing SNR, speed, power and
//! obstacle-clearance constraints hold.
//!
//! Module map:
//! - [`scenario`]: world description, physical parameters, water-current field
//! - [`channel`]: steering vectors, comm/sensing channels, rates, SNR, MRT
//! - [`energy`]: rotary-wing propulsion, USV hydrodynamic cost, accounting
//! - [`mission`]: shared trajectory / beam-schedule / energy-report types
//! - [`conic`]: dense conic interior-point solver (LP/SOC/SDP), simplex,
//!   rank-1 extraction, SCA loop
//! - [`hover`]: hover-point selection (clustering, routing, refinement)
//! - [`stage`]: per-stage trajectory and beamforming optimization
//! - [`pipeline`]: end-to-end strategies, baselines, sweeps, file I/O, audit

pub mod channel;
pub mod conic;
pub mod energy;
pub mod hover;
pub mod mission;
pub mod pipeline;
pub mod scenario;
pub mod stage;

use num_complex::Complex;

/// 2-D position or velocity in meters / meters-per-second.
pub type Vec2 = nalgebra::Vector2<f64>;
/// 3-D position in meters.
pub type Vec3 = nalgebra::Vector3<f64>;
/// Complex double used throughout the array-signal math.
pub type C64 = Complex<f64>;
/// Complex column vector (beamformers, channels, steering vectors).
pub type CVec = nalgebra::DVector<C64>;
/// Complex matrix (sensing channels, lifted beamforming variables).
pub type CMat = nalgebra::DMatrix<C64>;

/// Lift a 2-D surface point to 3-D at the given altitude.
pub fn at_altitude(p: Vec2, h: f64) -> Vec3 {
    Vec3::new(p.x, p.y, h)
}

/// Project a 3-D point onto the surface plane.
pub fn on_surface(p: Vec3) -> Vec2 {
    Vec2::new(p.x, p.y)
}
