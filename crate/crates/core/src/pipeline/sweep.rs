//! Parameter sweeps: generate seeded Gaussian target layouts with an exact
//! dispersion, vary one axis, run the strategies, and aggregate energy and
//! duration statistics.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::run_mission;
use super::{PipelineError, Strategy};
use crate::scenario::Scenario;
use crate::Vec2;

/// Sweepable scenario axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Number of targets K.
    Targets,
    /// Target dispersion sigma in meters.
    Dispersion,
    /// Instantaneous sensing SNR threshold in dB.
    InstSnrDb,
    /// Communication rate requirement in bits/s/Hz (flying and hovering).
    Rate,
    /// Maximum simultaneously sensed targets Z.
    Capacity,
    /// Maximum water current speed in m/s (signed).
    CurrentMax,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "k" | "targets" => Ok(SweepAxis::Targets),
            "sigma" | "dispersion" => Ok(SweepAxis::Dispersion),
            "gamma-s" | "gamma_s" | "inst-snr-db" => Ok(SweepAxis::InstSnrDb),
            "gamma-c" | "gamma_c" | "rate" => Ok(SweepAxis::Rate),
            "z" | "capacity" => Ok(SweepAxis::Capacity),
            "current" | "v-w" | "v_w" => Ok(SweepAxis::CurrentMax),
            other => Err(format!("unknown sweep axis '{other}'")),
        }
    }
}

/// One mission outcome inside a sweep cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub seed: u64,
    pub total_j: f64,
    pub duration_s: f64,
    pub hover_points: usize,
}

/// Aggregated results for one axis value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub outcomes: Vec<SweepOutcome>,
    pub mean_energy_j: f64,
    pub sd_energy_j: f64,
    pub mean_duration_s: f64,
    pub mean_hover_points: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub strategy: Strategy,
    pub points: Vec<SweepPoint>,
}

/// Mission field defaults used when generating layouts.
#[derive(Debug, Clone, Copy)]
pub struct LayoutSpec {
    pub num_targets: usize,
    pub sigma_m: f64,
    pub center: Vec2,
    pub field_min: Vec2,
    pub field_max: Vec2,
}

impl LayoutSpec {
    pub fn reference(num_targets: usize, sigma_m: f64) -> Self {
        LayoutSpec {
            num_targets,
            sigma_m,
            center: Vec2::new(150.0, 150.0),
            field_min: Vec2::zeros(),
            field_max: Vec2::new(300.0, 300.0),
        }
    }
}

/// Gaussian layout around the field center with the sample dispersion
/// rescaled to exactly `sigma_m`; rejected and redrawn as a whole if any
/// target leaves the field or sits within the clearance radius of an
/// obstacle.
pub fn generate_targets(
    spec: &LayoutSpec,
    obstacles: &[Vec2],
    clearance: f64,
    seed: u64,
) -> Vec<Vec2> {
    let k = spec.num_targets;
    for attempt in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let raw: Vec<Vec2> = (0..k)
            .map(|_| Vec2::new(gaussian(&mut rng), gaussian(&mut rng)))
            .collect();
        let mean = raw.iter().sum::<Vec2>() / k as f64;
        let denom = (k as f64 - 1.0).max(1.0);
        let sample_var: f64 =
            raw.iter().map(|t| (t - mean).norm_squared()).sum::<f64>() / denom;
        let scale = if sample_var > 0.0 { spec.sigma_m / sample_var.sqrt() } else { 0.0 };
        let targets: Vec<Vec2> =
            raw.iter().map(|t| spec.center + (t - mean) * scale).collect();
        let ok = targets.iter().all(|t| {
            t.x >= spec.field_min.x
                && t.y >= spec.field_min.y
                && t.x <= spec.field_max.x
                && t.y <= spec.field_max.y
                && obstacles.iter().all(|o| (t - o).norm() >= clearance)
        });
        if ok {
            return targets;
        }
    }
    // Pathological spec; fall back to a ring layout inside the field.
    (0..k)
        .map(|i| {
            let a = i as f64 / k as f64 * std::f64::consts::TAU;
            spec.center + Vec2::new(a.cos(), a.sin()) * spec.sigma_m
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(1e-12..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Instantiate the template for one (axis value, seed) cell: fresh targets
/// from the seeded layout generator, then the axis override.
pub fn scenario_for(
    template: &Scenario,
    axis: SweepAxis,
    value: f64,
    seed: u64,
    default_sigma: f64,
) -> Scenario {
    let mut sc = template.clone();
    let k = match axis {
        SweepAxis::Targets => value.round().max(1.0) as usize,
        _ => template.world.targets.len().max(1),
    };
    let sigma = match axis {
        SweepAxis::Dispersion => value,
        _ => default_sigma,
    };
    let spec = LayoutSpec::reference(k, sigma);
    sc.world.targets = generate_targets(
        &spec,
        &sc.world.obstacles,
        sc.system.obstacle_radius_m,
        seed,
    );
    match axis {
        SweepAxis::Targets | SweepAxis::Dispersion => {}
        SweepAxis::InstSnrDb => sc.requirements.inst_snr = 10f64.powf(value / 10.0),
        SweepAxis::Rate => {
            sc.requirements.rate_fly = value;
            sc.requirements.rate_hover = value;
        }
        SweepAxis::Capacity => sc.system.max_simultaneous_targets = value.round().max(1.0) as usize,
        SweepAxis::CurrentMax => sc.current.max_speed = value,
    }
    sc
}

/// Run the sweep: every (value, seed) cell is an independent mission,
/// parallelized across cells.
pub fn sweep(
    template: &Scenario,
    axis: SweepAxis,
    values: &[f64],
    seeds: u64,
    strategy: Strategy,
    default_sigma: f64,
) -> Result<SweepTable, PipelineError> {
    let cells: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&v| (0..seeds).map(move |s| (v, s)))
        .collect();
    let outcomes: Result<Vec<(f64, SweepOutcome)>, PipelineError> = cells
        .par_iter()
        .map(|&(value, seed)| {
            let sc = scenario_for(template, axis, value, seed, default_sigma);
            let result = run_mission(&sc, strategy, seed)?;
            Ok((
                value,
                SweepOutcome {
                    seed,
                    total_j: result.report.total_j,
                    duration_s: result.report.total_s,
                    hover_points: result.report.hover_points,
                },
            ))
        })
        .collect();
    let outcomes = outcomes?;
    let points = values
        .iter()
        .map(|&v| {
            let cell: Vec<SweepOutcome> = outcomes
                .iter()
                .filter(|(val, _)| *val == v)
                .map(|(_, o)| o.clone())
                .collect();
            let n = cell.len().max(1) as f64;
            let mean = cell.iter().map(|o| o.total_j).sum::<f64>() / n;
            let var = cell.iter().map(|o| (o.total_j - mean).powi(2)).sum::<f64>()
                / (n - 1.0).max(1.0);
            SweepPoint {
                value: v,
                mean_energy_j: mean,
                sd_energy_j: var.sqrt(),
                mean_duration_s: cell.iter().map(|o| o.duration_s).sum::<f64>() / n,
                mean_hover_points: cell.iter().map(|o| o.hover_points as f64).sum::<f64>() / n,
                outcomes: cell,
            }
        })
        .collect();
    Ok(SweepTable { axis, strategy, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn layout_dispersion_is_exact() {
        let spec = LayoutSpec::reference(15, 40.0);
        let targets = generate_targets(&spec, &[], 10.0, 7);
        assert_eq!(targets.len(), 15);
        let mean = targets.iter().sum::<Vec2>() / 15.0;
        let sigma =
            (targets.iter().map(|t| (t - mean).norm_squared()).sum::<f64>() / 14.0).sqrt();
        assert_relative_eq!(sigma, 40.0, epsilon = 1e-9);
        for t in &targets {
            assert!(t.x >= 0.0 && t.x <= 300.0 && t.y >= 0.0 && t.y <= 300.0);
        }
    }

    #[test]
    fn layouts_are_deterministic_and_obstacle_aware() {
        let spec = LayoutSpec::reference(10, 30.0);
        let obs = vec![Vec2::new(150.0, 150.0)];
        let a = generate_targets(&spec, &obs, 12.0, 3);
        let b = generate_targets(&spec, &obs, 12.0, 3);
        assert_eq!(a, b);
        for t in &a {
            assert!((t - obs[0]).norm() >= 12.0);
        }
    }
}
