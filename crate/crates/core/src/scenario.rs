//! World description: physical/system parameters, targets and obstacles,
//! mission endpoints, and the position-dependent water-current field.
//!
//! A [`Scenario`] is immutable after [`load_scenario`] / [`Scenario::validate`]
//! and safe to share across workers. File format is JSON with sections
//! `system`, `requirements`, `world`, `current`; dB-valued alternatives use a
//! `_db` / `_dbm` suffix and are converted on load (see `docs/scenario.md`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Vec2;

/// Physical and system-level constants of one mission.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemParams {
    /// Number of ULA antennas at the UAV.
    pub num_antennas: usize,
    /// Fixed UAV flight altitude in meters.
    pub altitude_m: f64,
    /// Time-slot duration in seconds.
    pub slot_s: f64,
    /// Scanning rounds per slot.
    pub scans_per_slot: usize,
    /// Pulse duration within one scanning round, seconds.
    pub pulse_s: f64,
    /// Listening duration within one scanning round, seconds.
    pub listen_s: f64,
    /// Communication channel gain at 1 m, linear amplitude.
    pub channel_gain: f64,
    /// Small-scale fading coefficient, linear (deterministic; 1 = pure LoS).
    pub small_scale_fading: f64,
    /// Sensing channel gain at 1 m, linear amplitude.
    pub sensing_gain: f64,
    /// Mean radar cross section of a target, m^2.
    pub mean_rcs_m2: f64,
    /// Noise power at the USV receiver in flying mode, watts.
    pub noise_comm_w: f64,
    /// Noise power at the UAV sensing receiver, watts.
    pub noise_sense_w: f64,
    /// Noise power at the USV receiver in hovering mode, watts.
    pub noise_hover_w: f64,
    /// Antenna spacing of the ULA, meters.
    pub antenna_spacing_m: f64,
    /// Carrier wavelength, meters.
    pub wavelength_m: f64,
    /// Blade profile power of the rotary-wing model, watts.
    pub blade_profile_power_w: f64,
    /// Induced power of the rotary-wing model, watts.
    pub induced_power_w: f64,
    /// Rotor blade tip speed, m/s.
    pub tip_speed_ms: f64,
    /// Mean rotor induced speed in forward flight, m/s.
    pub induced_speed_ms: f64,
    /// Fuselage drag coefficient (dimensionless).
    pub fuselage_drag: f64,
    /// Air density, kg/m^3.
    pub air_density: f64,
    /// Rotor solidity (dimensionless).
    pub rotor_solidity: f64,
    /// Rotor disc area, m^2.
    pub disc_area_m2: f64,
    /// USV hydrodynamic drag constant, kg.
    pub usv_drag_kg: f64,
    /// Total transmit power budget, watts.
    pub power_budget_w: f64,
    /// Nominal sensing power used during coarse planning, watts.
    pub sense_power_w: f64,
    /// Nominal communication power used during coarse planning, watts.
    pub comm_power_w: f64,
    /// UAV speed limit, m/s.
    pub uav_speed_max: f64,
    /// USV speed limit, m/s.
    pub usv_speed_max: f64,
    /// Obstacle clearance radius, meters.
    pub obstacle_radius_m: f64,
    /// Spatial resolution used when sampling the current field, meters.
    pub current_resolution_m: f64,
    /// Maximum number of targets sensed simultaneously while hovering.
    pub max_simultaneous_targets: usize,
    /// Convergence threshold shared by the SCA and AO loops.
    pub sca_tolerance: f64,
    /// Iteration cap shared by the SCA and AO loops.
    pub max_iterations: usize,
}

/// Communication-rate and sensing-SNR requirements.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Requirements {
    /// Per-slot rate requirement in flying mode, bits/s/Hz.
    pub rate_fly: f64,
    /// Per-slot rate requirement in hovering mode, bits/s/Hz.
    pub rate_hover: f64,
    /// Instantaneous sensing SNR threshold, linear.
    pub inst_snr: f64,
    /// Cumulative sensing SNR threshold per target, linear.
    pub total_snr: f64,
}

/// Targets, obstacles, and mission endpoints. Targets and obstacles sit on
/// the surface (z = 0); the UAV start/end are at altitude `H`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct World {
    pub targets: Vec<Vec2>,
    pub obstacles: Vec<Vec2>,
    pub uav_start: Vec2,
    pub uav_end: Vec2,
    pub usv_start: Vec2,
    pub usv_end: Vec2,
}

/// Kind of water-current field.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum CurrentKind {
    /// Wave-like analytic field; the sign of `max_speed` selects the
    /// upstream/downstream variant.
    AnalyticWave,
    /// Spatially uniform flow along `direction`, magnitude `|max_speed|`.
    Uniform,
    /// Still water.
    Zero,
}

/// Deterministic, position-dependent water-current field.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CurrentField {
    pub kind: CurrentKind,
    /// Maximum flow speed in m/s; may be negative to reverse the field.
    #[serde(default)]
    pub max_speed: f64,
    /// Flow direction for the uniform kind (normalized on load).
    #[serde(default)]
    pub direction: Option<Vec2>,
}

impl CurrentField {
    pub fn zero() -> Self {
        CurrentField { kind: CurrentKind::Zero, max_speed: 0.0, direction: None }
    }

    pub fn analytic(max_speed: f64) -> Self {
        CurrentField { kind: CurrentKind::AnalyticWave, max_speed, direction: None }
    }

    pub fn uniform(velocity: Vec2) -> Self {
        let speed = velocity.norm();
        let dir = if speed > 0.0 { velocity / speed } else { Vec2::zeros() };
        CurrentField { kind: CurrentKind::Uniform, max_speed: speed, direction: Some(dir) }
    }
}

/// Water velocity at a surface point. Pure: same input, same output.
pub fn current_at(field: &CurrentField, b: Vec2) -> Vec2 {
    match field.kind {
        CurrentKind::Zero => Vec2::zeros(),
        CurrentKind::Uniform => {
            let dir = field.direction.unwrap_or_else(|| Vec2::new(1.0, 0.0));
            dir * field.max_speed
        }
        CurrentKind::AnalyticWave => {
            let v = field.max_speed;
            let vx = v * (0.8 - 0.03 * (0.06 * b.x).sin() * (0.03 * b.y).cos());
            let vy = -v * (0.06 * b.x).cos() * (0.03 * b.y).cos();
            Vec2::new(vx, vy)
        }
    }
}

/// Immutable, validated description of one mission instance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Scenario {
    pub system: SystemParams,
    pub requirements: Requirements,
    pub world: World,
    pub current: CurrentField,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario invariant violated: {field}: {condition}")]
    Invariant { field: &'static str, condition: String },
}

fn invariant(field: &'static str, condition: impl Into<String>) -> ScenarioError {
    ScenarioError::Invariant { field, condition: condition.into() }
}

impl SystemParams {
    /// Duty-cycled scan energy factor `N_s * t_p / delta` shared by every
    /// SNR expression.
    pub fn scan_duty(&self) -> f64 {
        self.scans_per_slot as f64 * self.pulse_s / self.slot_s
    }

    /// Constant hovering propulsion power (blade profile + induced).
    pub fn hover_power_w(&self) -> f64 {
        self.blade_profile_power_w + self.induced_power_w
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let positives: [(&'static str, f64); 24] = [
            ("altitude_m", self.altitude_m),
            ("slot_s", self.slot_s),
            ("pulse_s", self.pulse_s),
            ("listen_s", self.listen_s),
            ("channel_gain", self.channel_gain),
            ("sensing_gain", self.sensing_gain),
            ("mean_rcs_m2", self.mean_rcs_m2),
            ("noise_comm_w", self.noise_comm_w),
            ("noise_sense_w", self.noise_sense_w),
            ("noise_hover_w", self.noise_hover_w),
            ("antenna_spacing_m", self.antenna_spacing_m),
            ("wavelength_m", self.wavelength_m),
            ("blade_profile_power_w", self.blade_profile_power_w),
            ("induced_power_w", self.induced_power_w),
            ("tip_speed_ms", self.tip_speed_ms),
            ("induced_speed_ms", self.induced_speed_ms),
            ("air_density", self.air_density),
            ("usv_drag_kg", self.usv_drag_kg),
            ("power_budget_w", self.power_budget_w),
            ("uav_speed_max", self.uav_speed_max),
            ("usv_speed_max", self.usv_speed_max),
            ("current_resolution_m", self.current_resolution_m),
            ("sca_tolerance", self.sca_tolerance),
            ("obstacle_radius_m", self.obstacle_radius_m),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invariant(name, format!("must be positive, got {v}")));
            }
        }
        if self.num_antennas == 0 {
            return Err(invariant("num_antennas", "must be at least 1"));
        }
        if self.scans_per_slot == 0 {
            return Err(invariant("scans_per_slot", "must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(invariant("max_iterations", "must be at least 1"));
        }
        if self.max_simultaneous_targets < 1 {
            return Err(invariant("max_simultaneous_targets", "Z >= 1 violated"));
        }
        if self.small_scale_fading < 0.0 {
            return Err(invariant("small_scale_fading", "must be nonnegative"));
        }
        if self.fuselage_drag <= 0.0 || self.rotor_solidity <= 0.0 || self.disc_area_m2 <= 0.0 {
            return Err(invariant("rotor model", "drag/solidity/disc area must be positive"));
        }
        let frame = self.slot_s / self.scans_per_slot as f64;
        let sum = self.pulse_s + self.listen_s;
        if (sum - frame).abs() > 1e-9 * frame.max(1.0) {
            return Err(invariant(
                "pulse_s+listen_s",
                format!("t_p+t_o != delta/N_s ({sum} vs {frame})"),
            ));
        }
        if self.sense_power_w + self.comm_power_w > self.power_budget_w + 1e-12 {
            return Err(invariant("sense_power_w+comm_power_w", "p_s + p_c <= p_max violated"));
        }
        if self.sense_power_w < 0.0 || self.comm_power_w < 0.0 {
            return Err(invariant("sense_power_w/comm_power_w", "must be nonnegative"));
        }
        Ok(())
    }
}

impl Requirements {
    fn validate(&self) -> Result<(), ScenarioError> {
        for (name, v) in [
            ("rate_fly", self.rate_fly),
            ("rate_hover", self.rate_hover),
            ("inst_snr", self.inst_snr),
            ("total_snr", self.total_snr),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(invariant(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.inst_snr > self.total_snr {
            return Err(invariant("inst_snr", "Gamma_s <= Gamma_s_total violated"));
        }
        Ok(())
    }
}

impl Scenario {
    /// Check every invariant; returns `self` for chaining.
    pub fn validate(self) -> Result<Self, ScenarioError> {
        self.system.validate()?;
        self.requirements.validate()?;
        let w = &self.world;
        if w.targets.is_empty() {
            return Err(invariant("world.targets", "K_tar >= 1 violated"));
        }
        for (name, p) in [
            ("uav_start", w.uav_start),
            ("uav_end", w.uav_end),
            ("usv_start", w.usv_start),
            ("usv_end", w.usv_end),
        ] {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(invariant("world endpoints", format!("{name} not finite")));
            }
        }
        for (i, t) in w.targets.iter().enumerate() {
            if !t.x.is_finite() || !t.y.is_finite() {
                return Err(invariant("world.targets", format!("target {i} not finite")));
            }
        }
        let r1 = self.system.obstacle_radius_m;
        for (name, p) in [("usv_start", w.usv_start), ("usv_end", w.usv_end)] {
            for (i, o) in w.obstacles.iter().enumerate() {
                if (p - o).norm() < r1 {
                    return Err(invariant(
                        "world endpoints",
                        format!("{name} within r1 of obstacle {i}"),
                    ));
                }
            }
        }
        if !(self.current.max_speed.is_finite()) {
            return Err(invariant("current.max_speed", "must be finite"));
        }
        Ok(self)
    }
}

/// Raw file schema: every dB-convertible field also accepts a suffixed
/// variant, resolved here so the in-memory scenario is always linear/SI.
#[derive(Deserialize)]
struct RawScenario {
    system: serde_json::Value,
    requirements: serde_json::Value,
    world: World,
    current: CurrentField,
}

fn take_db(
    obj: &mut serde_json::Map<String, serde_json::Value>,
    base: &str,
    suffix: &str,
    convert: impl Fn(f64) -> f64,
) -> Result<(), ScenarioError> {
    let key = format!("{base}{suffix}");
    if let Some(v) = obj.remove(&key) {
        let db = v
            .as_f64()
            .ok_or_else(|| invariant("db field", format!("{key} must be a number")))?;
        obj.insert(base.to_string(), serde_json::json!(convert(db)));
    }
    Ok(())
}

fn resolve_system(mut v: serde_json::Value) -> Result<SystemParams, ScenarioError> {
    if let Some(obj) = v.as_object_mut() {
        // Amplitude gains: power dB -> linear amplitude.
        for f in ["channel_gain", "sensing_gain"] {
            take_db(obj, f, "_db", |db| 10f64.powf(db / 20.0))?;
        }
        // Noise powers: dBm -> watts.
        for f in ["noise_comm_w", "noise_sense_w", "noise_hover_w"] {
            let base = f.trim_end_matches("_w");
            let key = format!("{base}_dbm");
            if let Some(val) = obj.remove(&key) {
                let dbm = val
                    .as_f64()
                    .ok_or_else(|| invariant("db field", format!("{key} must be a number")))?;
                obj.insert(f.to_string(), serde_json::json!(10f64.powf((dbm - 30.0) / 10.0)));
            }
        }
    }
    Ok(serde_json::from_value(v)?)
}

fn resolve_requirements(mut v: serde_json::Value) -> Result<Requirements, ScenarioError> {
    if let Some(obj) = v.as_object_mut() {
        for f in ["inst_snr", "total_snr"] {
            take_db(obj, f, "_db", |db| 10f64.powf(db / 10.0))?;
        }
    }
    Ok(serde_json::from_value(v)?)
}

/// Parse and validate a scenario from JSON text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = serde_json::from_str(text)?;
    let mut current = raw.current;
    if let Some(d) = current.direction.as_mut() {
        let n = d.norm();
        if n > 0.0 {
            *d /= n;
        }
    }
    Scenario {
        system: resolve_system(raw.system)?,
        requirements: resolve_requirements(raw.requirements)?,
        world: raw.world,
        current,
    }
    .validate()
}

/// Load and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

/// Reference scenario mirroring the published parameter table: 4 antennas,
/// 100 m altitude, 1 s slots with 100 scanning rounds, 20 W power budget,
/// 13 bits/s/Hz rate and 3 dB / 12 dB sensing thresholds.
///
/// `channel_gain` is 14.8 dBm read as an amplitude factor relative to 1 mW
/// (10^((14.8-30)/20*2) on the power scale); `sensing_gain` is calibrated so
/// the composed round-trip SNR law reproduces the same numbers as the
/// published closed form at M = 4. `induced_power_w` and `induced_speed_ms`
/// are conventional rotary-wing values, not table entries.
pub fn reference_params() -> SystemParams {
    let rho0 = 10f64.powf(-1.52);
    SystemParams {
        num_antennas: 4,
        altitude_m: 100.0,
        slot_s: 1.0,
        scans_per_slot: 100,
        pulse_s: 0.005,
        listen_s: 0.005,
        channel_gain: rho0,
        small_scale_fading: 1.0,
        sensing_gain: rho0 / 2.0,
        mean_rcs_m2: 0.1,
        noise_comm_w: 1e-14,
        noise_sense_w: 1e-14,
        noise_hover_w: 1e-14,
        antenna_spacing_m: 0.05,
        wavelength_m: 0.1,
        blade_profile_power_w: 80.0,
        induced_power_w: 88.63,
        tip_speed_ms: 120.0,
        induced_speed_ms: 4.03,
        fuselage_drag: 0.6,
        air_density: 1.225,
        rotor_solidity: 0.05,
        disc_area_m2: 0.503,
        usv_drag_kg: 20.0,
        power_budget_w: 20.0,
        sense_power_w: 5.0,
        comm_power_w: 5.0,
        uav_speed_max: 20.0,
        usv_speed_max: 10.0,
        obstacle_radius_m: 10.0,
        current_resolution_m: 10.0,
        max_simultaneous_targets: 8,
        sca_tolerance: 1e-3,
        max_iterations: 50,
    }
}

/// Requirements matching the reference parameter table.
pub fn reference_requirements() -> Requirements {
    Requirements {
        rate_fly: 13.0,
        rate_hover: 13.0,
        inst_snr: 10f64.powf(0.3),
        total_snr: 10f64.powf(1.2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scenario_json() -> serde_json::Value {
        let sys = reference_params();
        serde_json::json!({
            "system": sys,
            "requirements": reference_requirements(),
            "world": {
                "targets": [[100.0, 120.0], [150.0, 160.0]],
                "obstacles": [[200.0, 80.0]],
                "uav_start": [0.0, 0.0],
                "uav_end": [300.0, 300.0],
                "usv_start": [0.0, 0.0],
                "usv_end": [300.0, 300.0]
            },
            "current": { "kind": "analytic-wave", "max_speed": 3.0 }
        })
    }

    #[test]
    fn loads_reference_values() {
        let s = parse_scenario(&scenario_json().to_string()).unwrap();
        assert_eq!(s.system.num_antennas, 4);
        assert_relative_eq!(s.system.altitude_m, 100.0);
        assert_relative_eq!(s.system.slot_s, 1.0);
        assert_eq!(s.system.scans_per_slot, 100);
        assert_eq!(s.system.max_simultaneous_targets, 8);
        assert_relative_eq!(s.system.scan_duty(), 0.5);
    }

    #[test]
    fn rejects_empty_target_list() {
        let mut v = scenario_json();
        v["world"]["targets"] = serde_json::json!([]);
        let err = parse_scenario(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("K_tar >= 1"), "{err}");
    }

    #[test]
    fn rejects_broken_frame_identity() {
        let mut v = scenario_json();
        v["system"]["pulse_s"] = serde_json::json!(0.006);
        let err = parse_scenario(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("t_p+t_o"), "{err}");
    }

    #[test]
    fn db_suffixed_fields_convert_on_load() {
        let mut v = scenario_json();
        let sys = v["system"].as_object_mut().unwrap();
        sys.remove("channel_gain");
        sys.insert("channel_gain_db".into(), serde_json::json!(-30.4));
        let req = v["requirements"].as_object_mut().unwrap();
        req.remove("inst_snr");
        req.insert("inst_snr_db".into(), serde_json::json!(3.0));
        let s = parse_scenario(&v.to_string()).unwrap();
        assert_relative_eq!(s.system.channel_gain, 10f64.powf(-1.52), epsilon = 1e-12);
        assert_relative_eq!(s.requirements.inst_snr, 10f64.powf(0.3), epsilon = 1e-12);
    }

    #[test]
    fn two_parses_are_identical() {
        let text = scenario_json().to_string();
        let a = parse_scenario(&text).unwrap();
        let b = parse_scenario(&text).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn analytic_current_matches_closed_form_at_origin() {
        let f = CurrentField::analytic(3.0);
        let v = current_at(&f, Vec2::zeros());
        assert_relative_eq!(v.x, 2.4, epsilon = 1e-12);
        assert_relative_eq!(v.y, -3.0, epsilon = 1e-12);

        let up = CurrentField::analytic(-3.0);
        let vu = current_at(&up, Vec2::zeros());
        assert_relative_eq!(vu.x, -2.4, epsilon = 1e-12);
        assert_relative_eq!(vu.y, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_current_everywhere() {
        let f = CurrentField::zero();
        for p in [Vec2::zeros(), Vec2::new(123.0, -45.0), Vec2::new(1e4, 1e4)] {
            assert_eq!(current_at(&f, p), Vec2::zeros());
        }
    }

    #[test]
    fn current_is_pure_and_bounded() {
        let f = CurrentField::analytic(3.0);
        let bound = 3.0 * (0.83f64.powi(2) + 1.0).sqrt();
        for i in 0..200 {
            let p = Vec2::new((i as f64) * 7.3 - 500.0, (i as f64) * 3.1 - 200.0);
            let a = current_at(&f, p);
            let b = current_at(&f, p);
            assert_eq!(a, b);
            assert!(a.norm() <= bound + 1e-12);
        }
    }
}
