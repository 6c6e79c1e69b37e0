//! Closed-form array-signal math: steering vectors, air-sea communication
//! and round-trip sensing channels, per-slot SNR and rate expressions,
//! distance thresholds, and matched (MRT) beamformers.
//!
//! Everything here is a pure function of geometry and [`SystemParams`];
//! all SNRs are linear, dB only appears at I/O boundaries.

use num_complex::Complex;

use crate::scenario::SystemParams;
use crate::{CMat, CVec, Vec3, C64};

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("steering vector undefined for coincident points")]
    CoincidentPoints,
    #[error("receive combiner must be nonzero")]
    ZeroCombiner,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

/// Uniform-linear-array response between an antenna position `q` and a point
/// `p`: entry m is `exp(j 2 pi m d cos(phi) / lambda)` with
/// `cos(phi) = (q_z - p_z) / ||q - p||`. Unit-modulus entries, norm sqrt(M).
pub fn steering(q: Vec3, p: Vec3, params: &SystemParams) -> Result<CVec, ChannelError> {
    let diff = q - p;
    let dist = diff.norm();
    if dist == 0.0 {
        return Err(ChannelError::CoincidentPoints);
    }
    let cos_phi = diff.z / dist;
    let phase_step = 2.0 * std::f64::consts::PI * params.antenna_spacing_m * cos_phi
        / params.wavelength_m;
    Ok(CVec::from_fn(params.num_antennas, |m, _| {
        Complex::from_polar(1.0, phase_step * m as f64)
    }))
}

/// Communication channel from the UAV at `q` to the USV at `b` (surface):
/// `(rho0 * iota / d^2) a(q, b)`.
pub fn comm_channel(q: Vec3, b: Vec3, params: &SystemParams) -> Result<CVec, ChannelError> {
    let d = (q - b).norm();
    let a = steering(q, b, params)?;
    let gain = params.channel_gain * params.small_scale_fading / (d * d);
    Ok(a * C64::new(gain, 0.0))
}

/// Round-trip sensing channel to a target at `t`:
/// `beta * eps / (2 d) * a a^H` with `eps = sqrt(eta / (4 pi d^2))`.
pub fn sensing_channel(q: Vec3, t: Vec3, params: &SystemParams) -> Result<CMat, ChannelError> {
    let d = (q - t).norm();
    let a = steering(q, t, params)?;
    let eps = (params.mean_rcs_m2 / (4.0 * std::f64::consts::PI * d * d)).sqrt();
    let gain = params.sensing_gain * eps / (2.0 * d);
    let outer = &a * a.adjoint();
    Ok(outer * C64::new(gain, 0.0))
}

fn abs2(z: C64) -> f64 {
    z.norm_sqr()
}

/// Downlink SNR while flying: `duty * |h^H w|^2 / sigma_c^2`.
pub fn flying_snr(q: Vec3, b: Vec3, w: &CVec, params: &SystemParams) -> Result<f64, ChannelError> {
    let h = comm_channel(q, b, params)?;
    Ok(params.scan_duty() * abs2(h.dotc(w)) / params.noise_comm_w)
}

/// Downlink rate while flying, bits/s/Hz.
pub fn flying_rate(q: Vec3, b: Vec3, w: &CVec, params: &SystemParams) -> Result<f64, ChannelError> {
    Ok((1.0 + flying_snr(q, b, w, params)?).log2())
}

/// Downlink SNR while hovering, with the active sensing beams appearing as
/// interference in the denominator. `active` lists indices into `sense_beams`
/// that are transmitting this slot.
pub fn hover_snr(
    q: Vec3,
    b: Vec3,
    w: &CVec,
    sense_beams: &[CVec],
    active: &[usize],
    params: &SystemParams,
) -> Result<f64, ChannelError> {
    let h = comm_channel(q, b, params)?;
    let duty = params.scan_duty();
    let signal = duty * abs2(h.dotc(w));
    let interference: f64 = active.iter().map(|&k| duty * abs2(h.dotc(&sense_beams[k]))).sum();
    Ok(signal / (interference + params.noise_hover_w))
}

/// Downlink rate while hovering, bits/s/Hz.
pub fn hover_rate(
    q: Vec3,
    b: Vec3,
    w: &CVec,
    sense_beams: &[CVec],
    active: &[usize],
    params: &SystemParams,
) -> Result<f64, ChannelError> {
    Ok((1.0 + hover_snr(q, b, w, sense_beams, active, params)?).log2())
}

/// Sensing SNR for the target at `t_k`, combining with `u_k`, while every
/// beam listed in `active` is transmitting. `this` is the index of the beam
/// aimed at `t_k` within `sense_beams`; the remaining active beams contribute
/// cross-target interference through the same round-trip channel.
pub fn sensing_snr(
    q: Vec3,
    t_k: Vec3,
    sense_beams: &[CVec],
    u_k: &CVec,
    this: usize,
    active: &[usize],
    params: &SystemParams,
) -> Result<f64, ChannelError> {
    let u_norm2 = u_k.norm_squared();
    if u_norm2 == 0.0 {
        return Err(ChannelError::ZeroCombiner);
    }
    let h_k = sensing_channel(q, t_k, params)?;
    let duty = params.scan_duty();
    // g = H_k^H u_k, so |u^H H_k v|^2 = |g^H v|^2.
    let g = h_k.adjoint() * u_k;
    let signal = duty * abs2(g.dotc(&sense_beams[this]));
    let interference: f64 = active
        .iter()
        .filter(|&&j| j != this)
        .map(|&j| duty * abs2(g.dotc(&sense_beams[j])))
        .sum();
    Ok(signal / (interference + params.noise_sense_w * u_norm2))
}

/// Coefficient `K_c` of the interference-free MRT comm SNR law
/// `gamma = K_c * p / d^4`.
pub fn comm_snr_coef(params: &SystemParams) -> f64 {
    let rho = params.channel_gain * params.small_scale_fading;
    params.scan_duty() * params.num_antennas as f64 * rho * rho / params.noise_comm_w
}

/// Coefficient `K_s` of the interference-free matched-filter sensing SNR law
/// `gamma = K_s * p / d^4`, composed from the round-trip channel.
pub fn sensing_snr_coef(params: &SystemParams) -> f64 {
    let m = params.num_antennas as f64;
    params.scan_duty() * params.mean_rcs_m2 * params.sensing_gain.powi(2) * m * m
        / (16.0 * std::f64::consts::PI * params.noise_sense_w)
}

/// Largest UAV-USV distance at which the MRT flying rate still meets `rate`
/// with transmit power `power`. Inverse of the `K_c p / d^4` SNR law, so the
/// rate at exactly this distance equals `rate`.
pub fn comm_distance_threshold(
    rate: f64,
    power: f64,
    params: &SystemParams,
) -> Result<f64, ChannelError> {
    if rate <= 0.0 {
        return Err(ChannelError::NonPositive("rate requirement"));
    }
    if power <= 0.0 {
        return Err(ChannelError::NonPositive("transmit power"));
    }
    let snr = 2f64.powf(rate) - 1.0;
    Ok((comm_snr_coef(params) * power / snr).powf(0.25))
}

/// Largest UAV-target distance at which the matched-filter sensing SNR still
/// meets `inst_snr` with per-target power `power`.
pub fn sensing_distance_threshold(
    inst_snr: f64,
    power: f64,
    params: &SystemParams,
) -> Result<f64, ChannelError> {
    if inst_snr <= 0.0 {
        return Err(ChannelError::NonPositive("SNR requirement"));
    }
    if power <= 0.0 {
        return Err(ChannelError::NonPositive("transmit power"));
    }
    Ok((sensing_snr_coef(params) * power / inst_snr).powf(0.25))
}

/// MRT transmit beamformer toward `p` with the given power: `sqrt(p) a/||a||`.
pub fn mrt_transmit(
    q: Vec3,
    p: Vec3,
    power: f64,
    params: &SystemParams,
) -> Result<CVec, ChannelError> {
    let a = steering(q, p, params)?;
    let norm = a.norm();
    Ok(a * C64::new(power.sqrt() / norm, 0.0))
}

/// Matched receive combiner toward `p`: `a/||a||` (unit norm).
pub fn matched_combiner(q: Vec3, p: Vec3, params: &SystemParams) -> Result<CVec, ChannelError> {
    let a = steering(q, p, params)?;
    let norm = a.norm();
    Ok(a * C64::new(1.0 / norm, 0.0))
}

/// Minimum MRT transmit power meeting `rate` at distance `d` (flying mode).
pub fn comm_power_for_rate(rate: f64, d: f64, params: &SystemParams) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    (2f64.powf(rate) - 1.0) * d.powi(4) / comm_snr_coef(params)
}
