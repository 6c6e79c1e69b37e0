//! Hovering-mode beamforming: per-slot semidefinite programs over lifted
//! rank-1 matrices for the communication beam and each sensing beam,
//! minimizing total transmit power under the hover rate, per-slot sensing
//! SNR, and power budget, followed by rank-1 extraction with feasibility
//! rescaling.
//!
//! Hermitian matrix variables are embedded as real symmetric matrices of
//! doubled order; all channel rows are normalized so the cone blocks stay
//! well scaled despite the physical constants.

use rayon::prelude::*;

use super::{HoverStage, StageError};
use crate::channel::{comm_channel, hover_rate, matched_combiner, sensing_channel, sensing_snr};
use crate::conic::{extract_rank1, LinExpr, Model, SolveStatus, Var};
use crate::mission::{BeamSlot, SenseBeam};
use crate::scenario::Scenario;
use crate::{at_altitude, CMat, CVec, Vec2, C64};

/// Hermitian matrix variable: real diagonal plus complex lower triangle.
struct HermVar {
    order: usize,
    diag: Vec<Var>,
    /// (re, im) for entries (i, j), i > j, column-major.
    off: Vec<(Var, Var)>,
}

impl HermVar {
    fn new(m: &mut Model, order: usize) -> Self {
        let diag = m.vars(order);
        let off = (0..order * (order - 1) / 2).map(|_| (m.var(), m.var())).collect();
        HermVar { order, diag, off }
    }

    fn off_index(&self, i: usize, j: usize) -> usize {
        // (i, j) with i > j, column-major over the strict lower triangle.
        let p = self.order;
        j * (2 * p - j - 1) / 2 + (i - j - 1)
    }

    /// Entry (i, j) as (re, im) expressions (i >= j).
    fn entry(&self, i: usize, j: usize) -> (LinExpr, LinExpr) {
        if i == j {
            (self.diag[i].into(), LinExpr::constant(0.0))
        } else {
            let (re, im) = self.off[self.off_index(i, j)];
            (re.into(), im.into())
        }
    }

    /// Add the PSD constraint through the real embedding
    /// [[Re, -Im], [Im, Re]].
    fn require_psd(&self, m: &mut Model) {
        let p = self.order;
        let dim = 2 * p;
        let mut lower: Vec<LinExpr> = Vec::with_capacity(dim * (dim + 1) / 2);
        for col in 0..dim {
            for row in col..dim {
                let expr = if row < p && col < p {
                    self.entry(row, col).0
                } else if row >= p && col >= p {
                    self.entry(row - p, col - p).0
                } else {
                    // row >= p, col < p: Im X[row-p, col], antisymmetric.
                    let (i, j) = (row - p, col);
                    use std::cmp::Ordering;
                    match i.cmp(&j) {
                        Ordering::Equal => LinExpr::constant(0.0),
                        Ordering::Greater => self.entry(i, j).1,
                        Ordering::Less => self.entry(j, i).1.scale(-1.0),
                    }
                };
                lower.push(expr);
            }
        }
        m.add_psd_lower(dim, lower);
    }

    fn trace(&self) -> LinExpr {
        let mut e = LinExpr::default();
        for &d in &self.diag {
            e = e.add_term(d, 1.0);
        }
        e
    }

    /// tr(C X) for Hermitian C (real-valued by symmetry).
    fn tr_product(&self, c: &CMat) -> LinExpr {
        let mut e = LinExpr::default();
        for i in 0..self.order {
            e = e.add_term(self.diag[i], c[(i, i)].re);
        }
        for j in 0..self.order {
            for i in (j + 1)..self.order {
                let (re, im) = self.off[self.off_index(i, j)];
                e = e.add_term(re, 2.0 * c[(i, j)].re).add_term(im, 2.0 * c[(i, j)].im);
            }
        }
        e
    }

    fn value(&self, x: &[f64]) -> CMat {
        let p = self.order;
        CMat::from_fn(p, p, |i, j| {
            use std::cmp::Ordering;
            match i.cmp(&j) {
                Ordering::Equal => C64::new(x[self.diag[i].index()], 0.0),
                Ordering::Greater => {
                    let (re, im) = self.off[self.off_index(i, j)];
                    C64::new(x[re.index()], x[im.index()])
                }
                Ordering::Less => {
                    let (re, im) = self.off[self.off_index(j, i)];
                    C64::new(x[re.index()], -x[im.index()])
                }
            }
        })
    }
}

/// Result of one per-slot beam design.
#[derive(Debug, Clone)]
pub struct SlotBeams {
    pub beams: BeamSlot,
    /// SDP objective (total transmit power before extraction).
    pub lifted_power: f64,
    /// Power after rank-1 extraction and rescaling.
    pub extracted_power: f64,
}

/// Design the transmit beams for a single hover slot with the USV at `b`.
/// `snr_floor` is the per-slot sensing SNR each assigned target must meet.
pub fn design_slot_beams(
    hover_point: Vec2,
    b: Vec2,
    targets: &[usize],
    snr_floor: f64,
    scenario: &Scenario,
) -> Result<SlotBeams, StageError> {
    let sys = &scenario.system;
    let stage_err = |what: String| StageError::Infeasible { stage: 0, what };
    let q3 = at_altitude(hover_point, sys.altitude_m);
    let b3 = at_altitude(b, 0.0);
    let h_c = comm_channel(q3, b3, sys).map_err(|e| StageError::Channel { stage: 0, source: e })?;
    let hc_norm2 = h_c.norm_squared();
    let hc_dir = &h_c / C64::new(hc_norm2.sqrt(), 0.0);
    let hc_outer: CMat = &hc_dir * hc_dir.adjoint();

    // Effective sensing channels g_k = H_k^H u_k, normalized.
    let mut g_dirs: Vec<CMat> = Vec::with_capacity(targets.len());
    let mut g_norm2 = Vec::with_capacity(targets.len());
    let mut combiners: Vec<CVec> = Vec::with_capacity(targets.len());
    for &k in targets {
        let t3 = at_altitude(scenario.world.targets[k], 0.0);
        let h_k = sensing_channel(q3, t3, sys)
            .map_err(|e| StageError::Channel { stage: 0, source: e })?;
        let u_k = matched_combiner(q3, t3, sys)
            .map_err(|e| StageError::Channel { stage: 0, source: e })?;
        let g = h_k.adjoint() * &u_k;
        let n2 = g.norm_squared();
        let dir = &g / C64::new(n2.sqrt(), 0.0);
        g_dirs.push(&dir * dir.adjoint());
        g_norm2.push(n2);
        combiners.push(u_k);
    }

    let duty_inv = sys.slot_s / (sys.scans_per_slot as f64 * sys.pulse_s);
    let rate = scenario.requirements.rate_hover;
    let rate_snr = 2f64.powf(rate) - 1.0;

    let mut m = Model::new();
    let w_h = HermVar::new(&mut m, sys.num_antennas);
    let v_k: Vec<HermVar> =
        (0..targets.len()).map(|_| HermVar::new(&mut m, sys.num_antennas)).collect();
    w_h.require_psd(&mut m);
    for v in &v_k {
        v.require_psd(&mut m);
    }
    // Rate: tr(Hc W) >= rate_snr (sum_k tr(Hc V_k) + sigma_h^2/(duty |h|^2)).
    if rate_snr > 0.0 {
        let noise = sys.noise_hover_w * duty_inv / hc_norm2;
        let mut row = w_h.tr_product(&hc_outer).add_const(-rate_snr * noise);
        for v in &v_k {
            row = row.add(&v.tr_product(&hc_outer).scale(-rate_snr));
        }
        m.add_nonneg(row);
    }
    // Per-target sensing SNR.
    if snr_floor > 0.0 {
        for (idx, v) in v_k.iter().enumerate() {
            let noise = sys.noise_sense_w * duty_inv / g_norm2[idx];
            let mut row = v.tr_product(&g_dirs[idx]).add_const(-snr_floor * noise);
            for (jdx, vj) in v_k.iter().enumerate() {
                if jdx != idx {
                    row = row.add(&vj.tr_product(&g_dirs[idx]).scale(-snr_floor));
                }
            }
            m.add_nonneg(row);
        }
    }
    // Power budget with margin for the extraction rescale.
    let mut power = w_h.trace();
    for v in &v_k {
        power = power.add(&v.trace());
    }
    m.add_nonneg(power.clone().scale(-1.0).add_const(sys.power_budget_w * (1.0 - 1e-7)));
    m.minimize(power);

    let sol = m.solve(1e-8).map_err(|e| StageError::Solver { stage: 0, source: e })?;
    if sol.status == SolveStatus::PrimalInfeasible {
        return Err(stage_err("per-slot beam design infeasible".into()));
    }
    if sol.status != SolveStatus::Optimal && sol.max_violation > 1e-7 {
        return Err(stage_err(format!(
            "beam SDP ended {:?} with violation {:.2e}",
            sol.status, sol.max_violation
        )));
    }
    let lifted_power = sol.objective;

    // Rank-1 extraction. The SDP solutions here are rank one up to solver
    // noise; randomization only engages on degenerate spectra.
    let w_mat = w_h.value(&sol.x);
    let mut w = if rate_snr > 0.0 {
        extract_rank1(&w_mat, 1e-6, None)
            .map_err(|e| stage_err(format!("comm beam extraction: {e}")))?
            .vector
    } else {
        CVec::zeros(sys.num_antennas)
    };
    let mut vs: Vec<CVec> = Vec::with_capacity(targets.len());
    for v in &v_k {
        let mat = v.value(&sol.x);
        if snr_floor > 0.0 {
            let score = |cand: &CVec| {
                let aligned = (cand.adjoint() * &mat * cand)[(0, 0)].re;
                Some(aligned / cand.norm_squared().max(1e-300))
            };
            vs.push(
                extract_rank1(&mat, 1e-6, Some(&score))
                    .map_err(|e| stage_err(format!("sense beam extraction: {e}")))?
                    .vector,
            );
        } else {
            vs.push(CVec::zeros(sys.num_antennas));
        }
    }

    // Feasibility rescale: push each beam up until its own constraint holds
    // exactly; interference coupling makes this a short fixed-point loop.
    let active: Vec<usize> = (0..targets.len()).collect();
    for _ in 0..20 {
        let mut worst_short = 0.0f64;
        if rate_snr > 0.0 {
            let r = hover_rate(q3, b3, &w, &vs, &active, sys)
                .map_err(|e| StageError::Channel { stage: 0, source: e })?;
            if r < rate {
                let snr_scale = (2f64.powf(rate) - 1.0) / (2f64.powf(r) - 1.0).max(1e-300);
                w *= C64::new(snr_scale.sqrt() * (1.0 + 1e-12), 0.0);
                worst_short = worst_short.max(rate - r);
            }
        }
        if snr_floor > 0.0 {
            for (idx, &k) in targets.iter().enumerate() {
                let t3 = at_altitude(scenario.world.targets[k], 0.0);
                let got = sensing_snr(q3, t3, &vs, &combiners[idx], idx, &active, sys)
                    .map_err(|e| StageError::Channel { stage: 0, source: e })?;
                if got < snr_floor {
                    let scale = (snr_floor / got.max(1e-300)).sqrt() * (1.0 + 1e-12);
                    vs[idx] *= C64::new(scale, 0.0);
                    worst_short = worst_short.max(snr_floor - got);
                }
            }
        }
        if worst_short == 0.0 {
            break;
        }
    }
    let extracted_power: f64 =
        w.norm_squared() + vs.iter().map(|v| v.norm_squared()).sum::<f64>();
    if extracted_power > sys.power_budget_w * (1.0 + 1e-9) {
        return Err(stage_err(format!(
            "extracted beams exceed the power budget: {extracted_power:.3}"
        )));
    }

    let sense = targets
        .iter()
        .zip(vs)
        .map(|(&target, vector)| SenseBeam { target, vector })
        .collect();
    Ok(SlotBeams {
        beams: BeamSlot { comm: w, sense },
        lifted_power,
        extracted_power,
    })
}

/// Design beams for every slot of a hovering stage given the USV path
/// (positions at slot ends, length n_slots). Slots are independent and run
/// in parallel.
pub fn optimize_hover_beams(
    stage: &HoverStage,
    usv_path: &[Vec2],
    scenario: &Scenario,
) -> Result<Vec<SlotBeams>, StageError> {
    let snr_floor = scenario.requirements.total_snr / stage.n_slots as f64;
    let out: Result<Vec<SlotBeams>, StageError> = usv_path
        .par_iter()
        .map(|&b| {
            design_slot_beams(stage.hover_point, b, &stage.targets, snr_floor, scenario)
                .map_err(|e| match e {
                    StageError::Infeasible { what, .. } => {
                        StageError::Infeasible { stage: stage.stage, what }
                    }
                    StageError::Solver { source, .. } => {
                        StageError::Solver { stage: stage.stage, source }
                    }
                    StageError::Channel { source, .. } => {
                        StageError::Channel { stage: stage.stage, source }
                    }
                })
        })
        .collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sensing_snr_coef, steering};
    use crate::scenario::{
        reference_params, reference_requirements, CurrentField, Scenario, World,
    };
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scenario(targets: Vec<Vec2>) -> Scenario {
        Scenario {
            system: reference_params(),
            requirements: reference_requirements(),
            world: World {
                targets,
                obstacles: vec![],
                uav_start: Vec2::zeros(),
                uav_end: Vec2::new(300.0, 300.0),
                usv_start: Vec2::zeros(),
                usv_end: Vec2::new(300.0, 300.0),
            },
            current: CurrentField::zero(),
        }
    }

    #[test]
    fn zero_requirements_give_zero_beams() {
        let mut sc = scenario(vec![Vec2::new(100.0, 100.0)]);
        sc.requirements.rate_hover = 0.0;
        let out =
            design_slot_beams(Vec2::new(90.0, 90.0), Vec2::new(95.0, 95.0), &[0], 0.0, &sc)
                .unwrap();
        assert!(out.beams.comm_power() < 1e-9);
        assert!(out.beams.sense_power() < 1e-9);
        assert!(out.lifted_power.abs() < 1e-7);
    }

    #[test]
    fn single_target_matches_closed_form_minimum() {
        // No rate requirement: the sensing beam should be MRT-aligned with
        // the minimum power from the matched-filter SNR law.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..50 {
            let tpos = Vec2::new(rng.random_range(50.0..250.0), rng.random_range(50.0..250.0));
            let qpos = tpos
                + Vec2::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
            let mut sc = scenario(vec![tpos]);
            sc.requirements.rate_hover = 0.0;
            let floor = rng.random_range(0.5..4.0);
            let out = design_slot_beams(qpos, qpos, &[0], floor, &sc).unwrap();
            let slant2 =
                (qpos - tpos).norm_squared() + sc.system.altitude_m * sc.system.altitude_m;
            let pmin = floor * slant2 * slant2 / sensing_snr_coef(&sc.system);
            let got = out.beams.sense_power();
            assert!(
                (got - pmin).abs() <= 1e-3 * pmin,
                "trial {trial}: power {got} vs closed form {pmin}"
            );
            // Verify the vector is aligned with the steering direction.
            let q3 = at_altitude(qpos, sc.system.altitude_m);
            let a = steering(q3, at_altitude(tpos, 0.0), &sc.system).unwrap();
            let v = &out.beams.sense[0].vector;
            let cosang = v.dotc(&a).norm() / (v.norm() * a.norm());
            assert!(cosang > 1.0 - 1e-6, "trial {trial}: alignment {cosang}");
        }
    }

    #[test]
    fn orthogonal_targets_decouple() {
        // Two targets whose cone angles differ by half the array resolution:
        // steering vectors are near-orthogonal and the designs decouple.
        let sys = reference_params();
        let q = Vec2::new(150.0, 150.0);
        let q3 = at_altitude(q, sys.altitude_m);
        let t1 = Vec2::new(150.0, 80.0); // slant ~122 m, cos(phi) ~ 0.82
        let a1 = steering(q3, at_altitude(t1, 0.0), &sys).unwrap();
        // cos(phi) = 0.32 puts the second target half a Dirichlet period away.
        let slant2 = sys.altitude_m / 0.32;
        let horiz = (slant2 * slant2 - sys.altitude_m * sys.altitude_m).sqrt();
        let t2 = q + Vec2::new(horiz, 0.0);
        let a2 = steering(q3, at_altitude(t2, 0.0), &sys).unwrap();
        let cross = a1.dotc(&a2).norm() / (a1.norm() * a2.norm());
        assert!(cross < 0.2, "geometry not near-orthogonal ({cross})");
        let mut sc = scenario(vec![t1, t2]);
        sc.requirements.rate_hover = 0.0;
        let floor = 0.3;
        let joint = design_slot_beams(q, q, &[0, 1], floor, &sc).unwrap();
        let single: f64 = [t1, t2]
            .iter()
            .map(|t| {
                let slant2 = (q - *t).norm_squared() + sc.system.altitude_m.powi(2);
                floor * slant2 * slant2 / sensing_snr_coef(&sc.system)
            })
            .sum();
        let got = joint.beams.sense_power();
        assert!(
            got <= single * 1.1 + 1e-9,
            "joint {got} should be close to decoupled sum {single}"
        );
    }

    #[test]
    fn full_constraints_hold_exactly_after_extraction() {
        // Two targets at well-separated slant ranges so the array can serve
        // both in the same slot despite the shared cone-angle manifold.
        let sc = scenario(vec![Vec2::new(150.0, 147.0), Vec2::new(260.0, 250.0)]);
        let q = Vec2::new(150.0, 147.0);
        let b = Vec2::new(205.0, 195.0);
        let floor = 0.4;
        let out = design_slot_beams(q, b, &[0, 1], floor, &sc).unwrap();
        let sys = &sc.system;
        let q3 = at_altitude(q, sys.altitude_m);
        let b3 = at_altitude(b, 0.0);
        let vs: Vec<CVec> = out.beams.sense.iter().map(|s| s.vector.clone()).collect();
        let active: Vec<usize> = vec![0, 1];
        let r = hover_rate(q3, b3, &out.beams.comm, &vs, &active, sys).unwrap();
        assert!(r >= sc.requirements.rate_hover - 1e-6, "rate {r}");
        for (idx, s) in out.beams.sense.iter().enumerate() {
            let t3 = at_altitude(sc.world.targets[s.target], 0.0);
            let u = matched_combiner(q3, t3, sys).unwrap();
            let got = sensing_snr(q3, t3, &vs, &u, idx, &active, sys).unwrap();
            assert!(got >= floor - 1e-6 * floor, "target {idx}: snr {got} vs {floor}");
        }
        let p = out.beams.comm_power() + out.beams.sense_power();
        assert!(p <= sys.power_budget_w + 1e-6);
        // Extraction loses almost nothing on rank-1 solutions.
        assert!(out.extracted_power <= out.lifted_power * 1.05 + 1e-9);
        assert_relative_eq!(p, out.extracted_power, epsilon = 1e-9);
    }
}
