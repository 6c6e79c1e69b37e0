//! Predictor-corrector interior-point solver on the homogeneous self-dual
//! embedding, with Nesterov-Todd scaling for nonnegative, second-order, and
//! PSD blocks. Dense linear algebra throughout; instances are desk-scale.
//!
//! The KKT system is reduced to the quasidefinite form
//! `[[G' (W'W)^-1 G, A'], [A, 0]]` which is factored once per iteration by a
//! regularized LDL' and reused for the predictor, corrector, and the
//! constant `(-c, b, h)` column.

use nalgebra::DMatrix;

use super::cones::{
    apply_w, jordan_product, jordan_solve, lambda_of, max_step, nt_scaling, smat, ConeSpec,
    Scaling,
};
use super::program::{ConicProgram, SparseRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Primal constraints cannot be met; `y`/`z` hold a Farkas certificate.
    PrimalInfeasible,
    /// The objective is unbounded below; `x` holds an improving ray.
    DualInfeasible,
    IterationLimit,
}

/// Result of one conic solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    /// Objective in original (unscaled) units, including the constant.
    pub objective: f64,
    /// Worst violation of the original constraints by `x`.
    pub max_violation: f64,
    /// Duality-gap proxy |s'z| scaled by the objective magnitude.
    pub complementarity: f64,
    pub iterations: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("program is malformed: {0}")]
    Malformed(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

const MAX_ITER: usize = 200;
const STEP_DAMP: f64 = 0.99;

struct Work {
    n: usize,
    p: usize,
    m: usize,
    cost: Vec<f64>,
    eq_rows: Vec<SparseRow>,
    eq_rhs: Vec<f64>,
    g_rows: Vec<SparseRow>,
    h: Vec<f64>,
    cones: Vec<ConeSpec>,
    /// Offsets of each cone block into the m-dimensional cone space.
    offsets: Vec<usize>,
    degree: usize,
}

impl Work {
    fn g_mul(&self, x: &[f64], out: &mut [f64]) {
        for (r, row) in self.g_rows.iter().enumerate() {
            out[r] = row.iter().map(|&(i, c)| c * x[i]).sum();
        }
    }

    fn g_tmul(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (r, row) in self.g_rows.iter().enumerate() {
            for &(i, c) in row {
                out[i] += c * v[r];
            }
        }
    }

    fn a_mul(&self, x: &[f64], out: &mut [f64]) {
        for (r, row) in self.eq_rows.iter().enumerate() {
            out[r] = row.iter().map(|&(i, c)| c * x[i]).sum();
        }
    }

    fn a_tmul(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (r, row) in self.eq_rows.iter().enumerate() {
            for &(i, c) in row {
                out[i] += c * v[r];
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Apply (W'W)^{-1} blockwise: v -> W^{-1} W^{-T} v.
fn apply_wtw_inv(scalings: &[Scaling], work: &Work, v: &[f64], out: &mut [f64]) {
    let mut tmp = vec![0.0; v.len()];
    for (b, sc) in scalings.iter().enumerate() {
        let at = work.offsets[b];
        let d = work.cones[b].dim();
        apply_w(sc, &v[at..at + d], &mut tmp[at..at + d], true, true);
        let chunk = tmp[at..at + d].to_vec();
        apply_w(sc, &chunk, &mut out[at..at + d], false, true);
    }
}

/// Regularized LDL' of a dense symmetric quasidefinite matrix. `pos` marks
/// how many leading pivots are expected positive.
struct Ldl {
    mat: DMatrix<f64>,
    diag: Vec<f64>,
    pos: usize,
}

impl Ldl {
    fn factor(mut k: DMatrix<f64>, pos: usize) -> Result<Ldl, SolverError> {
        let n = k.nrows();
        let reg = 1e-11;
        for i in 0..pos {
            k[(i, i)] += reg;
        }
        for i in pos..n {
            k[(i, i)] -= reg;
        }
        let mut diag = vec![0.0; n];
        // In-place LDL' (lower triangle holds L).
        for j in 0..n {
            let mut d = k[(j, j)];
            for r in 0..j {
                let l = k[(j, r)];
                d -= l * l * diag[r];
            }
            if !d.is_finite() {
                return Err(SolverError::Numerical("non-finite pivot in LDL".into()));
            }
            let floor = 1e-13;
            if d.abs() < floor {
                d = if j < pos { floor } else { -floor };
            }
            diag[j] = d;
            for i in (j + 1)..n {
                let mut v = k[(i, j)];
                for r in 0..j {
                    v -= k[(i, r)] * k[(j, r)] * diag[r];
                }
                k[(i, j)] = v / d;
            }
        }
        Ok(Ldl { mat: k, diag, pos })
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.diag.len();
        let _ = self.pos;
        for i in 0..n {
            let mut v = x[i];
            for j in 0..i {
                v -= self.mat[(i, j)] * x[j];
            }
            x[i] = v;
        }
        for i in 0..n {
            x[i] /= self.diag[i];
        }
        for i in (0..n).rev() {
            let mut v = x[i];
            for j in (i + 1)..n {
                v -= self.mat[(j, i)] * x[j];
            }
            x[i] = v;
        }
    }
}

/// One factorization of the reduced KKT system for a fixed scaling.
struct KktSolver {
    ldl: Ldl,
    kkt: DMatrix<f64>,
}

impl KktSolver {
    fn new(work: &Work, scalings: &[Scaling]) -> Result<KktSolver, SolverError> {
        let n = work.n;
        let p = work.p;
        let mut kkt = DMatrix::<f64>::zeros(n + p, n + p);
        // H = G' (W'W)^{-1} G accumulated blockwise over each cone's
        // variable support.
        for (b, sc) in scalings.iter().enumerate() {
            let at = work.offsets[b];
            let d = work.cones[b].dim();
            match sc {
                Scaling::NonNeg { w, .. } => {
                    for r in 0..d {
                        let row = &work.g_rows[at + r];
                        let wi = 1.0 / (w[r] * w[r]);
                        for &(i, ci) in row {
                            for &(j, cj) in row {
                                if j <= i {
                                    kkt[(i, j)] += wi * ci * cj;
                                }
                            }
                        }
                    }
                }
                _ => {
                    // Collect the support of this block.
                    let mut support: Vec<usize> = work.g_rows[at..at + d]
                        .iter()
                        .flat_map(|row| row.iter().map(|&(i, _)| i))
                        .collect();
                    support.sort_unstable();
                    support.dedup();
                    let ncols = support.len();
                    if ncols == 0 {
                        continue;
                    }
                    let col_of = |i: usize| support.binary_search(&i).expect("support col");
                    let mut dmat = DMatrix::<f64>::zeros(d, ncols);
                    for r in 0..d {
                        for &(i, c) in &work.g_rows[at + r] {
                            dmat[(r, col_of(i))] = c;
                        }
                    }
                    // F = (W'W)^{-1} D, column by column.
                    let mut fmat = DMatrix::<f64>::zeros(d, ncols);
                    let mut tmp = vec![0.0; d];
                    let mut tmp2 = vec![0.0; d];
                    for c in 0..ncols {
                        let col: Vec<f64> = (0..d).map(|r| dmat[(r, c)]).collect();
                        apply_w(sc, &col, &mut tmp, true, true);
                        apply_w(sc, &tmp, &mut tmp2, false, true);
                        for r in 0..d {
                            fmat[(r, c)] = tmp2[r];
                        }
                    }
                    let local = dmat.transpose() * fmat;
                    for a in 0..ncols {
                        for bcol in 0..ncols {
                            let (gi, gj) = (support[a], support[bcol]);
                            if gj <= gi {
                                kkt[(gi, gj)] += local[(a, bcol)];
                            }
                        }
                    }
                }
            }
        }
        // Equality block.
        for (r, row) in work.eq_rows.iter().enumerate() {
            for &(i, c) in row {
                kkt[(n + r, i)] = c;
            }
        }
        // Mirror lower triangle to full for refinement matvecs.
        for i in 0..(n + p) {
            for j in (i + 1)..(n + p) {
                kkt[(i, j)] = kkt[(j, i)];
            }
        }
        let ldl = Ldl::factor(kkt.clone(), n)?;
        Ok(KktSolver { ldl, kkt })
    }

    fn solve(&self, rhs: &[f64], out: &mut [f64]) {
        out.copy_from_slice(rhs);
        self.ldl.solve_in_place(out);
        // Two rounds of iterative refinement against the unregularized KKT.
        for _ in 0..2 {
            let nm = self.kkt.nrows();
            let mut resid = rhs.to_vec();
            for i in 0..nm {
                let mut acc = 0.0;
                for j in 0..nm {
                    acc += self.kkt[(i, j)] * out[j];
                }
                resid[i] -= acc;
            }
            let mut corr = resid;
            self.ldl.solve_in_place(&mut corr);
            for i in 0..nm {
                out[i] += corr[i];
            }
        }
    }

    /// One elimination pass of the 3x3 system
    ///   A' yh + G' zh = u,  A xh = v,  G xh - W'W zh = w.
    fn solve3_raw(
        &self,
        work: &Work,
        scalings: &[Scaling],
        u: &[f64],
        v: &[f64],
        w: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = work.n;
        let p = work.p;
        let m = work.m;
        let mut winv_w = vec![0.0; m];
        apply_wtw_inv(scalings, work, w, &mut winv_w);
        let mut rhs = vec![0.0; n + p];
        let mut gt = vec![0.0; n];
        work.g_tmul(&winv_w, &mut gt);
        rhs[..n].iter_mut().zip(u.iter().zip(&gt)).for_each(|(r, (uu, g))| *r = uu + g);
        rhs[n..].copy_from_slice(v);
        let mut sol = vec![0.0; n + p];
        self.solve(&rhs, &mut sol);
        let xh = sol[..n].to_vec();
        let yh = sol[n..].to_vec();
        // zh = (W'W)^{-1} (G xh - w)
        let mut gx = vec![0.0; m];
        work.g_mul(&xh, &mut gx);
        for i in 0..m {
            gx[i] -= w[i];
        }
        let mut zh = vec![0.0; m];
        apply_wtw_inv(scalings, work, &gx, &mut zh);
        (xh, yh, zh)
    }

    /// Solve the 3x3 system with full-system iterative refinement; the
    /// reconstruction of `zh` amplifies rounding when the scaling is extreme,
    /// so residuals are recomputed against the unreduced equations.
    fn solve3(
        &self,
        work: &Work,
        scalings: &[Scaling],
        u: &[f64],
        v: &[f64],
        w: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = work.n;
        let p = work.p;
        let m = work.m;
        let (mut xh, mut yh, mut zh) = self.solve3_raw(work, scalings, u, v, w);
        for _ in 0..2 {
            // r1 = u - A'yh - G'zh ; r2 = v - A xh ; r3 = w - G xh + W'W zh
            let mut aty = vec![0.0; n];
            work.a_tmul(&yh, &mut aty);
            let mut gtz = vec![0.0; n];
            work.g_tmul(&zh, &mut gtz);
            let r1: Vec<f64> = (0..n).map(|i| u[i] - aty[i] - gtz[i]).collect();
            let mut ax = vec![0.0; p];
            work.a_mul(&xh, &mut ax);
            let r2: Vec<f64> = (0..p).map(|i| v[i] - ax[i]).collect();
            let mut gx = vec![0.0; m];
            work.g_mul(&xh, &mut gx);
            let mut wtwz = vec![0.0; m];
            let mut tmp = vec![0.0; m];
            for (b, sc) in scalings.iter().enumerate() {
                let at = work.offsets[b];
                let d = work.cones[b].dim();
                apply_w(sc, &zh[at..at + d], &mut tmp[at..at + d], false, false);
                let chunk = tmp[at..at + d].to_vec();
                apply_w(sc, &chunk, &mut wtwz[at..at + d], true, false);
            }
            let r3: Vec<f64> = (0..m).map(|i| w[i] - gx[i] + wtwz[i]).collect();
            let scale = norm(&r1).max(norm(&r2)).max(norm(&r3));
            if scale < 1e-14 {
                break;
            }
            let (dx, dy, dz) = self.solve3_raw(work, scalings, &r1, &r2, &r3);
            for i in 0..n {
                xh[i] += dx[i];
            }
            for i in 0..p {
                yh[i] += dy[i];
            }
            for i in 0..m {
                zh[i] += dz[i];
            }
        }
        (xh, yh, zh)
    }
}

fn validate(prog: &ConicProgram) -> Result<(), SolverError> {
    let n = prog.num_vars;
    if prog.cost.len() != n {
        return Err(SolverError::Malformed("cost length != num_vars".into()));
    }
    if prog.eq_rows.len() != prog.eq_rhs.len() || prog.cone_rows.len() != prog.cone_rhs.len() {
        return Err(SolverError::Malformed("row/rhs length mismatch".into()));
    }
    let cone_dim: usize = prog.cones.iter().map(|c| c.dim()).sum();
    if cone_dim != prog.cone_rows.len() {
        return Err(SolverError::Malformed(format!(
            "cone dims {} != cone rows {}",
            cone_dim,
            prog.cone_rows.len()
        )));
    }
    if cone_dim == 0 {
        return Err(SolverError::Malformed("program has no cone constraints".into()));
    }
    for row in prog.eq_rows.iter().chain(prog.cone_rows.iter()) {
        for &(i, c) in row {
            if i >= n || !c.is_finite() {
                return Err(SolverError::Malformed("bad row entry".into()));
            }
        }
    }
    for v in prog.eq_rhs.iter().chain(prog.cone_rhs.iter()).chain(prog.cost.iter()) {
        if !v.is_finite() {
            return Err(SolverError::Malformed("non-finite data".into()));
        }
    }
    for c in &prog.cones {
        if c.dim() == 0 {
            return Err(SolverError::Malformed("empty cone block".into()));
        }
    }
    Ok(())
}

/// Violation of the original constraints at `x` (unscaled data).
fn primal_violation(prog: &ConicProgram, x: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (row, rhs) in prog.eq_rows.iter().zip(&prog.eq_rhs) {
        let v: f64 = row.iter().map(|&(i, c)| c * x[i]).sum::<f64>() - rhs;
        worst = worst.max(v.abs());
    }
    let mut at = 0usize;
    let mut s = vec![0.0; prog.cone_rows.len()];
    for (r, (row, rhs)) in prog.cone_rows.iter().zip(&prog.cone_rhs).enumerate() {
        s[r] = rhs - row.iter().map(|&(i, c)| c * x[i]).sum::<f64>();
    }
    for cone in &prog.cones {
        let d = cone.dim();
        let block = &s[at..at + d];
        match cone {
            ConeSpec::NonNeg(_) => {
                for &v in block {
                    worst = worst.max(-v);
                }
            }
            ConeSpec::Soc(_) => {
                let tail = norm(&block[1..]);
                worst = worst.max(tail - block[0]);
            }
            ConeSpec::Psd(p) => {
                let eig = smat(*p, block).symmetric_eigen();
                let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                worst = worst.max(-min);
            }
        }
        at += d;
    }
    worst
}

/// Solve a conic program to the requested feasibility/gap tolerance.
pub fn solve_conic(prog: &ConicProgram, tol: f64) -> Result<Solution, SolverError> {
    validate(prog)?;

    // Row equilibration: per-row for nonneg/equality, per-block scalar for
    // SOC/PSD so cones are preserved.
    let mut g_rows = prog.cone_rows.clone();
    let mut h = prog.cone_rhs.clone();
    let mut eq_rows = prog.eq_rows.clone();
    let mut eq_rhs = prog.eq_rhs.clone();
    let clamp = |v: f64| v.clamp(1e-8, 1e8);
    for (row, rhs) in eq_rows.iter_mut().zip(eq_rhs.iter_mut()) {
        let mx = row.iter().map(|t| t.1.abs()).fold(rhs.abs(), f64::max);
        let sc = clamp(1.0 / mx.max(1e-12));
        for t in row.iter_mut() {
            t.1 *= sc;
        }
        *rhs *= sc;
    }
    let mut offsets = Vec::with_capacity(prog.cones.len());
    {
        let mut at = 0usize;
        for cone in &prog.cones {
            offsets.push(at);
            let d = cone.dim();
            match cone {
                ConeSpec::NonNeg(_) => {
                    for r in at..at + d {
                        let mx =
                            g_rows[r].iter().map(|t| t.1.abs()).fold(h[r].abs(), f64::max);
                        let sc = clamp(1.0 / mx.max(1e-12));
                        for t in g_rows[r].iter_mut() {
                            t.1 *= sc;
                        }
                        h[r] *= sc;
                    }
                }
                _ => {
                    let mut mx = 0f64;
                    for r in at..at + d {
                        mx = g_rows[r].iter().map(|t| t.1.abs()).fold(mx.max(h[r].abs()), f64::max);
                    }
                    let sc = clamp(1.0 / mx.max(1e-12));
                    for r in at..at + d {
                        for t in g_rows[r].iter_mut() {
                            t.1 *= sc;
                        }
                        h[r] *= sc;
                    }
                }
            }
            at += d;
        }
    }
    let cost_scale = prog.cost.iter().map(|c| c.abs()).fold(0.0f64, f64::max).max(1.0);
    let cost: Vec<f64> = prog.cost.iter().map(|c| c / cost_scale).collect();

    let work = Work {
        n: prog.num_vars,
        p: eq_rows.len(),
        m: g_rows.len(),
        cost,
        eq_rows,
        eq_rhs,
        g_rows,
        h,
        cones: prog.cones.clone(),
        offsets,
        degree: prog.cones.iter().map(|c| c.degree()).sum(),
    };
    let (n, p, m) = (work.n, work.p, work.m);

    // Least-squares initialization: primal from min ||G x - h|| s.t. Ax = b,
    // dual from min ||z|| s.t. A'y + G'z = -c, both shifted into the cone.
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; p];
    let mut z = vec![0.0; m];
    let mut s = vec![0.0; m];
    {
        let identity_scaling: Vec<Scaling> = work
            .cones
            .iter()
            .map(|c| {
                let d = c.dim();
                let mut e = vec![0.0; d];
                c.identity(&mut e);
                nt_scaling(*c, &e, &e).expect("identity is interior")
            })
            .collect();
        if let Ok(kkt0) = KktSolver::new(&work, &identity_scaling) {
            let zero_n = vec![0.0; n];
            let (x0, _, z0) = kkt0.solve3(&work, &identity_scaling, &zero_n, &work.eq_rhs, &work.h);
            // s = h - G x0 = -z0 from the reduced system.
            for i in 0..m {
                s[i] = -z0[i];
            }
            x = x0;
            let neg_c: Vec<f64> = work.cost.iter().map(|v| -v).collect();
            let zero_p = vec![0.0; p];
            let zero_m = vec![0.0; m];
            let (_, y0, zd) = kkt0.solve3(&work, &identity_scaling, &neg_c, &zero_p, &zero_m);
            y = y0;
            z = zd;
        }
        if let Some(wstart) = &prog.warm_start {
            if wstart.len() == n && wstart.iter().all(|v| v.is_finite()) {
                x.copy_from_slice(wstart);
                work.g_mul(&x, &mut s);
                for i in 0..m {
                    s[i] = work.h[i] - s[i];
                }
            }
        }
        // Shift both cone iterates strictly inside: adding t * e raises every
        // block's interiority margin by t.
        let margin = |cone: &ConeSpec, v: &[f64]| -> f64 {
            match cone {
                ConeSpec::NonNeg(_) => v.iter().cloned().fold(f64::INFINITY, f64::min),
                ConeSpec::Soc(_) => v[0] - norm(&v[1..]),
                ConeSpec::Psd(p) => {
                    let eig = smat(*p, v).symmetric_eigen();
                    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
                }
            }
        };
        for vec in [&mut s, &mut z] {
            let mut worst = f64::INFINITY;
            for (b, cone) in work.cones.iter().enumerate() {
                let at = work.offsets[b];
                worst = worst.min(margin(cone, &vec[at..at + cone.dim()]));
            }
            if worst < 1.0 {
                let bump = 1.0 - worst;
                for (b, cone) in work.cones.iter().enumerate() {
                    let at = work.offsets[b];
                    let d = cone.dim();
                    let mut e = vec![0.0; d];
                    cone.identity(&mut e);
                    for i in 0..d {
                        vec[at + i] += bump * e[i];
                    }
                }
            }
        }
    }
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let nb = norm(&work.eq_rhs).max(1.0);
    let nh = norm(&work.h).max(1.0);
    let nc = norm(&work.cost).max(1.0);

    let finish = |x: &[f64], y: &[f64], z: &[f64], s: &[f64], tau: f64, status, iters| {
        let xs: Vec<f64> = x.iter().map(|v| v / tau).collect();
        let obj = prog.cost.iter().zip(&xs).map(|(c, v)| c * v).sum::<f64>() + prog.cost_constant;
        let sz = dot(s, z) / (tau * tau);
        Solution {
            status,
            objective: obj,
            max_violation: primal_violation(prog, &xs),
            complementarity: sz.abs() / obj.abs().max(1.0),
            iterations: iters,
            x: xs,
            y: y.iter().map(|v| v / tau * cost_scale).collect(),
            z: z.iter().map(|v| v / tau * cost_scale).collect(),
            s: s.iter().map(|v| v / tau).collect(),
        }
    };

    let mut best: Option<(f64, Solution)> = None;

    let mut rx = vec![0.0; n];
    let mut ry = vec![0.0; p];
    let mut rz = vec![0.0; m];

    for iter in 0..MAX_ITER {
        // Residuals of the self-dual system.
        let mut at_y = vec![0.0; n];
        work.a_tmul(&y, &mut at_y);
        let mut gt_z = vec![0.0; n];
        work.g_tmul(&z, &mut gt_z);
        for i in 0..n {
            rx[i] = at_y[i] + gt_z[i] + work.cost[i] * tau;
        }
        let mut ax = vec![0.0; p];
        work.a_mul(&x, &mut ax);
        for i in 0..p {
            ry[i] = ax[i] - work.eq_rhs[i] * tau;
        }
        let mut gx = vec![0.0; m];
        work.g_mul(&x, &mut gx);
        for i in 0..m {
            rz[i] = gx[i] + s[i] - work.h[i] * tau;
        }
        let cx = dot(&work.cost, &x);
        let by = dot(&work.eq_rhs, &y);
        let hz = dot(&work.h, &z);
        let rtau = cx + by + hz + kappa;

        let pcost = cx / tau;
        let gap = dot(&s, &z) / (tau * tau);
        let relgap = gap / pcost.abs().max(1.0);
        let pres = (norm(&ry) / nb).max(norm(&rz) / nh) / tau;
        let dres = norm(&rx) / (nc * tau);

        if std::env::var("AIRSEA_IPM_LOG").is_ok() {
            eprintln!(
                "it {iter:3} pres {pres:9.2e} dres {dres:9.2e} gap {gap:9.2e} relgap {relgap:9.2e} tau {tau:9.2e} kappa {kappa:9.2e}"
            );
        }
        let score = pres.max(dres).max(relgap.min(gap));
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, finish(&x, &y, &z, &s, tau, SolveStatus::IterationLimit, iter)));
        } else if let Some((b, _)) = &best {
            // Numerical stall: the iterate is degrading well past the best
            // point seen; further factorization only amplifies noise.
            if score > 1e4 * *b && *b < 1e-4 {
                let (_, sol) = best.expect("iterate");
                return Ok(sol);
            }
        }

        if pres <= tol && dres <= tol && (gap <= tol || relgap <= tol) {
            return Ok(finish(&x, &y, &z, &s, tau, SolveStatus::Optimal, iter));
        }

        // Certificates.
        let infeas_val = by + hz;
        if infeas_val < 0.0 {
            let sc = -1.0 / infeas_val;
            let mut resid = vec![0.0; n];
            for i in 0..n {
                resid[i] = (at_y[i] + gt_z[i]) * sc;
            }
            if norm(&resid) <= tol * nc {
                let mut sol = finish(&x, &y, &z, &s, tau.max(1e-12), SolveStatus::PrimalInfeasible, iter);
                sol.y = y.iter().map(|v| v * sc).collect();
                sol.z = z.iter().map(|v| v * sc).collect();
                return Ok(sol);
            }
        }
        if cx < 0.0 {
            let sc = -1.0 / cx;
            let mut gxs = vec![0.0; m];
            for i in 0..m {
                gxs[i] = (gx[i] + s[i]) * sc;
            }
            let mut axs = vec![0.0; p];
            for i in 0..p {
                axs[i] = ax[i] * sc;
            }
            if norm(&gxs) <= tol * nh && norm(&axs) <= tol * nb {
                let mut sol = finish(&x, &y, &z, &s, tau.max(1e-12), SolveStatus::DualInfeasible, iter);
                sol.x = x.iter().map(|v| v * sc).collect();
                return Ok(sol);
            }
        }

        let mu = (dot(&s, &z) + tau * kappa) / (work.degree + 1) as f64;

        // NT scaling and factorization.
        let mut scalings = Vec::with_capacity(work.cones.len());
        for (b, cone) in work.cones.iter().enumerate() {
            let at = work.offsets[b];
            let d = cone.dim();
            match nt_scaling(*cone, &s[at..at + d], &z[at..at + d]) {
                Ok(sc) => scalings.push(sc),
                Err(_) => {
                    let (_, sol) = best.expect("at least one iterate");
                    return Ok(sol);
                }
            }
        }
        let kkt = KktSolver::new(&work, &scalings)?;
        let neg_c: Vec<f64> = work.cost.iter().map(|v| -v).collect();
        let (x2, y2, z2) = kkt.solve3(&work, &scalings, &neg_c, &work.eq_rhs, &work.h);
        let denom2 = dot(&work.cost, &x2) + dot(&work.eq_rhs, &y2) + dot(&work.h, &z2)
            - kappa / tau;

        // lambda o lambda per block.
        let mut lam_sq = vec![0.0; m];
        let mut lam = vec![0.0; m];
        for (b, sc) in scalings.iter().enumerate() {
            let at = work.offsets[b];
            let d = work.cones[b].dim();
            let l = lambda_of(sc);
            lam[at..at + d].copy_from_slice(l.as_slice());
            jordan_product(work.cones[b], l.as_slice(), l.as_slice(), &mut lam_sq[at..at + d]);
        }

        let direction = |sigma: f64,
                             corr_s: Option<&[f64]>,
                             corr_z: Option<&[f64]>,
                             dtau_a: f64,
                             dkappa_a: f64|
         -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64, f64)> {
            // Complementarity right-hand side in the scaled frame.
            let mut d_compl = vec![0.0; m];
            for i in 0..m {
                d_compl[i] = -lam_sq[i];
            }
            if let (Some(cs), Some(cz)) = (corr_s, corr_z) {
                let mut prod = vec![0.0; m];
                for (b, cone) in work.cones.iter().enumerate() {
                    let at = work.offsets[b];
                    let d = cone.dim();
                    jordan_product(*cone, &cs[at..at + d], &cz[at..at + d], &mut prod[at..at + d]);
                }
                for i in 0..m {
                    d_compl[i] -= prod[i];
                }
            }
            for (b, cone) in work.cones.iter().enumerate() {
                let at = work.offsets[b];
                let dim = cone.dim();
                let mut e = vec![0.0; dim];
                cone.identity(&mut e);
                for i in 0..dim {
                    d_compl[at + i] += sigma * mu * e[i];
                }
            }
            let d_tk = -tau * kappa - dtau_a * dkappa_a + sigma * mu;

            // g = lambda \ d_compl
            let mut g = vec![0.0; m];
            for (b, cone) in work.cones.iter().enumerate() {
                let at = work.offsets[b];
                let d = cone.dim();
                jordan_solve(*cone, &lam[at..at + d], &d_compl[at..at + d], &mut g[at..at + d]);
            }
            // W' g
            let mut wg = vec![0.0; m];
            for (b, sc) in scalings.iter().enumerate() {
                let at = work.offsets[b];
                let d = work.cones[b].dim();
                apply_w(sc, &g[at..at + d], &mut wg[at..at + d], true, false);
            }
            let f = 1.0 - sigma;
            let bx: Vec<f64> = rx.iter().map(|v| -f * v).collect();
            let by_r: Vec<f64> = ry.iter().map(|v| -f * v).collect();
            let bz: Vec<f64> = rz.iter().zip(&wg).map(|(r, w)| -f * r - w).collect();
            let btau = -f * rtau;
            let btk = d_tk;

            let (x1, y1, z1) = kkt.solve3(&work, &scalings, &bx, &by_r, &bz);
            let numer = btau - btk / tau
                - (dot(&work.cost, &x1) + dot(&work.eq_rhs, &y1) + dot(&work.h, &z1));
            if denom2.abs() < 1e-300 {
                return None;
            }
            let dtau = numer / denom2;
            if !dtau.is_finite() {
                return None;
            }
            let dx: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + dtau * b).collect();
            let dy: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a + dtau * b).collect();
            let dz: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a + dtau * b).collect();
            // ds = W'(g - W dz)
            let mut wdz = vec![0.0; m];
            let mut ds = vec![0.0; m];
            for (b, sc) in scalings.iter().enumerate() {
                let at = work.offsets[b];
                let d = work.cones[b].dim();
                apply_w(sc, &dz[at..at + d], &mut wdz[at..at + d], false, false);
                let diff: Vec<f64> =
                    (0..d).map(|i| g[at + i] - wdz[at + i]).collect();
                apply_w(sc, &diff, &mut ds[at..at + d], true, false);
            }
            let dkappa = (btk - kappa * dtau) / tau;
            Some((dx, dy, dz, ds, dtau, dkappa))
        };

        // Step length for (ds, dz, dtau, dkappa) in the scaled frame.
        let step_len = |ds: &[f64], dz: &[f64], dtau: f64, dkappa: f64| -> f64 {
            let mut alpha = f64::INFINITY;
            let mut wds = vec![0.0; m];
            let mut wdz = vec![0.0; m];
            for (b, sc) in scalings.iter().enumerate() {
                let at = work.offsets[b];
                let d = work.cones[b].dim();
                apply_w(sc, &ds[at..at + d], &mut wds[at..at + d], true, true);
                apply_w(sc, &dz[at..at + d], &mut wdz[at..at + d], false, false);
                alpha = max_step(work.cones[b], &lam[at..at + d], &wds[at..at + d], alpha);
                alpha = max_step(work.cones[b], &lam[at..at + d], &wdz[at..at + d], alpha);
            }
            if dtau < 0.0 {
                alpha = alpha.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                alpha = alpha.min(-kappa / dkappa);
            }
            alpha
        };

        // Predictor.
        let Some((_dxa, _dya, dza, dsa, dtaua, dkappaa)) = direction(0.0, None, None, 0.0, 0.0)
        else {
            let (_, sol) = best.expect("iterate");
            return Ok(sol);
        };
        let alpha_aff = step_len(&dsa, &dza, dtaua, dkappaa).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 0.999);

        // Corrector uses the scaled affine directions.
        let mut cs = vec![0.0; m];
        let mut cz = vec![0.0; m];
        for (b, sc) in scalings.iter().enumerate() {
            let at = work.offsets[b];
            let d = work.cones[b].dim();
            apply_w(sc, &dsa[at..at + d], &mut cs[at..at + d], true, true);
            apply_w(sc, &dza[at..at + d], &mut cz[at..at + d], false, false);
        }
        let Some((dx, dy, dz, ds, dtau, dkappa)) =
            direction(sigma, Some(&cs), Some(&cz), dtaua, dkappaa)
        else {
            let (_, sol) = best.expect("iterate");
            return Ok(sol);
        };
        let alpha = (STEP_DAMP * step_len(&ds, &dz, dtau, dkappa)).min(1.0);
        if !alpha.is_finite()
            || dx.iter().chain(&dz).chain(&ds).any(|v| !v.is_finite())
        {
            let (_, sol) = best.expect("iterate");
            return Ok(sol);
        }
        if std::env::var("AIRSEA_IPM_LOG").is_ok() {
            eprintln!("      alpha_aff {alpha_aff:9.2e} sigma {sigma:9.2e} alpha {alpha:9.2e} mu {mu:9.2e} sz {:9.2e} tk {:9.2e}", dot(&s,&z), tau*kappa);
        }
        if !(alpha > 1e-13) {
            let (_, sol) = best.expect("iterate");
            return Ok(sol);
        }
        for i in 0..n {
            x[i] += alpha * dx[i];
        }
        for i in 0..p {
            y[i] += alpha * dy[i];
        }
        for i in 0..m {
            z[i] += alpha * dz[i];
            s[i] += alpha * ds[i];
        }
        tau += alpha * dtau;
        kappa += alpha * dkappa;
        if tau <= 0.0 || kappa < 0.0 || !tau.is_finite() || !kappa.is_finite() {
            let (_, sol) = best.expect("iterate");
            return Ok(sol);
        }
        // The embedding is homogeneous: renormalize so tau stays O(1).
        if !(0.1..=10.0).contains(&tau) {
            let inv = 1.0 / tau;
            for v in x.iter_mut().chain(y.iter_mut()).chain(z.iter_mut()).chain(s.iter_mut()) {
                *v *= inv;
            }
            kappa *= inv;
            tau = 1.0;
        }
    }
    let (_, sol) = best.expect("iterate");
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::super::program::{LinExpr, Model};
    use super::*;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_dimensional_lp() {
        // min x s.t. x >= 3
        let mut m = Model::new();
        let x = m.var();
        m.minimize(x.into());
        m.add_nonneg(LinExpr::term(x, 1.0).add_const(-3.0));
        let sol = m.solve(1e-8).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.x[0], 3.0, epsilon = 1e-6);
        assert!(sol.max_violation <= 1e-6);
        assert!(sol.complementarity <= 1e-6);
    }

    #[test]
    fn small_lp_with_equalities() {
        // min -x - 2y s.t. x + y = 1, x, y >= 0 -> x=0, y=1, obj=-2.
        let mut m = Model::new();
        let x = m.var();
        let y = m.var();
        m.minimize(LinExpr::term(x, -1.0).add_term(y, -2.0));
        m.add_eq0(LinExpr::term(x, 1.0).add_term(y, 1.0).add_const(-1.0));
        m.add_nonneg(x.into());
        m.add_nonneg(y.into());
        let sol = m.solve(1e-8).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.objective, -2.0, epsilon = 1e-6);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn diagonal_sdp_is_rank_one() {
        // min tr(X) s.t. X psd, X11 >= 2 -> tr = 2 and X = diag(2, 0).
        let mut m = Model::new();
        let xs = m.vars(3); // lower triangle of 2x2: x11, x21, x22
        m.minimize(LinExpr::term(xs[0], 1.0).add_term(xs[2], 1.0));
        m.add_nonneg(LinExpr::term(xs[0], 1.0).add_const(-2.0));
        m.add_psd_lower(2, vec![xs[0].into(), xs[1].into(), xs[2].into()]);
        let sol = m.solve(1e-8).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.objective, 2.0, epsilon = 1e-5);
        assert_relative_eq!(sol.x[0], 2.0, epsilon = 1e-5);
        assert!(sol.x[1].abs() < 1e-4 && sol.x[2].abs() < 1e-4);
    }

    #[test]
    fn soc_projection_problem() {
        // min t s.t. ||(x - a)|| <= t, x fixed by equalities: distance.
        let mut m = Model::new();
        let t = m.var();
        let x = m.vars(2);
        m.minimize(t.into());
        m.add_eq0(LinExpr::term(x[0], 1.0).add_const(-3.0));
        m.add_eq0(LinExpr::term(x[1], 1.0).add_const(-4.0));
        m.add_soc(t.into(), vec![x[0].into(), x[1].into()]);
        let sol = m.solve(1e-8).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.objective, 5.0, epsilon = 1e-6);
    }

    #[test]
    fn infeasible_lp_is_certified() {
        // x >= 1 and x <= 0 simultaneously.
        let mut m = Model::new();
        let x = m.var();
        m.minimize(x.into());
        m.add_nonneg(LinExpr::term(x, 1.0).add_const(-1.0));
        m.add_nonneg(LinExpr::term(x, -1.0));
        let sol = m.solve(1e-8).unwrap();
        assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
    }

    #[test]
    fn unbounded_lp_is_certified() {
        let mut m = Model::new();
        let x = m.var();
        m.minimize(LinExpr::term(x, -1.0));
        m.add_nonneg(x.into());
        let sol = m.solve(1e-8).unwrap();
        assert_eq!(sol.status, SolveStatus::DualInfeasible);
    }

    #[test]
    fn rotated_cone_models_quartic() {
        // min p s.t. d^4 <= k p with d fixed: p = d^4/k.
        let mut m = Model::new();
        let p = m.var();
        let s = m.var();
        let d = 3.0;
        let k = 2.0;
        m.minimize(p.into());
        // s >= d^2 (rotated: ||d||^2 <= s * 1)
        m.add_rsoc(s.into(), LinExpr::constant(1.0), vec![LinExpr::constant(d)]);
        // s^2 <= k p
        m.add_rsoc(LinExpr::term(p, k), LinExpr::constant(1.0), vec![s.into()]);
        let sol = m.solve(1e-8).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.objective, d.powi(4) / k, epsilon = 1e-5);
    }

    /// Ellipsoid method over the SOCP feasible set: an independent
    /// first-order oracle using only subgradient cuts.
    fn ellipsoid_socp(
        c: &[f64],
        cones: &[(Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64)],
        box_r: f64,
        iters: usize,
    ) -> f64 {
        let n = c.len();
        let mut center = vec![0.0; n];
        let mut pmat = DMatrix::<f64>::identity(n, n) * (box_r * box_r * (n as f64));
        let mut bestval = f64::INFINITY;
        let eval_violation = |x: &[f64]| -> Option<(Vec<f64>, f64)> {
            for (a, b, cc, d) in cones {
                let mut ax: Vec<f64> = b.clone();
                for (r, row) in a.iter().enumerate() {
                    ax[r] += dot(row, x);
                }
                let lhs = norm(&ax);
                let rhs = dot(cc, x) + d;
                if lhs > rhs + 1e-12 {
                    // subgradient of ||Ax+b|| - c'x - d
                    let mut g = vec![0.0; n];
                    if lhs > 0.0 {
                        for (r, row) in a.iter().enumerate() {
                            for i in 0..n {
                                g[i] += row[i] * ax[r] / lhs;
                            }
                        }
                    }
                    for i in 0..n {
                        g[i] -= cc[i];
                    }
                    return Some((g, lhs - rhs));
                }
            }
            for i in 0..x.len() {
                if x[i] > box_r {
                    let mut g = vec![0.0; n];
                    g[i] = 1.0;
                    return Some((g, x[i] - box_r));
                }
                if x[i] < -box_r {
                    let mut g = vec![0.0; n];
                    g[i] = -1.0;
                    return Some((g, -box_r - x[i]));
                }
            }
            None
        };
        for _ in 0..iters {
            let g = match eval_violation(&center) {
                Some((g, _)) => g,
                None => {
                    bestval = bestval.min(dot(c, &center));
                    c.to_vec()
                }
            };
            let pg = &pmat * DMatrix::from_column_slice(n, 1, &g);
            let gpg = dot(&g, pg.as_slice()).max(1e-300);
            let sq = gpg.sqrt();
            let nf = n as f64;
            for i in 0..n {
                center[i] -= pg[(i, 0)] / (sq * (nf + 1.0));
            }
            let scale = nf * nf / (nf * nf - 1.0);
            let outer = &pg * pg.transpose() * (2.0 / ((nf + 1.0) * gpg));
            pmat = (pmat - outer) * scale;
        }
        bestval
    }

    #[test]
    fn random_socp_matches_first_order_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..5 {
            let n = 4 + trial;
            let mut m = Model::new();
            let xs = m.vars(n);
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut obj = LinExpr::default();
            for i in 0..n {
                obj = obj.add_term(xs[i], c[i]);
            }
            m.minimize(obj);
            let mut cones = Vec::new();
            for _ in 0..3 {
                let rows = 3usize;
                let a: Vec<Vec<f64>> = (0..rows)
                    .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                let b: Vec<f64> = (0..rows).map(|_| rng.random_range(-0.5..0.5)).collect();
                let cc: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
                // Strictly feasible at 0: d > ||b||.
                let d = norm(&b) + rng.random_range(0.5..1.5);
                let mut args = Vec::new();
                for r in 0..rows {
                    let mut e = LinExpr::constant(b[r]);
                    for i in 0..n {
                        e = e.add_term(xs[i], a[r][i]);
                    }
                    args.push(e);
                }
                let mut bound = LinExpr::constant(d);
                for i in 0..n {
                    bound = bound.add_term(xs[i], cc[i]);
                }
                m.add_soc(bound, args);
                cones.push((a, b, cc, d));
            }
            let box_r = 10.0;
            for i in 0..n {
                m.add_box(xs[i], -box_r, box_r);
            }
            let sol = m.solve(1e-9).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal, "trial {trial}");
            let oracle = ellipsoid_socp(&c, &cones, box_r, 60_000);
            assert!(
                (sol.objective - oracle).abs() <= 1e-5 * oracle.abs().max(1.0),
                "trial {trial}: ipm {} vs oracle {}",
                sol.objective,
                oracle
            );
        }
    }

    #[test]
    fn random_sdp_duality_gap_closes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let p = 3usize;
            let dim = p * (p + 1) / 2;
            let mut m = Model::new();
            let xs = m.vars(dim);
            // min <C, X> s.t. tr(X) = 1, X psd  -> minimum eigenvalue of C.
            let cmat = {
                let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0f64));
                (&a + a.transpose()) * 0.5
            };
            let mut obj = LinExpr::default();
            let mut trace = LinExpr::constant(-1.0);
            let mut idx = 0;
            for j in 0..p {
                for i in j..p {
                    let coef = if i == j { cmat[(i, j)] } else { 2.0 * cmat[(i, j)] };
                    obj = obj.add_term(xs[idx], coef);
                    if i == j {
                        trace = trace.add_term(xs[idx], 1.0);
                    }
                    idx += 1;
                }
            }
            m.minimize(obj);
            m.add_eq0(trace);
            m.add_psd_lower(p, xs.iter().map(|&v| v.into()).collect());
            let sol = m.solve(1e-9).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            let eig = cmat.symmetric_eigen();
            let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_relative_eq!(sol.objective, lmin, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn badly_scaled_rows_are_equilibrated() {
        // Same LP as above but with 1e-12-scale coefficients, mimicking
        // noise-power constraints.
        let mut m = Model::new();
        let x = m.var();
        m.minimize(x.into());
        m.add_nonneg(LinExpr::term(x, 1e-12).add_const(-3e-12));
        let sol = m.solve(1e-8).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.x[0], 3.0, epsilon = 1e-5);
    }
}
