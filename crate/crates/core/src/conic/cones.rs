//! Cone kernels for the interior-point solver: nonnegative orthant,
//! second-order cones, and positive-semidefinite cones in svec form.
//!
//! Each kernel provides the Nesterov-Todd scaling computed from a strictly
//! interior primal/dual pair, application of `W` in its four variants,
//! the Jordan product and its inverse at the scaled point, and maximum
//! feasible step lengths. PSD blocks store matrices in scaled-vec layout
//! (column-major lower triangle, off-diagonal entries times sqrt(2)) so the
//! ambient inner product is the trace inner product.

use nalgebra::{DMatrix, DVector};

/// One cone block of a conic program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeSpec {
    /// `dim` independent nonnegative coordinates.
    NonNeg(usize),
    /// Second-order cone of total dimension `dim` (head + tail).
    Soc(usize),
    /// PSD cone of matrix order `p` (ambient dimension p(p+1)/2).
    Psd(usize),
}

impl ConeSpec {
    pub fn dim(&self) -> usize {
        match *self {
            ConeSpec::NonNeg(n) => n,
            ConeSpec::Soc(d) => d,
            ConeSpec::Psd(p) => p * (p + 1) / 2,
        }
    }

    /// Jordan-algebra rank, used to normalize the barrier parameter.
    pub fn degree(&self) -> usize {
        match *self {
            ConeSpec::NonNeg(n) => n,
            ConeSpec::Soc(_) => 2,
            ConeSpec::Psd(p) => p,
        }
    }

    /// Identity element of the block.
    pub fn identity(&self, out: &mut [f64]) {
        match *self {
            ConeSpec::NonNeg(_) => out.fill(1.0),
            ConeSpec::Soc(_) => {
                out.fill(0.0);
                out[0] = 1.0;
            }
            ConeSpec::Psd(p) => {
                out.fill(0.0);
                let mut idx = 0;
                for j in 0..p {
                    out[idx] = 1.0;
                    idx += p - j;
                }
            }
        }
    }
}

/// svec index of entry (i, j), i >= j, for order p.
fn svec_idx(p: usize, i: usize, j: usize) -> usize {
    // Column j starts after columns 0..j of lengths p, p-1, ...
    j * p - j * (j + 1) / 2 + j + (i - j)
}

/// Expand svec storage into a dense symmetric matrix.
pub fn smat(p: usize, u: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..p {
        for i in j..p {
            let v = u[svec_idx(p, i, j)];
            if i == j {
                m[(i, j)] = v;
            } else {
                m[(i, j)] = v * inv_sqrt2;
                m[(j, i)] = v * inv_sqrt2;
            }
        }
    }
    m
}

/// Pack a symmetric matrix into svec storage.
pub fn svec(m: &DMatrix<f64>, out: &mut [f64]) {
    let p = m.nrows();
    let sqrt2 = std::f64::consts::SQRT_2;
    for j in 0..p {
        for i in j..p {
            out[svec_idx(p, i, j)] = if i == j { m[(i, j)] } else { m[(i, j)] * sqrt2 };
        }
    }
}

/// Nesterov-Todd scaling data for one block.
#[derive(Debug, Clone)]
pub enum Scaling {
    NonNeg {
        w: DVector<f64>,
        lambda: DVector<f64>,
    },
    Soc {
        beta: f64,
        v: DVector<f64>,
        lambda: DVector<f64>,
    },
    Psd {
        r: DMatrix<f64>,
        rinv: DMatrix<f64>,
        lambda: DVector<f64>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum ConeError {
    #[error("iterate left the cone interior")]
    NotInterior,
}

fn soc_residual(x: &[f64]) -> f64 {
    let tail: f64 = x[1..].iter().map(|v| v * v).sum();
    x[0] * x[0] - tail
}

/// Compute the NT scaling for one block from interior s, z.
pub fn nt_scaling(spec: ConeSpec, s: &[f64], z: &[f64]) -> Result<Scaling, ConeError> {
    match spec {
        ConeSpec::NonNeg(n) => {
            let mut w = DVector::zeros(n);
            let mut lambda = DVector::zeros(n);
            for i in 0..n {
                if s[i] <= 0.0 || z[i] <= 0.0 {
                    return Err(ConeError::NotInterior);
                }
                w[i] = (s[i] / z[i]).sqrt();
                lambda[i] = (s[i] * z[i]).sqrt();
            }
            Ok(Scaling::NonNeg { w, lambda })
        }
        ConeSpec::Soc(d) => {
            let s_res = soc_residual(s);
            let z_res = soc_residual(z);
            if s_res <= 0.0 || z_res <= 0.0 || s[0] <= 0.0 || z[0] <= 0.0 {
                return Err(ConeError::NotInterior);
            }
            let s_norm = s_res.sqrt();
            let z_norm = z_res.sqrt();
            let sbar: Vec<f64> = s.iter().map(|v| v / s_norm).collect();
            let zbar: Vec<f64> = z.iter().map(|v| v / z_norm).collect();
            let dot: f64 = sbar.iter().zip(&zbar).map(|(a, b)| a * b).sum();
            let gamma = ((1.0 + dot) / 2.0).sqrt();
            // Scaling point: v = (sbar + J zbar) / (2 gamma), v'Jv = 1; the
            // scaling matrix is the hyperbolic Householder built from v
            // (see apply_w), whose square maps z to s.
            let mut v = DVector::zeros(d);
            v[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
            for i in 1..d {
                v[i] = (sbar[i] - zbar[i]) / (2.0 * gamma);
            }
            let beta = (s_norm / z_norm).sqrt();
            let mut scaling = Scaling::Soc { beta, v, lambda: DVector::zeros(d) };
            let mut lambda = vec![0.0; d];
            apply_w(&scaling, z, &mut lambda, false, false);
            if let Scaling::Soc { lambda: l, .. } = &mut scaling {
                *l = DVector::from_vec(lambda);
            }
            Ok(scaling)
        }
        ConeSpec::Psd(p) => {
            let sm = smat(p, s);
            let zm = smat(p, z);
            let ls = sm.cholesky().ok_or(ConeError::NotInterior)?;
            let lz = zm.cholesky().ok_or(ConeError::NotInterior)?;
            let ls_l = ls.l();
            let lz_l = lz.l();
            let prod = lz_l.transpose() * &ls_l;
            let svd = prod.svd(true, true);
            let u = svd.u.as_ref().expect("svd with u");
            let vt = svd.v_t.as_ref().expect("svd with v_t");
            let mut sig_inv_half = DMatrix::zeros(p, p);
            let mut lambda = DVector::zeros(p * (p + 1) / 2);
            let mut idx = 0;
            for j in 0..p {
                let sv = svd.singular_values[j];
                if sv <= 0.0 {
                    return Err(ConeError::NotInterior);
                }
                sig_inv_half[(j, j)] = 1.0 / sv.sqrt();
                lambda[idx] = sv;
                idx += p - j;
            }
            // R = L_s V Sigma^{-1/2};  R^{-1} = Sigma^{-1/2} U^T L_z^T.
            let r = &ls_l * vt.transpose() * &sig_inv_half;
            let rinv = &sig_inv_half * u.transpose() * lz_l.transpose();
            Ok(Scaling::Psd { r, rinv, lambda })
        }
    }
}

/// Scaled point lambda = W z = W^{-T} s.
pub fn lambda_of(sc: &Scaling) -> &DVector<f64> {
    match sc {
        Scaling::NonNeg { lambda, .. } => lambda,
        Scaling::Soc { lambda, .. } => lambda,
        Scaling::Psd { lambda, .. } => lambda,
    }
}

/// Apply the scaling matrix: out = op(W) x where op is selected by
/// (`trans`, `inv`). For the PSD block W is the congruence X -> R^T X R.
pub fn apply_w(sc: &Scaling, x: &[f64], out: &mut [f64], trans: bool, inv: bool) {
    match sc {
        Scaling::NonNeg { w, .. } => {
            for i in 0..w.len() {
                out[i] = if inv { x[i] / w[i] } else { x[i] * w[i] };
            }
        }
        Scaling::Soc { beta, v, .. } => {
            // W = beta [[v0, v1'], [v1, I + v1 v1'/(1+v0)]], a symmetric
            // hyperbolic Householder; W^{-1} flips the sign of v1.
            let d = v.len();
            let a = v[0];
            let sgn = if inv { -1.0 } else { 1.0 };
            let mut t = 0.0;
            for i in 1..d {
                t += sgn * v[i] * x[i];
            }
            let head = a * x[0] + t;
            let coef = x[0] + t / (1.0 + a);
            if !inv {
                out[0] = *beta * head;
                for i in 1..d {
                    out[i] = *beta * (x[i] + v[i] * coef);
                }
            } else {
                out[0] = head / *beta;
                for i in 1..d {
                    out[i] = (x[i] - v[i] * coef) / *beta;
                }
            }
        }
        Scaling::Psd { r, rinv, .. } => {
            let p = r.nrows();
            let xm = smat(p, x);
            let res = match (trans, inv) {
                (false, false) => r.transpose() * &xm * r,
                (true, false) => r * &xm * r.transpose(),
                (false, true) => rinv.transpose() * &xm * rinv,
                (true, true) => rinv * &xm * rinv.transpose(),
            };
            svec(&res, out);
        }
    }
}

/// Jordan product out = x o y for the block.
pub fn jordan_product(spec: ConeSpec, x: &[f64], y: &[f64], out: &mut [f64]) {
    match spec {
        ConeSpec::NonNeg(n) => {
            for i in 0..n {
                out[i] = x[i] * y[i];
            }
        }
        ConeSpec::Soc(d) => {
            let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            out[0] = dot;
            for i in 1..d {
                out[i] = x[0] * y[i] + y[0] * x[i];
            }
        }
        ConeSpec::Psd(p) => {
            let xm = smat(p, x);
            let ym = smat(p, y);
            let prod = (&xm * &ym + &ym * &xm) * 0.5;
            svec(&prod, out);
        }
    }
}

/// Solve lambda o out = d at the scaled point (lambda is diagonal for PSD).
pub fn jordan_solve(spec: ConeSpec, lambda: &[f64], d: &[f64], out: &mut [f64]) {
    match spec {
        ConeSpec::NonNeg(n) => {
            for i in 0..n {
                out[i] = d[i] / lambda[i];
            }
        }
        ConeSpec::Soc(dim) => {
            // Arrow-matrix solve.
            let l0 = lambda[0];
            let tail_dot: f64 = lambda[1..].iter().zip(&d[1..]).map(|(a, b)| a * b).sum();
            let tail_sq: f64 = lambda[1..].iter().map(|a| a * a).sum();
            let x0 = (l0 * d[0] - tail_dot) / (l0 * l0 - tail_sq);
            out[0] = x0;
            for i in 1..dim {
                out[i] = (d[i] - x0 * lambda[i]) / l0;
            }
        }
        ConeSpec::Psd(p) => {
            // Lambda is diagonal in the scaled frame: entry (i,j) of the
            // solution is 2 d_ij / (lam_i + lam_j); svec factors cancel.
            let mut diag = vec![0.0; p];
            let mut idx = 0;
            for j in 0..p {
                diag[j] = lambda[idx];
                idx += p - j;
            }
            for j in 0..p {
                for i in j..p {
                    let k = svec_idx(p, i, j);
                    out[k] = 2.0 * d[k] / (diag[i] + diag[j]);
                }
            }
        }
    }
}

/// Largest step alpha such that lambda + alpha * dir stays in the cone,
/// capped at `cap`.
pub fn max_step(spec: ConeSpec, lambda: &[f64], dir: &[f64], cap: f64) -> f64 {
    match spec {
        ConeSpec::NonNeg(n) => {
            let mut a = cap;
            for i in 0..n {
                if dir[i] < 0.0 {
                    a = a.min(-lambda[i] / dir[i]);
                }
            }
            a
        }
        ConeSpec::Soc(_) => {
            // Boundary of (l + a d): head positivity and quadratic residual.
            let mut a = cap;
            if dir[0] < 0.0 {
                a = a.min(-lambda[0] / dir[0]);
            }
            let qa = soc_residual(dir);
            let qc = soc_residual(lambda);
            let qb: f64 = 2.0
                * (lambda[0] * dir[0]
                    - lambda[1..].iter().zip(&dir[1..]).map(|(x, y)| x * y).sum::<f64>());
            // roots of qa a^2 + qb a + qc = 0 with qc > 0.
            let disc = qb * qb - 4.0 * qa * qc;
            if qa >= 0.0 && qb >= 0.0 {
                return a;
            }
            if disc >= 0.0 {
                let sq = disc.sqrt();
                let roots = if qa.abs() < 1e-300 {
                    [-qc / qb, f64::INFINITY]
                } else {
                    [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)]
                };
                for r in roots {
                    if r > 0.0 {
                        a = a.min(r);
                    }
                }
            }
            a
        }
        ConeSpec::Psd(p) => {
            // lambda + alpha dir >= 0 iff I + alpha L^{-1} D L^{-T} >= 0
            // with L the Cholesky factor of mat(lambda).
            let lm = smat(p, lambda);
            let Some(chol) = lm.cholesky() else {
                return 0.0;
            };
            let dm = smat(p, dir);
            let l = chol.l();
            let linv_d = l.solve_lower_triangular(&dm).expect("lower solve");
            let scaled = l.solve_lower_triangular(&linv_d.transpose()).expect("lower solve");
            let sym = (&scaled + scaled.transpose()) * 0.5;
            let eig = sym.symmetric_eigen();
            let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            if min_eig >= 0.0 {
                cap
            } else {
                cap.min(-1.0 / min_eig)
            }
        }
    }
}
