//! Rank-1 beamformer recovery from lifted PSD solutions: dominant
//! eigenvector when the matrix is (near) rank one, Gaussian randomization
//! with feasibility scoring otherwise.

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{CMat, CVec, C64};

#[derive(Debug, thiserror::Error)]
pub enum Rank1Error {
    #[error("matrix is not PSD within tolerance (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("matrix is not Hermitian")]
    NotHermitian,
}

/// Outcome of a rank-1 extraction.
#[derive(Debug, Clone)]
pub struct RankOne {
    /// Recovered vector `w` with `w w^H ~ X`.
    pub vector: CVec,
    /// Spectral residual `1 - lambda_max / tr(X)`; zero for exact rank one.
    pub residual: f64,
    /// Whether the randomization path was taken.
    pub randomized: bool,
}

/// Residual threshold below which the dominant eigenvector is accepted.
pub const RANK1_RESIDUAL_ACCEPT: f64 = 1e-3;
const RANDOMIZATION_SAMPLES: usize = 100;

fn hermitian_eigen(x: &CMat) -> (DVector<f64>, CMat) {
    let se = x.clone().symmetric_eigen();
    (se.eigenvalues, se.eigenvectors)
}

/// Extract a rank-1 factor from a Hermitian PSD matrix.
///
/// If the spectral residual exceeds [`RANK1_RESIDUAL_ACCEPT`] the function
/// draws Gaussian samples shaped by `X` and keeps the best according to
/// `score` (larger is better; `None` marks a sample as unusable). Without a
/// scorer the dominant eigenvector is still returned, flagged as randomized.
pub fn extract_rank1(
    x: &CMat,
    tol: f64,
    score: Option<&dyn Fn(&CVec) -> Option<f64>>,
) -> Result<RankOne, Rank1Error> {
    let m = x.nrows();
    let herm_err = (x - x.adjoint()).norm();
    if herm_err > 1e-8 * x.norm().max(1.0) {
        return Err(Rank1Error::NotHermitian);
    }
    let (vals, vecs) = hermitian_eigen(x);
    let mut max_val = f64::NEG_INFINITY;
    let mut min_val = f64::INFINITY;
    let mut max_idx = 0;
    for (i, &v) in vals.iter().enumerate() {
        if v > max_val {
            max_val = v;
            max_idx = i;
        }
        min_val = min_val.min(v);
    }
    let trace: f64 = vals.iter().sum::<f64>().max(0.0);
    let scale = vals.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1.0);
    if min_val < -tol * scale {
        return Err(Rank1Error::NotPsd(min_val));
    }
    let residual = if trace > 0.0 { (1.0 - max_val / trace).max(0.0) } else { 0.0 };
    let principal: CVec =
        vecs.column(max_idx).into_owned() * C64::new(max_val.max(0.0).sqrt(), 0.0);
    if residual <= RANK1_RESIDUAL_ACCEPT {
        return Ok(RankOne { vector: principal, residual, randomized: false });
    }

    // Gaussian randomization: candidates X^{1/2} g, g ~ CN(0, I).
    let mut half = CMat::zeros(m, m);
    for i in 0..m {
        let root = C64::new(vals[i].max(0.0).sqrt(), 0.0);
        let col = vecs.column(i);
        for r in 0..m {
            for c in 0..m {
                half[(r, c)] += col[r] * root * col[c].conj();
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x_5d_ee_d5);
    let mut best: Option<(f64, CVec)> = None;
    for _ in 0..RANDOMIZATION_SAMPLES {
        let g = CVec::from_fn(m, |_, _| {
            C64::new(standard_normal(&mut rng), standard_normal(&mut rng))
                * C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)
        });
        let cand = &half * g;
        let s = match score {
            Some(f) => f(&cand),
            // Without a scorer prefer candidates aligned with X.
            None => Some((cand.adjoint() * x * &cand)[(0, 0)].re / cand.norm_squared().max(1e-300)),
        };
        if let Some(val) = s {
            if best.as_ref().map_or(true, |(b, _)| val > *b) {
                best = Some((val, cand));
            }
        }
    }
    let vector = best.map(|(_, v)| v).unwrap_or(principal);
    Ok(RankOne { vector, residual, randomized: true })
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; inputs bounded away from 0.
    let u1: f64 = rng.random_range(1e-12..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Real symmetric front end used by tests and the solver's PSD recovery.
pub fn extract_rank1_real(x: &DMatrix<f64>, tol: f64) -> Result<RankOne, Rank1Error> {
    let cm = CMat::from_fn(x.nrows(), x.ncols(), |i, j| C64::new(x[(i, j)], 0.0));
    extract_rank1(&cm, tol, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn outer(v: &CVec) -> CMat {
        v * v.adjoint()
    }

    #[test]
    fn exact_rank_one_recovers_up_to_phase() {
        let w = CVec::from_vec(vec![
            C64::new(1.0, 0.5),
            C64::new(-0.3, 0.2),
            C64::new(0.0, -1.1),
        ]);
        let x = outer(&w);
        let out = extract_rank1(&x, 1e-9, None).unwrap();
        assert!(out.residual < 1e-12);
        assert!(!out.randomized);
        // Compare outer products, which quotient out the global phase.
        let diff = (outer(&out.vector) - &x).norm();
        assert!(diff < 1e-9 * x.norm(), "diff {diff}");
    }

    #[test]
    fn identity_takes_randomization_path() {
        let x = CMat::identity(2, 2);
        let out = extract_rank1(&x, 1e-9, None).unwrap();
        assert_relative_eq!(out.residual, 0.5, epsilon = 1e-12);
        assert!(out.randomized);
        assert!(out.vector.norm() > 0.0);
    }

    #[test]
    fn noisy_rank_one_has_small_residual() {
        let w = CVec::from_vec(vec![C64::new(2.0, 0.0), C64::new(0.0, 1.0)]);
        let mut x = outer(&w);
        x[(0, 0)] += C64::new(1e-8, 0.0);
        x[(1, 1)] += C64::new(1e-8, 0.0);
        let out = extract_rank1(&x, 1e-6, None).unwrap();
        assert!(out.residual < 1e-6);
    }

    #[test]
    fn non_psd_is_rejected() {
        let x = CMat::from_diagonal(&CVec::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(-0.5, 0.0),
        ]));
        assert!(extract_rank1(&x, 1e-9, None).is_err());
    }

    #[test]
    fn scorer_steers_randomization() {
        let x = CMat::identity(3, 3);
        // Prefer candidates aligned with e0.
        let score = |v: &CVec| Some(v[0].norm() / v.norm().max(1e-12));
        let out = extract_rank1(&x, 1e-9, Some(&score)).unwrap();
        assert!(out.randomized);
        assert!(out.vector[0].norm() / out.vector.norm() > 0.5);
    }
}
