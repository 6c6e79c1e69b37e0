//! Virtual-base-station coverage clustering: capacity-limited k-means that
//! escalates the cluster count until every target lies within the sensing
//! radius of its hover point.
//!
//! The sensing radius shrinks as a cluster grows because the nominal sensing
//! power is split evenly across the cluster's targets, so coverage is
//! checked against a per-size radius table.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::sensing_distance_threshold;
use crate::scenario::{Requirements, SystemParams};
use crate::Vec2;

/// Horizontal coverage radius per cluster size (index `m-1` holds the radius
/// of an `m`-target cluster). Negative means hovering cannot reach the
/// required instantaneous SNR even directly overhead.
#[derive(Debug, Clone)]
pub struct SensingCoverage {
    pub horizontal_radius: Vec<f64>,
}

impl SensingCoverage {
    /// Derive from the sensing distance threshold with even power split and
    /// the fixed flight altitude.
    pub fn from_scenario(params: &SystemParams, req: &Requirements) -> Self {
        let z = params.max_simultaneous_targets;
        let mut horizontal_radius = Vec::with_capacity(z);
        for m in 1..=z {
            let power = params.sense_power_w / m as f64;
            let slant = sensing_distance_threshold(req.inst_snr, power, params).unwrap_or(0.0);
            let h = params.altitude_m;
            horizontal_radius.push(if slant >= h {
                (slant * slant - h * h).sqrt()
            } else {
                -1.0
            });
        }
        SensingCoverage { horizontal_radius }
    }

    pub fn radius(&self, cluster_size: usize) -> f64 {
        self.horizontal_radius[cluster_size.min(self.horizontal_radius.len()) - 1]
    }

    /// Largest cluster size that is feasible at all.
    pub fn max_feasible_size(&self) -> usize {
        self.horizontal_radius.iter().take_while(|&&r| r >= 0.0).count()
    }
}

/// Targets grouped under hover points.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    /// Number of clusters E.
    pub count: usize,
    /// Target indices per cluster.
    pub clusters: Vec<Vec<usize>>,
    pub centroids: Vec<Vec2>,
    /// Cluster id per target.
    pub cluster_of: Vec<usize>,
}

impl ClusterAssignment {
    pub fn check(&self, targets: &[Vec2], coverage: &SensingCoverage, z: usize) -> bool {
        for (i, cl) in self.clusters.iter().enumerate() {
            if cl.is_empty() || cl.len() > z {
                return false;
            }
            let r = coverage.radius(cl.len());
            if r < 0.0 {
                return false;
            }
            for &t in cl {
                if (targets[t] - self.centroids[i]).norm() > r + 1e-9 {
                    return false;
                }
            }
        }
        let mut seen = vec![0usize; self.cluster_of.len()];
        for cl in &self.clusters {
            for &t in cl {
                seen[t] += 1;
            }
        }
        seen.iter().all(|&c| c == 1)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("sensing SNR unreachable even hovering overhead a single target")]
    SensingInfeasible,
}

/// Initial hover-point count: ceil(K / Z).
pub fn initial_cluster_count(num_targets: usize, z: usize) -> usize {
    num_targets.div_ceil(z)
}

fn centroid_of(targets: &[Vec2], members: &[usize]) -> Vec2 {
    let mut c = Vec2::zeros();
    for &t in members {
        c += targets[t];
    }
    c / members.len() as f64
}

/// Lloyd iterations with farthest-point seeding.
fn kmeans(targets: &[Vec2], e: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<usize>>, Vec<Vec2>) {
    let k = targets.len();
    let mut centers: Vec<Vec2> = Vec::with_capacity(e);
    centers.push(targets[rng.random_range(0..k)]);
    while centers.len() < e {
        let far = (0..k)
            .max_by(|&a, &b| {
                let da = centers.iter().map(|c| (targets[a] - c).norm()).fold(f64::MAX, f64::min);
                let db = centers.iter().map(|c| (targets[b] - c).norm()).fold(f64::MAX, f64::min);
                da.partial_cmp(&db).expect("finite distances")
            })
            .expect("nonempty targets");
        centers.push(targets[far]);
    }
    let mut assign = vec![usize::MAX; k];
    for _ in 0..100 {
        let mut changed = false;
        for t in 0..k {
            let best = (0..centers.len())
                .min_by(|&a, &b| {
                    let da = (targets[t] - centers[a]).norm();
                    let db = (targets[t] - centers[b]).norm();
                    da.partial_cmp(&db).expect("finite distances")
                })
                .expect("nonempty centers");
            if assign[t] != best {
                assign[t] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for i in 0..e {
            let members: Vec<usize> = (0..k).filter(|&t| assign[t] == i).collect();
            if !members.is_empty() {
                centers[i] = centroid_of(targets, &members);
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); e];
    for t in 0..k {
        clusters[assign[t]].push(t);
    }
    for i in 0..e {
        if !clusters[i].is_empty() {
            centers[i] = centroid_of(targets, &clusters[i]);
        }
    }
    (clusters, centers)
}

/// Move targets out of over-capacity clusters: the targets farthest from
/// their centroid migrate to the nearest centroid with spare room, ties
/// broken by lower centroid index.
fn repair_capacity(
    targets: &[Vec2],
    clusters: &mut [Vec<usize>],
    centroids: &mut [Vec2],
    cap: usize,
) {
    let e = clusters.len();
    for i in 0..e {
        while clusters[i].len() > cap {
            let (pos, _) = clusters[i]
                .iter()
                .enumerate()
                .max_by(|(_, &a), (_, &b)| {
                    let da = (targets[a] - centroids[i]).norm();
                    let db = (targets[b] - centroids[i]).norm();
                    da.partial_cmp(&db).expect("finite")
                })
                .expect("nonempty");
            let t = clusters[i].remove(pos);
            let mut dest = usize::MAX;
            let mut best = f64::INFINITY;
            for j in 0..e {
                if j != i && clusters[j].len() < cap {
                    let d = (targets[t] - centroids[j]).norm();
                    if d < best - 1e-12 {
                        best = d;
                        dest = j;
                    }
                }
            }
            debug_assert!(dest != usize::MAX, "total capacity covers all targets");
            clusters[dest].push(t);
            centroids[dest] = centroid_of(targets, &clusters[dest]);
            if !clusters[i].is_empty() {
                centroids[i] = centroid_of(targets, &clusters[i]);
            }
        }
    }
}

/// Cluster targets under capacity and coverage, escalating the cluster count
/// from ceil(K/Z) up to K until both hold. Deterministic for a fixed seed.
pub fn vbsc_cluster(
    targets: &[Vec2],
    coverage: &SensingCoverage,
    z: usize,
    seed: u64,
) -> Result<ClusterAssignment, ClusterError> {
    let k = targets.len();
    if coverage.max_feasible_size() == 0 {
        return Err(ClusterError::SensingInfeasible);
    }
    let cap = z.min(coverage.max_feasible_size());
    let mut e = initial_cluster_count(k, cap);
    while e <= k {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (e as u64).wrapping_mul(0x9e37_79b9));
        let (mut clusters, mut centroids) = kmeans(targets, e, &mut rng);
        repair_capacity(targets, &mut clusters, &mut centroids, cap);
        let assignment = finish_assignment(k, clusters, centroids);
        if assignment.check(targets, coverage, z) {
            return Ok(assignment);
        }
        e += 1;
    }
    // Worst case: one hover point per target, directly overhead.
    let clusters: Vec<Vec<usize>> = (0..k).map(|t| vec![t]).collect();
    let centroids: Vec<Vec2> = targets.to_vec();
    Ok(finish_assignment(k, clusters, centroids))
}

fn finish_assignment(
    k: usize,
    clusters: Vec<Vec<usize>>,
    centroids: Vec<Vec2>,
) -> ClusterAssignment {
    let (clusters, centroids): (Vec<Vec<usize>>, Vec<Vec2>) = clusters
        .into_iter()
        .zip(centroids)
        .filter(|(c, _)| !c.is_empty())
        .unzip();
    let mut cluster_of = vec![0usize; k];
    for (i, cl) in clusters.iter().enumerate() {
        for &t in cl {
            cluster_of[t] = i;
        }
    }
    ClusterAssignment { count: clusters.len(), clusters, centroids, cluster_of }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{reference_params, reference_requirements};
    use approx::assert_relative_eq;

    fn coverage() -> SensingCoverage {
        SensingCoverage::from_scenario(&reference_params(), &reference_requirements())
    }

    #[test]
    fn count_is_ceiling() {
        assert_eq!(initial_cluster_count(15, 8), 2);
        assert_eq!(initial_cluster_count(8, 8), 1);
        assert_eq!(initial_cluster_count(56, 8), 7);
    }

    #[test]
    fn coincident_targets_collapse_to_one_cluster() {
        let p = Vec2::new(42.0, -7.0);
        let targets = vec![p, p, p];
        let out = vbsc_cluster(&targets, &coverage(), 8, 1).unwrap();
        assert_eq!(out.count, 1);
        assert_relative_eq!(out.centroids[0].x, p.x);
        assert_relative_eq!(out.centroids[0].y, p.y);
    }

    #[test]
    fn nine_in_a_tight_disc_split_by_capacity() {
        // Nine targets within a few meters: coverage is trivially satisfied,
        // the Z = 8 cap forces two clusters.
        let targets: Vec<Vec2> = (0..9)
            .map(|i| Vec2::new(100.0 + (i as f64) * 0.5, 200.0 + ((i * 3) % 5) as f64 * 0.4))
            .collect();
        let out = vbsc_cluster(&targets, &coverage(), 8, 7).unwrap();
        assert_eq!(out.count, 2);
        let cov = coverage();
        assert!(out.check(&targets, &cov, 8));
    }

    #[test]
    fn random_layouts_satisfy_capacity_and_coverage() {
        let cov = coverage();
        for seed in 0..40u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let targets: Vec<Vec2> = (0..15)
                .map(|_| Vec2::new(rng.random_range(50.0..250.0), rng.random_range(50.0..250.0)))
                .collect();
            let out = vbsc_cluster(&targets, &cov, 8, seed).unwrap();
            // Exhaustive audit of the invariants.
            assert!(out.check(&targets, &cov, 8), "seed {seed}: invariants violated");
            let total: usize = out.clusters.iter().map(|c| c.len()).sum();
            assert_eq!(total, 15);
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let targets: Vec<Vec2> = (0..12)
            .map(|i| Vec2::new((i * 37 % 11) as f64 * 20.0, (i * 53 % 7) as f64 * 30.0))
            .collect();
        let cov = coverage();
        let a = vbsc_cluster(&targets, &cov, 8, 5).unwrap();
        let b = vbsc_cluster(&targets, &cov, 8, 5).unwrap();
        assert_eq!(a.clusters, b.clusters);
        assert_eq!(a.centroids, b.centroids);
    }
}
