use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{sq_dist, Matrix};
use crate::{seeds, Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    /// Independent seedings; the lowest final inertia wins.
    pub n_init: usize,
    pub max_iter: usize,
    /// Stop when the relative inertia decrease falls below this.
    pub tol: f64,
    /// Fail with an invariant error if inertia ever increases between steps.
    pub check_monotone: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            n_init: 3,
            max_iter: 300,
            tol: 1e-6,
            check_monotone: cfg!(debug_assertions),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult<T> {
    pub assignments: Vec<usize>,
    /// `k x d`; row `c` is the centroid of cluster `c`.
    pub centroids: Matrix<T>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning run.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// kmeans++ seeding followed by Lloyd iterations, with default settings.
pub fn kmeanspp_cluster<T: Scalar>(z: &Matrix<T>, k: usize, seed: u64) -> Result<KMeansResult<T>> {
    kmeans(z, k, &KMeansConfig::default(), seed)
}

pub fn kmeans<T: Scalar>(z: &Matrix<T>, k: usize, config: &KMeansConfig, seed: u64) -> Result<KMeansResult<T>> {
    let n = z.rows();
    if k == 0 || k > n {
        return Err(Error::Precondition(format!("cannot form {k} clusters from {n} points")));
    }
    let mut best: Option<KMeansResult<T>> = None;
    for run in 0..config.n_init.max(1) {
        let mut rng = seeds::rng(seeds::derive(seed, "kmeans", run as u64));
        let seeds = kmeanspp_seed(z, k, &mut rng);
        let r = lloyd(z, seeds, config)?;
        if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one run"))
}

/// D^2 sampling of `k` initial centroids.
pub fn kmeanspp_seed<T: Scalar, R: Rng>(z: &Matrix<T>, k: usize, rng: &mut R) -> Matrix<T> {
    let n = z.rows();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), z.row(first)).as_f64()).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Every remaining point coincides with a chosen one.
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(z.row(i), z.row(next)).as_f64());
        }
    }
    z.select_rows(&chosen)
}

fn assign<T: Scalar>(z: &Matrix<T>, centroids: &Matrix<T>, out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, a) in out.iter_mut().enumerate() {
        let row = z.row(i);
        let mut best = (0usize, f64::INFINITY);
        for c in 0..centroids.rows() {
            let d = sq_dist(row, centroids.row(c)).as_f64();
            if d < best.1 {
                best = (c, d);
            }
        }
        *a = best.0;
        inertia += best.1;
    }
    inertia
}

/// Means of the assigned points; an empty cluster keeps its old centroid.
fn update<T: Scalar>(z: &Matrix<T>, assignments: &[usize], centroids: &mut Matrix<T>) {
    let k = centroids.rows();
    let mut sums = Matrix::<T>::zeros(k, z.cols());
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, &v) in sums.row_mut(a).iter_mut().zip(z.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = T::one() / T::of_usize(counts[c]);
            for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
    }
}

/// Lloyd iterations from the given initial centroids.
pub fn lloyd<T: Scalar>(z: &Matrix<T>, mut centroids: Matrix<T>, config: &KMeansConfig) -> Result<KMeansResult<T>> {
    let n = z.rows();
    let mut assignments = vec![usize::MAX; n];
    let mut inertia = assign(z, &centroids, &mut assignments);
    let mut trace = vec![inertia];
    let mut iterations = 0;
    let mut next = assignments.clone();
    while iterations < config.max_iter {
        iterations += 1;
        let previous = centroids.clone();
        update(z, &assignments, &mut centroids);
        let current = assign(z, &centroids, &mut next);
        trace.push(current);
        // Rounding in the mean can move a converged inertia by a few ulps.
        if config.check_monotone && current > inertia * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::invariant(
                "lloyd",
                format!("inertia rose from {inertia} to {current} at iteration {iterations}"),
            ));
        }
        if current > inertia {
            // Keep the better state so the reported inertia never increases.
            centroids = previous;
            break;
        }
        let unchanged = next == assignments;
        let rel = if inertia > 0.0 { (inertia - current) / inertia } else { 0.0 };
        std::mem::swap(&mut assignments, &mut next);
        inertia = current;
        if unchanged || rel < config.tol {
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia,
        trace,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Matrix<f64> {
        let mut rng = seeds::rng(4);
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut rows = Vec::new();
        for c in centers {
            for _ in 0..20 {
                rows.push([c[0] + rng.random_range(-1.0..1.0), c[1] + rng.random_range(-1.0..1.0)]);
            }
        }
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let z = Matrix::from_rows(&[[0.0], [1.0], [5.0], [7.5]]).unwrap();
        let r = kmeanspp_cluster::<f64>(&z, 4, 3).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let z = blobs();
        let r = kmeanspp_cluster(&z, 1, 0).unwrap();
        let mean = z.column_means();
        assert!((r.centroids[(0, 0)] - mean[0]).abs() < 1e-12);
        let total: f64 = z.row_iter().map(|row| sq_dist(row, &mean)).sum();
        assert!((r.inertia - total).abs() < 1e-9 * total);
    }

    #[test]
    fn trace_is_monotone_and_blobs_are_split() {
        let z = blobs();
        let cfg = KMeansConfig {
            check_monotone: true,
            ..KMeansConfig::default()
        };
        let r = kmeans(&z, 3, &cfg, 8).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        for b in 0..3 {
            let first = r.assignments[b * 20];
            assert!(r.assignments[b * 20..(b + 1) * 20].iter().all(|&a| a == first));
        }
    }

    #[test]
    fn duplicate_points_still_seed() {
        let z = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]).unwrap();
        let r = kmeanspp_cluster::<f64>(&z, 3, 1).unwrap();
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn too_many_clusters_rejected() {
        let z = Matrix::<f64>::zeros(2, 2);
        assert!(kmeanspp_cluster(&z, 3, 0).is_err());
    }
}
