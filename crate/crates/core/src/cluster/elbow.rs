use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, KMeansConfig, KMeansResult};
use crate::linalg::Matrix;
use crate::{seeds, Error, Result, Scalar};

/// Inertia curve over a range of cluster counts and the chosen elbow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElbowCurve {
    pub ks: Vec<usize>,
    pub inertias: Vec<f64>,
    pub chosen: usize,
}

/// Index into `ks` of the point farthest from the chord joining the first and
/// last points, after min-max normalizing both axes. Flat or straight curves
/// yield the first index.
pub fn elbow_index(ks: &[usize], inertias: &[f64]) -> usize {
    let n = ks.len().min(inertias.len());
    if n <= 2 {
        return 0;
    }
    let (kmin, kmax) = (ks[0] as f64, ks[n - 1] as f64);
    let imin = inertias[..n].iter().copied().fold(f64::INFINITY, f64::min);
    let imax = inertias[..n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if kmax <= kmin || imax - imin <= 0.0 || !imax.is_finite() {
        return 0;
    }
    let x: Vec<f64> = ks[..n].iter().map(|&k| (k as f64 - kmin) / (kmax - kmin)).collect();
    let y: Vec<f64> = inertias[..n].iter().map(|&v| (v - imin) / (imax - imin)).collect();
    let (dx, dy) = (x[n - 1] - x[0], y[n - 1] - y[0]);
    let len = (dx * dx + dy * dy).sqrt();
    let mut best = (0usize, 0.0f64);
    for i in 0..n {
        let dist = (dx * (y[0] - y[i]) - dy * (x[0] - x[i])).abs() / len;
        if dist > best.1 + 1e-12 {
            best = (i, dist);
        }
    }
    if best.1 <= 1e-9 {
        0
    } else {
        best.0
    }
}

/// Runs k-means for every `k` in `k_min..=k_max` and picks the elbow.
/// Returns the curve together with the clustering at the chosen `k`.
pub fn select_k_elbow<T: Scalar>(
    z: &Matrix<T>,
    k_min: usize,
    k_max: usize,
    config: &KMeansConfig,
    seed: u64,
) -> Result<(ElbowCurve, KMeansResult<T>)> {
    if k_min == 0 || k_min > k_max || k_max > z.rows() {
        return Err(Error::Precondition(format!(
            "k range {k_min}..={k_max} is invalid for {} points",
            z.rows()
        )));
    }
    let runs: Vec<KMeansResult<T>> = (k_min..=k_max)
        .into_par_iter()
        .map(|k| kmeans(z, k, config, seeds::derive(seed, "elbow", k as u64)))
        .collect::<Result<_>>()?;
    let ks: Vec<usize> = (k_min..=k_max).collect();
    let inertias: Vec<f64> = runs.iter().map(|r| r.inertia).collect();
    let idx = elbow_index(&ks, &inertias);
    let chosen = ks[idx];
    let result = runs.into_iter().nth(idx).expect("index within range");
    Ok((
        ElbowCurve {
            ks,
            inertias,
            chosen,
        },
        result,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_picks_smallest() {
        let ks: Vec<usize> = (2..=10).collect();
        let inertias: Vec<f64> = ks.iter().map(|&k| 100.0 - 5.0 * k as f64).collect();
        assert_eq!(elbow_index(&ks, &inertias), 0);
        assert_eq!(elbow_index(&ks, &vec![3.0; ks.len()]), 0);
        assert_eq!(elbow_index(&[4], &[1.0]), 0);
    }

    #[test]
    fn sharp_knee_is_found() {
        let ks: Vec<usize> = (2..=10).collect();
        let inertias = [100.0, 20.0, 18.0, 16.0, 14.0, 12.0, 10.0, 8.0, 6.0];
        assert_eq!(ks[elbow_index(&ks, &inertias)], 3);
    }

    #[test]
    fn single_value_range() {
        let z = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let (c, r) = select_k_elbow::<f64>(&z, 2, 2, &KMeansConfig::default(), 0).unwrap();
        assert_eq!(c.chosen, 2);
        assert_eq!(r.centroids.rows(), 2);
        assert!(select_k_elbow::<f64>(&z, 2, 4, &KMeansConfig::default(), 0).is_err());
    }
}
