//! Neighbor-graph layout: exact k-NN, fuzzy simplicial weights, spectral
//! initialization and attraction/repulsion SGD with negative sampling.

use rand::Rng;
use rayon::prelude::*;

use crate::linalg::{dot, orthonormalize_columns, sq_dist, symmetric_eigen, Matrix};
use crate::{seeds, Error, Result, Scalar};

/// Curve parameters of the low-dimensional similarity `1 / (1 + a d^(2b))`
/// for a minimum distance of 0.1 and unit spread.
const CURVE_A: f64 = 1.576_943_460_405_378;
const CURVE_B: f64 = 0.895_060_878_724_307_3;
const NEGATIVE_SAMPLES: usize = 5;
const GRADIENT_CLIP: f64 = 4.0;
const SPECTRAL_ITERATIONS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphParams {
    pub k_nn: usize,
    pub dim: usize,
    pub epochs: usize,
    pub seed: u64,
}

/// Undirected weighted edge list; `i < j` for every edge.
#[derive(Clone, Debug, PartialEq)]
pub struct FuzzyGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

/// Indices and distances of the `k` nearest other points of every row,
/// nearest first; ties go to the lower index.
pub fn knn<T: Scalar>(y: &Matrix<T>, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = y.rows();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = y.row(i);
            let mut d: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, sq_dist(yi, y.row(j)).as_f64()))
                .collect();
            let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
            if k < d.len() {
                d.select_nth_unstable_by(k, cmp);
                d.truncate(k);
            }
            d.sort_by(cmp);
            d.into_iter().map(|(j, s)| (j, s.sqrt())).collect()
        })
        .collect()
}

/// Bandwidth `sigma` with `sum_j exp(-max(0, d_j - rho) / sigma) = target`.
pub fn smooth_bandwidth(distances: &[f64], rho: f64, target: f64) -> f64 {
    let mean = distances.iter().sum::<f64>() / distances.len().max(1) as f64;
    let (mut lo, mut hi, mut mid) = (0.0f64, f64::INFINITY, 1.0f64);
    for _ in 0..64 {
        let s: f64 = distances.iter().map(|&d| (-(d - rho).max(0.0) / mid).exp()).sum();
        if (s - target).abs() < 1e-5 {
            break;
        }
        if s > target {
            hi = mid;
            mid = 0.5 * (lo + hi);
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { 0.5 * (lo + hi) };
        }
    }
    mid.max(1e-3 * mean).max(f64::MIN_POSITIVE)
}

/// Fuzzy union of the directed membership strengths of the k-NN graph.
pub fn fuzzy_graph(neighbors: &[Vec<(usize, f64)>], k_nn: usize) -> FuzzyGraph {
    let n = neighbors.len();
    let target = (k_nn as f64).log2();
    let mut directed = std::collections::BTreeMap::<(usize, usize), f64>::new();
    for (i, nb) in neighbors.iter().enumerate() {
        if nb.is_empty() {
            continue;
        }
        let rho = nb[0].1;
        let ds: Vec<f64> = nb.iter().map(|&(_, d)| d).collect();
        let sigma = smooth_bandwidth(&ds, rho, target);
        for &(j, d) in nb {
            directed.insert((i, j), (-(d - rho).max(0.0) / sigma).exp());
        }
    }
    let mut edges = Vec::new();
    for (&(i, j), &w) in &directed {
        if i < j {
            let wt = directed.get(&(j, i)).copied().unwrap_or(0.0);
            edges.push((i, j, w + wt - w * wt));
        } else if !directed.contains_key(&(j, i)) {
            edges.push((j, i, w));
        }
    }
    edges.sort_by_key(|e| (e.0, e.1));
    FuzzyGraph { n, edges }
}

/// Leading non-trivial eigenvectors of the normalized adjacency, i.e. the
/// smallest non-trivial eigenvectors of the normalized Laplacian.
pub fn spectral_layout<T: Scalar>(graph: &FuzzyGraph, dim: usize, seed: u64) -> Result<Matrix<T>> {
    let n = graph.n;
    let mut degree = vec![0.0f64; n];
    for &(i, j, w) in &graph.edges {
        degree[i] += w;
        degree[j] += w;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let norm_edges: Vec<(usize, usize, f64)> =
        graph.edges.iter().map(|&(i, j, w)| (i, j, w * inv_sqrt[i] * inv_sqrt[j])).collect();
    // Applies I + D^-1/2 W D^-1/2, whose spectrum lies in [0, 2].
    let apply = |x: &Matrix<f64>| -> Matrix<f64> {
        let mut out = x.clone();
        for &(i, j, w) in &norm_edges {
            for c in 0..x.cols() {
                out[(i, c)] += w * x[(j, c)];
                out[(j, c)] += w * x[(i, c)];
            }
        }
        out
    };
    let m = (dim + 1).min(n);
    let mut rng = seeds::rng(seeds::derive(seed, "spectral", 0));
    let mut x = Matrix::from_vec(n, m, (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    orthonormalize_columns(&mut x);
    for _ in 0..SPECTRAL_ITERATIONS {
        x = apply(&x);
        orthonormalize_columns(&mut x);
    }
    let ax = apply(&x);
    let mut h = Matrix::zeros(m, m);
    let xt = x.transpose();
    let axt = ax.transpose();
    for a in 0..m {
        for b in 0..m {
            h[(a, b)] = 0.5 * (dot(xt.row(a), axt.row(b)) + dot(xt.row(b), axt.row(a)));
        }
    }
    let eig = symmetric_eigen(&h)?;
    let ritz = x.matmul(&eig.vectors)?;
    let mut out = Matrix::zeros(n, dim);
    let usable = m.saturating_sub(1).min(dim);
    for i in 0..n {
        for c in 0..usable {
            out[(i, c)] = T::of(ritz[(i, c + 1)]);
        }
        for c in usable..dim {
            out[(i, c)] = T::of(rng.random_range(-1e-3..1e-3));
        }
    }
    let max = out.as_slice().iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if max > T::zero() {
        let scale = T::of(10.0) / max;
        for i in 0..n {
            for v in out.row_mut(i) {
                *v = *v * scale + T::of(rng.random_range(-1e-4..1e-4));
            }
        }
    }
    Ok(out)
}

/// Stochastic layout optimization of `z` over the fuzzy graph.
pub fn optimize_layout<T: Scalar>(z: &mut Matrix<T>, graph: &FuzzyGraph, epochs: usize, seed: u64) {
    if graph.edges.is_empty() || epochs == 0 {
        return;
    }
    let n = z.rows();
    let dim = z.cols();
    let w_max = graph.edges.iter().map(|e| e.2).fold(0.0, f64::max);
    let active: Vec<(usize, usize, f64)> = graph
        .edges
        .iter()
        .filter(|e| e.2 >= w_max / epochs as f64)
        .map(|&(i, j, w)| (i, j, w_max / w))
        .collect();
    let mut next: Vec<f64> = active.iter().map(|e| e.2).collect();
    let a = T::of(CURVE_A);
    let b = T::of(CURVE_B);
    let clip = T::of(GRADIENT_CLIP);
    let two = T::of(2.0);
    let mut rng = seeds::rng(seeds::derive(seed, "layout", 0));
    let mut delta = vec![T::zero(); dim];
    for epoch in 0..epochs {
        let alpha = T::of(1.0 - epoch as f64 / epochs as f64);
        let now = (epoch + 1) as f64;
        for (e, &(i, j, eps)) in active.iter().enumerate() {
            if next[e] > now {
                continue;
            }
            next[e] += eps;
            let d2 = diff_sq(z, i, j, &mut delta);
            if d2 > T::zero() {
                let pb = d2.powf(b);
                let coef = -two * a * b * (pb / d2) / (a * pb + T::one());
                for (c, dc) in delta.iter().enumerate() {
                    let g = (coef * *dc).max(-clip).min(clip) * alpha;
                    z[(i, c)] += g;
                    z[(j, c)] -= g;
                }
            }
            for _ in 0..NEGATIVE_SAMPLES {
                let k = rng.random_range(0..n);
                if k == i {
                    continue;
                }
                let d2 = diff_sq(z, i, k, &mut delta);
                if d2 > T::zero() {
                    let coef = two * b / ((T::of(0.001) + d2) * (a * d2.powf(b) + T::one()));
                    for (c, dc) in delta.iter().enumerate() {
                        let g = (coef * *dc).max(-clip).min(clip) * alpha;
                        z[(i, c)] += g;
                    }
                } else {
                    for c in 0..dim {
                        z[(i, c)] += clip * alpha;
                    }
                }
            }
        }
    }
}

fn diff_sq<T: Scalar>(z: &Matrix<T>, i: usize, j: usize, delta: &mut [T]) -> T {
    let (zi, zj) = (z.row(i), z.row(j));
    let mut s = T::zero();
    for ((d, &a), &b) in delta.iter_mut().zip(zi).zip(zj) {
        *d = a - b;
        s += *d * *d;
    }
    s
}

/// Embeds the rows of `y` into `params.dim` dimensions.
pub fn neighbor_embed<T: Scalar>(y: &Matrix<T>, params: &GraphParams) -> Result<Matrix<T>> {
    let n = y.rows();
    if params.k_nn < 2 {
        return Err(Error::Config("neighbor count must be at least 2".into()));
    }
    if n <= params.k_nn {
        return Err(Error::Precondition(format!(
            "graph embedding of {n} points needs more than {} points",
            params.k_nn
        )));
    }
    let neighbors = knn(y, params.k_nn);
    let graph = fuzzy_graph(&neighbors, params.k_nn);
    let mut z = spectral_layout(&graph, params.dim, params.seed)?;
    optimize_layout(&mut z, &graph, params.epochs, params.seed);
    if !z.is_finite() {
        return Err(Error::invariant("neighbor_embed", "layout diverged"));
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_hits_target_sum() {
        let d = [0.5, 0.7, 0.9, 1.4, 2.0, 2.1];
        let target = (d.len() as f64).log2();
        let s = smooth_bandwidth(&d, 0.5, target);
        let sum: f64 = d.iter().map(|&x| (-(x - 0.5f64).max(0.0) / s).exp()).sum();
        assert!((sum - target).abs() < 1e-4, "{sum} vs {target}");
    }

    #[test]
    fn knn_excludes_self_and_sorts() {
        let y = Matrix::from_rows(&[[0.0], [1.0], [3.0], [6.0]]).unwrap();
        let nb = knn::<f64>(&y, 2);
        assert_eq!(nb[0].iter().map(|e| e.0).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(nb[3].iter().map(|e| e.0).collect::<Vec<_>>(), vec![2, 1]);
    }

    #[test]
    fn fuzzy_union_is_symmetric_and_bounded() {
        let y = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0], [6.0, 5.0]]).unwrap();
        let g = fuzzy_graph(&knn::<f64>(&y, 2), 2);
        for &(i, j, w) in &g.edges {
            assert!(i < j);
            assert!(w > 0.0 && w <= 1.0);
        }
    }

    #[test]
    fn minimal_point_count_gives_complete_graph() {
        let y = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.2], [0.3, 1.0], [2.0, 2.0]]).unwrap();
        let p = GraphParams {
            k_nn: 3,
            dim: 2,
            epochs: 20,
            seed: 1,
        };
        let nb = knn::<f64>(&y, 3);
        assert_eq!(fuzzy_graph(&nb, 3).edges.len(), 6);
        assert_eq!(neighbor_embed(&y, &p).unwrap().cols(), 2);
        let small = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        assert!(neighbor_embed::<f64>(&small, &p).is_err());
    }
}
