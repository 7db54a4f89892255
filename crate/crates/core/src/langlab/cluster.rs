//! K-means, silhouette scoring, and Procrustes alignment.

use rand::Rng;

use super::pmi::Matrix;
use super::svd::svd;
use crate::rngstream;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with random restarts; deterministic given the seed.
/// Returns per-point cluster labels of the best (lowest within-cluster sum
/// of squares) run.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    if n == 0 || k == 0 {
        return vec![];
    }
    if n <= k {
        return (0..n).collect();
    }
    let dim = points[0].len();
    let mut best_labels = vec![0; n];
    let mut best_score = f64::INFINITY;

    for restart in 0..restarts.max(1) {
        let mut rng = rngstream::substream(seed, "kmeans", &[restart as u64]);
        // Distinct initial centers.
        let mut chosen: Vec<usize> = Vec::with_capacity(k);
        while chosen.len() < k {
            let c = rng.gen_range(0..n);
            if !chosen.contains(&c) {
                chosen.push(c);
            }
        }
        let mut centers: Vec<Vec<f64>> = chosen.iter().map(|&c| points[c].clone()).collect();
        let mut labels = vec![0usize; n];
        for _ in 0..100 {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (c, center) in centers.iter().enumerate() {
                    let d = sq_dist(p, center);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                if labels[i] != best {
                    labels[i] = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = points
                    .iter()
                    .zip(&labels)
                    .filter(|(_, l)| **l == c)
                    .map(|(p, _)| p)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                for d in 0..dim {
                    center[d] = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                }
            }
        }
        let score: f64 = points
            .iter()
            .zip(&labels)
            .map(|(p, l)| sq_dist(p, &centers[*l]))
            .sum();
        if score < best_score {
            best_score = score;
            best_labels = labels;
        }
    }
    best_labels
}

/// Mean silhouette score over all points (Euclidean distances); points in
/// singleton clusters contribute 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    debug_assert_eq!(labels.len(), n);
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i];
        let own_size = labels.iter().filter(|l| **l == own).count();
        if own_size <= 1 {
            continue; // contributes 0
        }
        let mut a = 0.0;
        let mut b = f64::INFINITY;
        for &class in &classes {
            let members: Vec<usize> = (0..n)
                .filter(|&j| labels[j] == class && j != i)
                .collect();
            if members.is_empty() {
                continue;
            }
            let mean_d = members
                .iter()
                .map(|&j| sq_dist(&points[i], &points[j]).sqrt())
                .sum::<f64>()
                / members.len() as f64;
            if class == own {
                a = mean_d;
            } else if mean_d < b {
                b = mean_d;
            }
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Frobenius distance between two equally-shaped row-point sets after the
/// best orthogonal alignment of `a` onto `b`.
pub fn procrustes_distance(a: &Matrix, b: &Matrix) -> f64 {
    debug_assert_eq!((a.rows, a.cols), (b.rows, b.cols));
    let k = a.cols;
    // m = a^T b, rotation = u v^T from m's SVD.
    let mut m = Matrix::zeros(k, k);
    for r in 0..k {
        for c in 0..k {
            let mut acc = 0.0;
            for i in 0..a.rows {
                acc += a.get(i, r) * b.get(i, c);
            }
            m.set(r, c, acc);
        }
    }
    let s = svd(&m, 10_000).expect("tiny matrix converges");
    let mut rot = Matrix::zeros(k, k);
    for r in 0..k {
        for c in 0..k {
            let mut acc = 0.0;
            for j in 0..k {
                acc += s.u.get(r, j) * s.v.get(c, j);
            }
            rot.set(r, c, acc);
        }
    }
    let mut dist2 = 0.0;
    for i in 0..a.rows {
        for c in 0..k {
            let mut aligned = 0.0;
            for j in 0..k {
                aligned += a.get(i, j) * rot.get(j, c);
            }
            let diff = aligned - b.get(i, c);
            dist2 += diff * diff;
        }
    }
    dist2.sqrt()
}
