use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Outcome of Lloyd's algorithm.
#[derive(Debug, Clone)]
pub struct KMeans {
    /// k×N
    pub centers: DMatrix<f64>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
    /// No assignment changed on the final iteration.
    pub converged: bool,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_history: Vec<f64>,
    /// Number of empty clusters re-seeded from the farthest point.
    pub reseeded: usize,
}

fn dist2(data: &DMatrix<f64>, m: usize, centers: &DMatrix<f64>, c: usize) -> f64 {
    let mut s = 0.0;
    for j in 0..data.ncols() {
        let d = data[(m, j)] - centers[(c, j)];
        s += d * d;
    }
    s
}

fn nearest(data: &DMatrix<f64>, m: usize, centers: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.nrows() {
        let d = dist2(data, m, centers, c);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations on the rows of `data`.
pub fn kmeans_centers(data: &DMatrix<f64>, k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    let (m, n) = data.shape();
    if k == 0 || k > m {
        return Err(Error::contract(format!("k = {k} must lie in 1..={m}")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("k-means data must be finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++
    let mut centers = DMatrix::zeros(k, n);
    let first = rng.random_range(0..m);
    centers.set_row(0, &data.row(first));
    let mut d2: Vec<f64> = (0..m).map(|i| dist2(data, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            if d2[chosen] == 0.0 {
                // roundoff landed on an already-chosen point
                chosen = (0..m).rev().find(|&i| d2[i] > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        centers.set_row(c, &data.row(pick));
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(dist2(data, i, &centers, c));
        }
    }

    let mut assignment = vec![usize::MAX; m];
    let mut history = Vec::new();
    let mut reseeded = 0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter.max(1) {
        iterations += 1;
        let nearest_all: Vec<(usize, f64)> = (0..m).into_par_iter().map(|i| nearest(data, i, &centers)).collect();
        let mut changed = false;
        let mut wcss = 0.0;
        for (i, &(c, d)) in nearest_all.iter().enumerate() {
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            wcss += d;
        }
        history.push(wcss);
        if !changed {
            converged = true;
            break;
        }

        let mut sums = DMatrix::<f64>::zeros(k, n);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for j in 0..n {
                sums[(c, j)] += data[(i, j)];
            }
        }
        let mut taken = vec![false; m];
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..n {
                    centers[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // farthest point from its current centre
                let far = (0..m)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| {
                        let da = dist2(data, a, &centers, assignment[a]);
                        let db = dist2(data, b, &centers, assignment[b]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("k <= m leaves a free point");
                taken[far] = true;
                centers.set_row(c, &data.row(far));
                reseeded += 1;
            }
        }
    }
    Ok(KMeans {
        centers,
        assignment,
        iterations,
        converged,
        wcss_history: history,
        reseeded,
    })
}
