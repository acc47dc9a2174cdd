#![allow(dead_code)]

use nalgebra::DMatrix;
use nsdmd::systems::{Horizon, SnapshotMeta, SnapshotSet};

pub fn snapshots(x: DMatrix<f64>, y: DMatrix<f64>) -> SnapshotSet {
    let meta = SnapshotMeta {
        system: "test".into(),
        seed: 0,
        dt: 1.0,
        n_init: x.nrows(),
        horizon: Horizon::Steps(1),
        method: None,
        warnings: Vec::new(),
    };
    SnapshotSet::new(x, y, 1.0, meta).unwrap()
}

/// Samples of a finite chain with states placed at `s + 0.5` on the line.
pub fn chain_pairs(t: &DMatrix<f64>, steps: usize, seed: u64) -> SnapshotSet {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = t.nrows();
    let mut s = 0;
    let mut path = vec![s];
    for _ in 0..steps {
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut next = n - 1;
        for j in 0..n {
            acc += t[(s, j)];
            if u < acc {
                next = j;
                break;
            }
        }
        s = next;
        path.push(s);
    }
    let x = DMatrix::from_fn(steps, 1, |i, _| path[i] as f64 + 0.5);
    let y = DMatrix::from_fn(steps, 1, |i, _| path[i + 1] as f64 + 0.5);
    snapshots(x, y)
}
