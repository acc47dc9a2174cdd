//! Ulam box-partition approximations of the Perron-Frobenius operator, used
//! as an independent check on fitted `P` matrices.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{BoxDomain, GridSpec, LatticeAxis};
use crate::error::{Error, Result};
use crate::spectral::EigenfunctionGrid;
use crate::systems::{integrate, Method, SnapshotSet, System};

/// Regular partition of a box into cells `[a, b)` per axis; the last cell on
/// each axis also takes its upper boundary. Cells are numbered row-major
/// (last axis fastest), matching [`GridSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxPartition {
    pub domain: BoxDomain,
    pub divisions: Vec<usize>,
}

impl BoxPartition {
    pub fn new(domain: BoxDomain, divisions: Vec<usize>) -> Result<Self> {
        let p = Self { domain, divisions };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.divisions.len() != self.domain.dim() || self.divisions.contains(&0) {
            return Err(Error::contract("one positive division count per axis required"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.divisions.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.divisions.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.domain.volume() / self.len() as f64
    }

    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut flat = 0;
        for (k, &n) in self.divisions.iter().enumerate() {
            let (lo, hi) = (self.domain.lo[k], self.domain.hi[k]);
            if !(x[k] >= lo && x[k] <= hi) {
                return None;
            }
            let i = (((x[k] - lo) / (hi - lo)) * n as f64).floor() as usize;
            flat = flat * n + i.min(n - 1);
        }
        Some(flat)
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for (k, &n) in self.divisions.iter().enumerate().rev() {
            idx[k] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn cell(&self, flat: usize) -> BoxDomain {
        let idx = self.unravel(flat);
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for (k, &i) in idx.iter().enumerate() {
            let w = (self.domain.hi[k] - self.domain.lo[k]) / self.divisions[k] as f64;
            lo.push(self.domain.lo[k] + i as f64 * w);
            hi.push(if i + 1 == self.divisions[k] {
                self.domain.hi[k]
            } else {
                self.domain.lo[k] + (i + 1) as f64 * w
            });
        }
        BoxDomain { lo, hi }
    }

    /// Lattice of cell centres.
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            axes: (0..self.dim())
                .map(|k| LatticeAxis {
                    min: self.domain.lo[k],
                    max: self.domain.hi[k],
                    count: self.divisions[k],
                })
                .collect(),
        }
    }

    /// Partition with `divisions[k] / factors[k]` cells per axis.
    pub fn coarsen(&self, factors: &[usize]) -> Result<BoxPartition> {
        if factors.len() != self.dim() || factors.iter().zip(&self.divisions).any(|(&f, &n)| f == 0 || n % f != 0) {
            return Err(Error::contract("coarsening factors must divide the divisions"));
        }
        BoxPartition::new(
            self.domain.clone(),
            self.divisions.iter().zip(factors).map(|(n, f)| n / f).collect(),
        )
    }

    /// Index of the coarse cell containing fine cell `flat`.
    pub fn parent(&self, flat: usize, factors: &[usize]) -> usize {
        self.unravel(flat)
            .iter()
            .zip(factors)
            .zip(&self.divisions)
            .fold(0, |acc, ((&i, &f), &n)| acc * (n / f) + i / f)
    }
}

/// Row-sparse Ulam transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlamMatrix {
    pub size: usize,
    /// Row `i`: `(j, count)` sorted by `j`.
    pub counts: Vec<Vec<(usize, u64)>>,
    /// Per row, samples that left the domain (sampling construction).
    pub leak: Vec<u64>,
    pub visited: Vec<bool>,
    /// Trajectory transitions discarded because an end point was outside the
    /// domain.
    pub dropped: usize,
}

impl UlamMatrix {
    fn from_counts(size: usize, map: BTreeMap<(usize, usize), u64>, leak: Vec<u64>, dropped: usize) -> Self {
        let mut counts = vec![Vec::new(); size];
        for ((i, j), c) in map {
            counts[i].push((j, c));
        }
        let visited = (0..size)
            .map(|i| !counts[i].is_empty() || leak[i] > 0)
            .collect();
        Self {
            size,
            counts,
            leak,
            visited,
            dropped,
        }
    }

    fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().map(|(_, c)| c).sum::<u64>() + self.leak[i]
    }

    /// Row `i` of `P'` as `(j, probability)`. Unvisited rows are the
    /// self-loop `e_i`; leaked mass makes a row sum below 1 (the remainder
    /// is [`Self::leak_probability`]).
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        if !self.visited[i] {
            return vec![(i, 1.0)];
        }
        let total = self.row_total(i) as f64;
        self.counts[i].iter().map(|&(j, c)| (j, c as f64 / total)).collect()
    }

    pub fn leak_probability(&self, i: usize) -> f64 {
        if !self.visited[i] {
            return 0.0;
        }
        self.leak[i] as f64 / self.row_total(i) as f64
    }

    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map_or(0, |k| self.counts[i][k].1)
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.row(i).iter().find(|(c, _)| *c == j).map_or(0.0, |(_, p)| *p)
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().flatten().map(|(_, c)| c).sum()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.size, self.size);
        for i in 0..self.size {
            for (j, p) in self.row(i) {
                m[(i, j)] = p;
            }
        }
        m
    }

    /// Counts merged onto `fine.coarsen(factors)`.
    pub fn coarsen(&self, fine: &BoxPartition, factors: &[usize]) -> Result<UlamMatrix> {
        let coarse = fine.coarsen(factors)?;
        let mut map = BTreeMap::new();
        let mut leak = vec![0; coarse.len()];
        for i in 0..self.size {
            let pi = fine.parent(i, factors);
            leak[pi] += self.leak[i];
            for &(j, c) in &self.counts[i] {
                *map.entry((pi, fine.parent(j, factors))).or_insert(0) += c;
            }
        }
        Ok(Self::from_counts(coarse.len(), map, leak, self.dropped))
    }

    /// Stationary distribution of the chain on visited boxes, by power
    /// iteration on the lazy chain `(I + P')/2` until the L1 change is below
    /// `tol`. Leak and moves into unvisited boxes are treated as lost mass
    /// and the iterate is renormalized each step, so for a leaking chain this
    /// is the quasi-stationary distribution. Returns probabilities per box
    /// and whether `tol` was reached.
    pub fn stationary(&self, tol: f64, max_iter: usize) -> (Vec<f64>, bool) {
        let n = self.size;
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                if !self.visited[i] {
                    return Vec::new();
                }
                let total = self.counts[i].iter().map(|(_, c)| c).sum::<u64>() + self.leak[i];
                self.counts[i]
                    .iter()
                    .filter(|&&(j, _)| self.visited[j])
                    .map(|&(j, c)| (j, c as f64 / total as f64))
                    .collect()
            })
            .collect();
        let nv = self.visited.iter().filter(|v| **v).count().max(1);
        let mut u: Vec<f64> = self
            .visited
            .iter()
            .map(|&v| if v { 1.0 / nv as f64 } else { 0.0 })
            .collect();
        let mut next = vec![0.0; n];
        for _ in 0..max_iter {
            next.iter_mut().zip(&u).for_each(|(a, b)| *a = 0.5 * b);
            for (i, row) in rows.iter().enumerate() {
                let ui = 0.5 * u[i];
                if ui == 0.0 {
                    continue;
                }
                for &(j, p) in row {
                    next[j] += ui * p;
                }
            }
            let s: f64 = next.iter().sum();
            if !(s > 0.0) {
                return (u, false);
            }
            next.iter_mut().for_each(|v| *v /= s);
            let diff: f64 = next.iter().zip(&u).map(|(a, b)| (a - b).abs()).sum();
            std::mem::swap(&mut u, &mut next);
            if diff < tol {
                return (u, true);
            }
        }
        (u, false)
    }
}

type CountMap = BTreeMap<(usize, usize), u64>;

fn merge(mut a: CountMap, b: CountMap) -> CountMap {
    for (k, v) in b {
        *a.entry(k).or_insert(0) += v;
    }
    a
}

/// Count transitions inside each trajectory; nothing is counted across
/// trajectory boundaries.
pub fn ulam_from_trajectories(trajectories: &[Vec<Vec<f64>>], partition: &BoxPartition) -> Result<UlamMatrix> {
    partition.validate()?;
    if trajectories.iter().all(|t| t.len() < 2) {
        return Err(Error::contract("need a trajectory with at least two states"));
    }
    let (map, dropped) = trajectories
        .par_iter()
        .flat_map(|t| t.par_windows(2))
        .fold(
            || (CountMap::new(), 0usize),
            |(mut map, mut dropped), w| {
                match (partition.locate(&w[0]), partition.locate(&w[1])) {
                    (Some(i), Some(j)) => *map.entry((i, j)).or_insert(0) += 1,
                    _ => dropped += 1,
                }
                (map, dropped)
            },
        )
        .reduce(|| (CountMap::new(), 0), |a, b| (merge(a.0, b.0), a.1 + b.1));
    if map.is_empty() {
        return Err(Error::EmptyData("every transition leaves the partition domain".into()));
    }
    Ok(UlamMatrix::from_counts(partition.len(), map, vec![0; partition.len()], dropped))
}

pub fn ulam_from_trajectory(trajectory: &[Vec<f64>], partition: &BoxPartition) -> Result<UlamMatrix> {
    ulam_from_trajectories(&[trajectory.to_vec()], partition)
}

/// Count the `(x, y)` rows of a snapshot set.
pub fn ulam_from_pairs(data: &SnapshotSet, partition: &BoxPartition) -> Result<UlamMatrix> {
    let trajectories: Vec<Vec<Vec<f64>>> = (0..data.len())
        .map(|m| {
            vec![
                data.x.row(m).iter().copied().collect(),
                data.y.row(m).iter().copied().collect(),
            ]
        })
        .collect();
    ulam_from_trajectories(&trajectories, partition)
}

/// Push `samples_per_box` uniform points of every box one step forward.
/// Each box draws from its own ChaCha stream of `seed`; landings outside
/// the domain (or diverged integrations) go to the leak column.
pub fn ulam_from_sampling(
    system: &System,
    dt: f64,
    method: Method,
    partition: &BoxPartition,
    samples_per_box: usize,
    seed: u64,
) -> Result<UlamMatrix> {
    partition.validate()?;
    if samples_per_box == 0 {
        return Err(Error::contract("samples_per_box must be at least 1"));
    }
    if system.dim() != partition.dim() {
        return Err(Error::contract("partition dimension differs from system dimension"));
    }
    if let System::Flow(_) = system {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::contract("dt must be positive"));
        }
    }
    let rows: Vec<(CountMap, u64)> = (0..partition.len())
        .into_par_iter()
        .map(|i| {
            let cell = partition.cell(i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut map = CountMap::new();
            let mut leak = 0;
            let mut x = vec![0.0; cell.dim()];
            let mut y = vec![0.0; cell.dim()];
            for _ in 0..samples_per_box {
                for (k, v) in x.iter_mut().enumerate() {
                    *v = if cell.lo[k] < cell.hi[k] {
                        rng.random_range(cell.lo[k]..cell.hi[k])
                    } else {
                        cell.lo[k]
                    };
                }
                let landed = match system {
                    System::Map(m) => {
                        m.step(&x, &mut y);
                        Some(&y)
                    }
                    System::Flow(f) => match integrate(f.as_ref(), &x, dt, 1, method) {
                        Ok(traj) => {
                            y.copy_from_slice(&traj[1]);
                            Some(&y)
                        }
                        Err(_) => None,
                    },
                };
                match landed.and_then(|y| partition.locate(y)) {
                    Some(j) => *map.entry((i, j)).or_insert(0) += 1,
                    None => leak += 1,
                }
            }
            (map, leak)
        })
        .collect();
    let mut map = CountMap::new();
    let mut leak = Vec::with_capacity(rows.len());
    for (m, l) in rows {
        map.extend(m);
        leak.push(l);
    }
    Ok(UlamMatrix::from_counts(partition.len(), map, leak, 0))
}

/// Average the lattice values of `density` over each partition box.
/// Every box must contain at least one lattice point.
pub fn cell_average(partition: &BoxPartition, density: &EigenfunctionGrid) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; partition.len()];
    let mut n = vec![0usize; partition.len()];
    for (f, z) in density.values.iter().enumerate() {
        if let Some(i) = partition.locate(&density.grid.point(f)) {
            sum[i] += z.re;
            n[i] += 1;
        }
    }
    if let Some(i) = n.iter().position(|&c| c == 0) {
        return Err(Error::contract(format!(
            "density lattice has no point in box {i}; use a lattice at least as fine as the partition"
        )));
    }
    Ok(sum.iter().zip(&n).map(|(s, &c)| s / c as f64).collect())
}

/// L1 distance between the Ulam stationary density and a lattice density,
/// both restricted to visited boxes and normalized to unit mass there.
pub fn compare_densities(ulam: &UlamMatrix, partition: &BoxPartition, density: &EigenfunctionGrid) -> Result<f64> {
    if ulam.size != partition.len() {
        return Err(Error::contract("Ulam matrix size differs from the partition"));
    }
    let (pi, _) = ulam.stationary(1e-12, 1_000_000);
    let avg = cell_average(partition, density)?;
    let vol = partition.cell_volume();
    let visited = |i: &usize| ulam.visited[*i];
    let mass: f64 = (0..ulam.size).filter(visited).map(|i| avg[i] * vol).sum();
    if !(mass > 0.0) {
        return Err(Error::EmptyData(
            "the density has no positive mass on the boxes visited by the Ulam chain".into(),
        ));
    }
    let ulam_mass: f64 = (0..ulam.size).filter(visited).map(|i| pi[i]).sum();
    Ok((0..ulam.size)
        .filter(visited)
        .map(|i| (pi[i] / ulam_mass / vol - avg[i] / mass).abs() * vol)
        .sum())
}
