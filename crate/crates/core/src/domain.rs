//! Axis-aligned boxes and regular lattices over them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let d = Self { lo, hi };
        d.validate()?;
        Ok(d)
    }

    /// `[lo, hi]^dim`
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::contract("box bounds must be nonempty and equal length"));
        }
        for (l, h) in self.lo.iter().zip(&self.hi) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::contract(format!("degenerate box side [{l}, {h}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Half-open membership `[lo, hi)` on every axis.
    pub fn contains_half_open(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v < *h)
    }

    /// Smallest box holding every row of `points`.
    pub fn bounding(points: &nalgebra::DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::EmptyData("bounding box of zero points".into()));
        }
        let mut lo = vec![f64::INFINITY; points.ncols()];
        let mut hi = vec![f64::NEG_INFINITY; points.ncols()];
        for row in points.row_iter() {
            for (j, v) in row.iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
        for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
            if *h - *l <= 0.0 {
                let pad = 0.5 * l.abs().max(1.0) * 1e-6;
                *l -= pad;
                *h += pad;
            }
        }
        Self::new(lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl LatticeAxis {
    pub fn step(&self) -> f64 {
        (self.max - self.min) / self.count as f64
    }

    /// Cell-centre coordinate of lattice index `i`.
    pub fn point(&self, i: usize) -> f64 {
        self.min + (i as f64 + 0.5) * self.step()
    }
}

/// Regular lattice of cell centres; values are stored row-major (last axis
/// fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axes: Vec<LatticeAxis>,
}

impl GridSpec {
    pub fn new(axes: Vec<LatticeAxis>) -> Result<Self> {
        let g = Self { axes };
        g.validate()?;
        Ok(g)
    }

    pub fn over(domain: &BoxDomain, counts: &[usize]) -> Result<Self> {
        if counts.len() != domain.dim() {
            return Err(Error::contract("one count per axis required"));
        }
        Self::new(
            domain
                .lo
                .iter()
                .zip(&domain.hi)
                .zip(counts)
                .map(|((&min, &max), &count)| LatticeAxis { min, max, count })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::contract("grid needs at least one axis"));
        }
        for a in &self.axes {
            if a.count == 0 || !(a.min.is_finite() && a.max.is_finite() && a.min < a.max) {
                return Err(Error::contract(format!("bad lattice axis {a:?}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(LatticeAxis::step).product()
    }

    pub fn domain(&self) -> BoxDomain {
        BoxDomain {
            lo: self.axes.iter().map(|a| a.min).collect(),
            hi: self.axes.iter().map(|a| a.max).collect(),
        }
    }

    /// Multi-index of flat position `flat`.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            idx[k] = flat % a.count;
            flat /= a.count;
        }
        idx
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.point(i))
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|f| self.point(f)).collect()
    }
}
