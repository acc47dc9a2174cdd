//! Eigendecompositions of fitted operators and evaluation of Koopman and
//! Perron-Frobenius eigenfunctions on lattices.
//!
//! Koopman eigenfunctions are `φ_j(x) = Ψ(x) v_j` with `K v_j = λ_j v_j`;
//! P-F eigenfunctions are `φ̄_j(x) = Ψ(x) ū_jᵀ` with `ū_j P = λ_j ū_j`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::GridSpec;
use crate::error::{Error, Result};
use crate::linalg::{eig_general, C64};
use crate::model::TransferModel;

/// Distance from 1 within which an eigenvalue counts as "eigenvalue one".
pub const NEAR_ONE_TOL: f64 = 1e-6;
/// Density values below this count as negative mass.
pub const NEGATIVITY_TOL: f64 = 1e-6;

/// Eigenpairs of `K` (right) and `P` (left), sorted by [`crate::linalg::eig_order`].
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<C64>,
    /// Column `j` is `v_j`, unit norm.
    pub right_vectors: DMatrix<C64>,
    /// Row `j` is `ū_j`, unit norm.
    pub left_vectors_p: DMatrix<C64>,
    /// `‖K v_j − λ_j v_j‖`
    pub residuals: Vec<f64>,
    /// `‖ū_j P − λ_j ū_j‖`
    pub left_residuals: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Index of the eigenvalue closest to 1, if within [`NEAR_ONE_TOL`].
    pub fn index_of_one(&self) -> Option<usize> {
        self.eigenvalues
            .iter()
            .enumerate()
            .map(|(i, z)| (i, (z - C64::new(1.0, 0.0)).norm()))
            .filter(|(_, d)| *d <= NEAR_ONE_TOL)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

pub fn eig_sorted(model: &TransferModel) -> Result<Spectrum> {
    let k = &model.k;
    let p = model.similarity_of_k();
    let describe = |e: Error| {
        Error::Numerical(format!(
            "{e} (cond(Λ) = {:.3e}, ‖K‖ = {:.3e})",
            model.lambda_factor().condition(),
            k.norm()
        ))
    };
    let (values, right) = eig_general(k).map_err(describe)?;
    // left eigenvectors of P are right eigenvectors of Pᵀ; pair them with
    // the eigenvalues of K by nearest match
    let (pvalues, pvectors) = eig_general(&p.transpose()).map_err(describe)?;
    let n = values.len();
    let mut used = vec![false; n];
    let mut left = DMatrix::zeros(n, n);
    for (j, lambda) in values.iter().enumerate() {
        let i = (0..n)
            .filter(|&i| !used[i])
            .min_by(|&a, &b| (pvalues[a] - lambda).norm().total_cmp(&(pvalues[b] - lambda).norm()))
            .expect("as many P eigenvalues as K eigenvalues");
        used[i] = true;
        left.set_row(j, &pvectors.column(i).transpose());
    }

    let kc = k.map(|v| C64::new(v, 0.0));
    let pc = p.map(|v| C64::new(v, 0.0));
    let residuals = (0..n)
        .map(|j| {
            let v = right.column(j);
            (&kc * v - v * values[j]).norm()
        })
        .collect();
    let left_residuals = (0..n)
        .map(|j| {
            let u = left.row(j);
            (u * &pc - u * values[j]).norm()
        })
        .collect();
    Ok(Spectrum {
        eigenvalues: values,
        right_vectors: right,
        left_vectors_p: left,
        residuals,
        left_residuals,
    })
}

/// Which eigenfunction a grid holds; `index` is 0-based into the sorted
/// spectrum. Text form is `koopman:N` / `pf:N` with `N` 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Which {
    Koopman(usize),
    Pf(usize),
}

impl Which {
    pub fn index(&self) -> usize {
        match self {
            Which::Koopman(j) | Which::Pf(j) => *j,
        }
    }
}

impl fmt::Display for Which {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Which::Koopman(j) => write!(f, "koopman:{}", j + 1),
            Which::Pf(j) => write!(f, "pf:{}", j + 1),
        }
    }
}

impl FromStr for Which {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Lookup {
            what: "eigenfunction (expected koopman:N or pf:N, N ≥ 1)",
            name: s.to_string(),
        };
        let (kind, n) = s.split_once(':').ok_or_else(bad)?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        match kind.trim() {
            "koopman" => Ok(Which::Koopman(n - 1)),
            "pf" => Ok(Which::Pf(n - 1)),
            _ => Err(bad()),
        }
    }
}

/// Scaling applied to raw eigenfunction values: `normalized = scale · raw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub convention: Convention,
    pub scale_re: f64,
    pub scale_im: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// max |φ| = 1 over the evaluation points, attained at a real positive value
    MaxModulusUnitPhase,
    /// lattice Riemann sum equal to 1
    UnitMass,
}

#[derive(Debug, Clone)]
pub struct EigenfunctionGrid {
    pub grid: GridSpec,
    pub values: Vec<C64>,
    pub which: Which,
    pub eigenvalue: C64,
    pub normalization: Normalization,
    /// Share of absolute lattice mass carried by values below
    /// `-NEGATIVITY_TOL` (densities only).
    pub negative_mass_fraction: Option<f64>,
}

/// Rescale so the largest modulus is 1 and that value is real positive.
/// Ties go to the first point.
pub fn normalize_max_modulus(values: &mut [C64]) -> Normalization {
    let mut best = C64::new(0.0, 0.0);
    for z in values.iter() {
        if z.norm() > best.norm() {
            best = *z;
        }
    }
    let scale = if best.norm() > 0.0 {
        best.conj() / (best.norm() * best.norm())
    } else {
        C64::new(1.0, 0.0)
    };
    for z in values.iter_mut() {
        *z *= scale;
    }
    Normalization {
        convention: Convention::MaxModulusUnitPhase,
        scale_re: scale.re,
        scale_im: scale.im,
    }
}

fn dictionary_rows(model: &TransferModel, points: &[Vec<f64>]) -> Result<Vec<DVector<f64>>> {
    if points.is_empty() {
        return Err(Error::contract("no evaluation points"));
    }
    let dict = model.dictionary()?;
    points.par_iter().map(|x| dict.eval(x)).collect()
}

fn evaluate(psi: &[DVector<f64>], coef: &[C64]) -> Vec<C64> {
    psi.iter()
        .map(|row| row.iter().zip(coef).map(|(p, c)| c * *p).sum())
        .collect()
}

fn check_index(spectrum: &Spectrum, j: usize) -> Result<()> {
    if j >= spectrum.len() {
        return Err(Error::contract(format!(
            "eigen-index {j} out of range for {} eigenvalues",
            spectrum.len()
        )));
    }
    Ok(())
}

fn raw_values(model: &TransferModel, spectrum: &Spectrum, which: Which, points: &[Vec<f64>]) -> Result<Vec<C64>> {
    let j = which.index();
    check_index(spectrum, j)?;
    let coef: Vec<C64> = match which {
        Which::Koopman(_) => spectrum.right_vectors.column(j).iter().copied().collect(),
        Which::Pf(_) => spectrum.left_vectors_p.row(j).iter().copied().collect(),
    };
    Ok(evaluate(&dictionary_rows(model, points)?, &coef))
}

/// `Ψ(x) v_j` at each point, max-modulus normalized.
pub fn koopman_eigenfunction(
    model: &TransferModel,
    spectrum: &Spectrum,
    j: usize,
    points: &[Vec<f64>],
) -> Result<(Vec<C64>, Normalization)> {
    let mut values = raw_values(model, spectrum, Which::Koopman(j), points)?;
    let norm = normalize_max_modulus(&mut values);
    Ok((values, norm))
}

/// `Ψ(x) ū_jᵀ` at each point, max-modulus normalized.
pub fn pf_eigenfunction(
    model: &TransferModel,
    spectrum: &Spectrum,
    j: usize,
    points: &[Vec<f64>],
) -> Result<(Vec<C64>, Normalization)> {
    let mut values = raw_values(model, spectrum, Which::Pf(j), points)?;
    let norm = normalize_max_modulus(&mut values);
    Ok((values, norm))
}

pub fn eigenfunction_grid(
    model: &TransferModel,
    spectrum: &Spectrum,
    which: Which,
    grid: &GridSpec,
) -> Result<EigenfunctionGrid> {
    grid.validate()?;
    let (values, normalization) = match which {
        Which::Koopman(j) => koopman_eigenfunction(model, spectrum, j, &grid.points())?,
        Which::Pf(j) => pf_eigenfunction(model, spectrum, j, &grid.points())?,
    };
    Ok(EigenfunctionGrid {
        grid: grid.clone(),
        values,
        which,
        eigenvalue: spectrum.eigenvalues[which.index()],
        normalization,
        negative_mass_fraction: None,
    })
}

/// Scale `values` so their lattice sum times `cell_volume` is 1. The complex
/// scale also removes any global phase.
pub fn normalize_mass(values: &mut [C64], cell_volume: f64) -> Result<Normalization> {
    let total: C64 = values.iter().sum::<C64>() * cell_volume;
    if !(total.norm() > 0.0) || !total.re.is_finite() {
        return Err(Error::Spectral("density integrates to zero on the lattice".into()));
    }
    let scale = C64::new(1.0, 0.0) / total;
    for z in values.iter_mut() {
        *z *= scale;
    }
    Ok(Normalization {
        convention: Convention::UnitMass,
        scale_re: scale.re,
        scale_im: scale.im,
    })
}

/// `φ̄₁` on the lattice, normalized to unit mass.
pub fn invariant_density(model: &TransferModel, spectrum: &Spectrum, grid: &GridSpec) -> Result<EigenfunctionGrid> {
    grid.validate()?;
    let j = spectrum.index_of_one().ok_or_else(|| {
        let nearest = spectrum
            .eigenvalues
            .iter()
            .map(|z| (z - C64::new(1.0, 0.0)).norm())
            .fold(f64::INFINITY, f64::min);
        Error::Spectral(format!(
            "no eigenvalue within {NEAR_ONE_TOL:e} of 1 (closest is {nearest:.3e} away); \
             a Markov-constrained fit (NSDMD Case II or III) guarantees one"
        ))
    })?;
    let mut values = raw_values(model, spectrum, Which::Pf(j), &grid.points())?;
    let normalization = normalize_mass(&mut values, grid.cell_volume())?;
    let total_abs: f64 = values.iter().map(|z| z.re.abs()).sum();
    let negative = values
        .iter()
        .filter(|z| z.re < -NEGATIVITY_TOL)
        .fold(0.0, |acc, z| acc - z.re);
    Ok(EigenfunctionGrid {
        grid: grid.clone(),
        values,
        which: Which::Pf(j),
        eigenvalue: spectrum.eigenvalues[j],
        normalization,
        negative_mass_fraction: Some(if total_abs > 0.0 { negative / total_abs } else { 0.0 }),
    })
}

/// Left eigenvector of `P` for eigenvalue one, scaled to unit sum.
pub fn invariant_coefficients(spectrum: &Spectrum) -> Result<DVector<f64>> {
    let j = spectrum
        .index_of_one()
        .ok_or_else(|| Error::Spectral(format!("no eigenvalue within {NEAR_ONE_TOL:e} of 1")))?;
    let row = spectrum.left_vectors_p.row(j);
    let total: C64 = row.iter().sum();
    if !(total.norm() > 0.0) {
        return Err(Error::Spectral("eigenvalue-one left vector sums to zero".into()));
    }
    Ok(DVector::from_iterator(row.len(), row.iter().map(|z| (z / total).re)))
}
