//! Lyapunov measures from a fitted transfer matrix: `ū = m (I − P₁)⁻¹`,
//! with `P₁` the restriction of `P` to the complement of an attractor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spectral_radius;
use crate::model::TransferModel;
use crate::spectral::{invariant_coefficients, Spectrum};

pub const DEFAULT_ATTRACTOR_THRESHOLD: f64 = 0.1;
/// `P₁` counts as transient only below this spectral radius.
const RADIUS_MARGIN: f64 = 1e-8;
const NEGATIVITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovResult {
    pub attractor_indices: Vec<usize>,
    pub complement_indices: Vec<usize>,
    pub sub_spectral_radius: f64,
    /// One weight per complement index; empty unless converged.
    pub measure: Vec<f64>,
    /// `max |ū − m − ū P₁|`
    pub residual: Option<f64>,
    pub converged: bool,
}

/// Indices whose invariant-density coefficient exceeds
/// `threshold · max coefficient`.
pub fn identify_attractor(spectrum: &Spectrum, threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::contract("attractor threshold must lie in (0, 1)"));
    }
    let u = invariant_coefficients(spectrum)?;
    let top = u.max();
    let picked: Vec<usize> = (0..u.len()).filter(|&i| u[i] > threshold * top).collect();
    if picked.is_empty() || !(top > 0.0) {
        return Err(Error::Threshold(format!(
            "no invariant-density coefficient exceeds {threshold} of the maximum"
        )));
    }
    Ok(picked)
}

pub fn lyapunov_measure(model: &TransferModel, attractor: &[usize], source_mass: Option<&[f64]>) -> Result<LyapunovResult> {
    lyapunov_measure_p(&model.p, attractor, source_mass)
}

/// As [`lyapunov_measure`] for an explicit `P`. `source_mass` defaults to
/// all ones on the complement.
pub fn lyapunov_measure_p(p: &DMatrix<f64>, attractor: &[usize], source_mass: Option<&[f64]>) -> Result<LyapunovResult> {
    let n = p.nrows();
    if !p.is_square() {
        return Err(Error::contract("P must be square"));
    }
    let mut in_attractor = vec![false; n];
    for &i in attractor {
        if i >= n {
            return Err(Error::contract(format!("attractor index {i} out of range for K = {n}")));
        }
        in_attractor[i] = true;
    }
    let complement: Vec<usize> = (0..n).filter(|&i| !in_attractor[i]).collect();
    if attractor.is_empty() || complement.is_empty() {
        return Err(Error::contract("attractor must be a nonempty proper subset of the indices"));
    }
    let c = complement.len();
    let m = match source_mass {
        Some(m) => {
            if m.len() != c || m.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::contract(format!(
                    "source mass needs {c} nonnegative finite weights"
                )));
            }
            DVector::from_column_slice(m)
        }
        None => DVector::from_element(c, 1.0),
    };
    let p1 = DMatrix::from_fn(c, c, |a, b| p[(complement[a], complement[b])]);
    let radius = spectral_radius(&p1)?;
    let attractor_indices: Vec<usize> = (0..n).filter(|&i| in_attractor[i]).collect();
    let mut result = LyapunovResult {
        attractor_indices,
        complement_indices: complement,
        sub_spectral_radius: radius,
        measure: Vec::new(),
        residual: None,
        converged: false,
    };
    if radius >= 1.0 - RADIUS_MARGIN {
        return Ok(result);
    }
    // ū (I − P₁) = m  ⇔  (I − P₁)ᵀ ūᵀ = mᵀ
    let system = (DMatrix::identity(c, c) - &p1).transpose();
    let Some(u) = system.lu().solve(&m) else {
        return Ok(result);
    };
    let residual = (&u - &m - p1.transpose() * &u).amax();
    result.residual = Some(residual);
    if u.iter().all(|v| *v >= -NEGATIVITY_TOL) {
        result.measure = u.iter().copied().collect();
        result.converged = true;
    }
    Ok(result)
}
