//! Observable dictionaries Ψ = (ψ_1, …, ψ_K) and the empirical matrices built
//! from them.

pub(crate) mod gram;
mod kmeans;

pub use gram::{gram_matrices, lambda_matrix, GramOptions, GramPair, LambdaMode, Ridge};
pub use kmeans::{kmeans_centers, KMeans};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RbfExponent {
    /// `exp(-|x - c|^2 / σ^2)`
    #[default]
    Squared,
    /// `exp(-|x - c| / σ^2)`
    Absolute,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DictionaryKind {
    GaussianRbf {
        /// K×N, one centre per row.
        centers: DMatrix<f64>,
        sigma: f64,
        exponent: RbfExponent,
    },
    /// Indicator functions of half-open boxes `[lo, hi)`.
    IndicatorBoxes { boxes: Vec<BoxDomain> },
    /// ψ_i(x) = x_i.
    Coordinates,
    /// All monomials of total degree ≤ `degree`, constant first.
    Monomials { degree: u32, exponents: Vec<Vec<u32>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    kind: DictionaryKind,
    state_dim: usize,
}

impl Dictionary {
    pub fn gaussian_rbf(centers: DMatrix<f64>, sigma: f64, exponent: RbfExponent) -> Result<Self> {
        if centers.nrows() == 0 || centers.ncols() == 0 {
            return Err(Error::contract("RBF dictionary needs at least one centre"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::contract("RBF bandwidth must be positive"));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("RBF centres must be finite"));
        }
        let state_dim = centers.ncols();
        Ok(Self {
            kind: DictionaryKind::GaussianRbf {
                centers,
                sigma,
                exponent,
            },
            state_dim,
        })
    }

    pub fn indicator_boxes(boxes: Vec<BoxDomain>) -> Result<Self> {
        let state_dim = boxes
            .first()
            .map(BoxDomain::dim)
            .ok_or_else(|| Error::contract("indicator dictionary needs at least one box"))?;
        for b in &boxes {
            b.validate()?;
            if b.dim() != state_dim {
                return Err(Error::contract("indicator boxes differ in dimension"));
            }
        }
        Ok(Self {
            kind: DictionaryKind::IndicatorBoxes { boxes },
            state_dim,
        })
    }

    pub fn coordinates(state_dim: usize) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::contract("state dimension must be positive"));
        }
        Ok(Self {
            kind: DictionaryKind::Coordinates,
            state_dim,
        })
    }

    pub fn monomials(state_dim: usize, degree: u32) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::contract("state dimension must be positive"));
        }
        let mut exponents = Vec::new();
        for total in 0..=degree {
            push_compositions(state_dim, total, &mut Vec::new(), &mut exponents);
        }
        Ok(Self {
            kind: DictionaryKind::Monomials { degree, exponents },
            state_dim,
        })
    }

    /// Regular grid of RBF centres at the cell centres of `counts` cells per
    /// axis over `domain`.
    pub fn rbf_on_grid(domain: &BoxDomain, counts: &[usize], sigma: f64, exponent: RbfExponent) -> Result<Self> {
        let grid = crate::domain::GridSpec::over(domain, counts)?;
        let pts = grid.points();
        let centers = DMatrix::from_fn(pts.len(), domain.dim(), |i, j| pts[i][j]);
        Self::gaussian_rbf(centers, sigma, exponent)
    }

    pub fn kind(&self) -> &DictionaryKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            DictionaryKind::GaussianRbf { .. } => "gaussian_rbf",
            DictionaryKind::IndicatorBoxes { .. } => "indicator_boxes",
            DictionaryKind::Coordinates => "coordinates",
            DictionaryKind::Monomials { .. } => "monomials",
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Basis size K.
    pub fn len(&self) -> usize {
        match &self.kind {
            DictionaryKind::GaussianRbf { centers, .. } => centers.nrows(),
            DictionaryKind::IndicatorBoxes { boxes } => boxes.len(),
            DictionaryKind::Coordinates => self.state_dim,
            DictionaryKind::Monomials { exponents, .. } => exponents.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether every basis function is nonnegative everywhere.
    pub fn assumption1(&self) -> bool {
        matches!(
            self.kind,
            DictionaryKind::GaussianRbf { .. } | DictionaryKind::IndicatorBoxes { .. }
        )
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::contract(format!(
                "state has dimension {}, dictionary expects {}",
                x.len(),
                self.state_dim
            )));
        }
        if out.len() != self.len() {
            return Err(Error::contract("output buffer has wrong length"));
        }
        match &self.kind {
            DictionaryKind::GaussianRbf {
                centers,
                sigma,
                exponent,
            } => {
                let s2 = sigma * sigma;
                for (i, o) in out.iter_mut().enumerate() {
                    let mut d2 = 0.0;
                    for (j, xj) in x.iter().enumerate() {
                        let d = xj - centers[(i, j)];
                        d2 += d * d;
                    }
                    let r = match exponent {
                        RbfExponent::Squared => d2,
                        RbfExponent::Absolute => d2.sqrt(),
                    };
                    *o = (-r / s2).exp();
                }
            }
            DictionaryKind::IndicatorBoxes { boxes } => {
                for (o, b) in out.iter_mut().zip(boxes) {
                    *o = if b.contains_half_open(x) { 1.0 } else { 0.0 };
                }
            }
            DictionaryKind::Coordinates => out.copy_from_slice(x),
            DictionaryKind::Monomials { exponents, .. } => {
                for (o, e) in out.iter_mut().zip(exponents) {
                    *o = x.iter().zip(e).map(|(v, &p)| v.powi(p as i32)).product();
                }
            }
        }
        Ok(())
    }

    /// Ψ(x) as a K-vector.
    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.len());
        self.eval_into(x, out.as_mut_slice())?;
        Ok(out)
    }

    /// Feature matrix with row `m` equal to Ψ(row `m` of `states`).
    pub fn eval_rows(&self, states: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if states.ncols() != self.state_dim {
            return Err(Error::contract(format!(
                "states have dimension {}, dictionary expects {}",
                states.ncols(),
                self.state_dim
            )));
        }
        let k = self.len();
        let rows: Vec<Vec<f64>> = (0..states.nrows())
            .into_par_iter()
            .map(|m| {
                let x: Vec<f64> = states.row(m).iter().copied().collect();
                let mut out = vec![0.0; k];
                self.eval_into(&x, &mut out).expect("dimension checked above");
                out
            })
            .collect();
        Ok(DMatrix::from_fn(states.nrows(), k, |i, j| rows[i][j]))
    }

    pub fn to_file(&self, ridge: Option<f64>) -> DictionaryFile {
        let mut f = DictionaryFile {
            kind: self.kind_name().to_string(),
            state_dim: self.state_dim,
            sigma: None,
            rbf_exponent: None,
            centers: None,
            boxes: None,
            degree: None,
            ridge,
        };
        match &self.kind {
            DictionaryKind::GaussianRbf {
                centers,
                sigma,
                exponent,
            } => {
                f.sigma = Some(*sigma);
                f.rbf_exponent = Some(*exponent);
                f.centers = Some(to_rows(centers));
            }
            DictionaryKind::IndicatorBoxes { boxes } => f.boxes = Some(boxes.clone()),
            DictionaryKind::Coordinates => {}
            DictionaryKind::Monomials { degree, .. } => f.degree = Some(*degree),
        }
        f
    }

    /// SHA-256 over the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.to_file(None)).expect("dictionary serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn push_compositions(dims: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() + 1 == dims {
        let mut e = prefix.clone();
        e.push(total);
        out.push(e);
        return;
    }
    for first in (0..=total).rev() {
        prefix.push(first);
        push_compositions(dims, total - first, prefix, out);
        prefix.pop();
    }
}

/// On-disk dictionary description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryFile {
    pub kind: String,
    pub state_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbf_exponent: Option<RbfExponent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<BoxDomain>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<u32>,
    #[serde(default)]
    pub ridge: Option<f64>,
}

impl DictionaryFile {
    pub fn to_dictionary(&self) -> Result<Dictionary> {
        let missing = |what: &str| Error::contract(format!("{} dictionary needs `{what}`", self.kind));
        match self.kind.as_str() {
            "gaussian_rbf" => {
                let centers = from_rows(self.centers.as_ref().ok_or_else(|| missing("centers"))?)?;
                let sigma = self.sigma.ok_or_else(|| missing("sigma"))?;
                Dictionary::gaussian_rbf(centers, sigma, self.rbf_exponent.unwrap_or_default())
            }
            "indicator_boxes" => {
                Dictionary::indicator_boxes(self.boxes.clone().ok_or_else(|| missing("boxes"))?)
            }
            "coordinates" => Dictionary::coordinates(self.state_dim),
            "monomials" => Dictionary::monomials(self.state_dim, self.degree.ok_or_else(|| missing("degree"))?),
            other => Err(Error::Lookup {
                what: "dictionary kind",
                name: other.to_string(),
            }),
        }
    }
}
