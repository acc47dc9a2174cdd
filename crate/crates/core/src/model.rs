//! Fitted operator representation shared by every fitting method.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dictionary::{gram::lambda_factor, Dictionary, GramPair};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Dmd,
    Edmd,
    NsdmdCase1,
    NsdmdCase2,
    NsdmdCase3,
}

impl FitMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitMethod::Dmd => "dmd",
            FitMethod::Edmd => "edmd",
            FitMethod::NsdmdCase1 => "nsdmd_case1",
            FitMethod::NsdmdCase2 => "nsdmd_case2",
            FitMethod::NsdmdCase3 => "nsdmd_case3",
        }
    }

    /// Whether the fit enforces a row-stochastic `P`.
    pub fn is_markov(&self) -> bool {
        matches!(self, FitMethod::NsdmdCase2 | FitMethod::NsdmdCase3)
    }
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FitMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dmd" => FitMethod::Dmd,
            "edmd" => FitMethod::Edmd,
            "nsdmd_case1" => FitMethod::NsdmdCase1,
            "nsdmd_case2" => FitMethod::NsdmdCase2,
            "nsdmd_case3" => FitMethod::NsdmdCase3,
            _ => {
                return Err(Error::Lookup {
                    what: "fit method",
                    name: s.to_string(),
                })
            }
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
    pub wall_time_s: f64,
    /// Entries zeroed or renormalized by the post-solve cleanup.
    pub cleaned_entries: usize,
    /// Weight of the strictly feasible point blended into a Case III
    /// iterate to remove residual constraint violations (0 when unused).
    #[serde(default)]
    pub restoration_weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub min_k_entry: f64,
    pub min_p_entry: f64,
    pub max_rowsum_dev: f64,
    pub pass: bool,
}

/// A fitted Koopman matrix `K` together with `P = Λ K Λ⁻¹`.
///
/// Orientation: the Koopman approximation acts on coefficient columns,
/// `v_{t+1} = K v_t`; the Perron-Frobenius approximation acts on coefficient
/// rows, `u_{t+1} = u_t P`. `K` minimizes `‖G K − A‖_F` over the method's
/// feasible set, so for the coordinate dictionary `K` is the transpose of the
/// classical DMD matrix `Y X†`.
#[derive(Debug, Clone)]
pub struct TransferModel {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    /// Eigenvalue floor used for the guarded `Λ⁻¹`.
    pub ridge: f64,
    pub dictionary: Option<Arc<Dictionary>>,
    pub objective: f64,
    pub method: FitMethod,
    pub stats: SolverStats,
    pub feasibility: Option<FeasibilityReport>,
    factor: SpdFactor,
}

pub fn objective(g: &DMatrix<f64>, k: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    (g * k - a).norm()
}

impl TransferModel {
    /// Build from a fitted `K`, deriving `P` and the objective.
    pub fn from_fit(k: DMatrix<f64>, gram: &GramPair, method: FitMethod, stats: SolverStats) -> Result<Self> {
        let factor = gram.lambda_factor()?;
        let p = factor.similarity(&k);
        Ok(Self {
            objective: objective(&gram.g, &k, &gram.a),
            k,
            p,
            lambda: gram.lambda.clone(),
            ridge: gram.ridge,
            dictionary: gram.dictionary.clone(),
            method,
            stats,
            feasibility: None,
            factor,
        })
    }

    /// Reassemble from stored parts (deserialization).
    pub fn from_parts(
        k: DMatrix<f64>,
        p: DMatrix<f64>,
        lambda: DMatrix<f64>,
        ridge: f64,
        dictionary: Option<Arc<Dictionary>>,
        objective: f64,
        method: FitMethod,
        stats: SolverStats,
        feasibility: Option<FeasibilityReport>,
    ) -> Result<Self> {
        let n = k.nrows();
        if !k.is_square() || p.shape() != (n, n) || lambda.shape() != (n, n) {
            return Err(Error::contract("K, P and Λ must share a square shape"));
        }
        if let Some(d) = &dictionary {
            if d.len() != n {
                return Err(Error::contract("dictionary size differs from K"));
            }
        }
        let factor = lambda_factor(&lambda, ridge)?;
        Ok(Self {
            k,
            p,
            lambda,
            ridge,
            dictionary,
            objective,
            method,
            stats,
            feasibility,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn lambda_factor(&self) -> &SpdFactor {
        &self.factor
    }

    /// `Λ K Λ⁻¹` recomputed from the stored `K`.
    pub fn similarity_of_k(&self) -> DMatrix<f64> {
        self.factor.similarity(&self.k)
    }

    /// The classical DMD orientation `Kᵀ`.
    pub fn dmd_matrix(&self) -> DMatrix<f64> {
        self.k.transpose()
    }

    pub fn dictionary(&self) -> Result<&Dictionary> {
        self.dictionary
            .as_deref()
            .ok_or_else(|| Error::contract("model carries no dictionary"))
    }
}
