use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{Dictionary, DictionaryKind, RbfExponent};
use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::systems::SnapshotSet;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Λ = G + ridge·I (inner product w.r.t. the empirical measure of X).
    #[default]
    Empirical,
    /// Closed-form Lebesgue integrals of dictionary products, divided by the
    /// volume of the data bounding box: RBF products over ℝᴺ, or pairwise
    /// box-intersection volumes for indicator dictionaries.
    #[serde(alias = "analytic_rbf")]
    Lebesgue,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// `1e-10 * trace(G) / K`
    #[default]
    Auto,
    /// `c * trace(G) / K`
    Relative(f64),
    Fixed(f64),
}

impl Ridge {
    pub fn resolve(&self, g: &DMatrix<f64>) -> f64 {
        match *self {
            Ridge::Auto => Ridge::Relative(1e-10).resolve(g),
            Ridge::Relative(c) => c * g.trace() / g.nrows().max(1) as f64,
            Ridge::Fixed(r) => r,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GramOptions {
    pub lambda: LambdaMode,
    pub ridge: Ridge,
}

/// Empirical matrices `G`, `A` and the inner-product matrix `Λ`.
#[derive(Debug, Clone)]
pub struct GramPair {
    pub g: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub m: usize,
    /// Ridge added to the diagonal of `lambda`.
    pub ridge: f64,
    pub dictionary: Option<Arc<Dictionary>>,
}

impl GramPair {
    /// Assemble from explicit matrices (synthetic problems, tests).
    pub fn from_parts(g: DMatrix<f64>, a: DMatrix<f64>, lambda: DMatrix<f64>) -> Result<Self> {
        let k = g.nrows();
        if !g.is_square() || a.shape() != (k, k) || lambda.shape() != (k, k) || k == 0 {
            return Err(Error::contract("G, A, Λ must be K×K with K ≥ 1"));
        }
        let pair = Self {
            g,
            a,
            lambda,
            m: 0,
            ridge: 0.0,
            dictionary: None,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.g.iter().chain(self.a.iter()).chain(self.lambda.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("Gram matrices contain non-finite entries"));
        }
        let asym = (&self.lambda - self.lambda.transpose()).amax();
        if asym > 1e-12 * self.lambda.amax().max(1.0) {
            return Err(Error::contract("Λ must be symmetric"));
        }
        Ok(())
    }

    /// Factor of Λ with its eigenvalues floored at
    /// `max(ridge, eps * λ_max)`.
    pub fn lambda_factor(&self) -> Result<SpdFactor> {
        lambda_factor(&self.lambda, self.ridge)
    }
}

pub(crate) fn lambda_factor(lambda: &DMatrix<f64>, ridge: f64) -> Result<SpdFactor> {
    let probe = SpdFactor::new(lambda, 0.0)?;
    let top = probe.values.iter().copied().fold(0.0, f64::max);
    let floor = ridge.max(f64::EPSILON * top).max(f64::MIN_POSITIVE);
    if probe.min_raw <= 0.0 && ridge <= 0.0 {
        return Err(Error::Indefinite {
            min_eigenvalue: probe.min_raw,
        });
    }
    SpdFactor::new(lambda, floor)
}

fn check_data(dict: &Dictionary, data: &SnapshotSet) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyData("snapshot set is empty".into()));
    }
    if data.state_dim() != dict.state_dim() {
        return Err(Error::contract(format!(
            "data dimension {} differs from dictionary dimension {}",
            data.state_dim(),
            dict.state_dim()
        )));
    }
    Ok(())
}

/// `(1/M) Σ Ψ(x_m)ᵀ Ψ(x_m)`, computed as one product of the feature matrix
/// so the reduction order is fixed.
fn empirical_g(psi_x: &DMatrix<f64>) -> DMatrix<f64> {
    let m = psi_x.nrows() as f64;
    let mut g = psi_x.transpose() * psi_x / m;
    // exact symmetry
    for i in 0..g.nrows() {
        for j in 0..i {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

pub fn gram_matrices(dict: &Dictionary, data: &SnapshotSet, opts: &GramOptions) -> Result<GramPair> {
    check_data(dict, data)?;
    let psi_x = dict.eval_rows(&data.x)?;
    let psi_y = dict.eval_rows(&data.y)?;
    let m = data.len();
    let g = empirical_g(&psi_x);
    let a = psi_x.transpose() * &psi_y / m as f64;
    let ridge = opts.ridge.resolve(&g);
    let lambda = match opts.lambda {
        LambdaMode::Empirical => with_ridge(g.clone(), ridge),
        LambdaMode::Lebesgue => lebesgue(dict, &BoxDomain::bounding(&data.x)?, ridge)?,
    };
    check_definite(&lambda)?;
    Ok(GramPair {
        g,
        a,
        lambda,
        m,
        ridge,
        dictionary: Some(Arc::new(dict.clone())),
    })
}

/// The inner-product matrix Λ alone.
pub fn lambda_matrix(dict: &Dictionary, data: &SnapshotSet, mode: LambdaMode, ridge: f64) -> Result<DMatrix<f64>> {
    check_data(dict, data)?;
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::contract("ridge must be a finite nonnegative number"));
    }
    let lambda = match mode {
        LambdaMode::Empirical => with_ridge(empirical_g(&dict.eval_rows(&data.x)?), ridge),
        LambdaMode::Lebesgue => lebesgue(dict, &BoxDomain::bounding(&data.x)?, ridge)?,
    };
    check_definite(&lambda)?;
    Ok(lambda)
}

fn with_ridge(mut m: DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    if ridge != 0.0 {
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
    }
    m
}

fn check_definite(lambda: &DMatrix<f64>) -> Result<()> {
    let f = SpdFactor::new(lambda, f64::NEG_INFINITY)?;
    if !(f.min_raw > 0.0) {
        return Err(Error::Indefinite {
            min_eigenvalue: f.min_raw,
        });
    }
    Ok(())
}

fn lebesgue(dict: &Dictionary, domain: &BoxDomain, ridge: f64) -> Result<DMatrix<f64>> {
    let mut lambda = match dict.kind() {
        DictionaryKind::GaussianRbf {
            centers,
            sigma,
            exponent,
        } => {
            if *exponent != RbfExponent::Squared {
                return Err(Error::contract("the Lebesgue Λ of an RBF dictionary needs the squared exponent"));
            }
            rbf_products(centers, *sigma)
        }
        DictionaryKind::IndicatorBoxes { boxes } => DMatrix::from_fn(boxes.len(), boxes.len(), |i, j| {
            boxes[i]
                .lo
                .iter()
                .zip(&boxes[i].hi)
                .zip(boxes[j].lo.iter().zip(&boxes[j].hi))
                .map(|((l1, h1), (l2, h2))| (h1.min(*h2) - l1.max(*l2)).max(0.0))
                .product()
        }),
        _ => {
            return Err(Error::contract(
                "the Lebesgue Λ is only defined for Gaussian RBF and indicator dictionaries",
            ))
        }
    };
    lambda /= domain.volume();
    for i in 0..lambda.nrows() {
        lambda[(i, i)] += ridge;
    }
    Ok(lambda)
}

/// ∫ exp(-|x-c_i|²/σ²) exp(-|x-c_j|²/σ²) dx = (πσ²/2)^{N/2} exp(-|c_i-c_j|²/(2σ²)).
fn rbf_products(centers: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let (k, n) = centers.shape();
    let s2 = sigma * sigma;
    let scale = (std::f64::consts::PI * s2 / 2.0).powf(n as f64 / 2.0);
    DMatrix::from_fn(k, k, |i, j| {
        let d2: f64 = (0..n).map(|c| (centers[(i, c)] - centers[(j, c)]).powi(2)).sum();
        scale * (-d2 / (2.0 * s2)).exp()
    })
}
