//! Unconstrained least-squares baselines: EDMD (`K = G†A`) and DMD (`Y X†`).

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::dictionary::{Dictionary, GramPair, Ridge};
use crate::error::{Error, Result};
use crate::linalg::pinv;
use crate::model::{FitMethod, SolverStats, TransferModel};

pub const DEFAULT_SVD_TOL: f64 = 1e-10;

fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.singular_values();
    let smax = sv.max();
    sv.iter().filter(|&&s| s > rel_tol * smax && s > 0.0).count()
}

/// `K = G† A`, truncating singular values of `G` below `svd_tol · σ_max`.
pub fn fit_edmd(gram: &GramPair, svd_tol: f64) -> Result<TransferModel> {
    gram.validate()?;
    let start = Instant::now();
    let k = pinv(&gram.g, svd_tol) * &gram.a;
    let stats = SolverStats {
        iterations: 1,
        converged: true,
        rank: Some(numerical_rank(&gram.g, svd_tol)),
        wall_time_s: start.elapsed().as_secs_f64(),
        ..Default::default()
    };
    TransferModel::from_fit(k, gram, FitMethod::Edmd, stats)
}

/// Classical DMD operator `Y X†` for snapshot matrices with one state per
/// column (N×M).
pub fn dmd_operator(x: &DMatrix<f64>, y: &DMatrix<f64>, svd_tol: f64) -> Result<DMatrix<f64>> {
    if x.shape() != y.shape() {
        return Err(Error::contract("X and Y must have the same shape"));
    }
    if x.ncols() == 0 {
        return Err(Error::EmptyData("no snapshots".into()));
    }
    Ok(y * pinv(x, svd_tol))
}

/// DMD as EDMD with the coordinate dictionary. The returned model stores
/// `K = (Y X†)ᵀ` in the repository orientation; [`TransferModel::dmd_matrix`]
/// gives back `Y X†`.
pub fn fit_dmd(x: &DMatrix<f64>, y: &DMatrix<f64>, svd_tol: f64) -> Result<TransferModel> {
    let start = Instant::now();
    let kd = dmd_operator(x, y, svd_tol)?;
    let m = x.ncols() as f64;
    let g = x * x.transpose() / m;
    let a = x * y.transpose() / m;
    let ridge = Ridge::Auto.resolve(&g).max(f64::MIN_POSITIVE);
    let mut lambda = g.clone();
    for i in 0..lambda.nrows() {
        lambda[(i, i)] += ridge;
    }
    let gram = GramPair {
        g,
        a,
        lambda,
        m: x.ncols(),
        ridge,
        dictionary: Some(Arc::new(Dictionary::coordinates(x.nrows())?)),
    };
    let stats = SolverStats {
        iterations: 1,
        converged: true,
        rank: Some(numerical_rank(x, svd_tol)),
        wall_time_s: start.elapsed().as_secs_f64(),
        ..Default::default()
    };
    TransferModel::from_fit(kd.transpose(), &gram, FitMethod::Dmd, stats)
}
