//! Naturally structured DMD: least-squares fit of `K` with positivity and
//! Markov constraints, solved by ADMM.
//!
//! Two constraint blocks: `Z₁ = K` (clamped to `K ≥ 0`) and `Z₂ = ΛKΛ⁻¹`
//! (rows projected onto the simplex). Each block is penalized with a
//! row-diagonal weight proportional to the curvature of `‖GK − A‖²` along
//! that row, so rows that the data barely constrain do not stall the
//! iteration. The `K`-update then reduces to the pencil `H' + c_j B`, with
//! one symmetric eigendecomposition per penalty change.

mod simplex;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub use simplex::{project_simplex, project_simplex_rows};
use simplex::project_simplex_rows_mut;

use crate::dictionary::GramPair;
use crate::edmd::{fit_edmd, DEFAULT_SVD_TOL};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::model::{FeasibilityReport, FitMethod, SolverStats, TransferModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Case {
    /// `K ≥ 0`
    #[serde(alias = "1")]
    I,
    /// `ΛKΛ⁻¹ ≥ 0` with unit row sums
    #[serde(alias = "2")]
    II,
    /// both
    #[serde(alias = "3")]
    III,
}

impl Case {
    pub fn positive_k(self) -> bool {
        matches!(self, Case::I | Case::III)
    }

    pub fn markov_p(self) -> bool {
        matches!(self, Case::II | Case::III)
    }

    pub fn method(self) -> FitMethod {
        match self {
            Case::I => FitMethod::NsdmdCase1,
            Case::II => FitMethod::NsdmdCase2,
            Case::III => FitMethod::NsdmdCase3,
        }
    }

    pub fn from_method(method: FitMethod) -> Option<Case> {
        match method {
            FitMethod::NsdmdCase1 => Some(Case::I),
            FitMethod::NsdmdCase2 => Some(Case::II),
            FitMethod::NsdmdCase3 => Some(Case::III),
            _ => None,
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::I => "I",
            Case::II => "II",
            Case::III => "III",
        })
    }
}

impl FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(Case::I),
            "II" | "2" => Ok(Case::II),
            "III" | "3" => Ok(Case::III),
            _ => Err(Error::Lookup {
                what: "constraint case",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NsdmdConfig {
    pub case: Case,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub rho: f64,
    pub feasibility_eps: f64,
    /// Residual-balancing updates of `rho`.
    pub adaptive_rho: bool,
    /// Wall-clock budget; the solver stops early (unconverged) past it.
    pub time_limit_s: Option<f64>,
}

impl Default for NsdmdConfig {
    fn default() -> Self {
        Self {
            case: Case::III,
            max_iter: 50_000,
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            rho: 1.0,
            feasibility_eps: 1e-6,
            adaptive_rho: true,
            time_limit_s: None,
        }
    }
}

impl NsdmdConfig {
    pub fn with_case(case: Case) -> Self {
        Self {
            case,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.tol_primal) || !positive(self.tol_dual) {
            return Err(Error::contract("ADMM tolerances must be positive"));
        }
        if !positive(self.rho) {
            return Err(Error::contract("rho must be positive"));
        }
        if !(self.feasibility_eps >= 0.0) {
            return Err(Error::contract("feasibility_eps must be nonnegative"));
        }
        if self.time_limit_s.is_some_and(|t| !positive(t)) {
            return Err(Error::contract("time_limit_s must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::contract("max_iter must be at least 1"));
        }
        Ok(())
    }
}

const RELAXATION: f64 = 1.6;
const CHECK_EVERY: usize = 10;
const BALANCE_EVERY: usize = 50;
const RHO_MIN: f64 = 1e-8;
const RHO_MAX: f64 = 1e8;
/// Row weights are floored at this fraction of the largest one.
const WEIGHT_FLOOR: f64 = 1e-6;

/// Minimizer of the augmented Lagrangian over `K`.
enum XSolve {
    /// Case I: `(H + W₁) K = R`.
    Chol(Cholesky<f64, Dyn>),
    /// With a `P` block the columns of `Y = KV` solve
    /// `(H' + B / d_j²) y_j = r_j`, `H' = H + W₁`, `B = Λ W₂ Λ`.
    /// `B^{-1/2} H' B^{-1/2} = U Ω Uᵀ` and `e = Uᵀ B^{-1/2}`.
    Pencil { e: DMatrix<f64>, omega: DVector<f64> },
}

struct Problem<'a> {
    f: &'a SpdFactor,
    lambda: DMatrix<f64>,
    lambda_inv: DMatrix<f64>,
    /// `GᵀG`
    h: DMatrix<f64>,
    /// `GᵀA`
    gta: DMatrix<f64>,
    /// `GᵀA V`
    gta_v: DMatrix<f64>,
    /// row weights of the two blocks at unit rho
    h1: DVector<f64>,
    h2: DVector<f64>,
    solve: Option<XSolve>,
}

fn floored(mut w: DVector<f64>) -> DVector<f64> {
    let top = w.max();
    if !(top > 0.0) || !top.is_finite() {
        return DVector::from_element(w.len(), 1.0);
    }
    w.apply(|v| *v = v.max(WEIGHT_FLOOR * top));
    w
}

/// `diag(w) m`
fn scale_rows(m: &DMatrix<f64>, w: &DVector<f64>, c: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= c * w[i];
    }
    out
}

fn weighted_norm(m: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    m.row_iter()
        .enumerate()
        .map(|(i, row)| w[i] * row.norm_squared())
        .sum::<f64>()
        .sqrt()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

impl<'a> Problem<'a> {
    fn new(gram: &GramPair, f: &'a SpdFactor) -> Self {
        let h = gram.g.transpose() * &gram.g;
        let gta = gram.g.transpose() * &gram.a;
        let gta_v = &gta * &f.vectors;
        let lambda = f.matrix();
        let lambda_inv = f.inverse();
        let h1 = floored(h.diagonal());
        // curvature along a row of P, with Λ on the right replaced by its
        // mean square eigenvalue
        let mean_d2 = f.values.iter().map(|d| d * d).sum::<f64>() / f.values.len().max(1) as f64;
        let h2 = floored((&lambda_inv * &h * &lambda_inv).diagonal() * mean_d2);
        Self {
            f,
            lambda,
            lambda_inv,
            h,
            gta,
            gta_v,
            h1,
            h2,
            solve: None,
        }
    }

    fn refactor(&mut self, rho1: f64, rho2: f64) -> Result<()> {
        let singular = || Error::Numerical("ADMM system is not positive definite".into());
        let mut hp = self.h.clone();
        for i in 0..hp.nrows() {
            hp[(i, i)] += rho1 * self.h1[i];
        }
        if rho2 == 0.0 {
            self.solve = Some(XSolve::Chol(Cholesky::new(hp).ok_or_else(singular)?));
            return Ok(());
        }
        let mut lw = self.lambda.clone();
        for (j, mut col) in lw.column_iter_mut().enumerate() {
            col *= rho2 * self.h2[j];
        }
        let eb = SymmetricEigen::new(symmetrize(&(lw * &self.lambda)));
        let top = eb.eigenvalues.max();
        if !(top > 0.0) || !top.is_finite() {
            return Err(singular());
        }
        let mut b_inv_half = eb.eigenvectors.clone();
        for (j, mut col) in b_inv_half.column_iter_mut().enumerate() {
            col /= eb.eigenvalues[j].max(top * f64::EPSILON).sqrt();
        }
        let b_inv_half = &b_inv_half * eb.eigenvectors.transpose();
        let t = SymmetricEigen::new(symmetrize(&(&b_inv_half * hp * &b_inv_half)));
        self.solve = Some(XSolve::Pencil {
            e: t.eigenvectors.transpose() * b_inv_half,
            omega: t.eigenvalues.map(|w| w.max(0.0)),
        });
        Ok(())
    }

    fn similarity(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.lambda * k * &self.lambda_inv
    }

    /// Minimize the augmented Lagrangian over `K` given `C₁ = Z₁ − U₁` and
    /// `C₂ = Z₂ − U₂`. Returns `K` and, with a `P` block, `ΛKΛ⁻¹`.
    fn solve_x(
        &self,
        c1: Option<&DMatrix<f64>>,
        c2: Option<&DMatrix<f64>>,
        rho1: f64,
        rho2: f64,
    ) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
        match self.solve.as_ref().expect("refactor runs before the first update") {
            XSolve::Chol(chol) => {
                let mut r = self.gta.clone();
                if let Some(c1) = c1 {
                    r += scale_rows(c1, &self.h1, rho1);
                }
                (chol.solve(&r), None)
            }
            XSolve::Pencil { e, omega } => {
                let v = &self.f.vectors;
                let d = &self.f.values;
                let mut r = self.gta_v.clone();
                if let Some(c1) = c1 {
                    r += scale_rows(c1, &self.h1, rho1) * v;
                }
                if let Some(c2) = c2 {
                    let mut t = &self.lambda * scale_rows(c2, &self.h2, rho2) * v;
                    for (j, mut col) in t.column_iter_mut().enumerate() {
                        col /= d[j];
                    }
                    r += t;
                }
                let mut y = e * r;
                for (j, mut col) in y.column_iter_mut().enumerate() {
                    let c = 1.0 / (d[j] * d[j]);
                    for (i, x) in col.iter_mut().enumerate() {
                        *x /= omega[i] + c;
                    }
                }
                let y = e.transpose() * y;
                let k = &y * v.transpose();
                let mut yd = y;
                for (j, mut col) in yd.column_iter_mut().enumerate() {
                    col /= d[j];
                }
                let p = &self.lambda * yd * v.transpose();
                (k, Some(p))
            }
        }
    }
}

/// Scaled-form ADMM state for one constraint block.
struct Block {
    z: DMatrix<f64>,
    u: DMatrix<f64>,
    rho: f64,
}

impl Block {
    fn new(z: DMatrix<f64>, rho: f64) -> Self {
        let u = DMatrix::zeros(z.nrows(), z.ncols());
        Self { z, u, rho }
    }

    fn step(&mut self, bx: &DMatrix<f64>, project: impl Fn(&mut DMatrix<f64>)) {
        let mut h = bx * RELAXATION + &self.z * (1.0 - RELAXATION);
        let mut z = &h + &self.u;
        project(&mut z);
        h -= &z;
        self.u += h;
        self.z = z;
    }

    /// Multiply rho by `scale`, keeping the unscaled dual fixed.
    fn rescale(&mut self, scale: f64) -> bool {
        let new_rho = (self.rho * scale).clamp(RHO_MIN, RHO_MAX);
        if new_rho == self.rho {
            return false;
        }
        self.u *= self.rho / new_rho;
        self.rho = new_rho;
        true
    }
}

fn clamp_nonnegative(m: &mut DMatrix<f64>) {
    m.apply(|v| *v = v.max(0.0));
}

/// Fit `K` minimizing `‖GK − A‖_F` under the constraints of `config.case`.
///
/// Non-convergence is not an error: the model is returned with
/// `stats.converged = false` and the final residuals.
pub fn fit_nsdmd(gram: &GramPair, config: &NsdmdConfig) -> Result<TransferModel> {
    config.validate()?;
    gram.validate()?;
    let start = Instant::now();
    let case = config.case;
    let factor = gram.lambda_factor()?;
    let mut problem = Problem::new(gram, &factor);

    // warm start from the unconstrained solution
    let k0 = fit_edmd(gram, DEFAULT_SVD_TOL)?.k;
    let mut b1 = case.positive_k().then(|| {
        let mut z = k0.clone();
        clamp_nonnegative(&mut z);
        Block::new(z, config.rho)
    });
    let mut b2 = case.markov_p().then(|| {
        let mut z = problem.similarity(&k0);
        project_simplex_rows_mut(&mut z);
        Block::new(z, config.rho)
    });
    let rho_of = |b: &Option<Block>| b.as_ref().map_or(0.0, |b| b.rho);
    problem.refactor(rho_of(&b1), rho_of(&b2))?;

    let gta_norm = problem.gta.norm();
    let mut stats = SolverStats::default();
    let mut z1_prev = DMatrix::zeros(0, 0);
    let mut z2_prev = DMatrix::zeros(0, 0);

    for it in 1..=config.max_iter {
        let c1 = b1.as_ref().map(|b| &b.z - &b.u);
        let c2 = b2.as_ref().map(|b| &b.z - &b.u);
        let (kx, px) = problem.solve_x(c1.as_ref(), c2.as_ref(), rho_of(&b1), rho_of(&b2));

        let out_of_time = config
            .time_limit_s
            .is_some_and(|t| start.elapsed().as_secs_f64() > t);
        let check = it % CHECK_EVERY == 0 || it == config.max_iter || out_of_time;
        if let Some(b) = b1.as_mut() {
            if check {
                z1_prev = b.z.clone();
            }
            b.step(&kx, clamp_nonnegative);
        }
        if let (Some(b), Some(px)) = (b2.as_mut(), px.as_ref()) {
            if check {
                z2_prev = b.z.clone();
            }
            b.step(px, project_simplex_rows_mut);
        }
        if !check {
            continue;
        }

        // r = Bx − z per block; s = Σ Bᵀ W (z − z_prev), with Bᵀ of the P
        // block being M ↦ Λ M Λ⁻¹.
        let mut r_sq = 0.0;
        let mut bx_sq = 0.0;
        let mut z_sq = 0.0;
        let mut dual = DMatrix::zeros(kx.nrows(), kx.ncols());
        let mut dual_scale = DMatrix::zeros(kx.nrows(), kx.ncols());
        // weighted residual pairs driving the rho balance
        let mut balance = [(0.0, 0.0); 2];
        if let Some(b) = b1.as_ref() {
            let r = &kx - &b.z;
            let dz = &b.z - &z1_prev;
            r_sq += r.norm_squared();
            bx_sq += kx.norm_squared();
            z_sq += b.z.norm_squared();
            dual += scale_rows(&dz, &problem.h1, b.rho);
            dual_scale += scale_rows(&b.u, &problem.h1, b.rho);
            balance[0] = (weighted_norm(&r, &problem.h1), b.rho * weighted_norm(&dz, &problem.h1));
        }
        if let (Some(b), Some(px)) = (b2.as_ref(), px.as_ref()) {
            let r = px - &b.z;
            let dz = &b.z - &z2_prev;
            r_sq += r.norm_squared();
            bx_sq += px.norm_squared();
            z_sq += b.z.norm_squared();
            dual += problem.similarity(&scale_rows(&dz, &problem.h2, b.rho));
            dual_scale += problem.similarity(&scale_rows(&b.u, &problem.h2, b.rho));
            balance[1] = (weighted_norm(&r, &problem.h2), b.rho * weighted_norm(&dz, &problem.h2));
        }
        let r_norm = r_sq.sqrt();
        let s_norm = dual.norm();
        let eps_pri = config.tol_primal * bx_sq.sqrt().max(z_sq.sqrt()).max(1.0);
        let eps_dual = config.tol_dual * dual_scale.norm().max(gta_norm).max(f64::MIN_POSITIVE);
        stats.iterations = it;
        stats.primal_residual = r_norm;
        stats.dual_residual = s_norm;
        if r_norm <= eps_pri && s_norm <= eps_dual {
            stats.converged = true;
            break;
        }
        if out_of_time {
            break;
        }

        if config.adaptive_rho && it % BALANCE_EVERY == 0 {
            let mut changed = false;
            for (block, (r, s)) in [b1.as_mut(), b2.as_mut()].into_iter().zip(balance) {
                let Some(b) = block else { continue };
                if r > 10.0 * s {
                    changed |= b.rescale(2.0);
                } else if s > 10.0 * r {
                    changed |= b.rescale(0.5);
                }
            }
            if changed {
                problem.refactor(rho_of(&b1), rho_of(&b2))?;
            }
        }
    }
    stats.rho = rho_of(&b1).max(rho_of(&b2));

    let out = finalize(&factor, case, b1.map(|b| b.z), b2.map(|b| b.z), config.feasibility_eps);
    stats.cleaned_entries = out.cleaned;
    stats.restoration_weight = out.restoration;
    stats.wall_time_s = start.elapsed().as_secs_f64();
    let mut model = TransferModel::from_fit(out.k, gram, case.method(), stats)?;
    model.feasibility = Some(check_feasibility_for(&model, case, config.feasibility_eps));
    Ok(model)
}

struct Finalized {
    k: DMatrix<f64>,
    cleaned: usize,
    restoration: f64,
}

/// Read `K` off the projected blocks, which satisfy their own constraints
/// exactly. With a `P` block, `K = Λ⁻¹ Z₂ Λ`; in Case III any negative
/// entries left in that `K` are removed by moving toward the strictly
/// feasible `K∘ = w 𝟙ᵀ / 𝟙ᵀw`, `w = Λ⁻¹𝟙`, whose `ΛK∘Λ⁻¹ = 𝟙 wᵀ / 𝟙ᵀw` is
/// row-stochastic. This needs `w > 0`; otherwise the iterate is kept and
/// the feasibility report says so.
fn finalize(
    factor: &SpdFactor,
    case: Case,
    z1: Option<DMatrix<f64>>,
    z2: Option<DMatrix<f64>>,
    eps: f64,
) -> Finalized {
    let Some(mut p) = z2 else {
        let k = z1.expect("every case has a constraint block");
        return Finalized {
            k,
            cleaned: 0,
            restoration: 0.0,
        };
    };
    renormalize_rows(&mut p);
    let mut k = factor.inverse_similarity(&p);
    let mut out = Finalized {
        k: DMatrix::zeros(0, 0),
        cleaned: 0,
        restoration: 0.0,
    };
    if case.positive_k() && k.min() < 0.0 {
        let w = factor.inverse() * DVector::from_element(k.nrows(), 1.0);
        if w.min() > 0.0 {
            let interior = &w * w.transpose().map(|_| 1.0) / w.sum();
            let mut t = 0.0f64;
            for (kv, iv) in k.iter().zip(interior.iter()) {
                if *kv < 0.0 {
                    t = t.max(-kv / (iv - kv));
                }
            }
            k = &k * (1.0 - t) + interior * t;
            out.restoration = t;
        }
        // what is left is rounding of the blend (or, without an interior
        // point, sub-eps noise)
        k.apply(|v| {
            if *v < 0.0 && -*v < eps {
                *v = 0.0;
                out.cleaned += 1;
            }
        });
    }
    out.k = k;
    out
}

fn renormalize_rows(p: &mut DMatrix<f64>) {
    for mut row in p.row_iter_mut() {
        let sum: f64 = row.sum();
        if sum > 0.0 {
            row /= sum;
        }
    }
}

/// Feasibility of the stored `K` (and `ΛKΛ⁻¹` recomputed from it) for the
/// model's own case; unconstrained fits are checked against Case III.
pub fn check_feasibility(model: &TransferModel, eps: f64) -> FeasibilityReport {
    let case = Case::from_method(model.method).unwrap_or(Case::III);
    check_feasibility_for(model, case, eps)
}

pub fn check_feasibility_for(model: &TransferModel, case: Case, eps: f64) -> FeasibilityReport {
    let p = model.similarity_of_k();
    let min_k_entry = model.k.min();
    let min_p_entry = p.min();
    let max_rowsum_dev = (0..p.nrows())
        .map(|i| (p.row(i).sum() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut pass = true;
    if case.positive_k() {
        pass &= min_k_entry >= -eps;
    }
    if case.markov_p() {
        pass &= min_p_entry >= -eps && max_rowsum_dev <= eps;
    }
    FeasibilityReport {
        min_k_entry,
        min_p_entry,
        max_rowsum_dev,
        pass,
    }
}
