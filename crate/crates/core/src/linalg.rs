//! Dense linear-algebra helpers shared by the fitting and spectral code.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Moore-Penrose pseudoinverse, discarding singular values below
/// `rel_tol * sigma_max`.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DMatrix::zeros(cols, rows);
    }
    let cutoff = rel_tol * smax;
    let u = svd.u.expect("svd computed with u");
    let vt = svd.v_t.expect("svd computed with v_t");
    let mut out = DMatrix::zeros(cols, rows);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let vi = vt.row(i).transpose();
            out.ger(1.0 / s, &vi, &u.column(i), 1.0);
        }
    }
    out
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Symmetric eigendecomposition of a symmetric positive-(semi)definite
/// matrix with its eigenvalues floored, used wherever an inverse of an
/// inner-product matrix is required.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    pub vectors: DMatrix<f64>,
    /// Eigenvalues after flooring, ascending.
    pub values: DVector<f64>,
    /// Smallest eigenvalue before flooring.
    pub min_raw: f64,
    pub floor: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>, floor: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::contract("inner-product matrix must be square"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite entry in symmetric matrix".into()));
        }
        let sym = (m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let n = idx.len();
        let mut vectors = DMatrix::zeros(n, n);
        let mut values = DVector::zeros(n);
        for (dst, &src) in idx.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
            values[dst] = eig.eigenvalues[src];
        }
        let min_raw = if n > 0 { values[0] } else { 0.0 };
        let floor = floor.max(0.0);
        values.apply(|v| *v = v.max(floor));
        Ok(Self {
            vectors,
            values,
            min_raw,
            floor,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Guarded inverse `V diag(1/d) V^T`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let scaled = self.scaled_columns(|d| 1.0 / d);
        &scaled * self.vectors.transpose()
    }

    /// The (floored) matrix `V diag(d) V^T`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let scaled = self.scaled_columns(|d| d);
        &scaled * self.vectors.transpose()
    }

    fn scaled_columns(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[j]);
        }
        scaled
    }

    /// `V^T M V`
    pub fn to_eigenbasis(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.vectors.transpose() * m * &self.vectors
    }

    /// `V M V^T`
    pub fn from_eigenbasis(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        &self.vectors * m * self.vectors.transpose()
    }

    /// `Λ M Λ⁻¹`, evaluated in the eigenbasis where it is a diagonal scaling.
    pub fn similarity(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut t = self.to_eigenbasis(m);
        self.scale_forward(&mut t);
        self.from_eigenbasis(&t)
    }

    /// `Λ⁻¹ M Λ`
    pub fn inverse_similarity(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut t = self.to_eigenbasis(m);
        self.scale_backward(&mut t);
        self.from_eigenbasis(&t)
    }

    /// In-place `t_ij *= d_i / d_j`.
    pub fn scale_forward(&self, t: &mut DMatrix<f64>) {
        let d = &self.values;
        for j in 0..t.ncols() {
            for i in 0..t.nrows() {
                t[(i, j)] *= d[i] / d[j];
            }
        }
    }

    /// In-place `t_ij *= d_j / d_i`.
    pub fn scale_backward(&self, t: &mut DMatrix<f64>) {
        let d = &self.values;
        for j in 0..t.ncols() {
            for i in 0..t.nrows() {
                t[(i, j)] *= d[j] / d[i];
            }
        }
    }

    pub fn condition(&self) -> f64 {
        match self.dim() {
            0 => 1.0,
            n => self.values[n - 1] / self.values[0],
        }
    }
}

/// Eigenvalues of a general real square matrix via the real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<C64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    // The Francis iteration can stall on clusters of nearly equal
    // eigenvalues at the tightest deflation threshold; loosen it gradually.
    let schur = [1.0, 16.0, 256.0, 4096.0]
        .iter()
        .find_map(|&f| m.clone().try_schur(f * f64::EPSILON, 10_000))
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Ordering used for every eigenvalue list: modulus descending, then real
/// part descending, then imaginary part descending. Values are quantized to
/// 1e-11 first so roundoff-level differences count as ties.
pub fn eig_order(a: &C64, b: &C64) -> std::cmp::Ordering {
    eig_key(b).cmp(&eig_key(a))
}

fn eig_key(z: &C64) -> (i64, i64, i64) {
    let q = |v: f64| (v * 1e11).round() as i64;
    (q(z.norm()), q(z.re), q(z.im))
}

/// Eigendecomposition of a general real matrix. Returns eigenvalues sorted by
/// [`eig_order`] with unit-norm right eigenvectors as matching columns.
///
/// Eigenvectors come from shifted inverse iteration against the Schur
/// eigenvalues; vectors inside a cluster of (numerically) repeated
/// eigenvalues are orthogonalized against each other so a diagonalizable
/// matrix yields a full eigenbasis.
pub fn eig_general(m: &DMatrix<f64>) -> Result<(Vec<C64>, DMatrix<C64>)> {
    let n = m.nrows();
    if !m.is_square() {
        return Err(Error::contract("eigendecomposition needs a square matrix"));
    }
    let mut values = eigenvalues(m)?;
    values.sort_by(eig_order);
    let mc: DMatrix<C64> = m.map(|v| C64::new(v, 0.0));
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let cluster_tol = 1e-8 * scale.max(1.0);

    let mut vectors: DMatrix<C64> = DMatrix::zeros(n, n);
    for j in 0..n {
        let lambda = values[j];
        let cluster: Vec<usize> = (0..j)
            .filter(|&i| (values[i] - lambda).norm() <= cluster_tol)
            .collect();
        let v = inverse_iteration(&mc, lambda, scale, j, &vectors, &cluster)
            .or_else(|| inverse_iteration(&mc, lambda, scale, j, &vectors, &[]))
            .ok_or_else(|| {
                Error::Numerical(format!(
                    "inverse iteration failed for eigenvalue {lambda} (matrix norm {scale:e})"
                ))
            })?;
        vectors.set_column(j, &v);
    }
    Ok((values, vectors))
}

fn start_vector(n: usize, seed: usize) -> DVector<C64> {
    // Deterministic, generic start vector.
    DVector::from_fn(n, |i, _| {
        let t = (i as f64 + 1.0) * (seed as f64 + 1.618_033_988_75);
        C64::new(1.0 + 0.5 * t.sin(), 0.25 * (1.7 * t).cos())
    })
}

fn inverse_iteration(
    m: &DMatrix<C64>,
    lambda: C64,
    scale: f64,
    seed: usize,
    found: &DMatrix<C64>,
    cluster: &[usize],
) -> Option<DVector<C64>> {
    let n = m.nrows();
    let residual_of = |v: &DVector<C64>| (m * v - v * lambda).norm();
    let mut best: Option<(f64, DVector<C64>)> = None;
    for &rel in &[1e-10, 1e-13, 1e-7] {
        let shift = lambda + C64::new(rel * scale.max(1.0), 0.5 * rel * scale.max(1.0));
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] -= shift;
        }
        let lu = shifted.lu();
        let mut v = start_vector(n, seed);
        orthogonalize(&mut v, found, cluster);
        normalize(&mut v)?;
        for _ in 0..4 {
            let mut w = match lu.solve(&v) {
                Some(w) => w,
                None => break,
            };
            if w.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                break;
            }
            orthogonalize(&mut w, found, cluster);
            if normalize(&mut w).is_none() {
                break;
            }
            v = w;
        }
        let r = residual_of(&v);
        if r.is_finite() && best.as_ref().is_none_or(|(br, _)| r < *br) {
            best = Some((r, v));
        }
        if let Some((br, _)) = &best {
            if *br <= 1e-12 * scale.max(1.0) {
                break;
            }
        }
    }
    let (r, mut v) = best?;
    if !cluster.is_empty() && r > 1e-8 * scale.max(1.0) {
        return None;
    }
    fix_phase(&mut v);
    Some(v)
}

fn orthogonalize(v: &mut DVector<C64>, found: &DMatrix<C64>, cluster: &[usize]) {
    for &c in cluster {
        let q = found.column(c);
        let proj = q.dotc(v);
        *v -= q * proj;
    }
}

fn normalize(v: &mut DVector<C64>) -> Option<()> {
    let nrm = v.norm();
    if !(nrm.is_finite() && nrm > 0.0) {
        return None;
    }
    *v /= C64::new(nrm, 0.0);
    Some(())
}

/// Rotate so the largest-modulus component is real positive.
pub fn fix_phase(v: &mut DVector<C64>) {
    if let Some((_, z)) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()).then(b.0.cmp(&a.0)))
    {
        let z = *z;
        if z.norm() > 0.0 {
            let rot = z.conj() / z.norm();
            v.apply(|x| *x *= rot);
        }
    }
}

/// Row-major nested vectors, the on-disk matrix layout.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::contract("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
