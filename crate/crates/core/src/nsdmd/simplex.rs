use nalgebra::DMatrix;

/// Euclidean projection of `v` onto `{r : r ≥ 0, Σ r = 1}` (sort-based).
pub fn project_simplex(v: &mut [f64]) {
    let n = v.len();
    if n == 0 {
        return;
    }
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Replace each row of `m` with its projection onto the probability simplex.
pub fn project_simplex_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    project_simplex_rows_mut(&mut out);
    out
}

pub(crate) fn project_simplex_rows_mut(m: &mut DMatrix<f64>) {
    let mut row = vec![0.0; m.ncols()];
    for i in 0..m.nrows() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = m[(i, j)];
        }
        project_simplex(&mut row);
        for (j, r) in row.iter().enumerate() {
            m[(i, j)] = *r;
        }
    }
}
