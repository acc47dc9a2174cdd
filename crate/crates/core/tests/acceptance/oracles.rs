//! Reference computations written independently of the library: projected
//! gradient on the three constraint sets, exact polyhedral projection via
//! Lawson-Hanson NNLS, and long-trajectory attractor estimates.

use nalgebra::{DMatrix, DVector};

pub const PG_MAX_ITER: usize = 1_000_000;

pub fn objective(g: &DMatrix<f64>, k: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    (g * k - a).norm()
}

/// Euclidean projection of one vector onto the probability simplex, by
/// sorting (Held-Wolfe-Crowder / Duchi et al.).
pub fn simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

pub fn simplex_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        for (j, v) in simplex(&row).into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

fn lipschitz(g: &DMatrix<f64>) -> f64 {
    let s = g.singular_values().max();
    s * s
}

fn run_pg(
    k0: DMatrix<f64>,
    grad: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    step: f64,
    project: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> (DMatrix<f64>, usize) {
    let mut x = project(&k0);
    for it in 0..PG_MAX_ITER {
        let next = project(&(&x - grad(&x) * step));
        let change = (&next - &x).amax();
        x = next;
        if change <= 1e-15 * (1.0 + x.amax()) {
            return (x, it + 1);
        }
    }
    (x, PG_MAX_ITER)
}

/// min ‖GK − A‖ over K ≥ 0.
pub fn pg_case1(g: &DMatrix<f64>, a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let l = lipschitz(g);
    let gt = g.transpose();
    run_pg(
        DMatrix::zeros(a.nrows(), a.ncols()),
        |k| &gt * (g * k - a),
        1.0 / l,
        |k| k.map(|v| v.max(0.0)),
    )
}

/// min ‖GΛ⁻¹PΛ − A‖ over row-stochastic P ≥ 0; returns K = Λ⁻¹PΛ.
pub fn pg_case2(g: &DMatrix<f64>, a: &DMatrix<f64>, lambda: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let li = lambda.clone().try_inverse().expect("Λ invertible");
    let n = a.nrows();
    let l = lipschitz(&(g * &li)) * lambda.singular_values().max().powi(2);
    let gt = g.transpose();
    let (p, it) = run_pg(
        DMatrix::from_element(n, n, 1.0 / n as f64),
        |p| {
            let k = &li * p * lambda;
            &li * (&gt * (g * k - a)) * lambda
        },
        1.0 / l,
        simplex_rows,
    );
    (&li * p * lambda, it)
}

/// Lawson-Hanson: min ‖E u − f‖ subject to u ≥ 0.
pub fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    let n = e.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-13 * e.norm() * f.norm().max(1.0);
    for _outer in 0..(3 * n + 30) {
        let w = e.transpose() * (f - e * &x);
        let cand = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = cand else { break };
        passive[j] = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let ep = DMatrix::from_fn(e.nrows(), cols.len(), |r, c| e[(r, cols[c])]);
            let zp = ep.clone().svd(true, true).solve(f, 1e-14).expect("least squares");
            if zp.iter().all(|&v| v > 0.0) {
                for (c, &j) in cols.iter().enumerate() {
                    x[j] = zp[c];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (c, &j) in cols.iter().enumerate() {
                if zp[c] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - zp[c]));
                }
            }
            for (c, &j) in cols.iter().enumerate() {
                x[j] += alpha * (zp[c] - x[j]);
                if x[j] <= 1e-15 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    x
}

/// Closest point to `y` in `{x : C x ≥ d}`, by least-distance programming
/// reduced to NNLS.
pub fn project_polyhedron(c: &DMatrix<f64>, d: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let h = d - c * y;
    let (m, n) = c.shape();
    let mut e = DMatrix::zeros(n + 1, m);
    for i in 0..m {
        for j in 0..n {
            e[(j, i)] = c[(i, j)];
        }
        e[(n, i)] = h[i];
    }
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;
    let u = nnls(&e, &f);
    let r = &e * u - f;
    assert!(r[n].abs() > 1e-12, "constraints infeasible");
    let z = DVector::from_fn(n, |j, _| -r[j] / r[n]);
    y + z
}

/// Inequalities for Case III on vec(K) (row-major): K ≥ 0, ΛKΛ⁻¹ ≥ 0 and
/// the two-sided row-sum equalities `K w = w`, `w = Λ⁻¹ 1`.
pub fn case3_constraints(lambda: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let k = lambda.nrows();
    let n = k * k;
    let li = lambda.clone().try_inverse().expect("Λ invertible");
    let w = &li * DVector::from_element(k, 1.0);
    let rows = 2 * n + 2 * k;
    let mut c = DMatrix::zeros(rows, n);
    let mut d = DVector::zeros(rows);
    for v in 0..n {
        c[(v, v)] = 1.0;
    }
    for i in 0..k {
        for j in 0..k {
            let r = n + i * k + j;
            for a in 0..k {
                for b in 0..k {
                    c[(r, a * k + b)] = lambda[(i, a)] * li[(b, j)];
                }
            }
        }
    }
    for i in 0..k {
        let r = 2 * n + 2 * i;
        for b in 0..k {
            c[(r, i * k + b)] = w[b];
            c[(r + 1, i * k + b)] = -w[b];
        }
        d[r] = w[i];
        d[r + 1] = -w[i];
    }
    (c, d)
}

pub fn pg_case3(g: &DMatrix<f64>, a: &DMatrix<f64>, lambda: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let k = a.nrows();
    let (c, d) = case3_constraints(lambda);
    let l = lipschitz(g);
    let gt = g.transpose();
    let project = |m: &DMatrix<f64>| {
        let y = DVector::from_iterator(k * k, m.transpose().iter().copied());
        let x = project_polyhedron(&c, &d, &y);
        DMatrix::from_row_slice(k, k, x.as_slice())
    };
    run_pg(DMatrix::zeros(k, k), |m| &gt * (g * m - a), 1.0 / l, project)
}

fn vdp(x: [f64; 2]) -> [f64; 2] {
    [x[1], (1.0 - x[0] * x[0]) * x[1] - x[0]]
}

fn rk4(x: [f64; 2], h: f64) -> [f64; 2] {
    let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
    let k1 = vdp(x);
    let k2 = vdp(add(x, k1, h / 2.0));
    let k3 = vdp(add(x, k2, h / 2.0));
    let k4 = vdp(add(x, k3, h));
    [
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Points on the Van der Pol limit cycle after a long transient.
pub fn vdp_cycle() -> Vec<[f64; 2]> {
    let h = 1e-3;
    let mut x = [2.0, 0.0];
    for _ in 0..100_000 {
        x = rk4(x, h);
    }
    (0..20_000)
        .map(|_| {
            x = rk4(x, h);
            x
        })
        .collect()
}

/// `steps` Hénon iterates after a burn-in of 1000.
pub fn henon_orbit(steps: usize) -> Vec<[f64; 2]> {
    let mut x = [0.0, 0.0];
    let mut out = Vec::with_capacity(steps);
    for i in 0..steps + 1000 {
        x = [1.0 - 1.4 * x[0] * x[0] + x[1], 0.3 * x[0]];
        if i >= 1000 {
            out.push(x);
        }
    }
    out
}

/// Distance queries against a point cloud through a bucket grid of cell
/// size `radius`.
pub struct Near {
    radius: f64,
    buckets: std::collections::HashMap<(i64, i64), Vec<[f64; 2]>>,
}

impl Near {
    pub fn new(points: &[[f64; 2]], radius: f64) -> Self {
        let mut buckets: std::collections::HashMap<(i64, i64), Vec<[f64; 2]>> = Default::default();
        for p in points {
            let key = ((p[0] / radius).floor() as i64, (p[1] / radius).floor() as i64);
            buckets.entry(key).or_default().push(*p);
        }
        Self { radius, buckets }
    }

    pub fn within(&self, x: &[f64]) -> bool {
        let (bx, by) = ((x[0] / self.radius).floor() as i64, (x[1] / self.radius).floor() as i64);
        let r2 = self.radius * self.radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ps) = self.buckets.get(&(bx + dx, by + dy)) {
                    if ps.iter().any(|p| (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2) <= r2) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Truncated Neumann series `m Σ_{k<terms} P₁ᵏ`.
pub fn neumann(p1: &DMatrix<f64>, m: &DVector<f64>, terms: usize) -> DVector<f64> {
    let mut acc = m.clone();
    let mut term = m.clone();
    let pt = p1.transpose();
    for _ in 1..terms {
        term = &pt * term;
        acc += &term;
    }
    acc
}
