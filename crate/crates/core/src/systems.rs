//! Benchmark dynamical systems, ODE integration and snapshot-pair sampling.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{Error, Result};

/// Continuous-time right-hand side `dx/dt = f(x)`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], dx: &mut [f64]);
    fn name(&self) -> &str;
}

/// Discrete-time map `x_{t+1} = T(x_t)`.
pub trait DiscreteMap: Send + Sync {
    fn dim(&self) -> usize;
    fn step(&self, x: &[f64], out: &mut [f64]);
    fn name(&self) -> &str;
}

#[derive(Clone)]
pub enum System {
    Flow(Arc<dyn VectorField>),
    Map(Arc<dyn DiscreteMap>),
}

impl System {
    pub fn dim(&self) -> usize {
        match self {
            System::Flow(f) => f.dim(),
            System::Map(m) => m.dim(),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            System::Flow(f) => f.name(),
            System::Map(m) => m.name(),
        }
    }

    pub fn is_map(&self) -> bool {
        matches!(self, System::Map(_))
    }
}

impl fmt::Debug for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            System::Flow(v) => write!(f, "Flow({}, dim {})", v.name(), v.dim()),
            System::Map(m) => write!(f, "Map({}, dim {})", m.name(), m.dim()),
        }
    }
}

/// `dx = x - x^3 + y, dy = 2x - y`; stable equilibria at ±(√3, 2√3), saddle at 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct TwoWell;

impl VectorField for TwoWell {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        dx[0] = x[0] - x[0].powi(3) + x[1];
        dx[1] = 2.0 * x[0] - x[1];
    }
    fn name(&self) -> &str {
        "two_well"
    }
}

/// Damped double-well Duffing oscillator `x'' = -0.5 x' - (x^2 - 1) x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Duffing;

impl VectorField for Duffing {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = -0.5 * x[1] - (x[0] * x[0] - 1.0) * x[0];
    }
    fn name(&self) -> &str {
        "duffing"
    }
}

/// Van der Pol oscillator `x'' = (1 - x^2) x' - x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct VanDerPol;

impl VectorField for VanDerPol {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = (1.0 - x[0] * x[0]) * x[1] - x[0];
    }
    fn name(&self) -> &str {
        "vanderpol"
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LorenzVariant {
    /// `x' = 10(y - x), y' = x(28 - z) - y, z' = xy - (8/3) z`.
    #[default]
    Standard,
    /// Parameters placed as printed in the source text:
    /// `y' = x(8/3 - z) - y, z' = xy - 28 z`.
    Literal,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Lorenz {
    pub variant: LorenzVariant,
}

impl VectorField for Lorenz {
    fn dim(&self) -> usize {
        3
    }
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        let (rho, beta) = match self.variant {
            LorenzVariant::Standard => (28.0, 8.0 / 3.0),
            LorenzVariant::Literal => (8.0 / 3.0, 28.0),
        };
        dx[0] = 10.0 * (x[1] - x[0]);
        dx[1] = x[0] * (rho - x[2]) - x[1];
        dx[2] = x[0] * x[1] - beta * x[2];
    }
    fn name(&self) -> &str {
        match self.variant {
            LorenzVariant::Standard => "lorenz",
            LorenzVariant::Literal => "lorenz_literal",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Henon {
    pub a: f64,
    pub b: f64,
}

impl Default for Henon {
    fn default() -> Self {
        Self { a: 1.4, b: 0.3 }
    }
}

impl DiscreteMap for Henon {
    fn dim(&self) -> usize {
        2
    }
    fn step(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0 - self.a * x[0] * x[0] + x[1];
        out[1] = self.b * x[0];
    }
    fn name(&self) -> &str {
        "henon"
    }
}

/// Vector field backed by a closure.
pub struct FnField<F> {
    dim: usize,
    name: String,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> FnField<F> {
    pub fn new(name: impl Into<String>, dim: usize, f: F) -> Self {
        Self {
            dim,
            name: name.into(),
            f,
        }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], dx: &mut [f64]) {
        (self.f)(x, dx)
    }
    fn name(&self) -> &str {
        &self.name
    }
}

/// Discrete map backed by a closure.
pub struct FnMap<F> {
    dim: usize,
    name: String,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> FnMap<F> {
    pub fn new(name: impl Into<String>, dim: usize, f: F) -> Self {
        Self {
            dim,
            name: name.into(),
            f,
        }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> DiscreteMap for FnMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn step(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
    fn name(&self) -> &str {
        &self.name
    }
}

pub const BUILTIN_NAMES: [&str; 6] = [
    "two_well",
    "duffing",
    "vanderpol",
    "lorenz",
    "lorenz_literal",
    "henon",
];

/// Look up one of the benchmark systems by name.
pub fn builtin_system(name: &str) -> Result<System> {
    Ok(match name {
        "two_well" => System::Flow(Arc::new(TwoWell)),
        "duffing" => System::Flow(Arc::new(Duffing)),
        "vanderpol" | "van_der_pol" => System::Flow(Arc::new(VanDerPol)),
        "lorenz" => System::Flow(Arc::new(Lorenz::default())),
        "lorenz_literal" => System::Flow(Arc::new(Lorenz {
            variant: LorenzVariant::Literal,
        })),
        "henon" => System::Map(Arc::new(Henon::default())),
        _ => {
            return Err(Error::Lookup {
                what: "system",
                name: name.to_string(),
            })
        }
    })
}

/// Integration scheme for one sampling interval `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    /// Classical RK4 with `substeps` equal steps per interval.
    Rk4 { substeps: u32 },
    /// Embedded Dormand-Prince 5(4) with local error control.
    Adaptive { tol: f64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::Rk4 { substeps: 1 }
    }
}

impl Method {
    pub fn adaptive() -> Self {
        Method::Adaptive { tol: 1e-8 }
    }
}

fn rk4_step(f: &dyn VectorField, x: &mut [f64], h: f64, work: &mut [Vec<f64>; 5]) {
    let n = x.len();
    let [k1, k2, k3, k4, tmp] = work;
    f.eval(x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f.eval(tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f.eval(tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    f.eval(tmp, k4);
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

// Dormand-Prince 5(4) tableau (autonomous fields only, so no c nodes).
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Advance `x` across an interval of length `dt` with error control. Every
/// accepted step has local error norm (mixed absolute/relative) at most `tol`.
fn dopri_interval(f: &dyn VectorField, x: &mut [f64], dt: f64, tol: f64, h: &mut f64) -> bool {
    let n = x.len();
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut t = 0.0;
    let mut guard = 0usize;
    while t < dt {
        guard += 1;
        if guard > 1_000_000 || !h.is_finite() || *h <= dt * 1e-14 {
            return false;
        }
        let step = h.min(dt - t);
        f.eval(x, &mut k[0]);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = x[i];
                for (r, kr) in k.iter().enumerate().take(s) {
                    acc += step * DP_A[s][r] * kr[i];
                }
                tmp[i] = acc;
            }
            f.eval(&tmp, &mut k[s]);
        }
        let mut err = 0.0f64;
        let mut next = vec![0.0; n];
        for i in 0..n {
            let mut hi = x[i];
            let mut lo = x[i];
            for s in 0..7 {
                hi += step * DP_B5[s] * k[s][i];
                lo += step * DP_B4[s] * k[s][i];
            }
            next[i] = hi;
            let sc = 1.0 + x[i].abs().max(hi.abs());
            err = err.max((hi - lo).abs() / sc);
        }
        if !err.is_finite() {
            *h = step * 0.1;
            continue;
        }
        if err <= tol {
            x.copy_from_slice(&next);
            t += step;
            if dt - t <= dt * 1e-13 {
                t = dt;
            }
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0)
        };
        *h = step * factor;
    }
    true
}

fn advance(
    field: &dyn VectorField,
    x: &mut [f64],
    dt: f64,
    method: Method,
    rk_work: &mut [Vec<f64>; 5],
    h_adapt: &mut f64,
) -> bool {
    match method {
        Method::Rk4 { substeps } => {
            let m = substeps.max(1);
            let h = dt / m as f64;
            for _ in 0..m {
                rk4_step(field, x, h, rk_work);
            }
            true
        }
        Method::Adaptive { tol } => dopri_interval(field, x, dt, tol, h_adapt),
    }
}

/// Trajectory sampled every `dt`, stopping early at the first non-finite
/// state. Returns the finite prefix and the index of the offending step.
fn trajectory_prefix(
    field: &dyn VectorField,
    x0: &[f64],
    dt: f64,
    steps: usize,
    method: Method,
) -> (Vec<Vec<f64>>, Option<usize>) {
    let n = x0.len();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.to_vec());
    let mut x = x0.to_vec();
    let mut work: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let mut h = dt;
    for s in 1..=steps {
        let ok = advance(field, &mut x, dt, method, &mut work, &mut h);
        if !ok || x.iter().any(|v| !v.is_finite()) {
            return (out, Some(s));
        }
        out.push(x.clone());
    }
    (out, None)
}

/// Integrate `field` from `x0` for `steps` intervals of length `dt`.
/// Returns `steps + 1` states with `trajectory[0] == x0`.
pub fn integrate(
    field: &dyn VectorField,
    x0: &[f64],
    dt: f64,
    steps: usize,
    method: Method,
) -> Result<Vec<Vec<f64>>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::contract("dt must be positive"));
    }
    if steps == 0 {
        return Err(Error::contract("steps must be at least 1"));
    }
    if x0.len() != field.dim() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("x0 must be finite with the field's dimension"));
    }
    match trajectory_prefix(field, x0, dt, steps, method) {
        (traj, None) => Ok(traj),
        (_, Some(step)) => Err(Error::Divergence { step }),
    }
}

/// Iterate a map for `steps` steps (`steps + 1` states).
pub fn iterate_map(map: &dyn DiscreteMap, x0: &[f64], steps: usize) -> (Vec<Vec<f64>>, Option<usize>) {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.to_vec());
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    for s in 1..=steps {
        map.step(&x, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return (out, Some(s));
        }
        std::mem::swap(&mut x, &mut next);
        out.push(x.clone());
    }
    (out, None)
}

/// Length of each sampled trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Horizon {
    /// Sampling window `[0, T)`: `round(T / dt)` samples, one fewer pair.
    Time(f64),
    /// Number of steps (pairs) per trajectory.
    Steps(usize),
    /// Number of samples per trajectory, i.e. `samples - 1` pairs.
    Samples(usize),
}

impl Horizon {
    /// Number of one-step transitions per trajectory.
    pub fn steps(&self, dt: f64) -> Result<usize> {
        match *self {
            Horizon::Time(t) => {
                if !(dt > 0.0) {
                    return Err(Error::contract("time horizon needs dt > 0"));
                }
                let s = (t / dt).round();
                if !(s >= 2.0 && s.is_finite()) {
                    return Err(Error::contract("horizon shorter than one step"));
                }
                Ok(s as usize - 1)
            }
            Horizon::Steps(s) if s >= 1 => Ok(s),
            Horizon::Samples(s) if s >= 2 => Ok(s - 1),
            _ => Err(Error::contract("horizon shorter than one step")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub system: String,
    pub seed: u64,
    pub dt: f64,
    pub n_init: usize,
    pub horizon: Horizon,
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Paired snapshot data: row `m` of `y` is the one-step image of row `m` of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub dt: f64,
    pub meta: SnapshotMeta,
}

impl SnapshotSet {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, dt: f64, meta: SnapshotMeta) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(Error::contract("X and Y must have identical shape"));
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::EmptyData("snapshot set needs at least one pair".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::contract("snapshot entries must be finite"));
        }
        Ok(Self { x, y, dt, meta })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.x.ncols()
    }

    /// Build from trajectories, pairing consecutive samples within each one.
    pub fn from_trajectories(trajectories: &[Vec<Vec<f64>>], dt: f64, meta: SnapshotMeta) -> Result<Self> {
        let n = trajectories
            .iter()
            .flat_map(|t| t.first())
            .map(Vec::len)
            .next()
            .ok_or_else(|| Error::EmptyData("no trajectories".into()))?;
        let pairs: usize = trajectories.iter().map(|t| t.len().saturating_sub(1)).sum();
        let mut x = DMatrix::zeros(pairs, n);
        let mut y = DMatrix::zeros(pairs, n);
        let mut row = 0;
        for traj in trajectories {
            for w in traj.windows(2) {
                for j in 0..n {
                    x[(row, j)] = w[0][j];
                    y[(row, j)] = w[1][j];
                }
                row += 1;
            }
        }
        Self::new(x, y, dt, meta)
    }
}

/// Snapshot-sampling plan: uniform initial conditions in `domain`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub n_init: usize,
    pub horizon: Horizon,
    /// Sampling interval; ignored (reported as 0) for maps.
    pub dt: f64,
    pub domain: BoxDomain,
    pub seed: u64,
    pub method: Method,
}

/// Draw `n` points uniformly from `domain` with a seeded ChaCha stream.
pub fn uniform_points(domain: &BoxDomain, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            domain
                .lo
                .iter()
                .zip(&domain.hi)
                .map(|(&l, &h)| rng.random_range(l..h))
                .collect()
        })
        .collect()
}

pub fn sample_snapshots(system: &System, plan: &SamplingPlan) -> Result<SnapshotSet> {
    plan.domain.validate()?;
    if plan.domain.dim() != system.dim() {
        return Err(Error::contract("domain dimension differs from system dimension"));
    }
    if plan.n_init == 0 {
        return Err(Error::contract("n_init must be at least 1"));
    }
    let inits = uniform_points(&plan.domain, plan.n_init, plan.seed);
    sample_from(system, &inits, plan.horizon, plan.dt, plan.method, plan.seed)
}

/// Snapshot pairs from explicit initial conditions.
pub fn sample_from(
    system: &System,
    inits: &[Vec<f64>],
    horizon: Horizon,
    dt: f64,
    method: Method,
    seed: u64,
) -> Result<SnapshotSet> {
    if inits.is_empty() {
        return Err(Error::contract("need at least one initial condition"));
    }
    if inits.iter().any(|x| x.len() != system.dim() || x.iter().any(|v| !v.is_finite())) {
        return Err(Error::contract("initial conditions must be finite with the system dimension"));
    }
    let steps = match system {
        System::Map(_) => horizon.steps(1.0)?,
        System::Flow(_) => {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::contract("dt must be positive"));
            }
            horizon.steps(dt)?
        }
    };
    let results: Vec<(Vec<Vec<f64>>, Option<usize>)> = inits
        .par_iter()
        .map(|x0| match system {
            System::Flow(f) => trajectory_prefix(f.as_ref(), x0, dt, steps, method),
            System::Map(m) => iterate_map(m.as_ref(), x0, steps),
        })
        .collect();
    let mut warnings = Vec::new();
    for (i, (_, div)) in results.iter().enumerate() {
        if let Some(step) = div {
            warnings.push(format!("trajectory {i} diverged at step {step}; truncated"));
        }
    }
    let trajectories: Vec<Vec<Vec<f64>>> = results.into_iter().map(|(t, _)| t).collect();
    let (dt_out, method_out) = match system {
        System::Map(_) => (0.0, None),
        System::Flow(_) => (dt, Some(method)),
    };
    let meta = SnapshotMeta {
        system: system.name().to_string(),
        seed,
        dt: dt_out,
        n_init: inits.len(),
        horizon,
        method: method_out,
        warnings,
    };
    SnapshotSet::from_trajectories(&trajectories, dt_out, meta)
}

/// Desk-scale settings for one of the benchmark systems: at most 10⁴
/// snapshot pairs, a state-space box for grids and partitions, and an RBF
/// width that keeps the analytic Λ well conditioned at K = 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub plan: SamplingPlan,
    pub state_domain: BoxDomain,
    pub rbf_sigma: f64,
}

pub const BENCHMARK_NAMES: [&str; 5] = ["two_well", "duffing", "vanderpol", "henon", "lorenz"];

pub fn benchmark(name: &str, seed: u64) -> Result<Benchmark> {
    let cube = |d, lo, hi| BoxDomain::cube(d, lo, hi);
    let rk4 = Method::default();
    let (n_init, horizon, dt, domain, method, state_domain, rbf_sigma) = match name {
        "two_well" => (100, Horizon::Time(10.0), 0.1, cube(2, -5.0, 5.0)?, Method::Rk4 { substeps: 4 }, cube(2, -5.0, 5.0)?, 0.05),
        "duffing" => (1000, Horizon::Time(2.5), 0.25, cube(2, -2.0, 2.0)?, rk4, cube(2, -2.0, 2.0)?, 0.2),
        "vanderpol" | "van_der_pol" => (100, Horizon::Time(10.0), 0.1, cube(2, -3.0, 3.0)?, rk4, cube(2, -4.0, 4.0)?, 0.15),
        "henon" => (
            1,
            Horizon::Samples(5000),
            0.0,
            cube(2, -0.1, 0.1)?,
            rk4,
            BoxDomain::new(vec![-1.5, -0.45], vec![1.5, 0.45])?,
            0.03,
        ),
        "lorenz" | "lorenz_literal" => (
            1,
            Horizon::Time(100.0),
            0.02,
            BoxDomain::new(vec![1.0; 3], vec![1.0 + 1e-9; 3])?,
            Method::Rk4 { substeps: 4 },
            BoxDomain::new(vec![-25.0, -30.0, 0.0], vec![25.0, 30.0, 55.0])?,
            2.0,
        ),
        _ => {
            return Err(Error::Lookup {
                what: "benchmark",
                name: name.to_string(),
            })
        }
    };
    Ok(Benchmark {
        plan: SamplingPlan {
            n_init,
            horizon,
            dt,
            domain,
            seed,
            method,
        },
        state_domain,
        rbf_sigma,
    })
}
