//! Acceptance criteria. Runs as a plain binary and prints one
//! `criterion N: PASS|FAIL` line per criterion; pass criterion numbers as
//! arguments to run a subset (`cargo test --test acceptance -- 4 6`).

mod oracles;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use nsdmd::dictionary::{gram_matrices, kmeans_centers, Dictionary, GramOptions, GramPair, LambdaMode, RbfExponent, Ridge};
use nsdmd::domain::{BoxDomain, GridSpec};
use nsdmd::edmd::{dmd_operator, fit_edmd, DEFAULT_SVD_TOL};
use nsdmd::linalg::spectral_radius;
use nsdmd::lyapunov::{identify_attractor, lyapunov_measure, lyapunov_measure_p};
use nsdmd::model::TransferModel;
use nsdmd::nsdmd::{check_feasibility_for, fit_nsdmd, project_simplex, Case, NsdmdConfig};
use nsdmd::set_oriented::{compare_densities, ulam_from_sampling, ulam_from_trajectory, BoxPartition};
use nsdmd::spectral::{eig_sorted, invariant_coefficients, invariant_density};
use nsdmd::systems::{benchmark, builtin_system, sample_snapshots, Horizon, Method, SnapshotMeta, SnapshotSet, BENCHMARK_NAMES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K_BENCH: usize = 100;
/// Wall-clock budget handed to each NSDMD benchmark fit.
const FIT_BUDGET_S: f64 = 45.0;
const CASES: [Case; 3] = [Case::I, Case::II, Case::III];

struct Fit {
    case: Case,
    model: TransferModel,
    seconds: f64,
}

struct Bench {
    name: &'static str,
    gram: GramPair,
    edmd: TransferModel,
    fits: Vec<Fit>,
}

impl Bench {
    fn fit(&self, case: Case) -> &TransferModel {
        &self.fits.iter().find(|f| f.case == case).unwrap().model
    }
}

fn gram_for(name: &str, seed: u64, k: usize, sigma: Option<f64>, horizon: Option<Horizon>) -> (SnapshotSet, GramPair) {
    let b = benchmark(name, seed).unwrap();
    let mut plan = b.plan.clone();
    if let Some(h) = horizon {
        plan.horizon = h;
    }
    let data = sample_snapshots(&builtin_system(name).unwrap(), &plan).unwrap();
    let km = kmeans_centers(&data.x, k, seed + 1, 300).unwrap();
    let dict = Dictionary::gaussian_rbf(km.centers, sigma.unwrap_or(b.rbf_sigma), RbfExponent::Squared).unwrap();
    let opts = GramOptions {
        lambda: LambdaMode::Lebesgue,
        ridge: Ridge::Auto,
    };
    let gram = gram_matrices(&dict, &data, &opts).unwrap();
    (data, gram)
}

fn budgeted(case: Case) -> NsdmdConfig {
    NsdmdConfig {
        time_limit_s: Some(FIT_BUDGET_S),
        ..NsdmdConfig::with_case(case)
    }
}

fn timed_fit(gram: &GramPair, case: Case) -> Fit {
    let start = Instant::now();
    let model = fit_nsdmd(gram, &budgeted(case)).unwrap();
    Fit {
        case,
        model,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn bench(name: &'static str, seed: u64) -> Bench {
    let (_, gram) = gram_for(name, seed, K_BENCH, None, None);
    let edmd = fit_edmd(&gram, DEFAULT_SVD_TOL).unwrap();
    let fits = CASES.iter().map(|&c| timed_fit(&gram, c)).collect();
    Bench { name, gram, edmd, fits }
}

#[derive(Default)]
struct Ctx {
    benches: Option<Vec<Bench>>,
}

impl Ctx {
    fn benches(&mut self) -> &[Bench] {
        self.benches.get_or_insert_with(|| {
            BENCHMARK_NAMES
                .iter()
                .map(|&n| {
                    let b = bench(n, 0);
                    for f in &b.fits {
                        println!(
                            "    {:<9} case {:<3} J {:.6e}  iters {:>6}  converged {:<5}  {:>6.2}s  restoration {:.2e}",
                            n, f.case, f.model.objective, f.model.stats.iterations, f.model.stats.converged, f.seconds,
                            f.model.stats.restoration_weight
                        );
                    }
                    b
                })
                .collect()
        })
    }

    fn bench(&mut self, name: &str) -> &Bench {
        self.benches().iter().find(|b| b.name == name).unwrap()
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn c1_feasibility(ctx: &mut Ctx) -> Outcome {
    let mut failures = Vec::new();
    let mut slowest: f64 = 0.0;
    let mut count = 0;
    for b in ctx.benches() {
        for f in &b.fits {
            count += 1;
            slowest = slowest.max(f.seconds);
            let report = check_feasibility_for(&f.model, f.case, 1e-6);
            if !report.pass || f.seconds > 60.0 || b.gram.m > 10_000 {
                failures.push(format!("{} case {} ({:?}, {:.1}s)", b.name, f.case, report, f.seconds));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("{count} fits feasible at 1e-6, slowest {slowest:.1}s; failures: {failures:?}"),
    )
}

fn c2_stability(ctx: &mut Ctx) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 0..3u64 {
        let (edmd, fits): (TransferModel, Vec<TransferModel>) = if seed == 0 {
            let b = ctx.bench("vanderpol");
            (b.edmd.clone(), vec![b.fit(Case::II).clone(), b.fit(Case::III).clone()])
        } else {
            let (_, gram) = gram_for("vanderpol", seed, K_BENCH, None, None);
            let edmd = fit_edmd(&gram, DEFAULT_SVD_TOL).unwrap();
            (edmd, vec![timed_fit(&gram, Case::II).model, timed_fit(&gram, Case::III).model])
        };
        let re = spectral_radius(&edmd.k).unwrap();
        let r2 = spectral_radius(&fits[0].k).unwrap();
        let r3 = spectral_radius(&fits[1].k).unwrap();
        ok &= (r2 - 1.0).abs() <= 1e-6 && (r3 - 1.0).abs() <= 1e-6;
        parts.push(format!("seed {seed}: EDMD {re:.6}, II {r2:.10}, III {r3:.10}"));
    }
    outcome(ok, parts.join("; "))
}

fn random_gram(rng: &mut ChaCha8Rng, k: usize) -> GramPair {
    let m = 40;
    let psi_x = DMatrix::from_fn(m, k, |_, _| rng.random_range(0.0..1.0));
    let psi_y = DMatrix::from_fn(m, k, |_, _| rng.random_range(0.0..1.0));
    let g = psi_x.transpose() * &psi_x / m as f64;
    let a = psi_x.transpose() * &psi_y / m as f64;
    loop {
        let lambda = random_spd(rng, k, 0.5, 1.5);
        if positive_w(&lambda) {
            return GramPair::from_parts(g, a, lambda).unwrap();
        }
    }
}

fn random_orthogonal(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0)).qr().q()
}

fn random_spd(rng: &mut ChaCha8Rng, k: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = random_orthogonal(rng, k);
    let d = DMatrix::from_diagonal(&DVector::from_fn(k, |_, _| rng.random_range(lo..hi)));
    let s = &q * d * q.transpose();
    (&s + s.transpose()) / 2.0
}

/// `Λ⁻¹ 1 > 0` makes the Case III feasible set nonempty.
fn positive_w(lambda: &DMatrix<f64>) -> bool {
    let w = lambda.clone().try_inverse().unwrap() * DVector::from_element(lambda.nrows(), 1.0);
    w.iter().all(|v| *v > 1e-3)
}

fn c3_nesting(ctx: &mut Ctx) -> Outcome {
    // J(EDMD) is an unconstrained minimum, compared with roundoff slack.
    let check = |e: f64, j1: f64, j2: f64, j3: f64| e <= j1 + 1e-12 && j2 <= j3 + 1e-6 && j1 <= j3 + 1e-6;
    let mut violations = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for t in 0..20 {
        let gram = random_gram(&mut rng, 5);
        let e = fit_edmd(&gram, DEFAULT_SVD_TOL).unwrap().objective;
        let j: Vec<f64> = CASES
            .iter()
            .map(|&c| fit_nsdmd(&gram, &NsdmdConfig::with_case(c)).unwrap().objective)
            .collect();
        if !check(e, j[0], j[1], j[2]) {
            violations.push(format!("random {t}: {e:.3e} {j:?}"));
        }
    }
    let mut lines = Vec::new();
    for b in ctx.benches() {
        let j: Vec<f64> = CASES.iter().map(|&c| b.fit(c).objective).collect();
        lines.push(format!("{} {:.2e}/{:.3e}/{:.3e}/{:.3e}", b.name, b.edmd.objective, j[0], j[1], j[2]));
        if !check(b.edmd.objective, j[0], j[1], j[2]) {
            violations.push(b.name.to_string());
        }
    }
    outcome(
        violations.is_empty(),
        format!("20 random K=5 pairs and 5 benchmarks (EDMD/I/II/III: {}); violations: {violations:?}", lines.join(", ")),
    )
}

fn c4_solver_oracle(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut max_iters = 0;
    for t in 0..50 {
        let k = if t % 2 == 0 { 2 } else { 3 };
        let g = random_spd(&mut rng, k, 0.3, 1.0);
        let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-0.5..1.0));
        let lambda = loop {
            let l = random_spd(&mut rng, k, 0.5, 1.5);
            if positive_w(&l) {
                break l;
            }
        };
        let gram = GramPair::from_parts(g.clone(), a.clone(), lambda.clone()).unwrap();
        for case in CASES {
            let (k_ref, iters) = match case {
                Case::I => oracles::pg_case1(&g, &a),
                Case::II => oracles::pg_case2(&g, &a, &lambda),
                Case::III => oracles::pg_case3(&g, &a, &lambda),
            };
            max_iters = max_iters.max(iters);
            let j_ref = oracles::objective(&g, &k_ref, &a);
            let j = fit_nsdmd(&gram, &NsdmdConfig::with_case(case)).unwrap().objective;
            // exactly attainable targets leave both objectives at roundoff,
            // so the gap is measured against a floor tied to the data scale
            let rel = (j - j_ref).abs() / j_ref.max(1e-8 * a.norm());
            if rel > worst {
                worst = rel;
                worst_at = format!("instance {t} case {case}: ADMM {j:.12e} oracle {j_ref:.12e}");
            }
        }
    }
    // G = Λ = I
    let mut identity_err: f64 = 0.0;
    for _ in 0..20 {
        let k = 3;
        let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.5));
        let gram = GramPair::from_parts(DMatrix::identity(k, k), a.clone(), DMatrix::identity(k, k)).unwrap();
        let k1 = fit_nsdmd(&gram, &NsdmdConfig::with_case(Case::I)).unwrap().k;
        let k2 = fit_nsdmd(&gram, &NsdmdConfig::with_case(Case::II)).unwrap().k;
        identity_err = identity_err
            .max((k1 - a.map(|v| v.max(0.0))).amax())
            .max((k2 - oracles::simplex_rows(&a)).amax());
    }
    outcome(
        worst <= 1e-5 && identity_err <= 1e-6,
        format!(
            "150 fits, worst relative gap {worst:.2e} ({worst_at}), oracle iterations ≤ {max_iters}; G = Λ = I max error {identity_err:.2e}"
        ),
    )
}

fn markov_data(t: &DMatrix<f64>, steps: usize, seed: u64) -> SnapshotSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = 0usize;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(s);
    for _ in 0..steps {
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut next = t.ncols() - 1;
        for j in 0..t.ncols() {
            acc += t[(s, j)];
            if u < acc {
                next = j;
                break;
            }
        }
        s = next;
        states.push(s);
    }
    let x = DMatrix::from_fn(steps, 1, |i, _| states[i] as f64 + 0.5);
    let y = DMatrix::from_fn(steps, 1, |i, _| states[i + 1] as f64 + 0.5);
    let meta = SnapshotMeta {
        system: "markov3".into(),
        seed,
        dt: 1.0,
        n_init: 1,
        horizon: Horizon::Steps(steps),
        method: None,
        warnings: Vec::new(),
    };
    SnapshotSet::new(x, y, 1.0, meta).unwrap()
}

fn c5_markov(_: &mut Ctx) -> Outcome {
    let t = DMatrix::from_row_slice(3, 3, &[0.8, 0.15, 0.05, 0.1, 0.7, 0.2, 0.25, 0.25, 0.5]);
    let boxes = (0..3)
        .map(|i| BoxDomain::new(vec![i as f64], vec![i as f64 + 1.0]).unwrap())
        .collect();
    let dict = Dictionary::indicator_boxes(boxes).unwrap();
    let opts = GramOptions {
        lambda: LambdaMode::Lebesgue,
        ridge: Ridge::Fixed(0.0),
    };
    let seeds = 10u64;
    let sizes = [1_000usize, 10_000, 100_000];
    let mut mean_err = Vec::new();
    let mut worst_1e4: f64 = 0.0;
    for &m in &sizes {
        let mut total = 0.0;
        for seed in 0..seeds {
            let data = markov_data(&t, m, seed);
            let gram = gram_matrices(&dict, &data, &opts).unwrap();
            let model = fit_nsdmd(&gram, &NsdmdConfig::with_case(Case::II)).unwrap();
            let err = (&model.k - &t).amax();
            if m == 10_000 {
                worst_1e4 = worst_1e4.max(err);
            }
            total += err;
        }
        mean_err.push(total / seeds as f64);
    }
    // least-squares slope of log error against log M
    let xs: Vec<f64> = sizes.iter().map(|&m| (m as f64).ln()).collect();
    let ys: Vec<f64> = mean_err.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    outcome(
        worst_1e4 <= 0.05 && (-0.75..=-0.25).contains(&slope),
        format!("max error at M=1e4 over {seeds} seeds {worst_1e4:.4}; mean errors {mean_err:.4?}; log-log slope {slope:.3} (1/√M is −0.5)"),
    )
}

fn c6_dmd(_: &mut Ctx) -> Outcome {
    let a_true = DMatrix::from_row_slice(3, 3, &[0.9, 0.2, 0.0, -0.1, 0.8, 0.3, 0.05, 0.0, 0.7]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = 50;
    let x = DMatrix::from_fn(3, m, |_, _| rng.random_range(-1.0..1.0));
    let y = &a_true * &x;
    let k_dmd = dmd_operator(&x, &y, DEFAULT_SVD_TOL).unwrap();
    let meta = SnapshotMeta {
        system: "linear".into(),
        seed: 6,
        dt: 1.0,
        n_init: m,
        horizon: Horizon::Steps(1),
        method: None,
        warnings: Vec::new(),
    };
    let data = SnapshotSet::new(x.transpose(), y.transpose(), 1.0, meta).unwrap();
    let dict = Dictionary::coordinates(3).unwrap();
    let gram = gram_matrices(&dict, &data, &GramOptions::default()).unwrap();
    let k_edmd = fit_edmd(&gram, DEFAULT_SVD_TOL).unwrap().k;
    let e1 = (&k_edmd - k_dmd.transpose()).amax();
    let e2 = (&k_dmd - &a_true).amax();
    let e3 = (&k_edmd - a_true.transpose()).amax();
    outcome(
        e1 <= 1e-8 && e2 <= 1e-8 && e3 <= 1e-8,
        format!("|K_EDMD − K_DMDᵀ| {e1:.2e}, |K_DMD − A| {e2:.2e}, |K_EDMD − Aᵀ| {e3:.2e}"),
    )
}

/// Share of absolute lattice mass at points accepted by `near`.
fn mass_near(model: &TransferModel, domain: &BoxDomain, counts: &[usize], near: &oracles::Near) -> (f64, f64) {
    let spectrum = eig_sorted(model).unwrap();
    let grid = GridSpec::over(domain, counts).unwrap();
    let density = invariant_density(model, &spectrum, &grid).unwrap();
    let points = grid.points();
    let total: f64 = density.values.iter().map(|z| z.re.abs()).sum();
    let inside: f64 = points
        .iter()
        .zip(&density.values)
        .filter(|(p, _)| near.within(p))
        .map(|(_, z)| z.re.abs())
        .sum();
    let u = invariant_coefficients(&spectrum).unwrap();
    let min_rel = u.min() / u.amax();
    (inside / total, min_rel)
}

fn c7_density(ctx: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let henon = ctx.bench("henon").fit(Case::II).clone();
    let spectrum = eig_sorted(&henon).unwrap();
    let has_one = spectrum.index_of_one().is_some();
    let orbit = oracles::henon_orbit(100_000);
    let near = oracles::Near::new(&orbit, 0.1);
    let hb = benchmark("henon", 0).unwrap();
    let (h_frac, h_sign) = mass_near(&henon, &hb.state_domain, &[240, 120], &near);
    let henon_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let vdp = ctx.bench("vanderpol").fit(Case::II).clone();
    let cycle = oracles::vdp_cycle();
    let band = oracles::Near::new(&cycle, 0.5);
    let vb = benchmark("vanderpol", 0).unwrap();
    let (v_frac, _) = mass_near(&vdp, &vb.state_domain, &[160, 160], &band);
    let vdp_secs = start.elapsed().as_secs_f64();
    outcome(
        has_one && h_sign >= -1e-8 && h_frac >= 0.9 && v_frac >= 0.8 && henon_secs < 300.0 && vdp_secs < 300.0,
        format!(
            "Hénon: eigenvalue 1 {has_one}, min/max left-vector entry {h_sign:.2e}, mass within 0.1 of orbit {h_frac:.4}; \
             Van der Pol: mass within 0.5 of the cycle {v_frac:.4}; check times {henon_secs:.1}s / {vdp_secs:.1}s"
        ),
    )
}

#[derive(serde::Deserialize)]
struct UlamFixture {
    l1_threshold: f64,
}

fn c8_ulam(ctx: &mut Ctx) -> Outcome {
    let fixtures: BTreeMap<String, UlamFixture> =
        serde_json::from_str(include_str!("../fixtures/ulam_thresholds.json")).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    // Hénon needs a finer dictionary than the K = 100 benchmark for this comparison.
    let (_, gram) = gram_for("henon", 0, 200, Some(0.015), Some(Horizon::Samples(10_001)));
    let henon = fit_nsdmd(&gram, &NsdmdConfig::with_case(Case::II)).unwrap();
    let vdp = ctx.bench("vanderpol").fit(Case::II).clone();
    for (name, model, steps) in [("henon", henon, 1usize), ("vanderpol", vdp, 5)] {
        let b = benchmark(name, 0).unwrap();
        let partition = BoxPartition::new(b.state_domain.clone(), vec![32, 32]).unwrap();
        let system = builtin_system(name).unwrap();
        let method = match b.plan.method {
            Method::Rk4 { substeps } => Method::Rk4 {
                substeps: substeps * steps as u32,
            },
            m => m,
        };
        let ulam = ulam_from_sampling(&system, b.plan.dt * steps as f64, method, &partition, 1000, 2).unwrap();
        let spectrum = eig_sorted(&model).unwrap();
        let grid = GridSpec::over(&partition.domain, &[128, 128]).unwrap();
        let density = invariant_density(&model, &spectrum, &grid).unwrap();
        let l1 = compare_densities(&ulam, &partition, &density).unwrap();
        let threshold = fixtures[name].l1_threshold;
        ok &= l1 <= threshold;
        parts.push(format!("{name} L1 {l1:.4} (threshold {threshold})"));
    }
    outcome(ok, parts.join("; "))
}

fn c9_lyapunov(ctx: &mut Ctx) -> Outcome {
    let vdp = ctx.bench("vanderpol").fit(Case::II).clone();
    let cycle = oracles::vdp_cycle();
    let near = oracles::Near::new(&cycle, 0.5);
    let dict = vdp.dictionary().unwrap();
    let nsdmd::dictionary::DictionaryKind::GaussianRbf { centers, .. } = dict.kind() else {
        unreachable!()
    };
    let attractor: Vec<usize> = (0..centers.nrows())
        .filter(|&i| near.within(&[centers[(i, 0)], centers[(i, 1)]]))
        .collect();
    let r = lyapunov_measure(&vdp, &attractor, None).unwrap();
    let residual = r.residual.unwrap_or(f64::INFINITY);
    let spectrum = eig_sorted(&vdp).unwrap();
    let identified = identify_attractor(&spectrum, 0.1).unwrap();

    // toy chains
    let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
    let t1 = lyapunov_measure_p(&p, &[0], Some(&[1.0])).unwrap().measure == vec![1.0];
    let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
    let t2 = lyapunov_measure_p(&p, &[0], Some(&[1.0])).unwrap().measure == vec![2.0];
    let p = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.3, 0.5, 0.2, 0.1, 0.4, 0.5]);
    let r3 = lyapunov_measure_p(&p, &[0], Some(&[1.0, 2.0])).unwrap();
    let p1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.4, 0.5]);
    let series = oracles::neumann(&p1, &DVector::from_vec(vec![1.0, 2.0]), 1_000_000);
    let t3 = r3.measure.iter().zip(series.iter()).all(|(a, b)| (a - b).abs() <= 1e-10);
    outcome(
        r.converged && r.sub_spectral_radius < 1.0 && residual <= 1e-10 && t1 && t2 && t3,
        format!(
            "Van der Pol: {} oracle attractor centres ({} by the 0.1 threshold), restricted radius {:.6}, residual {residual:.2e}; toy chains {t1}/{t2}/{t3}",
            attractor.len(),
            identified.len(),
            r.sub_spectral_radius
        ),
    )
}

fn c10_properties(_: &mut Ctx) -> Outcome {
    use proptest::prelude::*;
    use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
    const CASES_PER_PROPERTY: u32 = 128;
    let runner = || {
        TestRunner::new_with_rng(
            Config {
                cases: CASES_PER_PROPERTY,
                failure_persistence: None,
                ..Config::default()
            },
            TestRng::deterministic_rng(RngAlgorithm::ChaCha),
        )
    };
    let mut results = Vec::new();

    // Gram symmetry and PSD
    let strat = (1usize..6, 2usize..30, any::<u64>());
    let r = runner().run(&strat, |(k, m, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = DMatrix::from_fn(k, 2, |_, _| rng.random_range(-1.0..1.0));
        let dict = Dictionary::gaussian_rbf(centers, rng.random_range(0.2..2.0), RbfExponent::Squared).unwrap();
        let x = DMatrix::from_fn(m, 2, |_, _| rng.random_range(-1.5..1.5));
        let y = DMatrix::from_fn(m, 2, |_, _| rng.random_range(-1.5..1.5));
        let meta = SnapshotMeta {
            system: "random".into(),
            seed,
            dt: 1.0,
            n_init: m,
            horizon: Horizon::Steps(1),
            method: None,
            warnings: Vec::new(),
        };
        let data = SnapshotSet::new(x, y, 1.0, meta).unwrap();
        let gram = gram_matrices(&dict, &data, &GramOptions::default()).unwrap();
        prop_assert_eq!(&gram.g, &gram.g.transpose());
        let min_eig = gram.g.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min_eig >= -1e-12 * gram.g.trace().max(1e-300));
        Ok(())
    });
    results.push(("Gram symmetric PSD", r.is_ok()));

    // simplex projection idempotence
    let r = runner().run(&prop::collection::vec(-5.0f64..5.0, 1..12), |v| {
        let mut once = v.clone();
        project_simplex(&mut once);
        let mut twice = once.clone();
        project_simplex(&mut twice);
        prop_assert!((once.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(once.iter().all(|x| *x >= 0.0));
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in once.iter().zip(oracles::simplex(&v)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        Ok(())
    });
    results.push(("simplex idempotence", r.is_ok()));

    // Ulam rows of an in-domain trajectory are stochastic
    let traj = || prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..300);
    let r = runner().run(&traj(), |pts| {
        let traj: Vec<Vec<f64>> = pts.iter().map(|&(a, b)| vec![a, b]).collect();
        let part = BoxPartition::new(BoxDomain::cube(2, 0.0, 1.0).unwrap(), vec![4, 6]).unwrap();
        let u = ulam_from_trajectory(&traj, &part).unwrap();
        prop_assert_eq!(u.total_count() as usize, traj.len() - 1);
        for i in 0..u.size {
            let s: f64 = u.row(i).iter().map(|(_, p)| p).sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        Ok(())
    });
    results.push(("row-stochastic Ulam rows", r.is_ok()));

    // refinement consistency
    let r = runner().run(&traj(), |pts| {
        let traj: Vec<Vec<f64>> = pts.iter().map(|&(a, b)| vec![a, b]).collect();
        let fine = BoxPartition::new(BoxDomain::cube(2, 0.0, 1.0).unwrap(), vec![8, 12]).unwrap();
        let factors = [2, 4];
        let merged = ulam_from_trajectory(&traj, &fine).unwrap().coarsen(&fine, &factors).unwrap();
        let direct = ulam_from_trajectory(&traj, &fine.coarsen(&factors).unwrap()).unwrap();
        prop_assert_eq!(merged.counts, direct.counts);
        Ok(())
    });
    results.push(("refinement consistency", r.is_ok()));

    // model round trip
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let r = runner().run(&(1usize..6, any::<u64>()), |(k, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = DMatrix::from_fn(k, 2, |_, _| rng.random_range(-1.0..1.0));
        let dict = Arc::new(Dictionary::gaussian_rbf(centers, 0.7, RbfExponent::Squared).unwrap());
        let kmat = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let lambda = random_spd(&mut rng, k, 0.5, 1.5);
        let gram = GramPair::from_parts(DMatrix::identity(k, k), kmat.clone(), lambda).unwrap();
        let mut model = fit_edmd(&gram, DEFAULT_SVD_TOL).unwrap();
        model.dictionary = Some(dict);
        nsdmd::io::write_model(&path, &model).unwrap();
        let back = nsdmd::io::read_model(&path).unwrap();
        prop_assert_eq!(&back.k, &model.k);
        prop_assert_eq!(&back.p, &model.p);
        prop_assert_eq!(&back.lambda, &model.lambda);
        let (s1, s2) = (eig_sorted(&model).unwrap(), eig_sorted(&back).unwrap());
        for (a, b) in s1.eigenvalues.iter().zip(&s2.eigenvalues) {
            prop_assert!((a - b).norm() <= 1e-12);
        }
        Ok(())
    });
    results.push(("model round trip", r.is_ok()));

    let pass = results.iter().all(|(_, ok)| *ok);
    let detail = results
        .iter()
        .map(|(n, ok)| format!("{n} {}", if *ok { "ok" } else { "FAILED" }))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, format!("{CASES_PER_PROPERTY} cases each: {detail}"))
}

type Criterion = (usize, &'static str, fn(&mut Ctx) -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "constraint preservation", c1_feasibility),
        (2, "unit spectral radius", c2_stability),
        (3, "objective nesting", c3_nesting),
        (4, "solver oracle", c4_solver_oracle),
        (5, "Markov-chain recovery", c5_markov),
        (6, "EDMD-DMD consistency", c6_dmd),
        (7, "invariant density support", c7_density),
        (8, "Ulam agreement", c8_ulam),
        (9, "Lyapunov certificate", c9_lyapunov),
        (10, "property suites", c10_properties),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut ctx = Ctx::default();
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = run(&mut ctx);
        println!(
            "criterion {n}: {} {name} [{:.1}s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
