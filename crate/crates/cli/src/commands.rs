use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use log::{info, warn};
use nalgebra::DMatrix;
use serde::Serialize;

use nsdmd::dictionary::{gram_matrices, kmeans_centers, Dictionary, GramOptions};
use nsdmd::domain::GridSpec;
use nsdmd::edmd::{fit_dmd, fit_edmd};
use nsdmd::io::{fmt_f64, read_model, read_snapshots, write_atomic, write_dictionary, write_eigen_table, write_grid, write_json, write_model, write_snapshots, write_ulam};
use nsdmd::lyapunov::{identify_attractor, lyapunov_measure};
use nsdmd::model::{FitMethod, TransferModel};
use nsdmd::nsdmd::{fit_nsdmd, Case};
use nsdmd::set_oriented::{compare_densities, ulam_from_pairs, ulam_from_sampling, BoxPartition, UlamMatrix};
use nsdmd::spectral::{eig_sorted, eigenfunction_grid, invariant_density};
use nsdmd::systems::{sample_snapshots, FnMap, Method, System};

use crate::config::{CenterPolicy, DictionaryKindName, ExperimentConfig, GridRequest};
use crate::{Cli, Command};

/// A run finished and wrote its outputs, but a solver or certificate did
/// not converge.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NotConverged(pub String);

struct Ctx {
    config: ExperimentConfig,
    out_dir: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn snapshots_path(&self, given: &Option<PathBuf>) -> PathBuf {
        given.clone().unwrap_or_else(|| self.path(&self.config.output.snapshots))
    }

    fn model_path(&self, given: &Option<PathBuf>) -> PathBuf {
        given.clone().unwrap_or_else(|| self.path(&self.config.output.model))
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.system.seed = seed;
    }
    let config = config.resolve()?;
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| nsdmd::Error::Io { path: cli.out_dir.clone(), source: e })?;
    let ctx = Ctx {
        config,
        out_dir: cli.out_dir.clone(),
    };
    write_json(&ctx.path(&ctx.config.output.resolved_config), &ctx.config)?;
    match &cli.command {
        Command::Simulate => simulate(&ctx),
        Command::Fit { snapshots } => fit(&ctx, &ctx.snapshots_path(snapshots)),
        Command::Spectrum { model, which } => {
            let which = if which.is_empty() { &ctx.config.output.which } else { which };
            spectrum(&ctx, &ctx.model_path(model), which)
        }
        Command::Lyapunov {
            model,
            attractor,
            threshold,
        } => lyapunov(&ctx, &ctx.model_path(model), attractor.as_deref(), *threshold),
        Command::Ulam { snapshots } => ulam(&ctx, &ctx.snapshots_path(snapshots)),
        Command::Compare { model, snapshots } => {
            compare(&ctx, &ctx.model_path(model), &ctx.snapshots_path(snapshots))
        }
    }
}

fn simulate(ctx: &Ctx) -> Result<()> {
    let system = ctx.config.system()?;
    let data = sample_snapshots(&system, &ctx.config.plan())?;
    for w in &data.meta.warnings {
        warn!("{w}");
    }
    let path = ctx.path(&ctx.config.output.snapshots);
    write_snapshots(&path, &data)?;
    info!("{} snapshot pairs -> {}", data.len(), path.display());
    Ok(())
}

fn build_dictionary(config: &ExperimentConfig, x: &DMatrix<f64>) -> Result<Dictionary> {
    let d = &config.dictionary;
    let state_domain = config.system.state_domain.as_ref().unwrap();
    Ok(match d.kind {
        DictionaryKindName::GaussianRbf => {
            let sigma = d.sigma.unwrap();
            match d.centers {
                CenterPolicy::Kmeans => {
                    let km = kmeans_centers(x, d.k, config.kmeans_seed(), d.kmeans_max_iter)?;
                    if !km.converged {
                        warn!("k-means stopped after {} iterations without converging", km.iterations);
                    }
                    Dictionary::gaussian_rbf(km.centers, sigma, d.rbf_exponent)?
                }
                CenterPolicy::Grid => {
                    Dictionary::rbf_on_grid(state_domain, d.grid_counts.as_ref().unwrap(), sigma, d.rbf_exponent)?
                }
            }
        }
        DictionaryKindName::IndicatorBoxes => {
            let partition = BoxPartition::new(state_domain.clone(), d.boxes.clone().unwrap())?;
            Dictionary::indicator_boxes((0..partition.len()).map(|i| partition.cell(i)).collect())?
        }
        DictionaryKindName::Coordinates => Dictionary::coordinates(x.ncols())?,
        DictionaryKindName::Monomials => Dictionary::monomials(x.ncols(), d.degree.unwrap())?,
    })
}

fn fit(ctx: &Ctx, snapshots: &Path) -> Result<()> {
    let config = &ctx.config;
    let data = read_snapshots(snapshots)?;
    let method = config.method();
    let model = if method == FitMethod::Dmd {
        fit_dmd(&data.x.transpose(), &data.y.transpose(), config.fit.svd_tol)?
    } else {
        let dict = Arc::new(build_dictionary(config, &data.x)?);
        let opts = GramOptions {
            lambda: config.dictionary.lambda.unwrap(),
            ridge: config.dictionary.ridge,
        };
        let gram = gram_matrices(&dict, &data, &opts)?;
        write_dictionary(&ctx.path(&config.output.dictionary), &dict, Some(gram.ridge))?;
        match Case::from_method(method) {
            Some(_) => fit_nsdmd(&gram, &config.fit.nsdmd)?,
            None => fit_edmd(&gram, config.fit.svd_tol)?,
        }
    };
    let path = ctx.path(&config.output.model);
    write_model(&path, &model)?;
    report_fit(&model);
    info!("model -> {}", path.display());
    if let Some(f) = &model.feasibility {
        if !f.pass {
            warn!("feasibility check failed: {f:?}");
        }
    }
    if Case::from_method(method).is_some() && !model.stats.converged {
        return Err(NotConverged(format!(
            "NSDMD stopped after {} iterations: primal residual {:.3e}, dual residual {:.3e} (model written to {})",
            model.stats.iterations,
            model.stats.primal_residual,
            model.stats.dual_residual,
            path.display()
        ))
        .into());
    }
    Ok(())
}

fn report_fit(model: &TransferModel) {
    let s = &model.stats;
    info!(
        "{}: objective {:.6e}, {} iterations, converged {}, wall time {:.2}s",
        model.method, model.objective, s.iterations, s.converged, s.wall_time_s
    );
    if let Ok(r) = nsdmd::linalg::spectral_radius(&model.k) {
        info!("spectral radius of K: {r:.9}");
    }
}

fn spectrum(ctx: &Ctx, model_path: &Path, which: &[GridRequest]) -> Result<()> {
    let model = read_model(model_path)?;
    let spectrum = eig_sorted(&model)?;
    let table = ctx.path(&ctx.config.output.eigenvalues);
    write_eigen_table(&table, &spectrum)?;
    info!("{} eigenvalues -> {}", spectrum.len(), table.display());
    let o = &ctx.config.output;
    let grid = GridSpec::over(o.grid_domain.as_ref().unwrap(), o.grid.as_ref().unwrap())?;
    for request in which {
        let values = match request {
            GridRequest::Density => invariant_density(&model, &spectrum, &grid)?,
            GridRequest::Eigen(w) => eigenfunction_grid(&model, &spectrum, *w, &grid)?,
        };
        let path = ctx.path(&request.file_name());
        write_grid(&path, &values)?;
        info!("{request} -> {}", path.display());
    }
    Ok(())
}

fn lyapunov(ctx: &Ctx, model_path: &Path, attractor: Option<&[usize]>, threshold: Option<f64>) -> Result<()> {
    let model = read_model(model_path)?;
    let attractor = match attractor {
        Some(a) => a.to_vec(),
        None => {
            let spectrum = eig_sorted(&model)?;
            identify_attractor(&spectrum, threshold.unwrap_or(ctx.config.output.attractor_threshold))?
        }
    };
    let result = lyapunov_measure(&model, &attractor, None)?;
    let path = ctx.path(&ctx.config.output.lyapunov);
    write_json(&path, &result)?;
    info!(
        "attractor of {} indices, restricted spectral radius {:.9} -> {}",
        result.attractor_indices.len(),
        result.sub_spectral_radius,
        path.display()
    );
    if !result.converged {
        return Err(NotConverged(format!(
            "no Lyapunov measure: restricted spectral radius {:.9}",
            result.sub_spectral_radius
        ))
        .into());
    }
    Ok(())
}

fn partition(config: &ExperimentConfig) -> Result<BoxPartition> {
    Ok(BoxPartition::new(
        config.system.state_domain.clone().unwrap(),
        config.output.ulam.divisions.clone().unwrap(),
    )?)
}

fn build_ulam(ctx: &Ctx, partition: &BoxPartition, snapshots: &Path) -> Result<UlamMatrix> {
    let config = &ctx.config;
    let u = &config.output.ulam;
    let matrix = if u.samples_per_box > 0 {
        let (system, dt, method) = ulam_dynamics(config)?;
        ulam_from_sampling(&system, dt, method, partition, u.samples_per_box, config.ulam_seed())?
    } else {
        let data = read_snapshots(snapshots).with_context(|| "Ulam counting from snapshot pairs")?;
        ulam_from_pairs(&data, partition)?
    };
    if matrix.dropped > 0 {
        warn!("{} transitions left the partition domain", matrix.dropped);
    }
    Ok(matrix)
}

/// The system advanced by `output.ulam.steps` sampling intervals.
fn ulam_dynamics(config: &ExperimentConfig) -> Result<(System, f64, Method)> {
    let plan = config.plan();
    let steps = config.output.ulam.steps;
    let system = config.system()?;
    Ok(match system {
        System::Map(map) if steps > 1 => {
            let dim = map.dim();
            let name = format!("{}^{steps}", map.name());
            let iterated = FnMap::new(name, dim, move |x: &[f64], out: &mut [f64]| {
                let mut cur = x.to_vec();
                for _ in 0..steps {
                    map.step(&cur, out);
                    cur.copy_from_slice(out);
                }
            });
            (System::Map(Arc::new(iterated)), plan.dt, plan.method)
        }
        System::Flow(_) if steps > 1 => {
            let method = match plan.method {
                Method::Rk4 { substeps } => Method::Rk4 {
                    substeps: substeps * steps as u32,
                },
                adaptive => adaptive,
            };
            (system, plan.dt * steps as f64, method)
        }
        _ => (system, plan.dt, plan.method),
    })
}

fn ulam_stationary(ctx: &Ctx, matrix: &UlamMatrix) -> Vec<f64> {
    let u = &ctx.config.output.ulam;
    let (pi, ok) = matrix.stationary(u.stationary_tol, u.stationary_max_iter);
    if !ok {
        warn!("Ulam stationary density did not reach tolerance {:e}", u.stationary_tol);
    }
    pi
}

fn ulam(ctx: &Ctx, snapshots: &Path) -> Result<()> {
    let partition = partition(&ctx.config)?;
    let matrix = build_ulam(ctx, &partition, snapshots)?;
    let path = ctx.path(&ctx.config.output.ulam_file);
    write_ulam(&path, &matrix)?;
    let pi = ulam_stationary(ctx, &matrix);
    let vol = partition.cell_volume();
    let mut out = String::new();
    let dim = partition.dim();
    let header: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    out += &format!("box,{},prob,density\n", header.join(","));
    for (i, p) in pi.iter().enumerate() {
        let centre = partition.grid().point(i);
        let coords: Vec<String> = centre.iter().map(|v| fmt_f64(*v)).collect();
        out += &format!("{i},{},{},{}\n", coords.join(","), fmt_f64(*p), fmt_f64(p / vol));
    }
    let density_path = ctx.path(&ctx.config.output.ulam_density);
    write_atomic(&density_path, out.as_bytes())?;
    info!("Ulam matrix -> {}, stationary density -> {}", path.display(), density_path.display());
    Ok(())
}

#[derive(Serialize)]
struct Comparison {
    l1_distance: f64,
    divisions: Vec<usize>,
    visited_boxes: usize,
    eigenvalue: [f64; 2],
    negative_mass_fraction: Option<f64>,
}

fn compare(ctx: &Ctx, model_path: &Path, snapshots: &Path) -> Result<()> {
    let model = read_model(model_path)?;
    let spectrum = eig_sorted(&model)?;
    let partition = partition(&ctx.config)?;
    let refine = ctx.config.output.ulam.refine;
    let counts: Vec<usize> = partition.divisions.iter().map(|d| d * refine).collect();
    let grid = GridSpec::over(&partition.domain, &counts)?;
    let density = invariant_density(&model, &spectrum, &grid)?;
    let matrix = build_ulam(ctx, &partition, snapshots)?;
    let l1 = compare_densities(&matrix, &partition, &density)?;
    let result = Comparison {
        l1_distance: l1,
        divisions: partition.divisions.clone(),
        visited_boxes: matrix.visited.iter().filter(|v| **v).count(),
        eigenvalue: [density.eigenvalue.re, density.eigenvalue.im],
        negative_mass_fraction: density.negative_mass_fraction,
    };
    let path = ctx.path(&ctx.config.output.comparison);
    write_json(&path, &result)?;
    info!("L1 distance {l1:.4} -> {}", path.display());
    Ok(())
}
