//! Experiment configuration. Unknown keys are rejected; `resolve` fills
//! every optional field so the persisted copy is complete.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nsdmd::dictionary::{LambdaMode, RbfExponent, Ridge};
use nsdmd::domain::BoxDomain;
use nsdmd::model::FitMethod;
use nsdmd::nsdmd::{Case, NsdmdConfig};
use nsdmd::spectral::Which;
use nsdmd::systems::{benchmark, builtin_system, Horizon, Method, SamplingPlan, System};
use nsdmd::{Error, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub system: SystemBlock,
    #[serde(default)]
    pub dictionary: DictionaryBlock,
    #[serde(default)]
    pub fit: FitBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemBlock {
    pub name: String,
    /// The single seed behind every random draw of a run.
    pub seed: u64,
    /// Box the initial conditions are drawn from.
    pub domain: Option<BoxDomain>,
    /// Box used for lattices and partitions.
    pub state_domain: Option<BoxDomain>,
    pub n_init: Option<usize>,
    pub dt: Option<f64>,
    pub horizon: Option<Horizon>,
    pub method: Option<Method>,
}

impl Default for SystemBlock {
    fn default() -> Self {
        Self {
            name: "vanderpol".into(),
            seed: 0,
            domain: None,
            state_domain: None,
            n_init: None,
            dt: None,
            horizon: None,
            method: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryKindName {
    #[default]
    GaussianRbf,
    IndicatorBoxes,
    Coordinates,
    Monomials,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterPolicy {
    #[default]
    Kmeans,
    /// Regular lattice over the state domain; needs `grid_counts`.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DictionaryBlock {
    pub kind: DictionaryKindName,
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma: Option<f64>,
    pub rbf_exponent: RbfExponent,
    pub centers: CenterPolicy,
    pub kmeans_max_iter: usize,
    pub grid_counts: Option<Vec<usize>>,
    /// Monomial degree.
    pub degree: Option<u32>,
    /// Per-axis box counts for indicator dictionaries over the state domain.
    pub boxes: Option<Vec<usize>>,
    pub lambda: Option<LambdaMode>,
    pub ridge: Ridge,
}

impl Default for DictionaryBlock {
    fn default() -> Self {
        Self {
            kind: DictionaryKindName::GaussianRbf,
            k: 100,
            sigma: None,
            rbf_exponent: RbfExponent::Squared,
            centers: CenterPolicy::Kmeans,
            kmeans_max_iter: 300,
            grid_counts: None,
            degree: None,
            boxes: None,
            lambda: None,
            ridge: Ridge::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitBlock {
    /// Defaults to the NSDMD method matching `nsdmd.case`.
    pub method: Option<FitMethod>,
    pub nsdmd: NsdmdConfig,
    pub svd_tol: f64,
}

impl Default for FitBlock {
    fn default() -> Self {
        Self {
            method: None,
            nsdmd: NsdmdConfig::default(),
            svd_tol: nsdmd::edmd::DEFAULT_SVD_TOL,
        }
    }
}

/// An entry of `output.which`: `density` or `koopman:N` / `pf:N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridRequest {
    Density,
    Eigen(Which),
}

impl fmt::Display for GridRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridRequest::Density => f.write_str("density"),
            GridRequest::Eigen(w) => write!(f, "{w}"),
        }
    }
}

impl FromStr for GridRequest {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "density" {
            Ok(GridRequest::Density)
        } else {
            s.parse().map(GridRequest::Eigen)
        }
    }
}

impl GridRequest {
    pub fn file_name(&self) -> String {
        match self {
            GridRequest::Density => "density.csv".into(),
            GridRequest::Eigen(Which::Koopman(j)) => format!("koopman_{}.csv", j + 1),
            GridRequest::Eigen(Which::Pf(j)) => format!("pf_{}.csv", j + 1),
        }
    }
}

impl Serialize for GridRequest {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GridRequest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UlamBlock {
    /// Boxes per axis over the state domain.
    pub divisions: Option<Vec<usize>>,
    /// Uniform seeds per box; 0 counts the snapshot pairs instead.
    pub samples_per_box: usize,
    /// Sampling intervals (or map iterations) per Ulam transition.
    pub steps: usize,
    pub stationary_tol: f64,
    pub stationary_max_iter: usize,
    /// Lattice points per box axis used to cell-average the NSDMD density.
    pub refine: usize,
}

impl Default for UlamBlock {
    fn default() -> Self {
        Self {
            divisions: None,
            samples_per_box: 100,
            steps: 1,
            stationary_tol: 1e-12,
            stationary_max_iter: 1_000_000,
            refine: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// Lattice points per axis; defaults to 64 (2-D) or 24 (3-D).
    pub grid: Option<Vec<usize>>,
    /// Defaults to the state domain.
    pub grid_domain: Option<BoxDomain>,
    pub which: Vec<GridRequest>,
    pub attractor_threshold: f64,
    pub ulam: UlamBlock,
    pub snapshots: String,
    pub dictionary: String,
    pub model: String,
    pub eigenvalues: String,
    pub lyapunov: String,
    pub ulam_file: String,
    pub ulam_density: String,
    pub comparison: String,
    pub resolved_config: String,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            grid: None,
            grid_domain: None,
            which: vec![GridRequest::Density, GridRequest::Eigen(Which::Koopman(1))],
            attractor_threshold: nsdmd::lyapunov::DEFAULT_ATTRACTOR_THRESHOLD,
            ulam: UlamBlock::default(),
            snapshots: "snapshots.csv".into(),
            dictionary: "dictionary.json".into(),
            model: "model.json".into(),
            eigenvalues: "eigenvalues.csv".into(),
            lyapunov: "lyapunov.json".into(),
            ulam_file: "ulam.csv".into(),
            ulam_density: "ulam_density.csv".into(),
            comparison: "comparison.json".into(),
            resolved_config: "config.resolved.json".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        nsdmd::io::read_json(path)
    }

    /// Fill defaults from the benchmark presets (or generic ones for other
    /// systems) and validate the result.
    pub fn resolve(mut self) -> Result<Self> {
        let system = builtin_system(&self.system.name)?;
        let dim = system.dim();
        let preset = benchmark(&self.system.name, self.system.seed).ok();
        let s = &mut self.system;
        if let Some(b) = &preset {
            s.domain.get_or_insert_with(|| b.plan.domain.clone());
            s.state_domain.get_or_insert_with(|| b.state_domain.clone());
            s.n_init.get_or_insert(b.plan.n_init);
            s.dt.get_or_insert(b.plan.dt);
            s.horizon.get_or_insert(b.plan.horizon);
            s.method.get_or_insert(b.plan.method);
        }
        let domain = s
            .domain
            .clone()
            .ok_or_else(|| Error::Contract(format!("system `{}` needs an explicit domain", s.name)))?;
        domain.validate()?;
        if domain.dim() != dim {
            return Err(Error::Contract(format!("domain has dimension {}, system has {dim}", domain.dim())));
        }
        s.state_domain.get_or_insert_with(|| domain.clone());
        s.n_init.get_or_insert(100);
        s.dt.get_or_insert(if system.is_map() { 0.0 } else { 0.1 });
        s.horizon.get_or_insert(Horizon::Samples(100));
        s.method.get_or_insert(Method::default());
        let state_domain = s.state_domain.clone().unwrap();
        state_domain.validate()?;
        if state_domain.dim() != dim {
            return Err(invalid("state_domain dimension differs from the system"));
        }

        let d = &mut self.dictionary;
        match d.kind {
            DictionaryKindName::GaussianRbf => {
                d.sigma.get_or_insert(preset.as_ref().map_or(0.5, |b| b.rbf_sigma));
                d.lambda.get_or_insert(LambdaMode::Lebesgue);
                if d.centers == CenterPolicy::Grid {
                    let counts = d
                        .grid_counts
                        .clone()
                        .ok_or_else(|| invalid("grid centre policy needs `grid_counts`"))?;
                    if counts.len() != dim {
                        return Err(invalid("`grid_counts` needs one count per axis"));
                    }
                    d.k = counts.iter().product();
                }
            }
            DictionaryKindName::IndicatorBoxes => {
                let boxes = d.boxes.get_or_insert_with(|| vec![10; dim]).clone();
                if boxes.len() != dim {
                    return Err(invalid("`boxes` needs one count per axis"));
                }
                d.k = boxes.iter().product();
            }
            DictionaryKindName::Coordinates => d.k = dim,
            DictionaryKindName::Monomials => {
                d.degree.get_or_insert(2);
            }
        }
        d.lambda.get_or_insert(LambdaMode::Empirical);
        if d.k == 0 {
            return Err(invalid("dictionary needs K ≥ 1"));
        }
        if let Some(sigma) = d.sigma {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(invalid("sigma must be positive"));
            }
        }

        let f = &mut self.fit;
        match f.method {
            None => f.method = Some(f.nsdmd.case.method()),
            Some(m) => {
                if let Some(case) = Case::from_method(m) {
                    f.nsdmd.case = case;
                }
            }
        }
        f.nsdmd.validate()?;
        if !(f.svd_tol > 0.0) {
            return Err(invalid("svd_tol must be positive"));
        }

        let o = &mut self.output;
        let grid = o
            .grid
            .get_or_insert_with(|| vec![if dim <= 2 { 64 } else { 24 }; dim])
            .clone();
        if grid.len() != dim || grid.contains(&0) {
            return Err(invalid("output grid needs one positive count per axis"));
        }
        o.grid_domain.get_or_insert_with(|| state_domain.clone());
        let divisions = o.ulam.divisions.get_or_insert_with(|| vec![32; dim]).clone();
        if divisions.len() != dim || divisions.contains(&0) {
            return Err(invalid("ulam divisions need one positive count per axis"));
        }
        if o.ulam.steps == 0 {
            return Err(invalid("ulam steps must be at least 1"));
        }
        if o.ulam.refine == 0 {
            return Err(invalid("ulam refine must be at least 1"));
        }
        if !(o.attractor_threshold > 0.0 && o.attractor_threshold < 1.0) {
            return Err(invalid("attractor_threshold must lie in (0, 1)"));
        }
        Ok(self)
    }

    pub fn system(&self) -> Result<System> {
        builtin_system(&self.system.name)
    }

    /// Sampling plan of a resolved config.
    pub fn plan(&self) -> SamplingPlan {
        let s = &self.system;
        SamplingPlan {
            n_init: s.n_init.unwrap(),
            horizon: s.horizon.unwrap(),
            dt: s.dt.unwrap(),
            domain: s.domain.clone().unwrap(),
            seed: s.seed,
            method: s.method.unwrap(),
        }
    }

    pub fn method(&self) -> FitMethod {
        self.fit.method.unwrap()
    }

    /// Seed of the k-means initialisation, derived from the run seed.
    pub fn kmeans_seed(&self) -> u64 {
        self.system.seed.wrapping_add(1)
    }

    /// Seed of the Ulam box sampling, derived from the run seed.
    pub fn ulam_seed(&self) -> u64 {
        self.system.seed.wrapping_add(2)
    }
}

fn invalid(msg: &str) -> Error {
    Error::Contract(msg.to_string())
}
