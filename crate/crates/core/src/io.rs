//! File formats. Every write goes through a temporary file in the target
//! directory followed by a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, DictionaryFile};
use crate::domain::GridSpec;
use crate::error::{Error, Result};
use crate::linalg::{from_rows, to_rows, C64};
use crate::model::{FeasibilityReport, FitMethod, SolverStats, TransferModel};
use crate::set_oriented::UlamMatrix;
use crate::spectral::{EigenfunctionGrid, Normalization, Spectrum, Which};
use crate::systems::{SnapshotMeta, SnapshotSet};

/// 17 significant digits: enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::format(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e))
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::format("<csv>", e);
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(&r).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::format("<csv>", e.error()))
}

/// `foo.csv` → `foo.meta.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Snapshot CSV with header `x1..xN,y1..yN` plus the meta sidecar.
pub fn write_snapshots(path: &Path, data: &SnapshotSet) -> Result<()> {
    let n = data.state_dim();
    let header: Vec<String> = (1..=n)
        .map(|i| format!("x{i}"))
        .chain((1..=n).map(|i| format!("y{i}")))
        .collect();
    let rows = (0..data.len()).map(|m| {
        data.x
            .row(m)
            .iter()
            .chain(data.y.row(m).iter())
            .map(|v| fmt_f64(*v))
            .collect()
    });
    write_atomic(path, &csv_bytes(&header, rows)?)?;
    write_json(&sidecar_path(path), &data.meta)
}

pub fn read_snapshots(path: &Path) -> Result<SnapshotSet> {
    let meta: SnapshotMeta = read_json(&sidecar_path(path))?;
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let header = r.headers().map_err(|e| Error::format(path, e))?.clone();
    let width = header.len();
    let n = width / 2;
    let expected: Vec<String> = (1..=n)
        .map(|i| format!("x{i}"))
        .chain((1..=n).map(|i| format!("y{i}")))
        .collect();
    if width == 0 || width % 2 != 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::format(path, "header must be x1..xN,y1..yN"));
    }
    let mut values = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("row {}: bad number `{field}`", line + 1)))?;
            values.push(v);
        }
    }
    let m = values.len() / width;
    let x = DMatrix::from_fn(m, n, |i, j| values[i * width + j]);
    let y = DMatrix::from_fn(m, n, |i, j| values[i * width + n + j]);
    SnapshotSet::new(x, y, meta.dt, meta).map_err(|e| Error::format(path, e))
}

pub fn write_dictionary(path: &Path, dict: &Dictionary, ridge: Option<f64>) -> Result<()> {
    write_json(path, &dict.to_file(ridge))
}

pub fn read_dictionary(path: &Path) -> Result<Dictionary> {
    read_json::<DictionaryFile>(path)?
        .to_dictionary()
        .map_err(|e| Error::format(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub method: FitMethod,
    pub objective: f64,
    pub ridge: f64,
    pub k: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub solver_stats: SolverStats,
    #[serde(default)]
    pub feasibility: Option<FeasibilityReport>,
    /// SHA-256 of the canonical dictionary JSON.
    #[serde(default)]
    pub dictionary_hash: Option<String>,
    #[serde(default)]
    pub dictionary: Option<DictionaryFile>,
}

impl ModelFile {
    pub fn from_model(model: &TransferModel) -> Self {
        Self {
            method: model.method,
            objective: model.objective,
            ridge: model.ridge,
            k: to_rows(&model.k),
            p: to_rows(&model.p),
            lambda: to_rows(&model.lambda),
            solver_stats: model.stats.clone(),
            feasibility: model.feasibility,
            dictionary_hash: model.dictionary.as_ref().map(|d| d.hash()),
            dictionary: model.dictionary.as_ref().map(|d| d.to_file(Some(model.ridge))),
        }
    }

    pub fn to_model(&self) -> Result<TransferModel> {
        let dictionary = match &self.dictionary {
            Some(f) => {
                let d = f.to_dictionary()?;
                if let Some(h) = &self.dictionary_hash {
                    if *h != d.hash() {
                        return Err(Error::contract("dictionary does not match its recorded hash"));
                    }
                }
                Some(Arc::new(d))
            }
            None => None,
        };
        TransferModel::from_parts(
            from_rows(&self.k)?,
            from_rows(&self.p)?,
            from_rows(&self.lambda)?,
            self.ridge,
            dictionary,
            self.objective,
            self.method,
            self.solver_stats.clone(),
            self.feasibility,
        )
    }
}

pub fn write_model(path: &Path, model: &TransferModel) -> Result<()> {
    write_json(path, &ModelFile::from_model(model))
}

pub fn read_model(path: &Path) -> Result<TransferModel> {
    read_json::<ModelFile>(path)?
        .to_model()
        .map_err(|e| Error::format(path, e))
}

/// Sidecar of a grid CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridMeta {
    pub grid: GridSpec,
    pub which: String,
    pub eigenvalue: [f64; 2],
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_mass_fraction: Option<f64>,
}

/// Grid CSV `x1..xN,re,im` in lattice order plus the lattice sidecar.
pub fn write_grid(path: &Path, g: &EigenfunctionGrid) -> Result<()> {
    let n = g.grid.dim();
    let header: Vec<String> = (1..=n)
        .map(|i| format!("x{i}"))
        .chain(["re".to_string(), "im".to_string()])
        .collect();
    let rows = g.values.iter().enumerate().map(|(f, z)| {
        g.grid
            .point(f)
            .into_iter()
            .chain([z.re, z.im])
            .map(fmt_f64)
            .collect()
    });
    write_atomic(path, &csv_bytes(&header, rows)?)?;
    write_json(
        &sidecar_path(path),
        &GridMeta {
            grid: g.grid.clone(),
            which: g.which.to_string(),
            eigenvalue: [g.eigenvalue.re, g.eigenvalue.im],
            normalization: g.normalization,
            negative_mass_fraction: g.negative_mass_fraction,
        },
    )
}

pub fn read_grid(path: &Path) -> Result<EigenfunctionGrid> {
    let meta: GridMeta = read_json(&sidecar_path(path))?;
    let which: Which = meta.which.parse().map_err(|e| Error::format(path, e))?;
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let dim = meta.grid.dim();
    let mut values = Vec::with_capacity(meta.grid.len());
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let get = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::format(path, "bad grid row"))
        };
        values.push(C64::new(get(dim)?, get(dim + 1)?));
    }
    if values.len() != meta.grid.len() {
        return Err(Error::format(path, "row count differs from the lattice size"));
    }
    Ok(EigenfunctionGrid {
        grid: meta.grid,
        values,
        which,
        eigenvalue: C64::new(meta.eigenvalue[0], meta.eigenvalue[1]),
        normalization: meta.normalization,
        negative_mass_fraction: meta.negative_mass_fraction,
    })
}

/// Eigenvalue table `index,re,im,modulus,residual` (1-based index).
pub fn write_eigen_table(path: &Path, s: &Spectrum) -> Result<()> {
    let header: Vec<String> = ["index", "re", "im", "modulus", "residual"].map(String::from).to_vec();
    let rows = s.eigenvalues.iter().zip(&s.residuals).enumerate().map(|(i, (z, r))| {
        vec![
            (i + 1).to_string(),
            fmt_f64(z.re),
            fmt_f64(z.im),
            fmt_f64(z.norm()),
            fmt_f64(*r),
        ]
    });
    write_atomic(path, &csv_bytes(&header, rows)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UlamMeta {
    pub size: usize,
    pub visited: Vec<bool>,
    pub leak: Vec<u64>,
    pub dropped: usize,
}

/// Triplets `i,j,count,prob` of the nonzero counts, plus a sidecar with
/// the visited mask and leak column.
pub fn write_ulam(path: &Path, u: &UlamMatrix) -> Result<()> {
    let header: Vec<String> = ["i", "j", "count", "prob"].map(String::from).to_vec();
    let rows = (0..u.size).flat_map(|i| {
        let probs = u.row(i);
        u.counts[i]
            .iter()
            .zip(probs)
            .map(move |(&(j, c), (_, p))| vec![i.to_string(), j.to_string(), c.to_string(), fmt_f64(p)])
            .collect::<Vec<_>>()
    });
    write_atomic(path, &csv_bytes(&header, rows)?)?;
    write_json(
        &sidecar_path(path),
        &UlamMeta {
            size: u.size,
            visited: u.visited.clone(),
            leak: u.leak.clone(),
            dropped: u.dropped,
        },
    )
}
