//! Koopman and Perron-Frobenius operator approximation from snapshot data:
//! DMD/EDMD baselines, the structure-preserving NSDMD fit, Ulam box
//! partitions, spectra, invariant densities and Lyapunov measures.

pub mod dictionary;
pub mod domain;
pub mod edmd;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lyapunov;
pub mod model;
pub mod nsdmd;
pub mod set_oriented;
pub mod spectral;
pub mod systems;

pub use error::{Error, Result};
