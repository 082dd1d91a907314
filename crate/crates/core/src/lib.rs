//! Estimation bounds and maximum-likelihood localization for radar systems built
//! from widely separated transmit and receive arrays observing several extended
//! targets.
//!
//! The crate is organized bottom-up:
//! - [`scenario`]: geometry and per-path delay, Doppler, bearing and loss;
//! - [`waveform`]: LFM pulse trains and temporal steering vectors;
//! - [`signal`]: spatio-temporal steering matrices and snapshot synthesis;
//! - [`numkit`]: low-rank covariance algebra and small dense helpers;
//! - [`bounds`]: stochastic and deterministic Cramér-Rao bounds, the EMCB;
//! - [`estimator`]: stochastic and concentrated deterministic ML estimators;
//! - [`experiments`]: Monte-Carlo MSE and asymptotic sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod config;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod numkit;
pub mod rng;
pub mod scenario;
pub mod signal;
pub mod waveform;

#[cfg(test)]
mod testutil;

pub use error::{Error, ErrorClass, Result};
pub use num_complex::Complex64;

/// Complex column vector.
pub type CVector = nalgebra::DVector<Complex64>;
/// Complex dense matrix.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Real column vector.
pub type RVector = nalgebra::DVector<f64>;
/// Real dense matrix.
pub type RMatrix = nalgebra::DMatrix<f64>;

/// Reflectivity / estimation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Stochastic,
    Deterministic,
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(Model::Stochastic),
            "deterministic" => Ok(Model::Deterministic),
            other => Err(Error::InvalidArgument(format!("unknown model `{other}`"))),
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Model::Stochastic => "stochastic",
            Model::Deterministic => "deterministic",
        })
    }
}
