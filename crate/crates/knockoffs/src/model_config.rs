//! JSON description of the covariate model used to build knockoffs.
//!
//! ```json
//! {"kind": "gaussian", "mean": [0, 0], "sigma": [[1, 0.5], [0.5, 1]]}
//! {"kind": "gaussian_ar1", "p": 200, "rho": 0.5, "scale": 1.0}
//! {"kind": "markov", "initial": [0.5, 0.5], "transitions": [[[0.9, 0.1], [0.2, 0.8]]]}
//! {"kind": "markov_homogeneous", "p": 10, "initial": [0.5, 0.5], "transition": [[0.9, 0.1], [0.2, 0.8]]}
//! ```
//!
//! Gaussian models may also carry a fixed `"s"` vector, which overrides the
//! solver.

use std::path::Path;

use knockoffs_core::covariate_model::{ar1_covariance, CovariateModel, DiscreteMarkovModel, GaussianModel};
use knockoffs_core::numerics::SymMatrix;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_file;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Gaussian {
        #[serde(default)]
        mean: Option<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
        #[serde(default)]
        s: Option<Vec<f64>>,
    },
    GaussianAr1 {
        p: usize,
        rho: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        s: Option<Vec<f64>>,
    },
    Markov {
        initial: Vec<f64>,
        transitions: Vec<Vec<Vec<f64>>>,
    },
    MarkovHomogeneous {
        p: usize,
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
    },
}

fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config("matrix rows have different lengths".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl ModelConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn build(&self) -> Result<CovariateModel> {
        Ok(match self {
            ModelConfig::Gaussian { mean, sigma, .. } => {
                let sigma = SymMatrix::from_rows(sigma)?;
                let mean = mean.clone().unwrap_or_else(|| vec![0.0; sigma.dim()]);
                CovariateModel::Gaussian(GaussianModel::new(mean, sigma)?)
            }
            ModelConfig::GaussianAr1 { p, rho, scale, .. } => {
                CovariateModel::Gaussian(GaussianModel::centered(ar1_covariance(*p, *rho, *scale)?)?)
            }
            ModelConfig::Markov { initial, transitions } => {
                let t = transitions.iter().map(|m| matrix(m)).collect::<Result<Vec<_>>>()?;
                CovariateModel::Markov(DiscreteMarkovModel::new(initial.clone(), t)?)
            }
            ModelConfig::MarkovHomogeneous { p, initial, transition } => {
                CovariateModel::Markov(DiscreteMarkovModel::homogeneous(*p, initial.clone(), matrix(transition)?)?)
            }
        })
    }

    /// Fixed `s` vector, when the config supplies one.
    pub fn fixed_s(&self) -> Option<&[f64]> {
        match self {
            ModelConfig::Gaussian { s, .. } | ModelConfig::GaussianAr1 { s, .. } => s.as_deref(),
            _ => None,
        }
    }
}
