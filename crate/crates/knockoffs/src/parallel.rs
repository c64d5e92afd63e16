//! Worker pool sizing and feature-parallel CRT.

use knockoffs_core::covariate_model::CovariateModel;
use knockoffs_core::crt::{crt_feature, CrtResult, EarlyStop, FeatureStatistic};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "KNOCKOFF_THREADS";

/// Pool with `threads` workers, or rayon's default when `None`.
pub fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    builder.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Same output as `knockoffs_core::crt::crt_all`, with features spread over
/// the current pool.
pub fn crt_all_parallel(
    x: &DMatrix<f64>,
    y: &[f64],
    model: &CovariateModel,
    statistic: &(dyn FeatureStatistic + Sync),
    k: usize,
    seed: u64,
    early: &EarlyStop,
) -> Result<CrtResult> {
    if model.dim() != x.ncols() {
        return Err(knockoffs_core::Error::DimensionMismatch {
            what: "model dimension vs design columns",
            expected: x.ncols(),
            found: model.dim(),
        }
        .into());
    }
    if let Some(c) = early.cutoff {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::Config("early-stop cutoff must lie in (0, 1)".into()));
        }
    }
    let observed = statistic.compute_all(x, y)?;
    let outcomes = observed
        .par_iter()
        .enumerate()
        .map(|(j, &t)| crt_feature(x, y, j, t, model, statistic, k, seed, early))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(CrtResult {
        p_values: outcomes.iter().map(|o| o.p).collect(),
        observed,
        randomizations_used: outcomes.iter().map(|o| o.used).collect(),
        statistic: statistic.name(),
        early_stop_log: outcomes.iter().filter_map(|o| o.event).collect(),
    })
}
