//! Conditional randomization test, Benjamini-Hochberg, and marginal
//! Monte Carlo p-values.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::covariate_model::{sample_categorical, CovariateModel, GaussianModel};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, substream};
use crate::sparse_glm::{lasso_fit, Family, FitOptions};

/// Importance `T_j` of feature `j` in `(x, y)`.
pub trait FeatureStatistic {
    fn name(&self) -> String;

    fn compute(&self, x: &DMatrix<f64>, y: &[f64], j: usize) -> Result<f64>;

    /// All features at once; override when one fit serves every feature.
    fn compute_all(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
        (0..x.ncols()).map(|j| self.compute(x, y, j)).collect()
    }

    /// Smallest value the statistic can take, if it has one. An observed
    /// statistic at this value gets p = 1 without resampling.
    fn minimum(&self) -> Option<f64> {
        None
    }
}

/// `|b_j|` from a lasso fit at a fixed penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoCoefficient {
    pub lambda: f64,
    pub family: Family,
    pub fit: FitOptions,
}

impl LassoCoefficient {
    pub fn new(lambda: f64, family: Family) -> Self {
        LassoCoefficient {
            lambda,
            family,
            fit: FitOptions::for_family(family),
        }
    }
}

impl FeatureStatistic for LassoCoefficient {
    fn name(&self) -> String {
        alloc::format!("lasso_coefficient(lambda={})", self.lambda)
    }

    fn compute(&self, x: &DMatrix<f64>, y: &[f64], j: usize) -> Result<f64> {
        Ok(self.compute_all(x, y)?[j])
    }

    fn compute_all(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
        let fit = lasso_fit(x, y, self.lambda, self.family, &self.fit)?;
        if !fit.converged {
            return Err(Error::NoConvergence {
                iterations: fit.sweeps,
                violation: fit.kkt_violation,
            });
        }
        Ok(fit.coefficients.iter().map(|b| b.abs()).collect())
    }

    fn minimum(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Per-row conditional law of one column given the rest.
enum ColumnLaw {
    Gaussian { mean: Vec<f64>, sd: f64 },
    Discrete(Vec<Vec<f64>>),
}

impl ColumnLaw {
    fn conditional(x: &DMatrix<f64>, j: usize, model: &CovariateModel) -> Result<Self> {
        check_model(x, model)?;
        match model {
            CovariateModel::Gaussian(g) => {
                let cond = g.conditional(j)?;
                let mean = (0..x.nrows()).map(|i| cond.mean_given_row(|k| x[(i, k)])).collect();
                Ok(ColumnLaw::Gaussian {
                    mean,
                    sd: libm::sqrt(cond.var.max(0.0)),
                })
            }
            CovariateModel::Markov(m) => {
                let mut rows = Vec::with_capacity(x.nrows());
                for i in 0..x.nrows() {
                    let states = row_states(x, i)?;
                    rows.push(m.conditional_pmf(j, &states)?);
                }
                Ok(ColumnLaw::Discrete(rows))
            }
        }
    }

    fn marginal(x: &DMatrix<f64>, j: usize, model: &CovariateModel) -> Result<Self> {
        check_model(x, model)?;
        match model {
            CovariateModel::Gaussian(g) => Ok(marginal_gaussian(g, j, x.nrows())),
            CovariateModel::Markov(m) => Ok(ColumnLaw::Discrete(vec![m.marginals()[j].clone(); x.nrows()])),
        }
    }

    fn draw(&self, out: &mut [f64], rng: &mut crate::rng::Rng) {
        match self {
            ColumnLaw::Gaussian { mean, sd } => {
                for (o, m) in out.iter_mut().zip(mean) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + sd * z;
                }
            }
            ColumnLaw::Discrete(rows) => {
                for (o, probs) in out.iter_mut().zip(rows) {
                    *o = sample_categorical(probs, rng) as f64;
                }
            }
        }
    }
}

fn marginal_gaussian(g: &GaussianModel, j: usize, n: usize) -> ColumnLaw {
    ColumnLaw::Gaussian {
        mean: vec![g.mean[j]; n],
        sd: libm::sqrt(g.sigma.as_matrix()[(j, j)].max(0.0)),
    }
}

fn check_model(x: &DMatrix<f64>, model: &CovariateModel) -> Result<()> {
    if model.dim() != x.ncols() {
        return Err(Error::DimensionMismatch {
            what: "model dimension vs design columns",
            expected: model.dim(),
            found: x.ncols(),
        });
    }
    Ok(())
}

fn row_states(x: &DMatrix<f64>, i: usize) -> Result<Vec<usize>> {
    (0..x.ncols())
        .map(|k| {
            let v = x[(i, k)];
            if v >= 0.0 && libm::trunc(v) == v && v < usize::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(invalid(alloc::format!("entry ({i}, {k}) = {v} is not a state index")))
            }
        })
        .collect()
}

fn check_inputs(x: &DMatrix<f64>, y: &[f64], k: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "response length vs design rows",
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if k == 0 {
        return Err(invalid("need at least one randomization"));
    }
    Ok(())
}

/// Stream for randomization `r` of feature `j`.
fn randomization_rng(seed: u64, j: usize, r: usize) -> crate::rng::Rng {
    substream(derive_seed(seed, j as u64), r as u64)
}

/// Sequential stopping for features that are clearly not significant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    /// Stop once the p-value is confidently above this level; `None`
    /// disables sequential stopping.
    pub cutoff: Option<f64>,
    pub check_every: usize,
    /// Tail probability below which the running evidence is trusted.
    pub significance: f64,
    /// Skip resampling when the observed statistic sits at its minimum.
    pub zero_shortcut: bool,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            cutoff: None,
            check_every: 10,
            significance: 1e-4,
            zero_shortcut: true,
        }
    }
}

impl EarlyStop {
    pub fn disabled() -> Self {
        EarlyStop {
            cutoff: None,
            zero_shortcut: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ZeroStatistic,
    AboveCutoff,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopEvent {
    pub feature: usize,
    pub randomizations: usize,
    pub exceedances: usize,
    pub reason: StopReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrtResult {
    pub p_values: Vec<f64>,
    pub observed: Vec<f64>,
    pub randomizations_used: Vec<usize>,
    pub statistic: String,
    pub early_stop_log: Vec<EarlyStopEvent>,
}

/// `P(Binomial(n, p) >= c)`, summed exactly in log space.
pub fn binomial_upper_tail(n: usize, p: f64, c: usize) -> f64 {
    if c == 0 {
        return 1.0;
    }
    if c > n {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let nf = n as f64;
    let base = libm::lgamma(nf + 1.0);
    let (lp, lq) = (libm::log(p), libm::log1p(-p));
    let total: f64 = (c..=n)
        .map(|i| {
            let fi = i as f64;
            libm::exp(base - libm::lgamma(fi + 1.0) - libm::lgamma(nf - fi + 1.0) + fi * lp + (nf - fi) * lq)
        })
        .sum();
    total.min(1.0)
}

/// Result of the randomizations for one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureOutcome {
    pub p: f64,
    pub used: usize,
    pub event: Option<EarlyStopEvent>,
}

/// Randomizations for feature `j` given its observed statistic. Streams are
/// keyed by `(seed, j, r)`, so features can be processed in any order.
#[allow(clippy::too_many_arguments)]
pub fn crt_feature(
    x: &DMatrix<f64>,
    y: &[f64],
    j: usize,
    observed: f64,
    model: &CovariateModel,
    statistic: &dyn FeatureStatistic,
    k: usize,
    seed: u64,
    early: &EarlyStop,
) -> Result<FeatureOutcome> {
    if early.zero_shortcut && statistic.minimum() == Some(observed) {
        return Ok(FeatureOutcome {
            p: 1.0,
            used: 0,
            event: Some(EarlyStopEvent {
                feature: j,
                randomizations: 0,
                exceedances: 0,
                reason: StopReason::ZeroStatistic,
            }),
        });
    }
    let law = ColumnLaw::conditional(x, j, model)?;
    let mut work = x.clone();
    let mut column = vec![0.0; x.nrows()];
    let mut exceed = 0;
    for r in 0..k {
        let mut rng = randomization_rng(seed, j, r);
        law.draw(&mut column, &mut rng);
        work.set_column(j, &nalgebra::DVector::from_column_slice(&column));
        if statistic.compute(&work, y, j)? >= observed {
            exceed += 1;
        }
        let done = r + 1;
        if let Some(cut) = early.cutoff {
            if early.check_every > 0 && done % early.check_every == 0 && done < k {
                // under p <= cutoff, this many exceedances would be rare
                if binomial_upper_tail(done, cut, exceed) <= early.significance {
                    return Ok(FeatureOutcome {
                        p: (1 + exceed) as f64 / (done + 1) as f64,
                        used: done,
                        event: Some(EarlyStopEvent {
                            feature: j,
                            randomizations: done,
                            exceedances: exceed,
                            reason: StopReason::AboveCutoff,
                        }),
                    });
                }
            }
        }
    }
    Ok(FeatureOutcome {
        p: (1 + exceed) as f64 / (k + 1) as f64,
        used: k,
        event: None,
    })
}

/// CRT p-value `(1 + #{T* >= T}) / (K + 1)` for feature `j`, resampling
/// column `j` from its conditional law given the other columns.
pub fn crt_pvalue(
    x: &DMatrix<f64>,
    y: &[f64],
    j: usize,
    model: &CovariateModel,
    statistic: &dyn FeatureStatistic,
    k: usize,
    seed: u64,
) -> Result<f64> {
    check_inputs(x, y, k)?;
    if j >= x.ncols() {
        return Err(invalid("feature index out of range"));
    }
    let observed = statistic.compute(x, y, j)?;
    Ok(crt_feature(x, y, j, observed, model, statistic, k, seed, &EarlyStop::disabled())?.p)
}

/// CRT p-values for every feature, with optional shortcuts.
pub fn crt_all(
    x: &DMatrix<f64>,
    y: &[f64],
    model: &CovariateModel,
    statistic: &dyn FeatureStatistic,
    k: usize,
    seed: u64,
    early: &EarlyStop,
) -> Result<CrtResult> {
    check_inputs(x, y, k)?;
    check_model(x, model)?;
    if let Some(c) = early.cutoff {
        if !(c > 0.0 && c < 1.0) {
            return Err(invalid("early-stop cutoff must lie in (0, 1)"));
        }
    }
    let observed = statistic.compute_all(x, y)?;
    let mut result = CrtResult {
        p_values: Vec::with_capacity(x.ncols()),
        observed: observed.clone(),
        randomizations_used: Vec::with_capacity(x.ncols()),
        statistic: statistic.name(),
        early_stop_log: Vec::new(),
    };
    for (j, &t) in observed.iter().enumerate() {
        let out = crt_feature(x, y, j, t, model, statistic, k, seed, early)?;
        result.p_values.push(out.p);
        result.randomizations_used.push(out.used);
        result.early_stop_log.extend(out.event);
    }
    Ok(result)
}

/// Benjamini-Hochberg step-up; returns rejected indices in ascending order.
pub fn bhq(p_values: &[f64], q: f64) -> Result<Vec<usize>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid("target level q must lie in (0, 1)"));
    }
    if p_values.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) {
        return Err(invalid("p-values must lie in [0, 1]"));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let kstar = (1..=m).rev().find(|&k| p_values[order[k - 1]] <= k as f64 * q / m as f64);
    let mut out: Vec<usize> = match kstar {
        Some(k) => order[..k].to_vec(),
        None => Vec::new(),
    };
    out.sort_unstable();
    Ok(out)
}

fn abs_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (u, v) in a.iter().zip(b) {
        sab += (u - ma) * (v - mb);
        saa += (u - ma) * (u - ma);
        sbb += (v - mb) * (v - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        (sab / libm::sqrt(saa * sbb)).abs()
    }
}

/// Two-sided p-values for the sample correlation of each column with `y`,
/// with the null simulated from the marginal law of the column.
pub fn marginal_pvalues(x: &DMatrix<f64>, y: &[f64], model: &CovariateModel, draws: usize, seed: u64) -> Result<Vec<f64>> {
    check_inputs(x, y, draws)?;
    let first = y.first().copied().unwrap_or(0.0);
    if y.iter().all(|v| *v == first) {
        return Err(Error::DegenerateResponse("response is constant"));
    }
    let mut out = Vec::with_capacity(x.ncols());
    let mut column = vec![0.0; x.nrows()];
    for j in 0..x.ncols() {
        let law = ColumnLaw::marginal(x, j, model)?;
        let obs: Vec<f64> = x.column(j).iter().copied().collect();
        let t = abs_correlation(&obs, y);
        let mut exceed = 0;
        for r in 0..draws {
            let mut rng = randomization_rng(seed, j, r);
            law.draw(&mut column, &mut rng);
            if abs_correlation(&column, y) >= t {
                exceed += 1;
            }
        }
        out.push((1 + exceed) as f64 / (draws + 1) as f64);
    }
    Ok(out)
}

/// Boxed statistic, handy for configuration-driven callers.
pub type DynStatistic = Box<dyn FeatureStatistic + Send + Sync>;
