//! Synthetic designs and responses, repeated knockoff runs, and summaries.
//!
//! Repetition `r` of a scenario with seed `s` draws everything from streams
//! derived from `derive_seed(s, r)`, so results do not depend on how the
//! repetitions are scheduled across threads.

use std::fmt::Write as _;
use std::path::Path;

use knockoffs_core::covariate_model::{ar1_covariance, empirical_covariance, mix_covariance, GaussianModel};
use knockoffs_core::filter::knockoff_threshold;
use knockoffs_core::knockoff_gen::{GaussianKnockoffSampler, KnockoffDataset, Provenance};
use knockoffs_core::numerics::{mvn_sample, SymMatrix};
use knockoffs_core::rng::{derive_seed, substream};
use knockoffs_core::s_solver::{solve_covariance, SMethod, SolveOptions};
use knockoffs_core::sparse_glm::Family;
use knockoffs_core::statistics::{
    BvsOptions, BvsPrior, GibbsOptions, LcdOptions, LsmOptions, StatisticConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{format_f64, sha256_hex, write_file};

/// Full-scale reference setting (n, p, nonzeros) that desk-scale scenarios
/// shrink; ratios are reported in the run metadata.
pub const REFERENCE_SCALE: (usize, usize, usize) = (3000, 1000, 60);

const STREAM_DESIGN: u64 = 1;
const STREAM_RESPONSE: u64 = 2;
const STREAM_KNOCKOFFS: u64 = 3;
const STREAM_STATISTIC: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    IidGaussian,
    Ar1 { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    GaussianLinear,
    BinomialLogit,
}

impl ResponseKind {
    pub fn family(self) -> Family {
        match self {
            ResponseKind::GaussianLinear => Family::Gaussian,
            ResponseKind::BinomialLogit => Family::Logistic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignPattern {
    #[default]
    Random,
    Positive,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Locations {
    #[default]
    RandomUniform,
    Fixed { indices: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StatisticSpec {
    Lcd {
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default = "default_cv_grid")]
        grid_size: usize,
    },
    Lsm {
        #[serde(default = "default_lsm_grid")]
        grid_size: usize,
    },
    Bvs {
        tau: f64,
        #[serde(default)]
        pi: Option<f64>,
        #[serde(default = "default_burn_in")]
        burn_in: usize,
        #[serde(default = "default_samples")]
        samples: usize,
    },
}

fn default_folds() -> usize {
    10
}
fn default_cv_grid() -> usize {
    100
}
fn default_lsm_grid() -> usize {
    200
}
fn default_burn_in() -> usize {
    50
}
fn default_samples() -> usize {
    500
}
fn default_q() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}
fn default_noise() -> f64 {
    1.0
}
fn default_statistics() -> Vec<StatisticSpec> {
    vec![StatisticSpec::Lcd {
        folds: default_folds(),
        grid_size: default_cv_grid(),
    }]
}
fn default_method() -> String {
    "sdp".into()
}

impl StatisticSpec {
    pub fn label(&self) -> &'static str {
        match self {
            StatisticSpec::Lcd { .. } => "lcd",
            StatisticSpec::Lsm { .. } => "lsm",
            StatisticSpec::Bvs { .. } => "bvs",
        }
    }

    pub fn config(&self, family: Family, p: usize, seed: u64) -> StatisticConfig {
        match *self {
            StatisticSpec::Lcd { folds, grid_size } => StatisticConfig::Lcd(LcdOptions {
                folds,
                grid_size,
                ..LcdOptions::new(family, seed)
            }),
            StatisticSpec::Lsm { grid_size } => StatisticConfig::Lsm(LsmOptions {
                grid_size,
                ..LsmOptions::new(family)
            }),
            StatisticSpec::Bvs {
                tau,
                pi,
                burn_in,
                samples,
            } => {
                let mut prior = BvsPrior::new(p, tau);
                if let Some(pi) = pi {
                    prior.pi = pi;
                }
                StatisticConfig::Bvs(BvsOptions {
                    family,
                    prior,
                    gibbs: GibbsOptions { burn_in, samples },
                    seed,
                })
            }
        }
    }
}

/// One simulated setting, repeated `reps` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub p: usize,
    pub design: Design,
    pub response: ResponseKind,
    pub k_nonzero: usize,
    pub amplitude: f64,
    #[serde(default)]
    pub sign_pattern: SignPattern,
    #[serde(default)]
    pub nonzero_locations: Locations,
    #[serde(default = "default_q")]
    pub q: f64,
    pub reps: usize,
    pub seed: u64,
    /// Noise standard deviation of the linear model; 0 gives `y = X beta`.
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    /// Columns are `N(0, 1/n)` when set, `N(0, 1)` otherwise.
    #[serde(default = "default_true")]
    pub scale_by_n: bool,
    #[serde(default = "default_statistics")]
    pub statistics: Vec<StatisticSpec>,
    #[serde(default = "default_true")]
    pub plus: bool,
    #[serde(default = "default_method")]
    pub s_method: String,
}

impl ScenarioConfig {
    /// Desk-scale Gaussian linear scenario with LCD and knockoff+.
    pub fn desk(design: Design, amplitude: f64, reps: usize, seed: u64) -> Self {
        ScenarioConfig {
            n: 600,
            p: 200,
            design,
            response: ResponseKind::GaussianLinear,
            k_nonzero: 20,
            amplitude,
            sign_pattern: SignPattern::Random,
            nonzero_locations: Locations::RandomUniform,
            q: 0.1,
            reps,
            seed,
            noise_sd: 1.0,
            scale_by_n: true,
            statistics: default_statistics(),
            plus: true,
            s_method: default_method(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n < 2 || self.p == 0 {
            return bad("need n >= 2 and p >= 1");
        }
        if self.k_nonzero > self.p {
            return bad("k_nonzero exceeds p");
        }
        if let Design::Ar1 { rho } = self.design {
            if !(rho > -1.0 && rho < 1.0) {
                return bad("rho must lie in (-1, 1)");
            }
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad("q must lie in (0, 1)");
        }
        if !self.amplitude.is_finite() || !(self.noise_sd >= 0.0) {
            return bad("amplitude must be finite and noise_sd nonnegative");
        }
        if let Locations::Fixed { indices } = &self.nonzero_locations {
            let mut sorted = indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != self.k_nonzero || sorted.iter().any(|&j| j >= self.p) {
                return bad("fixed locations must be k_nonzero distinct indices below p");
            }
        }
        if self.statistics.is_empty() {
            return bad("at least one statistic is required");
        }
        self.method()?;
        Ok(())
    }

    pub fn method(&self) -> Result<SMethod> {
        self.s_method.parse().map_err(|_| Error::Config(format!("unknown s method `{}`", self.s_method)))
    }

    /// Short digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serializes");
        sha256_hex(json.as_bytes())[..16].to_owned()
    }

    pub fn family(&self) -> Family {
        self.response.family()
    }

    pub fn covariance(&self) -> Result<SymMatrix> {
        let rho = match self.design {
            Design::IidGaussian => 0.0,
            Design::Ar1 { rho } => rho,
        };
        let scale = if self.scale_by_n { 1.0 / self.n as f64 } else { 1.0 };
        Ok(ar1_covariance(self.p, rho, scale)?)
    }

    fn rep_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, rep as u64)
    }
}

/// `n x p` design and the model it was drawn from.
pub fn gen_design(config: &ScenarioConfig, seed: u64) -> Result<(DMatrix<f64>, GaussianModel)> {
    let sigma = config.covariance()?;
    let x = mvn_sample(&vec![0.0; config.p], &sigma, seed, config.n)?;
    Ok((x, GaussianModel::centered(sigma)?))
}

/// Response, sorted true support, and coefficient vector.
pub fn gen_response(x: &DMatrix<f64>, config: &ScenarioConfig, seed: u64) -> Result<(Vec<f64>, Vec<usize>, Vec<f64>)> {
    let p = x.ncols();
    let mut rng = substream(seed, 0);
    let mut support = match &config.nonzero_locations {
        Locations::RandomUniform => sample(&mut rng, p, config.k_nonzero).into_vec(),
        Locations::Fixed { indices } => indices.clone(),
    };
    support.sort_unstable();
    let mut beta = vec![0.0; p];
    for &j in &support {
        let sign = match config.sign_pattern {
            SignPattern::Random if rng.random::<bool>() => -1.0,
            _ => 1.0,
        };
        beta[j] = sign * config.amplitude;
    }
    let eta = x * DVector::from_column_slice(&beta);
    let mut noise = substream(seed, 1);
    let y = match config.response {
        ResponseKind::GaussianLinear => eta
            .iter()
            .map(|&e| {
                let z: f64 = StandardNormal.sample(&mut noise);
                e + config.noise_sd * z
            })
            .collect(),
        ResponseKind::BinomialLogit => eta
            .iter()
            .map(|&e| {
                let prob = 1.0 / (1.0 + (-e).exp());
                if noise.random::<f64>() < prob {
                    1.0
                } else {
                    0.0
                }
            })
            .collect(),
    };
    if config.amplitude == 0.0 {
        support.clear();
    }
    Ok((y, support, beta))
}

/// False discovery proportion (0/0 = 0) and power (0 for an empty support).
pub fn evaluate(selected: &[usize], support: &[usize]) -> (f64, f64) {
    let hits = selected.iter().filter(|j| support.contains(j)).count();
    let fdp = if selected.is_empty() {
        0.0
    } else {
        (selected.len() - hits) as f64 / selected.len() as f64
    };
    let power = if support.is_empty() {
        0.0
    } else {
        hits as f64 / support.len() as f64
    };
    (fdp, power)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepResult {
    pub label: String,
    pub rep: usize,
    pub seed: u64,
    pub fdp: f64,
    pub power: f64,
    pub threshold: f64,
    pub selected: usize,
    pub true_positives: usize,
    /// W restricted to the true support, kept for diagnostics.
    #[serde(skip)]
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub label: String,
    pub reps: Vec<RepResult>,
    pub power_mean: f64,
    pub power_se: f64,
    pub fdr_mean: f64,
    pub fdr_se: f64,
}

/// Mean and standard error (sample SD over the square root of the count).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

impl SweepSummary {
    pub fn from_reps(label: String, reps: Vec<RepResult>) -> Self {
        let power: Vec<f64> = reps.iter().map(|r| r.power).collect();
        let fdp: Vec<f64> = reps.iter().map(|r| r.fdp).collect();
        let (power_mean, power_se) = mean_se(&power);
        let (fdr_mean, fdr_se) = mean_se(&fdp);
        SweepSummary {
            label,
            reps,
            power_mean,
            power_se,
            fdr_mean,
            fdr_se,
        }
    }
}

/// Known-model knockoff machinery shared by every repetition.
pub struct ScenarioContext {
    pub config: ScenarioConfig,
    pub model: GaussianModel,
    pub sampler: GaussianKnockoffSampler,
}

impl ScenarioContext {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let sigma = config.covariance()?;
        let s = solve_covariance(&sigma, config.method()?, SolveOptions::default())?;
        let model = GaussianModel::centered(sigma)?;
        let sampler = GaussianKnockoffSampler::new(&model, &s.s)?;
        Ok(ScenarioContext {
            config: config.clone(),
            model,
            sampler,
        })
    }

    /// Dataset (with response) and true support for repetition `rep`.
    pub fn dataset(&self, rep: usize) -> Result<(KnockoffDataset, Vec<usize>)> {
        let c = &self.config;
        let seed = c.rep_seed(rep);
        let (x, _) = gen_design(c, derive_seed(seed, STREAM_DESIGN))?;
        let (y, support, _) = gen_response(&x, c, derive_seed(seed, STREAM_RESPONSE))?;
        let kseed = derive_seed(seed, STREAM_KNOCKOFFS);
        let x_tilde = self.sampler.sample(&x, kseed, None)?;
        let data = KnockoffDataset::new(
            x,
            x_tilde,
            y,
            vec![false; c.n],
            Provenance {
                generator: "gaussian".into(),
                seed: kseed,
            },
        )?;
        Ok((data, support))
    }

    pub fn run_rep(&self, rep: usize) -> Result<Vec<RepResult>> {
        let (data, support) = self.dataset(rep)?;
        let seed = self.config.rep_seed(rep);
        self.config
            .statistics
            .iter()
            .map(|spec| select_and_score(&self.config, spec, &data, &support, seed, rep, spec.label().into()))
            .collect()
    }
}

fn select_and_score(
    config: &ScenarioConfig,
    spec: &StatisticSpec,
    data: &KnockoffDataset,
    support: &[usize],
    seed: u64,
    rep: usize,
    label: String,
) -> Result<RepResult> {
    let stat = spec.config(config.family(), config.p, derive_seed(seed, STREAM_STATISTIC));
    let w = stat.compute(data)?;
    let sel = knockoff_threshold(&w.w, config.q, config.plus)?;
    let (fdp, power) = evaluate(&sel.selected, support);
    Ok(RepResult {
        label,
        rep,
        seed,
        fdp,
        power,
        threshold: sel.threshold,
        selected: sel.selected.len(),
        true_positives: sel.selected.iter().filter(|j| support.contains(j)).count(),
        w: support.iter().map(|&j| w.w[j]).collect(),
    })
}

fn group(labels: Vec<String>, rows: Vec<RepResult>) -> Vec<SweepSummary> {
    labels
        .into_iter()
        .map(|label| {
            let reps = rows.iter().filter(|r| r.label == label).cloned().collect();
            SweepSummary::from_reps(label, reps)
        })
        .collect()
}

/// All repetitions of a scenario, one summary per statistic.
pub fn run_scenario(config: &ScenarioConfig) -> Result<Vec<SweepSummary>> {
    let ctx = ScenarioContext::new(config)?;
    let rows: Vec<Vec<RepResult>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| ctx.run_rep(rep))
        .collect::<Result<_>>()?;
    let labels = config.statistics.iter().map(|s| s.label().to_owned()).collect();
    Ok(group(labels, rows.into_iter().flatten().collect()))
}

/// Knockoffs built from `(1 - alpha) Sigma + alpha Sigma_hat`, with
/// `Sigma_hat` the empirical covariance of each simulated design. Every
/// `alpha` sees the same designs and responses.
pub fn robustness_sweep(alpha_grid: &[f64], config: &ScenarioConfig) -> Result<Vec<(f64, SweepSummary)>> {
    config.validate()?;
    if alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::Config("alpha values must lie in [0, 1]".into()));
    }
    let sigma = config.covariance()?;
    let method = config.method()?;
    let rows: Vec<Vec<(usize, RepResult)>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| -> Result<Vec<(usize, RepResult)>> {
            let seed = config.rep_seed(rep);
            let (x, _) = gen_design(config, derive_seed(seed, STREAM_DESIGN))?;
            let (y, support, _) = gen_response(&x, config, derive_seed(seed, STREAM_RESPONSE))?;
            let sigma_hat = empirical_covariance(&x)?;
            let kseed = derive_seed(seed, STREAM_KNOCKOFFS);
            let mut out = Vec::new();
            for (a, &alpha) in alpha_grid.iter().enumerate() {
                let mixed = mix_covariance(alpha, &sigma, &sigma_hat)?;
                let s = solve_covariance(&mixed, method, SolveOptions::default())?;
                let model = GaussianModel::centered(mixed)?;
                let x_tilde = GaussianKnockoffSampler::new(&model, &s.s)?.sample(&x, kseed, None)?;
                let data = KnockoffDataset::new(
                    x.clone(),
                    x_tilde,
                    y.clone(),
                    vec![false; config.n],
                    Provenance {
                        generator: format!("gaussian(alpha={alpha})"),
                        seed: kseed,
                    },
                )?;
                for spec in &config.statistics {
                    let label = format!("{}@alpha={alpha}", spec.label());
                    out.push((a, select_and_score(config, spec, &data, &support, seed, rep, label)?));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<(usize, RepResult)> = rows.into_iter().flatten().collect();
    let mut out = Vec::new();
    for (a, &alpha) in alpha_grid.iter().enumerate() {
        for spec in &config.statistics {
            let label = format!("{}@alpha={alpha}", spec.label());
            let reps = flat
                .iter()
                .filter(|(i, r)| *i == a && r.label == label)
                .map(|(_, r)| r.clone())
                .collect();
            out.push((alpha, SweepSummary::from_reps(label, reps)));
        }
    }
    Ok(out)
}

/// Settings of the logistic p-value experiment: AR(1) or iid `N(0, 1)`
/// columns and a Bernoulli response whose log-odds are
/// `signal * (X_2 + ... + X_{k+1})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticSetting {
    pub n: usize,
    pub p: usize,
    /// AR(1) coefficient; 0 gives independent columns.
    pub rho: f64,
    pub signal: f64,
    /// Number of signal columns, starting at the second column.
    pub signal_columns: usize,
}

impl LogisticSetting {
    /// Settings 1 to 4 of the reference study.
    pub fn numbered(setting: u8) -> Result<Self> {
        let s = |n, p, rho, signal, k| LogisticSetting {
            n,
            p,
            rho,
            signal,
            signal_columns: k,
        };
        match setting {
            1 => Ok(s(500, 200, 0.5, 0.0, 0)),
            2 => Ok(s(500, 200, 0.5, 0.08, 20)),
            3 => Ok(s(500, 200, 0.0, 0.0, 0)),
            4 => Ok(s(5000, 2000, 0.0, 0.0, 0)),
            other => Err(Error::Config(format!("unknown logistic setting {other}"))),
        }
    }
}

/// Unpenalized logistic fit with an intercept (coefficient 0).
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticMle {
    pub coef: DVector<f64>,
    pub se: DVector<f64>,
    pub iterations: usize,
}

const MLE_MAX_ITER: usize = 50;
const MLE_TOL: f64 = 1e-10;
/// Linear predictors beyond this size mean fitted probabilities of 0 or 1.
const MLE_ETA_MAX: f64 = 30.0;

fn log1pexp(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn logistic_deviance(eta: &DVector<f64>, y: &[f64]) -> f64 {
    2.0 * eta.iter().zip(y).map(|(&e, &v)| log1pexp(e) - v * e).sum::<f64>()
}

/// Newton-Raphson with step halving. Returns `None` when the maximum
/// likelihood estimate does not exist (separation), detected by diverging
/// linear predictors, a singular information matrix, or no convergence.
pub fn logistic_mle(x: &DMatrix<f64>, y: &[f64]) -> Result<Option<LogisticMle>> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(knockoffs_core::Error::DimensionMismatch {
            what: "response length vs design rows",
            expected: n,
            found: y.len(),
        }
        .into());
    }
    let mut a = DMatrix::from_element(n, p + 1, 1.0);
    a.columns_mut(1, p).copy_from(x);
    let mut beta = DVector::zeros(p + 1);
    let mut eta = &a * &beta;
    let mut dev = logistic_deviance(&eta, y);
    for it in 1..=MLE_MAX_ITER {
        let mu: Vec<f64> = eta.iter().map(|&e| 1.0 / (1.0 + (-e).exp())).collect();
        let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
        let resid = DVector::from_iterator(n, y.iter().zip(&mu).map(|(v, m)| v - m));
        let grad = a.tr_mul(&resid);
        let mut aw = a.clone();
        for (i, wi) in w.iter().enumerate() {
            aw.row_mut(i).scale_mut(wi.sqrt());
        }
        let info = aw.transpose() * &aw;
        let Some(chol) = info.clone().cholesky() else {
            return Ok(None);
        };
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut next = &beta + &step;
        let mut next_eta = &a * &next;
        let mut next_dev = logistic_deviance(&next_eta, y);
        while next_dev > dev && t > 1e-10 {
            t *= 0.5;
            next = &beta + &step * t;
            next_eta = &a * &next;
            next_dev = logistic_deviance(&next_eta, y);
        }
        let change = (dev - next_dev).abs() / (next_dev.abs() + 0.1);
        beta = next;
        eta = next_eta;
        dev = next_dev;
        if eta.iter().any(|e| e.abs() > MLE_ETA_MAX) {
            return Ok(None);
        }
        if change < MLE_TOL {
            let mu: Vec<f64> = eta.iter().map(|&e| 1.0 / (1.0 + (-e).exp())).collect();
            let mut aw = a.clone();
            for (i, m) in mu.iter().enumerate() {
                aw.row_mut(i).scale_mut((m * (1.0 - m)).sqrt());
            }
            let info = aw.transpose() * &aw;
            let Some(inv) = info.cholesky().map(|c| c.inverse()) else {
                return Ok(None);
            };
            let se = DVector::from_iterator(p + 1, (0..=p).map(|k| inv[(k, k)].max(0.0).sqrt()));
            return Ok(Some(LogisticMle {
                coef: beta,
                se,
                iterations: it,
            }));
        }
    }
    Ok(None)
}

/// Two-sided Wald p-value.
pub fn wald_pvalue(estimate: f64, se: f64) -> f64 {
    libm::erfc((estimate / se).abs() / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InflationSummary {
    pub setting: LogisticSetting,
    pub reps: usize,
    /// Repetitions with a finite MLE.
    pub used: usize,
    /// Repetitions dropped because the MLE does not exist.
    pub excluded: usize,
    pub cutoffs: Vec<f64>,
    pub tail_prob: Vec<f64>,
    pub tail_se: Vec<f64>,
    /// Null p-value of the first coefficient per repetition (NaN if excluded).
    #[serde(skip)]
    pub pvalues: Vec<f64>,
}

pub const INFLATION_CUTOFFS: [f64; 3] = [0.05, 0.01, 0.001];

/// Wald p-values for the (null) first coefficient over repeated designs.
pub fn pvalue_inflation_experiment(setting: &LogisticSetting, reps: usize, seed: u64) -> Result<InflationSummary> {
    if setting.signal_columns + 1 > setting.p || setting.n <= setting.p + 1 {
        return Err(Error::Config("logistic setting needs n > p + 1 and room for the signal columns".into()));
    }
    let sigma = ar1_covariance(setting.p, setting.rho, 1.0)?;
    let pvalues: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<f64> {
            let rs = derive_seed(seed, rep as u64);
            let x = mvn_sample(&vec![0.0; setting.p], &sigma, derive_seed(rs, STREAM_DESIGN), setting.n)?;
            let mut rng = substream(derive_seed(rs, STREAM_RESPONSE), 0);
            let y: Vec<f64> = (0..setting.n)
                .map(|i| {
                    let eta = setting.signal * (1..=setting.signal_columns).map(|j| x[(i, j)]).sum::<f64>();
                    let prob = 1.0 / (1.0 + (-eta).exp());
                    if rng.random::<f64>() < prob {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok(match logistic_mle(&x, &y)? {
                Some(fit) => wald_pvalue(fit.coef[1], fit.se[1]),
                None => f64::NAN,
            })
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = pvalues.iter().copied().filter(|p| !p.is_nan()).collect();
    let used = kept.len();
    let mut tail_prob = Vec::new();
    let mut tail_se = Vec::new();
    for &c in &INFLATION_CUTOFFS {
        let hits: Vec<f64> = kept.iter().map(|&p| if p <= c { 1.0 } else { 0.0 }).collect();
        let (m, _) = mean_se(&hits);
        tail_prob.push(m);
        tail_se.push((m * (1.0 - m) / used.max(1) as f64).sqrt());
    }
    Ok(InflationSummary {
        setting: *setting,
        reps,
        used,
        excluded: reps - used,
        cutoffs: INFLATION_CUTOFFS.to_vec(),
        tail_prob,
        tail_se,
        pvalues,
    })
}

/// Per-repetition rows: `scenario_hash,label,rep,seed,fdp,power,threshold,selected,true_positives`.
pub fn write_rep_rows(path: &Path, scenario_hash: &str, summaries: &[SweepSummary]) -> Result<()> {
    let mut out = String::from("scenario_hash,label,rep,seed,fdp,power,threshold,selected,true_positives\n");
    for s in summaries {
        for r in &s.reps {
            let _ = writeln!(
                out,
                "{scenario_hash},{},{},{},{},{},{},{},{}",
                r.label,
                r.rep,
                r.seed,
                format_f64(r.fdp),
                format_f64(r.power),
                format_f64(r.threshold),
                r.selected,
                r.true_positives
            );
        }
    }
    write_file(path, out.as_bytes())
}

/// `scenario_hash,label,reps,power_mean,power_se,fdr_mean,fdr_se`.
pub fn write_summary(path: &Path, scenario_hash: &str, summaries: &[SweepSummary]) -> Result<()> {
    let mut out = String::from("scenario_hash,label,reps,power_mean,power_se,fdr_mean,fdr_se\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "{scenario_hash},{},{},{},{},{},{}",
            s.label,
            s.reps.len(),
            format_f64(s.power_mean),
            format_f64(s.power_se),
            format_f64(s.fdr_mean),
            format_f64(s.fdr_se)
        );
    }
    write_file(path, out.as_bytes())
}

/// Whitespace-separated table for gnuplot; `x` is the sweep coordinate.
pub fn write_gnuplot(path: &Path, x_name: &str, points: &[(f64, &SweepSummary)]) -> Result<()> {
    let mut out = format!("# {x_name} label power power_se fdr fdr_se\n");
    for (x, s) in points {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            format_f64(*x),
            s.label,
            format_f64(s.power_mean),
            format_f64(s.power_se),
            format_f64(s.fdr_mean),
            format_f64(s.fdr_se)
        );
    }
    write_file(path, out.as_bytes())
}
