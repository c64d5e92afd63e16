//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage, input and validation errors, 3 for
//! numerical failures inside the pipeline.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use knockoffs_core::covariate_model::{empirical_covariance, CovariateModel, GaussianModel};
use knockoffs_core::crt::{bhq, EarlyStop, LassoCoefficient};
use knockoffs_core::filter::knockoff_threshold;
use knockoffs_core::knockoff_gen::{scip_knockoffs, GaussianKnockoffSampler, KnockoffDataset, Provenance};
use knockoffs_core::s_solver::{feasibility_margin, solve_covariance, SMethod, SolveOptions, SVector};
use knockoffs_core::sparse_glm::{cv_lambda, Family, FitOptions};
use knockoffs_core::statistics::{BvsOptions, BvsPrior, GibbsOptions, LcdOptions, LsmOptions, StatisticConfig};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::io::{ensure_dir, format_f64, read_csv, read_csv_vector, read_file, write_csv, write_file, Table};
use crate::manifest::RunManifest;
use crate::model_config::ModelConfig;
use crate::parallel::{crt_all_parallel, pool, THREADS_ENV};
use crate::simharness::{
    pvalue_inflation_experiment, robustness_sweep, run_scenario, write_gnuplot, write_rep_rows, write_summary,
    LogisticSetting, ScenarioConfig, REFERENCE_SCALE,
};

#[derive(Debug, Parser)]
#[command(name = "knockoffs", version, about = "Model-X knockoffs for controlled variable selection")]
pub struct Cli {
    /// Worker threads (falls back to KNOCKOFF_THREADS, then all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample knockoff copies of a design matrix.
    Knockoffs(KnockoffsArgs),
    /// Compute feature statistics and run the knockoff filter.
    Select(SelectArgs),
    /// Conditional randomization test p-values.
    Crt(CrtArgs),
    /// Run a simulation described by a JSON config.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Exact knockoffs for the model in --model.
    ExactGaussian,
    /// Gaussian knockoffs matching the empirical mean and covariance of X.
    SecondOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SChoice {
    Eq,
    Sdp,
    Asdp,
}

impl SChoice {
    fn method(self) -> SMethod {
        match self {
            SChoice::Eq => SMethod::Equi,
            SChoice::Sdp => SMethod::Sdp,
            SChoice::Asdp => SMethod::Asdp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Logistic,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Family {
        match f {
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Logistic => Family::Logistic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatisticArg {
    /// Lasso coefficient difference at the cross-validated penalty.
    Lcd,
    /// Signed maximum of the lasso entry penalties.
    Lsm,
    /// Bayesian variable selection posterior probabilities.
    Bvs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CrtStatisticArg {
    /// Absolute lasso coefficient at a fixed penalty.
    LassoCoef,
}

#[derive(Debug, Args)]
pub struct KnockoffsArgs {
    /// Design matrix CSV (header row, one sample per line).
    #[arg(long)]
    pub x: PathBuf,
    /// Covariate model JSON; required for exact-gaussian.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "exact-gaussian")]
    pub method: Method,
    #[arg(long = "s", value_enum, default_value = "sdp")]
    pub s_method: SChoice,
    /// Largest block for the approximate SDP.
    #[arg(long, default_value_t = 100)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long = "x-tilde")]
    pub x_tilde: PathBuf,
    /// Response CSV with a single column.
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long, value_enum, default_value = "lcd")]
    pub statistic: StatisticArg,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyArg,
    /// Target false discovery rate.
    #[arg(long, default_value_t = 0.1)]
    pub q: f64,
    /// Use the knockoff threshold instead of knockoff+.
    #[arg(long)]
    pub no_plus: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cross-validation folds (lcd).
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Penalty grid size (lcd: 100, lsm: 200 when omitted).
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Prior slab standard deviation (bvs).
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Prior inclusion probability (bvs; default min(1, 60/p)).
    #[arg(long)]
    pub pi: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrtArgs {
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "lasso-coef")]
    pub statistic: CrtStatisticArg,
    /// Fixed lasso penalty; chosen once by 10-fold cross-validation when omitted.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub family: FamilyArg,
    /// Randomizations per feature.
    #[arg(long, default_value_t = 199)]
    pub k: usize,
    /// Stop resampling a feature once its p-value is confidently above this.
    #[arg(long)]
    pub early_stop_cutoff: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also report Benjamini-Hochberg rejections at this level.
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation JSON; see the README for the schema.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Experiment description read by `simulate`.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum SimulationConfig {
    Scenario(ScenarioConfig),
    Robustness {
        alpha_grid: Vec<f64>,
        scenario: ScenarioConfig,
    },
    PvalueInflation {
        /// Numbered setting 1 to 4; ignored when `custom` is given.
        #[serde(default)]
        setting: Option<u8>,
        #[serde(default)]
        custom: Option<LogisticSetting>,
        reps: usize,
        seed: u64,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let words: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, words) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, words: Vec<String>) -> Result<()> {
    let pool = pool(cli.threads)?;
    pool.install(|| match &cli.command {
        Command::Knockoffs(a) => cmd_knockoffs(a, words),
        Command::Select(a) => cmd_select(a, words),
        Command::Crt(a) => cmd_crt(a, words),
        Command::Simulate(a) => cmd_simulate(a, words),
    })
}

/// Command-line words that determine the outputs.
fn settings(words: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for w in words.iter().skip(1) {
        if skip {
            skip = false;
            continue;
        }
        if w == "--out" || w == "--threads" {
            skip = true;
            continue;
        }
        if w.starts_with("--out=") || w.starts_with("--threads=") {
            continue;
        }
        out.push(w.clone());
    }
    out
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Finite numbers as JSON numbers, infinities as the strings "inf"/"-inf".
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn cmd_knockoffs(a: &KnockoffsArgs, words: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::start(words.clone(), "knockoffs", Some(a.seed));
    let table = read_csv(&a.x)?;
    manifest.add_input(&a.x)?;
    let opts = SolveOptions {
        max_block: a.blocks.max(1),
        ..SolveOptions::default()
    };
    let config = match &a.model {
        Some(path) => {
            let c = ModelConfig::load(path)?;
            manifest.add_input(path)?;
            Some(c)
        }
        None => None,
    };
    let (x_tilde, provenance) = match a.method {
        Method::ExactGaussian => {
            let config = config.ok_or_else(|| Error::Config("--model is required for exact-gaussian".into()))?;
            match config.build()? {
                CovariateModel::Gaussian(model) => {
                    let s = match config.fixed_s() {
                        Some(s) => SVector {
                            s: s.to_vec(),
                            method: a.s_method.method(),
                            gamma: 1.0,
                            feasibility_margin: feasibility_margin(&model.sigma, s),
                        },
                        None => solve_covariance(&model.sigma, a.s_method.method(), opts)?,
                    };
                    gaussian_output(&table, &model, &s, a.seed, "exact-gaussian", config.fixed_s().is_some())?
                }
                CovariateModel::Markov(m) => {
                    let ds = scip_knockoffs(&table.data, &m, a.seed)?;
                    let prov = json!({
                        "generator": ds.provenance.generator,
                        "seed": a.seed,
                        "method": "exact-gaussian",
                        "model": "markov",
                    });
                    (ds.x_tilde, prov)
                }
            }
        }
        Method::SecondOrder => {
            let n = table.data.nrows();
            let mean: Vec<f64> = table.data.column_iter().map(|c| c.sum() / n as f64).collect();
            let sigma = empirical_covariance(&table.data)?;
            let s = solve_covariance(&sigma, a.s_method.method(), opts)?;
            let model = GaussianModel::new(mean, sigma)?;
            gaussian_output(&table, &model, &s, a.seed, "second-order", false)?
        }
    };
    ensure_dir(&a.out)?;
    write_csv(&a.out.join("x_tilde.csv"), &Table::new(table.header.clone(), x_tilde))?;
    write_json(&a.out.join("provenance.json"), &provenance)?;
    manifest.finish(&a.out, &settings(&words))?;
    Ok(())
}

fn gaussian_output(
    table: &Table,
    model: &GaussianModel,
    s: &SVector,
    seed: u64,
    method: &str,
    fixed: bool,
) -> Result<(nalgebra::DMatrix<f64>, Value)> {
    let sampler = GaussianKnockoffSampler::new(model, &s.s)?;
    let x_tilde = sampler.sample(&table.data, seed, None)?;
    let prov = json!({
        "generator": "gaussian",
        "seed": seed,
        "method": method,
        "s_method": if fixed { "fixed" } else { s.method.name() },
        "s": s.s,
        "gamma": s.gamma,
        "feasibility_margin": s.feasibility_margin,
    });
    Ok((x_tilde, prov))
}

fn cmd_select(a: &SelectArgs, words: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::start(words.clone(), "select", Some(a.seed));
    if !(a.q > 0.0 && a.q < 1.0) {
        return Err(Error::Config(format!("--q must lie in (0, 1), got {}", a.q)));
    }
    let x = read_csv(&a.x)?;
    let xt = read_csv(&a.x_tilde)?;
    let (_, y) = read_csv_vector(&a.y)?;
    for path in [&a.x, &a.x_tilde, &a.y] {
        manifest.add_input(path)?;
    }
    let n = x.data.nrows();
    let data = KnockoffDataset::new(
        x.data.clone(),
        xt.data,
        y,
        vec![false; n],
        Provenance {
            generator: "file".into(),
            seed: 0,
        },
    )?;
    if data.y.is_empty() {
        return Err(Error::Config("response file has no rows".into()));
    }
    let family: Family = a.family.into();
    let config = match a.statistic {
        StatisticArg::Lcd => StatisticConfig::Lcd(LcdOptions {
            folds: a.folds,
            grid_size: a.grid_size.unwrap_or(100),
            ..LcdOptions::new(family, a.seed)
        }),
        StatisticArg::Lsm => StatisticConfig::Lsm(LsmOptions {
            grid_size: a.grid_size.unwrap_or(200),
            ..LsmOptions::new(family)
        }),
        StatisticArg::Bvs => {
            let mut prior = BvsPrior::new(data.p(), a.tau);
            if let Some(pi) = a.pi {
                prior.pi = pi;
            }
            StatisticConfig::Bvs(BvsOptions {
                family,
                prior,
                gibbs: GibbsOptions {
                    burn_in: a.burn_in,
                    samples: a.samples,
                },
                seed: a.seed,
            })
        }
    };
    let w = config.compute(&data)?;
    let sel = knockoff_threshold(&w.w, a.q, !a.no_plus)?;
    let result = json!({
        "statistic": w.kind.name(),
        "antisymmetric": w.antisymmetric.name(),
        "family": family.name(),
        "q": a.q,
        "plus": sel.plus,
        "threshold": num(sel.threshold),
        "fdp_estimate": sel.fdp_estimate,
        "selected": sel.selected,
        "selected_names": sel.selected.iter().map(|&j| x.header[j].clone()).collect::<Vec<_>>(),
        "selected_w": sel.selected.iter().map(|&j| w.w[j]).collect::<Vec<_>>(),
        "w": w.w,
        "z": w.z.iter().map(|&v| num(v)).collect::<Vec<_>>(),
        "z_tilde": w.z_tilde.iter().map(|&v| num(v)).collect::<Vec<_>>(),
    });
    ensure_dir(&a.out)?;
    write_json(&a.out.join("selection.json"), &result)?;
    manifest.finish(&a.out, &settings(&words))?;
    Ok(())
}

fn cmd_crt(a: &CrtArgs, words: Vec<String>) -> Result<()> {
    let mut manifest = RunManifest::start(words.clone(), "crt", Some(a.seed));
    if a.k == 0 {
        return Err(Error::Config("--k must be at least 1".into()));
    }
    if let Some(q) = a.q {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Config(format!("--q must lie in (0, 1), got {q}")));
        }
    }
    let x = read_csv(&a.x)?;
    let (_, y) = read_csv_vector(&a.y)?;
    let model = ModelConfig::load(&a.model)?.build()?;
    for path in [&a.x, &a.y, &a.model] {
        manifest.add_input(path)?;
    }
    let family: Family = a.family.into();
    let (lambda, source) = match a.lambda {
        Some(l) if l > 0.0 && l.is_finite() => (l, "flag"),
        Some(l) => return Err(Error::Config(format!("--lambda must be positive, got {l}"))),
        None => {
            let cv = cv_lambda(&x.data, &y, family, 10, 100, a.seed, &FitOptions::for_family(family))?;
            (cv.lambda_min, "cross_validation")
        }
    };
    let CrtStatisticArg::LassoCoef = a.statistic;
    let stat = LassoCoefficient::new(lambda, family);
    let early = EarlyStop {
        cutoff: a.early_stop_cutoff,
        ..EarlyStop::default()
    };
    let res = crt_all_parallel(&x.data, &y, &model, &stat, a.k, a.seed, &early)?;
    let mut csv = String::from("feature,name,statistic,p_value,randomizations\n");
    for j in 0..x.data.ncols() {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            j,
            x.header[j],
            format_f64(res.observed[j]),
            format_f64(res.p_values[j]),
            res.randomizations_used[j]
        ));
    }
    ensure_dir(&a.out)?;
    write_file(&a.out.join("pvalues.csv"), csv.as_bytes())?;
    let stops: Vec<Value> = res
        .early_stop_log
        .iter()
        .map(|e| {
            json!({
                "feature": e.feature,
                "randomizations": e.randomizations,
                "exceedances": e.exceedances,
                "reason": format!("{:?}", e.reason),
            })
        })
        .collect();
    let bh = match a.q {
        Some(q) => json!(bhq(&res.p_values, q)?),
        None => Value::Null,
    };
    write_json(
        &a.out.join("crt.json"),
        &json!({
            "statistic": res.statistic,
            "lambda": lambda,
            "lambda_source": source,
            "k": a.k,
            "total_randomizations": res.randomizations_used.iter().sum::<usize>(),
            "early_stops": stops,
            "bh_q": a.q,
            "bh_selected": bh,
        }),
    )?;
    manifest.finish(&a.out, &settings(&words))?;
    Ok(())
}

fn scale_metadata(config: &ScenarioConfig) -> Value {
    let (n, p, k) = REFERENCE_SCALE;
    json!({
        "reference": {"n": n, "p": p, "k_nonzero": k},
        "n": config.n as f64 / n as f64,
        "p": config.p as f64 / p as f64,
        "k_nonzero": config.k_nonzero as f64 / k as f64,
    })
}

fn cmd_simulate(a: &SimulateArgs, words: Vec<String>) -> Result<()> {
    let bytes = read_file(&a.config)?;
    let config: SimulationConfig =
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", a.config.display())))?;
    let seed = match &config {
        SimulationConfig::Scenario(s) | SimulationConfig::Robustness { scenario: s, .. } => s.seed,
        SimulationConfig::PvalueInflation { seed, .. } => *seed,
    };
    let mut manifest = RunManifest::start(words.clone(), "simulate", Some(seed));
    manifest.add_input(&a.config)?;
    match &config {
        SimulationConfig::Scenario(s) => {
            let summaries = run_scenario(s)?;
            ensure_dir(&a.out)?;
            let hash = s.hash();
            write_rep_rows(&a.out.join("reps.csv"), &hash, &summaries)?;
            write_summary(&a.out.join("summary.csv"), &hash, &summaries)?;
            let points: Vec<(f64, _)> = summaries.iter().enumerate().map(|(i, s)| (i as f64, s)).collect();
            write_gnuplot(&a.out.join("summary.dat"), "index", &points)?;
            write_json(
                &a.out.join("metadata.json"),
                &json!({"experiment": "scenario", "scenario_hash": hash, "config": s, "scale_factors": scale_metadata(s)}),
            )?;
        }
        SimulationConfig::Robustness { alpha_grid, scenario } => {
            let sweep = robustness_sweep(alpha_grid, scenario)?;
            ensure_dir(&a.out)?;
            let hash = scenario.hash();
            let summaries: Vec<_> = sweep.iter().map(|(_, s)| s.clone()).collect();
            write_rep_rows(&a.out.join("reps.csv"), &hash, &summaries)?;
            write_summary(&a.out.join("summary.csv"), &hash, &summaries)?;
            let points: Vec<(f64, _)> = sweep.iter().map(|(alpha, s)| (*alpha, s)).collect();
            write_gnuplot(&a.out.join("summary.dat"), "alpha", &points)?;
            write_json(
                &a.out.join("metadata.json"),
                &json!({
                    "experiment": "robustness",
                    "scenario_hash": hash,
                    "alpha_grid": alpha_grid,
                    "config": scenario,
                    "scale_factors": scale_metadata(scenario),
                }),
            )?;
        }
        SimulationConfig::PvalueInflation {
            setting,
            custom,
            reps,
            seed,
        } => {
            let setting = match (custom, setting) {
                (Some(c), _) => *c,
                (None, Some(k)) => LogisticSetting::numbered(*k)?,
                (None, None) => return Err(Error::Config("pvalue_inflation needs `setting` or `custom`".into())),
            };
            let out = pvalue_inflation_experiment(&setting, *reps, *seed)?;
            ensure_dir(&a.out)?;
            let mut tails = String::from("cutoff,tail_prob,tail_se,used,excluded\n");
            for i in 0..out.cutoffs.len() {
                tails.push_str(&format!(
                    "{},{},{},{},{}\n",
                    format_f64(out.cutoffs[i]),
                    format_f64(out.tail_prob[i]),
                    format_f64(out.tail_se[i]),
                    out.used,
                    out.excluded
                ));
            }
            write_file(&a.out.join("tails.csv"), tails.as_bytes())?;
            let mut pv = String::from("rep,p_value\n");
            for (r, p) in out.pvalues.iter().enumerate() {
                let cell = if p.is_nan() { "NA".to_owned() } else { format_f64(*p) };
                pv.push_str(&format!("{r},{cell}\n"));
            }
            write_file(&a.out.join("pvalues.csv"), pv.as_bytes())?;
            write_json(&a.out.join("metadata.json"), &json!({"experiment": "pvalue_inflation", "summary": out}))?;
        }
    }
    manifest.finish(&a.out, &settings(&words))?;
    Ok(())
}
