//! End-to-end acceptance suite.
//!
//! Prints one `PASS`/`FAIL` line per criterion (straight to stderr, so the
//! lines survive output capture) and fails if any criterion fails. Set
//! `ACCEPTANCE_ONLY=2,10` to run a subset. Robustness tables are written
//! under the cargo target tmpdir in `acceptance/robustness`.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use knockoffs::simharness::*;
use knockoffs_core::covariate_model::{ar1_covariance, CovariateModel, DiscreteMarkovModel, GaussianModel};
use knockoffs_core::crt::{binomial_upper_tail, EarlyStop, LassoCoefficient};
use knockoffs_core::filter::knockoff_threshold;
use knockoffs_core::knockoff_gen::scip_knockoff_probability;
use knockoffs_core::numerics::{mvn_sample, SymMatrix};
use knockoffs_core::rng::derive_seed;
use knockoffs_core::s_solver::{solve_asdp, solve_equi, solve_sdp, DEFAULT_TOL};
use knockoffs_core::sparse_glm::{lambda_grid, lambda_max, lasso_fit, Family, FitOptions};
use knockoffs_core::statistics::flip_sign_check;
use knockoffs_core::DMatrix;
use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;
type Criterion = fn(&Option<Vec<SweepSummary>>) -> Outcome;

fn say(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn selected() -> Option<BTreeSet<usize>> {
    let raw = std::env::var("ACCEPTANCE_ONLY").ok()?;
    Some(raw.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn out_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

#[test]
fn acceptance() {
    let only = selected();
    let mut desk_rho05: Option<Vec<SweepSummary>> = None;
    let mut failures = Vec::new();
    let wanted = |k: usize| only.as_ref().is_none_or(|s| s.contains(&k));
    // criterion 10 reuses the correlated cell of criterion 2
    if wanted(2) || wanted(10) {
        let t = Instant::now();
        match desk_cells(wanted(2)) {
            Ok((independent, correlated)) => {
                if wanted(2) {
                    report(2, Ok(fdr_cells(&independent, &correlated)), t, &mut failures);
                }
                desk_rho05 = Some(correlated);
            }
            Err(e) => report(2, Err(e), t, &mut failures),
        }
    }
    let criteria: [(usize, Criterion); 9] = [
        (1, |_| logistic_inflation()),
        (3, |_| scip_exactness()),
        (4, |_| s_solver_oracle()),
        (5, |_| threshold_oracle()),
        (6, |_| flip_sign()),
        (7, |_| null_sign_symmetry()),
        (8, |_| crt_calibration()),
        (9, |_| robustness_endpoints()),
        (10, power_ordering),
    ];
    for (k, run) in criteria {
        if wanted(k) {
            let t = Instant::now();
            report(k, run(&desk_rho05), t, &mut failures);
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

fn report(k: usize, outcome: Outcome, t: Instant, failures: &mut Vec<usize>) {
    let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    if !ok {
        failures.push(k);
    }
    let tag = if ok { "PASS" } else { "FAIL" };
    say(&format!("criterion {k:>2}: {tag}  {detail}  [{:.1}s]", t.elapsed().as_secs_f64()));
}

// ---------------------------------------------------------------- 1

fn logistic_inflation() -> Outcome {
    let setting = LogisticSetting::numbered(3)?;
    let s = pvalue_inflation_experiment(&setting, 2000, 20_240_101)?;
    let target = 0.1688;
    let got = s.tail_prob[0];
    let ok = (got - target).abs() <= 0.012 && s.used >= 1900;
    Ok((
        ok,
        format!(
            "logistic null n=500 p=200: P(p<=0.05) = {got:.4} (se {:.4}), target {target} +/- 0.012; {} of {} fits kept",
            s.tail_se[0], s.used, s.reps
        ),
    ))
}

// ---------------------------------------------------------------- 2, 10

const DESK_REPS: usize = 500;
const DESK_AMPLITUDE: f64 = 4.0;

fn desk_cells(with_independent: bool) -> Result<(Vec<SweepSummary>, Vec<SweepSummary>), Box<dyn std::error::Error>> {
    let independent = if with_independent {
        run_scenario(&ScenarioConfig::desk(Design::IidGaussian, DESK_AMPLITUDE, DESK_REPS, 11))?
    } else {
        Vec::new()
    };
    let mut correlated = ScenarioConfig::desk(Design::Ar1 { rho: 0.5 }, DESK_AMPLITUDE, DESK_REPS, 12);
    correlated.statistics = vec![
        StatisticSpec::Lcd {
            folds: 10,
            grid_size: 100,
        },
        StatisticSpec::Lsm { grid_size: 200 },
    ];
    Ok((independent, run_scenario(&correlated)?))
}

fn fdr_cells(independent: &[SweepSummary], correlated: &[SweepSummary]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (rho, cell) in [(0.0, &independent[0]), (0.5, &correlated[0])] {
        let bound = 0.1 + 3.0 * cell.fdr_se;
        ok &= cell.fdr_mean <= bound;
        parts.push(format!(
            "rho={rho}: FDR {:.4} <= {bound:.4} (power {:.3}, {} reps)",
            cell.fdr_mean,
            cell.power_mean,
            cell.reps.len()
        ));
    }
    (ok, format!("LCD knockoff+ q=0.1; {}", parts.join("; ")))
}

fn power_ordering(cells: &Option<Vec<SweepSummary>>) -> Outcome {
    let cells = cells.as_ref().ok_or("correlated desk cell missing")?;
    let (lcd, lsm) = (&cells[0], &cells[1]);
    let diffs: Vec<f64> = lcd
        .reps
        .iter()
        .map(|a| {
            let b = lsm.reps.iter().find(|b| b.rep == a.rep).expect("paired rep");
            a.power - b.power
        })
        .collect();
    let (mean, se) = mean_se(&diffs);
    let z = mean / se;
    Ok((
        diffs.len() >= 200 && z > 1.645,
        format!(
            "rho=0.5: power LCD {:.3} vs LSM {:.3}, paired diff {mean:.4} (se {se:.4}), z = {z:.2} > 1.645 over {} reps",
            lcd.power_mean,
            lsm.power_mean,
            diffs.len()
        ),
    ))
}

// ---------------------------------------------------------------- 3

/// Joint law of `(X, X_tilde)` built one knockoff coordinate at a time by
/// conditioning the enumerated table of `(X, X_tilde_1..j-1)`.
fn brute_force_scip(pmf: &dyn Fn(&[usize]) -> f64, p: usize) -> Vec<f64> {
    // table indexed by bits: x_1..x_p then x_tilde_1..x_tilde_j
    let mut table: Vec<f64> = (0..1usize << p).map(|code| pmf(&bits(code, p))).collect();
    for j in 0..p {
        let width = p + j;
        let mut next = vec![0.0; 1 << (width + 1)];
        for code in 0..1usize << width {
            let mass = table[code];
            if mass == 0.0 {
                continue;
            }
            let flip = code ^ (1 << j);
            let (same, other) = (table[code], table[flip]);
            let x_j = (code >> j) & 1;
            let total = same + other;
            for v in 0..2usize {
                let weight = if v == x_j { same } else { other };
                next[code | (v << width)] = mass * weight / total;
            }
        }
        table = next;
    }
    table
}

fn bits(code: usize, len: usize) -> Vec<usize> {
    (0..len).map(|k| (code >> k) & 1).collect()
}

fn scip_exactness() -> Outcome {
    let p = 3;
    let t1 = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, 0.35, 0.65]);
    let t2 = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.9, 0.1]);
    let model = DiscreteMarkovModel::new(vec![0.3, 0.7], vec![t1, t2])?;
    let oracle = brute_force_scip(&|x| model.pmf(x), p);
    let mut joint = vec![0.0; 1 << (2 * p)];
    let mut agree: f64 = 0.0;
    for code in 0..joint.len() {
        let all = bits(code, 2 * p);
        let (x, xt) = all.split_at(p);
        joint[code] = model.pmf(x) * scip_knockoff_probability(&model, x, xt)?;
        agree = agree.max((joint[code] - oracle[code]).abs());
    }
    let total: f64 = joint.iter().sum();
    let mut worst_tv: f64 = 0.0;
    for subset in 0..1usize << p {
        let tv: f64 = (0..joint.len())
            .map(|code| {
                let mut swapped = code;
                for j in 0..p {
                    if subset >> j & 1 == 1 {
                        let (a, b) = ((code >> j) & 1, (code >> (j + p)) & 1);
                        swapped &= !(1 << j) & !(1 << (j + p));
                        swapped |= (b << j) | (a << (j + p));
                    }
                }
                (joint[code] - joint[swapped]).abs()
            })
            .sum::<f64>()
            / 2.0;
        worst_tv = worst_tv.max(tv);
    }
    let ok = worst_tv <= 1e-12 && agree <= 1e-12 && (total - 1.0).abs() <= 1e-12;
    Ok((
        ok,
        format!("binary chain p=3: max TV over 8 swaps {worst_tv:.2e}, max |joint - brute force| {agree:.2e}, mass {total:.15}"),
    ))
}

// ---------------------------------------------------------------- 4

fn random_correlation(p: usize, rng: &mut StdRng) -> SymMatrix {
    let k = rng.random_range(1..=p);
    let a = DMatrix::<f64>::from_fn(p, k, |_, _| StandardNormal.sample(rng));
    let ridge = 0.05 + 0.5 * rng.random::<f64>();
    let mut c = &a * a.transpose();
    for j in 0..p {
        c[(j, j)] += ridge;
    }
    let d: Vec<f64> = (0..p).map(|j| 1.0 / c[(j, j)].sqrt()).collect();
    SymMatrix::new(DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { c[(i, j)] * d[i] * d[j] })).unwrap()
}

/// Dense simplex for `max c.x  s.t. A x <= b, x >= 0` with `b >= 0`
/// (Bland's rule).
fn simplex_max(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Vec<f64> {
    let (m, n) = (a.len(), c.len());
    let width = n + m + 1;
    let mut tab: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = vec![0.0; width];
            row[..n].copy_from_slice(&a[i]);
            row[n + i] = 1.0;
            row[width - 1] = b[i];
            row
        })
        .collect();
    let mut obj: Vec<f64> = (0..width).map(|j| if j < n { -c[j] } else { 0.0 }).collect();
    let mut basis: Vec<usize> = (n..n + m).collect();
    while let Some(enter) = (0..width - 1).find(|&j| obj[j] < -1e-12) {
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            if tab[i][enter] > 1e-12 {
                let r = tab[i][width - 1] / tab[i][enter];
                if r < best - 1e-15 || (r <= best + 1e-15 && leave.is_none_or(|l| basis[i] < basis[l])) {
                    best = r;
                    leave = Some(i);
                }
            }
        }
        let r = leave.expect("bounded LP");
        let piv = tab[r][enter];
        tab[r].iter_mut().for_each(|v| *v /= piv);
        let pivot_row = tab[r].clone();
        for (i, row) in tab.iter_mut().enumerate() {
            let f = row[enter];
            if i != r && f != 0.0 {
                row.iter_mut().zip(&pivot_row).for_each(|(v, w)| *v -= f * w);
            }
        }
        let f = obj[enter];
        obj.iter_mut().zip(&pivot_row).for_each(|(v, w)| *v -= f * w);
        basis[r] = enter;
    }
    let mut x = vec![0.0; n];
    for (i, &bv) in basis.iter().enumerate() {
        if bv < n {
            x[bv] = tab[i][width - 1];
        }
    }
    x
}

/// Outer approximation of `{0 <= s <= 1, 2 Sigma - diag(s) >= 0}` refined
/// with eigenvector cuts until the LP optimum is feasible to 1e-10.
fn cutting_plane_oracle(sigma: &DMatrix<f64>) -> Vec<f64> {
    let p = sigma.nrows();
    let mut a: Vec<Vec<f64>> = (0..p).map(|j| (0..p).map(|k| if j == k { 1.0 } else { 0.0 }).collect()).collect();
    let mut b = vec![1.0; p];
    let c = vec![1.0; p];
    for _ in 0..20_000 {
        let x = simplex_max(&a, &b, &c);
        let mut slack = sigma * 2.0;
        for j in 0..p {
            slack[(j, j)] -= x[j];
        }
        let eig = slack.symmetric_eigen();
        let (k, lam) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        if lam >= -1e-10 {
            return x;
        }
        let v = eig.eigenvectors.column(k);
        a.push(v.iter().map(|e| e * e).collect());
        b.push(2.0 * (v.transpose() * sigma * v)[(0, 0)]);
    }
    panic!("cutting planes did not converge");
}

/// Exhaustive 1e-3 grid over `s1` for a 2x2 correlation matrix, with `s2`
/// at its largest feasible value. The profile objective is concave in `s1`,
/// so the best grid point is within one step of the maximizer.
fn grid_oracle_2(rho: f64) -> [f64; 2] {
    let mut best = (-1.0, [0.0; 2]);
    for a in 0..=1000 {
        let s1 = a as f64 * 1e-3;
        let s2 = (2.0 - 4.0 * rho * rho / (2.0 - s1)).min(1.0);
        if s2 >= 0.0 && s1 + s2 > best.0 + 1e-12 {
            best = (s1 + s2, [s1, s2]);
        }
    }
    best.1
}

fn s_solver_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let mut worst_lp: f64 = 0.0;
    let mut worst_grid: f64 = 0.0;
    let mut equi_mismatch = 0;
    for m in 0..50 {
        let p = 2 + m % 7;
        let sigma = random_correlation(p, &mut rng);
        let s = solve_sdp(&sigma, DEFAULT_TOL)?.s;
        let oracle = cutting_plane_oracle(sigma.as_matrix());
        for j in 0..p {
            worst_lp = worst_lp.max((s[j] - oracle[j]).abs());
        }
        if p == 2 {
            let g = grid_oracle_2(sigma.as_matrix()[(0, 1)]);
            for j in 0..2 {
                worst_grid = worst_grid.max((s[j] - g[j]).abs());
            }
        }
        let singletons: Vec<Vec<usize>> = (0..p).map(|j| vec![j]).collect();
        if solve_asdp(&sigma, &singletons, DEFAULT_TOL)?.s != solve_equi(&sigma)?.s {
            equi_mismatch += 1;
        }
    }
    let ok = worst_lp <= 2e-3 && worst_grid <= 2e-3 && equi_mismatch == 0;
    Ok((
        ok,
        format!(
            "50 matrices p=2..8: max |s - cutting-plane oracle| {worst_lp:.2e}, max |s - 1e-3 grid| (p=2) {worst_grid:.2e}; identity-approximation ASDP != equi in {equi_mismatch} cases"
        ),
    ))
}

// ---------------------------------------------------------------- 5

fn brute_threshold(w: &[f64], q: f64, plus: bool) -> (f64, Vec<usize>) {
    let offset = if plus { 1.0 } else { 0.0 };
    let mut best = f64::INFINITY;
    for &t in w.iter().map(|v| v.abs()).filter(|&t| t > 0.0).collect::<Vec<_>>().iter() {
        let neg = w.iter().filter(|&&v| v <= -t).count() as f64;
        let pos = w.iter().filter(|&&v| v >= t).count() as f64;
        if (offset + neg) / pos.max(1.0) <= q && t < best {
            best = t;
        }
    }
    let sel = (0..w.len()).filter(|&j| w[j] >= best).collect();
    (best, sel)
}

fn threshold_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let mut mismatches = 0;
    for i in 0..1000 {
        let p = rng.random_range(1..=20);
        let w: Vec<f64> = (0..p)
            .map(|_| {
                if i % 2 == 0 {
                    // small integers force ties and zeros
                    rng.random_range(-4i32..=6) as f64
                } else {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z + 0.8
                }
            })
            .collect();
        let q = [0.05, 0.1, 0.2, 0.3, 0.5][i % 5];
        for plus in [false, true] {
            let got = knockoff_threshold(&w, q, plus)?;
            let (t, sel) = brute_threshold(&w, q, plus);
            if got.threshold != t || got.selected != sel {
                mismatches += 1;
            }
        }
    }
    let hand = [2.0, -1.0];
    let plain = knockoff_threshold(&hand, 0.5, false)?;
    let plus = knockoff_threshold(&hand, 0.5, true)?;
    let hand_ok = plain.threshold == 2.0 && plain.selected == vec![0] && plus.threshold.is_infinite() && plus.selected.is_empty();
    Ok((
        mismatches == 0 && hand_ok,
        format!(
            "{mismatches} mismatches against exhaustive search over 1000 W x 2 offsets; W=(2,-1) q=0.5: knockoff T={} selects {:?}, knockoff+ T={} selects {:?}",
            plain.threshold, plain.selected, plus.threshold, plus.selected
        ),
    ))
}

// ---------------------------------------------------------------- 6

fn flip_sign() -> Outcome {
    let config = ScenarioConfig {
        n: 200,
        p: 50,
        k_nonzero: 10,
        ..ScenarioConfig::desk(Design::Ar1 { rho: 0.3 }, 5.0, 1, 6)
    };
    let ctx = ScenarioContext::new(&config)?;
    let (data, _) = ctx.dataset(0)?;
    let mut rng = StdRng::seed_from_u64(6);
    let mut parts = Vec::new();
    let mut ok = true;
    for spec in [
        StatisticSpec::Lcd {
            folds: 10,
            grid_size: 100,
        },
        StatisticSpec::Lsm { grid_size: 200 },
    ] {
        let stat = spec.config(Family::Gaussian, config.p, 66);
        let tol = stat.tolerance();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let size = rng.random_range(1..=config.p);
            let swap: Vec<usize> = sample(&mut rng, config.p, size).into_vec();
            worst = worst.max(flip_sign_check(&stat, &data, &swap)?.max_discrepancy);
        }
        ok &= worst <= 2.0 * tol;
        parts.push(format!("{} max discrepancy {worst:.2e} (bound {:.0e})", spec.label(), 2.0 * tol));
    }
    Ok((ok, format!("n=200 p=50, 100 swap sets each: {}", parts.join("; "))))
}

// ---------------------------------------------------------------- 7

/// Two-sided exact binomial test of `successes` out of `n` at rate 1/2.
fn binomial_two_sided(n: usize, successes: usize) -> f64 {
    let extreme = successes.max(n - successes);
    if 2 * extreme == n {
        return 1.0;
    }
    (2.0 * binomial_upper_tail(n, 0.5, extreme)).min(1.0)
}

fn null_sign_symmetry() -> Outcome {
    let config = ScenarioConfig {
        n: 200,
        p: 60,
        k_nonzero: 0,
        ..ScenarioConfig::desk(Design::Ar1 { rho: 0.3 }, 0.0, 200, 7)
    };
    let ctx = ScenarioContext::new(&config)?;
    let specs = [
        StatisticSpec::Lcd {
            folds: 10,
            grid_size: 100,
        },
        StatisticSpec::Lsm { grid_size: 200 },
    ];
    let mut counts = [(0usize, 0usize); 2];
    for rep in 0..config.reps {
        let (data, support) = ctx.dataset(rep)?;
        assert!(support.is_empty());
        for (spec, count) in specs.iter().zip(counts.iter_mut()) {
            let w = spec.config(Family::Gaussian, config.p, derive_seed(77, rep as u64)).compute(&data)?.w;
            count.0 += w.iter().filter(|&&v| v > 0.0).count();
            count.1 += w.iter().filter(|&&v| v < 0.0).count();
        }
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (spec, (pos, neg)) in specs.iter().zip(counts) {
        let pval = binomial_two_sided(pos + neg, pos);
        ok &= pval >= 0.01 && pos + neg > 0;
        parts.push(format!("{}: {pos} positive / {neg} negative, p = {pval:.3}", spec.label()));
    }
    Ok((ok, format!("200 null reps n=200 p=60: {}", parts.join("; "))))
}

// ---------------------------------------------------------------- 8

fn crt_calibration() -> Outcome {
    let (n, p, reps, k) = (200, 50, 50, 199);
    let sigma = ar1_covariance(p, 0.3, 1.0)?;
    let model = CovariateModel::Gaussian(GaussianModel::centered(sigma.clone())?);
    let draw = |seed: u64| -> Result<(DMatrix<f64>, Vec<f64>), Box<dyn std::error::Error>> {
        let x = mvn_sample(&vec![0.0; p], &sigma, derive_seed(seed, 1), n)?;
        let mut rng = StdRng::seed_from_u64(derive_seed(seed, 2));
        let y = (0..n).map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 }).collect();
        Ok((x, y))
    };
    // penalty fixed once: the largest grid value with ten active features
    let (x0, y0) = draw(800)?;
    let opts = FitOptions::for_family(Family::Logistic);
    let mut lambda = 0.0;
    for l in lambda_grid(lambda_max(&x0, &y0, Family::Logistic)?, 100, 2.0) {
        let fit = lasso_fit(&x0, &y0, l, Family::Logistic, &opts)?;
        if fit.coefficients.iter().filter(|c| **c != 0.0).count() >= 10 {
            lambda = l;
            break;
        }
    }
    let stat = LassoCoefficient::new(lambda, Family::Logistic);
    let early = EarlyStop {
        cutoff: None,
        ..EarlyStop::default()
    };
    let mut pvalues = Vec::new();
    for rep in 0..reps {
        let (x, y) = draw(derive_seed(8, rep as u64))?;
        let r = knockoffs::parallel::crt_all_parallel(&x, &y, &model, &stat, k, derive_seed(88, rep as u64), &early)?;
        pvalues.extend(r.p_values);
    }
    let hits: Vec<f64> = pvalues.iter().map(|&v| if v <= 0.05 { 1.0 } else { 0.0 }).collect();
    let rate = hits.iter().sum::<f64>() / hits.len() as f64;
    let se = (rate * (1.0 - rate) / hits.len() as f64).sqrt();
    let bound = 0.05 + 3.0 * se;
    let resampled = pvalues.iter().filter(|&&v| v < 1.0).count();
    Ok((
        rate <= bound && pvalues.len() >= 500,
        format!(
            "logistic null n=200 p=50 rho=0.3 K=199, lambda {lambda:.4}: P(p<=0.05) = {rate:.4} <= {bound:.4} over {} p-values ({resampled} below 1)",
            pvalues.len()
        ),
    ))
}

// ---------------------------------------------------------------- 9

fn robustness_endpoints() -> Outcome {
    let config = ScenarioConfig {
        n: 200,
        p: 300,
        s_method: "asdp".into(),
        ..ScenarioConfig::desk(Design::Ar1 { rho: 0.3 }, 6.0, 100, 9)
    };
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let sweep = robustness_sweep(&grid, &config)?;
    let dir = out_dir().join("robustness");
    knockoffs::io::ensure_dir(&dir)?;
    let summaries: Vec<SweepSummary> = sweep.iter().map(|(_, s)| s.clone()).collect();
    let hash = config.hash();
    write_rep_rows(&dir.join("reps.csv"), &hash, &summaries)?;
    write_summary(&dir.join("summary.csv"), &hash, &summaries)?;
    let points: Vec<(f64, &SweepSummary)> = sweep.iter().map(|(a, s)| (*a, s)).collect();
    write_gnuplot(&dir.join("summary.dat"), "alpha", &points)?;

    let at = |alpha: f64| &sweep.iter().find(|(a, _)| *a == alpha).expect("grid point").1;
    let replicas = at(1.0);
    let nonempty = replicas.reps.iter().filter(|r| r.selected > 0).count();
    let half = at(0.5);
    let bound = config.q + 3.0 * half.fdr_se;
    let shape: Vec<String> = sweep.iter().map(|(a, s)| format!("{a}:{:.3}", s.fdr_mean)).collect();
    Ok((
        nonempty == 0 && half.fdr_mean <= bound,
        format!(
            "n=200 p=300 ASDP, {} reps: alpha=1 selections in {nonempty} reps; alpha=0.5 FDR {:.4} <= {bound:.4}; FDR by alpha [{}]; tables in {}",
            config.reps,
            half.fdr_mean,
            shape.join(" "),
            dir.display()
        ),
    ))
}
