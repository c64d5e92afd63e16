//! Knockoff samplers.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::covariate_model::{sample_categorical, DiscreteMarkovModel, GaussianModel};
use crate::error::{invalid, Error, Result};
use crate::numerics::{cholesky_solve_in_place, invertible_factor, psd_root, SymMatrix};
use crate::rng::{substream, Rng};
use crate::s_solver::{feasibility_margin, solve_covariance, SMethod, SVector, SolveOptions};

const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
}

/// Originals, knockoffs and response for one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct KnockoffDataset {
    pub x: DMatrix<f64>,
    pub x_tilde: DMatrix<f64>,
    /// Either empty or one entry per row.
    pub y: Vec<f64>,
    /// Rows whose knockoff is the original row itself.
    pub copy_mask: Vec<bool>,
    pub provenance: Provenance,
}

impl KnockoffDataset {
    pub fn new(
        x: DMatrix<f64>,
        x_tilde: DMatrix<f64>,
        y: Vec<f64>,
        copy_mask: Vec<bool>,
        provenance: Provenance,
    ) -> Result<Self> {
        if x.shape() != x_tilde.shape() {
            return Err(invalid("original and knockoff matrices differ in shape"));
        }
        let n = x.nrows();
        if !y.is_empty() && y.len() != n {
            return Err(Error::DimensionMismatch {
                what: "response length",
                expected: n,
                found: y.len(),
            });
        }
        if copy_mask.len() != n {
            return Err(Error::DimensionMismatch {
                what: "copy mask length",
                expected: n,
                found: copy_mask.len(),
            });
        }
        if x.iter().chain(x_tilde.iter()).chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("dataset has non-finite entries"));
        }
        for (i, &m) in copy_mask.iter().enumerate() {
            if m && (0..x.ncols()).any(|j| x[(i, j)].to_bits() != x_tilde[(i, j)].to_bits()) {
                return Err(invalid(alloc::format!("masked row {i} is not an exact copy")));
            }
        }
        Ok(KnockoffDataset {
            x,
            x_tilde,
            y,
            copy_mask,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn with_response(mut self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "response length",
                expected: self.n(),
                found: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(invalid("response has non-finite entries"));
        }
        self.y = y;
        Ok(self)
    }

    /// `[X, X_tilde]`, `n x 2p`.
    pub fn augmented(&self) -> DMatrix<f64> {
        let (n, p) = self.x.shape();
        let mut out = DMatrix::zeros(n, 2 * p);
        out.columns_mut(0, p).copy_from(&self.x);
        out.columns_mut(p, p).copy_from(&self.x_tilde);
        out
    }

    /// Copy with the columns in `subset` exchanged between `X` and `X_tilde`.
    pub fn swapped(&self, subset: &[usize]) -> Self {
        let mut out = self.clone();
        for &j in subset {
            out.x.set_column(j, &self.x_tilde.column(j));
            out.x_tilde.set_column(j, &self.x.column(j));
        }
        out
    }
}

/// Precomputed conditional law of `X_tilde | X` under a Gaussian model.
///
/// Each row is `x - (x - mean) B + R z` with `B = Sigma^-1 diag(s)` and
/// `R R^T = 2 diag(s) - diag(s) Sigma^-1 diag(s)`.
#[derive(Debug, Clone)]
pub struct GaussianKnockoffSampler {
    mean: Vec<f64>,
    b: DMatrix<f64>,
    root: DMatrix<f64>,
    s: Vec<f64>,
}

impl GaussianKnockoffSampler {
    pub fn new(model: &GaussianModel, s: &[f64]) -> Result<Self> {
        let p = model.dim();
        if s.len() != p {
            return Err(Error::DimensionMismatch {
                what: "s vector length",
                expected: p,
                found: s.len(),
            });
        }
        if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("s must be finite and nonnegative"));
        }
        let sigma = model.sigma.as_matrix();
        let scale = (sigma.trace() / p as f64).max(1.0);
        let margin = feasibility_margin(&model.sigma, s);
        if margin < -FEASIBILITY_TOL * scale {
            return Err(Error::InfeasibleS { margin });
        }
        let active: Vec<usize> = (0..p).filter(|&j| s[j] != 0.0).collect();
        let mut b = DMatrix::zeros(p, p);
        if !active.is_empty() {
            let (l, _) = invertible_factor(&model.sigma, 1e-8 * scale).ok_or(Error::Singular("covariance"))?;
            let mut rhs = DMatrix::zeros(p, active.len());
            for (c, &j) in active.iter().enumerate() {
                rhs[(j, c)] = s[j];
            }
            cholesky_solve_in_place(&l, &mut rhs);
            for (c, &j) in active.iter().enumerate() {
                b.set_column(j, &rhs.column(c));
            }
        }
        let mut v = DMatrix::zeros(p, p);
        for &j in &active {
            for &k in &active {
                v[(j, k)] = -s[j] * b[(j, k)];
            }
            v[(j, j)] += 2.0 * s[j];
        }
        let v = (&v + v.transpose()) * 0.5;
        let mut root = psd_root(&v, 1e-8 * scale)?;
        for j in 0..p {
            if s[j] == 0.0 {
                root.row_mut(j).fill(0.0);
            }
        }
        Ok(GaussianKnockoffSampler {
            mean: model.mean.iter().copied().collect(),
            b,
            root,
            s: s.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    /// Knockoff rows for `x`; row `i` draws from substream `(seed, i)` and
    /// rows flagged in `copy_mask` are copied without drawing.
    pub fn sample(&self, x: &DMatrix<f64>, seed: u64, copy_mask: Option<&[bool]>) -> Result<DMatrix<f64>> {
        let (n, p) = x.shape();
        if p != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "data columns vs model dimension",
                expected: self.dim(),
                found: p,
            });
        }
        if let Some(m) = copy_mask {
            if m.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "copy mask length",
                    expected: n,
                    found: m.len(),
                });
            }
        }
        let masked = |i: usize| copy_mask.map_or(false, |m| m[i]);
        let mut centered = x.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mean[j]);
        }
        let shift = &centered * &self.b;
        let mut z = DMatrix::<f64>::zeros(n, p);
        for i in 0..n {
            if masked(i) {
                continue;
            }
            let mut rng = substream(seed, i as u64);
            for j in 0..p {
                z[(i, j)] = StandardNormal.sample(&mut rng);
            }
        }
        let noise = &z * self.root.transpose();
        let mut out = x.clone();
        for i in 0..n {
            if masked(i) {
                continue;
            }
            for j in 0..p {
                out[(i, j)] = x[(i, j)] - shift[(i, j)] + noise[(i, j)];
            }
        }
        Ok(out)
    }
}

/// Exact Gaussian knockoffs for every row of `x`.
pub fn gaussian_knockoffs(x: &DMatrix<f64>, model: &GaussianModel, s: &SVector, seed: u64) -> Result<KnockoffDataset> {
    gaussian_knockoffs_masked(x, model, s, seed, &vec![false; x.nrows()])
}

/// Gaussian knockoffs for the unmasked rows; masked rows get exact copies.
pub fn gaussian_knockoffs_masked(
    x: &DMatrix<f64>,
    model: &GaussianModel,
    s: &SVector,
    seed: u64,
    copy_mask: &[bool],
) -> Result<KnockoffDataset> {
    let sampler = GaussianKnockoffSampler::new(model, &s.s)?;
    let x_tilde = sampler.sample(x, seed, Some(copy_mask))?;
    KnockoffDataset::new(
        x.clone(),
        x_tilde,
        Vec::new(),
        copy_mask.to_vec(),
        Provenance {
            generator: alloc::format!("exact-gaussian/{}", s.method.name()),
            seed,
        },
    )
}

/// Knockoffs for rows that are their own knockoffs.
pub fn exact_copy_knockoffs(rows: &DMatrix<f64>) -> DMatrix<f64> {
    rows.clone()
}

/// Treats `x` as `N(0, sigma_source)`: computes `s` with the requested
/// construction and samples Gaussian knockoffs.
pub fn second_order_knockoffs(
    x: &DMatrix<f64>,
    sigma_source: &SymMatrix,
    method: SMethod,
    opts: SolveOptions,
    seed: u64,
) -> Result<KnockoffDataset> {
    let s = solve_covariance(sigma_source, method, opts)?;
    let model = GaussianModel::centered(sigma_source.clone())?;
    let mut ds = gaussian_knockoffs(x, &model, &s, seed)?;
    ds.provenance.generator = alloc::format!("second-order/{}", method.name());
    Ok(ds)
}

/// Sequential conditional independent pairs for a Markov chain.
///
/// The rows of `x` hold integer states. Row `i` uses substream `(seed, i)`.
pub fn scip_knockoffs(x: &DMatrix<f64>, model: &DiscreteMarkovModel, seed: u64) -> Result<KnockoffDataset> {
    let (n, p) = x.shape();
    if p != model.dim() {
        return Err(Error::DimensionMismatch {
            what: "data columns vs chain length",
            expected: model.dim(),
            found: p,
        });
    }
    let mut x_tilde = DMatrix::zeros(n, p);
    for i in 0..n {
        let row = states_of_row(x, i)?;
        let mut rng = substream(seed, i as u64);
        let kn = scip_row(model, &row, &mut rng)?;
        for j in 0..p {
            x_tilde[(i, j)] = kn[j] as f64;
        }
    }
    KnockoffDataset::new(
        x.clone(),
        x_tilde,
        Vec::new(),
        vec![false; n],
        Provenance {
            generator: "scip".to_string(),
            seed,
        },
    )
}

fn states_of_row(x: &DMatrix<f64>, i: usize) -> Result<Vec<usize>> {
    (0..x.ncols())
        .map(|j| {
            let v = x[(i, j)];
            if v >= 0.0 && libm::trunc(v) == v && v < usize::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(invalid(alloc::format!("entry ({i}, {j}) = {v} is not a state index")))
            }
        })
        .collect()
}

/// One knockoff row.
pub fn scip_row(model: &DiscreteMarkovModel, x: &[usize], rng: &mut Rng) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(x.len());
    scip_walk(model, x, |_, w| {
        let k = sample_categorical(w, rng);
        out.push(k);
        k
    })?;
    Ok(out)
}

/// `P(X_tilde = x_tilde | X = x)` under the sampler.
pub fn scip_knockoff_probability(model: &DiscreteMarkovModel, x: &[usize], x_tilde: &[usize]) -> Result<f64> {
    if x_tilde.len() != x.len() {
        return Err(invalid("knockoff row length differs from the original"));
    }
    model.check_row(x_tilde)?;
    let mut prob = 1.0;
    scip_walk(model, x, |j, w| {
        let total: f64 = w.iter().sum();
        prob *= w[x_tilde[j]] / total;
        x_tilde[j]
    })?;
    Ok(prob)
}

/// Runs the recursion; `choose(j, weights)` picks the knockoff state at `j`
/// from unnormalized conditional weights.
fn scip_walk(
    model: &DiscreteMarkovModel,
    x: &[usize],
    mut choose: impl FnMut(usize, &[f64]) -> usize,
) -> Result<()> {
    model.check_row(x)?;
    if model.pmf(x) <= 0.0 {
        let j = (0..x.len()).find(|&j| prefix_prob(model, &x[..=j]) <= 0.0).unwrap_or(0);
        return Err(Error::ZeroProbabilityState { coordinate: j });
    }
    let p = x.len();
    let mut norm_prev = vec![1.0; model.state_count(0)];
    let mut prev_tilde = 0usize;
    let mut weights = Vec::new();
    for j in 0..p {
        let k = model.state_count(j);
        let forward: Vec<f64> = (0..k)
            .map(|u| {
                if j == 0 {
                    model.initial()[u]
                } else {
                    let q = model.transition(j - 1);
                    q[(x[j - 1], u)] * q[(prev_tilde, u)]
                }
            })
            .collect();
        weights.clear();
        for u in 0..k {
            let back = if j + 1 < p { model.transition(j)[(u, x[j + 1])] } else { 1.0 };
            weights.push(ratio(forward[u] * back, norm_prev[u]));
        }
        if !(weights.iter().sum::<f64>() > 0.0) {
            return Err(Error::ZeroProbabilityState { coordinate: j });
        }
        let chosen = choose(j, &weights);
        if j + 1 < p {
            let q = model.transition(j);
            norm_prev = (0..model.state_count(j + 1))
                .map(|v| (0..k).map(|u| ratio(forward[u] * q[(u, v)], norm_prev[u])).sum())
                .collect();
        }
        prev_tilde = chosen;
    }
    Ok(())
}

/// `a / b` with `0 / 0 = 0`.
fn ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn prefix_prob(model: &DiscreteMarkovModel, prefix: &[usize]) -> f64 {
    let mut prob = model.initial()[prefix[0]];
    for k in 1..prefix.len() {
        prob *= model.transition(k - 1)[(prefix[k - 1], prefix[k])];
    }
    prob
}
