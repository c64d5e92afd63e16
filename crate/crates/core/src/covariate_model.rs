//! The known covariate distribution: Gaussian or a discrete Markov chain.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::numerics::{cholesky_solve_in_place, invertible_factor, min_eigenvalue, SymMatrix};
use crate::rng::Rng;

const STOCHASTIC_TOL: f64 = 1e-12;
const CONDITIONAL_JITTER: f64 = 1e-10;

/// Column-wise affine map `x -> (x - center) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Rescales the columns of a data matrix in place.
    pub fn apply(&self, x: &mut DMatrix<f64>) {
        for (j, mut col) in x.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = (*v - self.center[j]) / self.scale[j];
            }
        }
    }

    pub fn invert(&self, x: &mut DMatrix<f64>) {
        for (j, mut col) in x.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = *v * self.scale[j] + self.center[j];
            }
        }
    }
}

/// `X ~ N(mean, sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub mean: DVector<f64>,
    pub sigma: SymMatrix,
    /// Set when the model has zero mean and unit variances.
    pub standardized: bool,
}

impl GaussianModel {
    pub fn new(mean: Vec<f64>, sigma: SymMatrix) -> Result<Self> {
        if mean.len() != sigma.dim() {
            return Err(Error::DimensionMismatch {
                what: "mean length vs covariance dimension",
                expected: sigma.dim(),
                found: mean.len(),
            });
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid("mean has non-finite entries"));
        }
        let lmin = min_eigenvalue(&sigma);
        if lmin < -sigma.psd_tolerance() {
            return Err(Error::NotPsd { min_eigenvalue: lmin });
        }
        let standardized = mean.iter().all(|&m| m == 0.0)
            && (0..sigma.dim()).all(|j| (sigma.as_matrix()[(j, j)] - 1.0).abs() <= 1e-8);
        Ok(GaussianModel {
            mean: DVector::from_vec(mean),
            sigma,
            standardized,
        })
    }

    pub fn centered(sigma: SymMatrix) -> Result<Self> {
        let p = sigma.dim();
        Self::new(vec![0.0; p], sigma)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Zero-mean, unit-variance version of the model and the map that takes
    /// data from the original scale to the standardized one.
    pub fn standardize(&self) -> Result<(GaussianModel, Standardization)> {
        let p = self.dim();
        let s = self.sigma.as_matrix();
        let scale: Vec<f64> = (0..p).map(|j| libm::sqrt(s[(j, j)])).collect();
        if scale.iter().any(|&v| v <= 0.0) {
            return Err(invalid("cannot standardize a coordinate with zero variance"));
        }
        let corr = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else {
                s[(i, j)] / (scale[i] * scale[j])
            }
        });
        let model = GaussianModel {
            mean: DVector::zeros(p),
            sigma: SymMatrix::new(corr)?,
            standardized: true,
        };
        Ok((
            model,
            Standardization {
                center: self.mean.iter().copied().collect(),
                scale,
            },
        ))
    }

    /// Regression of `X_j` on the remaining coordinates.
    pub fn conditional(&self, j: usize) -> Result<GaussianConditional> {
        let p = self.dim();
        if j >= p {
            return Err(invalid("feature index out of range"));
        }
        let s = self.sigma.as_matrix();
        let rest: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        if rest.is_empty() {
            return Ok(GaussianConditional {
                j,
                coef: Vec::new(),
                intercept: self.mean[0],
                var: s[(0, 0)],
            });
        }
        let block = self.sigma.submatrix(&rest);
        let jitter = CONDITIONAL_JITTER * block.trace().abs().max(f64::MIN_POSITIVE);
        let (l, _) = invertible_factor(&block, jitter).ok_or(Error::Singular("complement covariance block"))?;
        let mut coef = DMatrix::from_fn(rest.len(), 1, |a, _| s[(rest[a], j)]);
        cholesky_solve_in_place(&l, &mut coef);
        let coef: Vec<f64> = coef.iter().copied().collect();
        let explained: f64 = rest.iter().zip(&coef).map(|(&k, c)| s[(j, k)] * c).sum();
        let intercept = self.mean[j] - rest.iter().zip(&coef).map(|(&k, c)| c * self.mean[k]).sum::<f64>();
        Ok(GaussianConditional {
            j,
            coef,
            intercept,
            var: (s[(j, j)] - explained).max(0.0),
        })
    }
}

/// `X_j | X_-j ~ N(intercept + coef . x_-j, var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional {
    pub j: usize,
    /// Coefficients on the other coordinates, in increasing index order.
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub var: f64,
}

impl GaussianConditional {
    /// Conditional mean given a full row (entry `j` is ignored).
    pub fn mean_given_row(&self, row: impl Fn(usize) -> f64) -> f64 {
        let mut m = self.intercept;
        let mut c = 0;
        for k in 0..=self.coef.len() {
            if k == self.j {
                continue;
            }
            m += self.coef[c] * row(k);
            c += 1;
        }
        m
    }
}

/// Conditional mean and variance of `X_j` given the other coordinates, which
/// are passed in increasing index order without `x_j`.
pub fn conditional_gaussian(model: &GaussianModel, j: usize, x_minus_j: &[f64]) -> Result<(f64, f64)> {
    if x_minus_j.len() + 1 != model.dim() {
        return Err(Error::DimensionMismatch {
            what: "conditioning values",
            expected: model.dim().saturating_sub(1),
            found: x_minus_j.len(),
        });
    }
    let c = model.conditional(j)?;
    let mean = c.intercept + c.coef.iter().zip(x_minus_j).map(|(a, b)| a * b).sum::<f64>();
    Ok((mean, c.var))
}

/// Discrete chain `X_1 -> X_2 -> ... -> X_p` with per-coordinate state spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMarkovModel {
    initial: Vec<f64>,
    /// `transitions[k]` maps states of coordinate `k` (rows) to coordinate
    /// `k + 1` (columns).
    transitions: Vec<DMatrix<f64>>,
}

impl DiscreteMarkovModel {
    pub fn new(initial: Vec<f64>, transitions: Vec<DMatrix<f64>>) -> Result<Self> {
        check_distribution(&initial, "initial distribution")?;
        let mut states = initial.len();
        for (k, t) in transitions.iter().enumerate() {
            if t.nrows() != states {
                return Err(Error::DimensionMismatch {
                    what: "transition matrix rows",
                    expected: states,
                    found: t.nrows(),
                });
            }
            for r in 0..t.nrows() {
                let row: Vec<f64> = t.row(r).iter().copied().collect();
                check_distribution(&row, "transition row").map_err(|_| {
                    invalid(alloc::format!("transition {k} row {r} is not a probability vector"))
                })?;
            }
            states = t.ncols();
        }
        Ok(DiscreteMarkovModel { initial, transitions })
    }

    /// Homogeneous chain of length `p`.
    pub fn homogeneous(p: usize, initial: Vec<f64>, transition: DMatrix<f64>) -> Result<Self> {
        if p == 0 {
            return Err(invalid("chain length must be positive"));
        }
        Self::new(initial, vec![transition; p - 1])
    }

    pub fn dim(&self) -> usize {
        self.transitions.len() + 1
    }

    pub fn state_count(&self, j: usize) -> usize {
        if j == 0 {
            self.initial.len()
        } else {
            self.transitions[j - 1].ncols()
        }
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Transition matrix from coordinate `j` to `j + 1`.
    pub fn transition(&self, j: usize) -> &DMatrix<f64> {
        &self.transitions[j]
    }

    pub fn check_row(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "row length vs chain length",
                expected: self.dim(),
                found: x.len(),
            });
        }
        for (j, &v) in x.iter().enumerate() {
            if v >= self.state_count(j) {
                return Err(invalid(alloc::format!("state {v} out of range at coordinate {j}")));
            }
        }
        Ok(())
    }

    pub fn pmf(&self, x: &[usize]) -> f64 {
        let mut prob = self.initial[x[0]];
        for (k, t) in self.transitions.iter().enumerate() {
            prob *= t[(x[k], x[k + 1])];
        }
        prob
    }

    /// `P(X_j = u | X_-j = x_-j)` for every state `u`.
    pub fn conditional_pmf(&self, j: usize, x: &[usize]) -> Result<Vec<f64>> {
        self.check_row(x)?;
        let mut w: Vec<f64> = (0..self.state_count(j))
            .map(|u| {
                let left = if j == 0 {
                    self.initial[u]
                } else {
                    self.transitions[j - 1][(x[j - 1], u)]
                };
                let right = if j + 1 < self.dim() {
                    self.transitions[j][(u, x[j + 1])]
                } else {
                    1.0
                };
                left * right
            })
            .collect();
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroProbabilityState { coordinate: j });
        }
        w.iter_mut().for_each(|v| *v /= total);
        Ok(w)
    }

    /// Marginal distribution of every coordinate.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.dim());
        let mut cur = self.initial.clone();
        out.push(cur.clone());
        for t in &self.transitions {
            let next: Vec<f64> = (0..t.ncols())
                .map(|b| cur.iter().enumerate().map(|(a, pa)| pa * t[(a, b)]).sum())
                .collect();
            out.push(next.clone());
            cur = next;
        }
        out
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<usize> {
        let mut x = Vec::with_capacity(self.dim());
        x.push(sample_categorical(&self.initial, rng));
        for t in &self.transitions {
            let prev = *x.last().unwrap();
            let row: Vec<f64> = t.row(prev).iter().copied().collect();
            x.push(sample_categorical(&row, rng));
        }
        x
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(invalid(alloc::format!("{what} is empty")));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid(alloc::format!("{what} has negative or non-finite entries")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(invalid(alloc::format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// Inverse-CDF draw from a probability vector (normalization not required).
pub(crate) fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &pk) in probs.iter().enumerate() {
        if pk > 0.0 {
            last_positive = k;
        }
        acc += pk;
        if u < acc {
            return k;
        }
    }
    last_positive
}

/// Either covariate model supported by the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateModel {
    Gaussian(GaussianModel),
    Markov(DiscreteMarkovModel),
}

impl CovariateModel {
    pub fn dim(&self) -> usize {
        match self {
            CovariateModel::Gaussian(g) => g.dim(),
            CovariateModel::Markov(m) => m.dim(),
        }
    }
}

/// Maximum-likelihood covariance (divisor `n`) of column-centered data.
pub fn empirical_covariance(data: &DMatrix<f64>) -> Result<SymMatrix> {
    let n = data.nrows();
    if n == 0 {
        return Err(invalid("empirical covariance needs at least one row"));
    }
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    let cov = centered.tr_mul(&centered) / n as f64;
    SymMatrix::new(cov)
}

/// `(1 - alpha) * sigma_true + alpha * sigma_hat`.
pub fn mix_covariance(alpha: f64, sigma_true: &SymMatrix, sigma_hat: &SymMatrix) -> Result<SymMatrix> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid("mixing weight must lie in [0, 1]"));
    }
    if sigma_true.dim() != sigma_hat.dim() {
        return Err(Error::DimensionMismatch {
            what: "covariance dimensions",
            expected: sigma_true.dim(),
            found: sigma_hat.dim(),
        });
    }
    if alpha == 0.0 {
        return Ok(sigma_true.clone());
    }
    if alpha == 1.0 {
        return Ok(sigma_hat.clone());
    }
    SymMatrix::new(sigma_true.as_matrix() * (1.0 - alpha) + sigma_hat.as_matrix() * alpha)
}

/// Toeplitz covariance `scale * rho^|i-j|` of a stationary AR(1) sequence.
pub fn ar1_covariance(p: usize, rho: f64, scale: f64) -> Result<SymMatrix> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(invalid("AR(1) coefficient must lie in (-1, 1)"));
    }
    SymMatrix::new(DMatrix::from_fn(p, p, |i, j| {
        scale * libm::pow(rho, (i as f64 - j as f64).abs())
    }))
}
