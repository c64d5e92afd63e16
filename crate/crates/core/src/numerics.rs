//! Dense linear-algebra kernels: PSD-aware Cholesky, extreme eigenvalues and
//! multivariate normal sampling.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::rng::{substream, Rng};

const SYMMETRY_RTOL: f64 = 1e-12;
const PSD_RTOL: f64 = 1e-10;

/// Dense symmetric matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates symmetry (relative to the largest entry) and finiteness, then
    /// stores the exactly symmetrized matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(invalid("symmetric matrix must be square"));
        }
        if m.nrows() == 0 {
            return Err(invalid("symmetric matrix must have positive dimension"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(invalid("matrix has non-finite entries"));
        }
        let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        let p = m.nrows();
        for j in 0..p {
            for i in (j + 1)..p {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(invalid("matrix is not symmetric"));
                }
            }
        }
        let mut m = m;
        for j in 0..p {
            for i in (j + 1)..p {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        Ok(SymMatrix(m))
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix(DMatrix::identity(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// Builds from a row-major nested slice.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(invalid("covariance rows must form a square matrix"));
        }
        Self::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Eigenvalues at or above `-psd_tolerance()` are treated as zero.
    pub fn psd_tolerance(&self) -> f64 {
        psd_tolerance(&self.0)
    }

    /// Principal submatrix on `idx`.
    pub fn submatrix(&self, idx: &[usize]) -> SymMatrix {
        SymMatrix(DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.0[(idx[a], idx[b])]))
    }
}

pub(crate) fn psd_tolerance(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().max(1) as f64;
    PSD_RTOL * (m.trace().abs() / n)
}

/// Outcome of [`cholesky_psd`].
#[derive(Debug, Clone)]
pub struct CholeskyResult {
    /// Factor `L` with `L L^T = m + jitter_used * I`; lower-triangular for
    /// definite input, row-permuted triangular for singular input, zero when
    /// not PSD.
    pub factor: DMatrix<f64>,
    pub is_psd: bool,
    pub jitter_used: f64,
}

/// Cholesky factorization that accepts semidefinite input.
///
/// Zero pivots (within the PSD tolerance) produce zero columns in the factor
/// instead of failing. If the matrix is not PSD the diagonal is shifted by
/// increasing amounts up to `jitter_max`.
pub fn cholesky_psd(m: &SymMatrix, jitter_max: f64) -> CholeskyResult {
    let tol = m.psd_tolerance();
    for eps in jitter_schedule(jitter_max) {
        if let Some(l) = semidefinite_cholesky(m.as_matrix(), eps, tol) {
            return CholeskyResult {
                factor: l,
                is_psd: true,
                jitter_used: eps,
            };
        }
    }
    CholeskyResult {
        factor: DMatrix::zeros(m.dim(), m.dim()),
        is_psd: false,
        jitter_used: jitter_max.max(0.0),
    }
}

fn jitter_schedule(jitter_max: f64) -> impl Iterator<Item = f64> {
    let jm = if jitter_max.is_finite() && jitter_max > 0.0 {
        jitter_max
    } else {
        0.0
    };
    let steps: [f64; 5] = [1e-6, 1e-4, 1e-2, 1e-1, 1.0];
    core::iter::once(0.0).chain(
        steps
            .into_iter()
            .filter(move |_| jm > 0.0)
            .map(move |f| f * jm),
    )
}

/// Square-root factor of `a + shift*I` tolerating pivots in `[-tol, tol]`.
///
/// Definite input gets the plain lower-triangular factor. Otherwise a
/// diagonally pivoted factorization is used and its rows are mapped back to
/// the original order, so `R R^T = a + shift*I` still holds but `R` is only
/// triangular up to that row permutation.
pub(crate) fn semidefinite_cholesky(a: &DMatrix<f64>, shift: f64, tol: f64) -> Option<DMatrix<f64>> {
    definite_cholesky(a, shift).or_else(|| pivoted_cholesky(a, shift, tol))
}

fn pivoted_cholesky(a: &DMatrix<f64>, shift: f64, tol: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut s = a.clone();
    for i in 0..n {
        s[(i, i)] += shift;
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut q = k;
        for i in (k + 1)..n {
            if s[(i, i)] > s[(q, q)] {
                q = i;
            }
        }
        if q != k {
            s.swap_rows(k, q);
            s.swap_columns(k, q);
            l.swap_rows(k, q);
            perm.swap(k, q);
        }
        let d = s[(k, k)];
        if d <= tol {
            // Remaining Schur complement must be zero up to the tolerance.
            for i in k..n {
                if s[(i, i)] < -tol {
                    return None;
                }
                for j in (i + 1)..n {
                    let bound = (s[(i, i)].abs() + tol) * (s[(j, j)].abs() + tol);
                    if s[(j, i)] * s[(j, i)] > bound {
                        return None;
                    }
                }
            }
            break;
        }
        let lkk = libm::sqrt(d);
        l[(k, k)] = lkk;
        for i in (k + 1)..n {
            l[(i, k)] = s[(i, k)] / lkk;
        }
        for j in (k + 1)..n {
            let ljk = l[(j, k)];
            for i in j..n {
                s[(i, j)] -= l[(i, k)] * ljk;
            }
        }
        // keep the upper triangle in sync for the pivot swaps
        for j in (k + 1)..n {
            for i in (j + 1)..n {
                s[(j, i)] = s[(i, j)];
            }
        }
    }
    let mut r = DMatrix::<f64>::zeros(n, n);
    for (row, &orig) in perm.iter().enumerate() {
        r.set_row(orig, &l.row(row));
    }
    Some(r)
}

/// Strict Cholesky (all pivots positive) of `a + shift*I`.
pub(crate) fn definite_cholesky(a: &DMatrix<f64>, shift: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let mut d = a[(k, k)] + shift;
        for j in 0..k {
            d -= l[(k, j)] * l[(k, j)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let lkk = libm::sqrt(d);
        l[(k, k)] = lkk;
        for i in (k + 1)..n {
            let mut s = a[(i, k)];
            for j in 0..k {
                s -= l[(i, j)] * l[(k, j)];
            }
            l[(i, k)] = s / lkk;
        }
    }
    Some(l)
}

/// Strictly definite factor of `m`, retrying with diagonal jitter up to
/// `jitter_max`. Returns the factor and the jitter used.
pub(crate) fn invertible_factor(m: &SymMatrix, jitter_max: f64) -> Option<(DMatrix<f64>, f64)> {
    jitter_schedule(jitter_max).find_map(|eps| definite_cholesky(m.as_matrix(), eps).map(|l| (l, eps)))
}

/// Solves `L L^T X = B` in place for a lower-triangular `l`.
pub(crate) fn cholesky_solve_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = b[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &SymMatrix) -> f64 {
    min_eigenvalue_raw(m.as_matrix())
}

pub(crate) fn min_eigenvalue_raw(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Square-root factor `R` with `R R^T = cov`.
///
/// Tries a semidefinite Cholesky first and falls back to an eigendecomposition
/// with the spectrum clamped at zero. Fails if the covariance has an eigenvalue
/// below `-(jitter + psd tolerance)`.
pub(crate) fn psd_root(cov: &DMatrix<f64>, jitter: f64) -> Result<DMatrix<f64>> {
    let tol = psd_tolerance(cov);
    if let Some(l) = semidefinite_cholesky(cov, 0.0, tol) {
        return Ok(l);
    }
    let eig = cov.clone().symmetric_eigen();
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if lmin < -(jitter + tol) {
        return Err(Error::NotPsd { min_eigenvalue: lmin });
    }
    let mut root = eig.eigenvectors;
    for (c, &lam) in eig.eigenvalues.iter().enumerate() {
        let w = libm::sqrt(lam.max(0.0));
        root.column_mut(c).scale_mut(w);
    }
    Ok(root)
}

/// Reusable sampler for `N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    root: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: &[f64], cov: &SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                what: "mean length vs covariance dimension",
                expected: cov.dim(),
                found: mean.len(),
            });
        }
        let jitter = PSD_RTOL * cov.trace().abs().max(1.0);
        Ok(MvnSampler {
            mean: DVector::from_column_slice(mean),
            root: psd_root(cov.as_matrix(), jitter)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Writes one draw into `out`.
    pub fn sample_into(&self, rng: &mut Rng, out: &mut [f64]) {
        let p = self.dim();
        let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
        for (i, o) in out.iter_mut().enumerate().take(p) {
            let mut acc = 0.0;
            for (k, zk) in z.iter().enumerate() {
                acc += self.root[(i, k)] * zk;
            }
            *o = self.mean[i] + acc;
        }
    }
}

/// `count` draws from `N(mean, cov)` as rows of a `count x p` matrix. Row `i`
/// uses substream `(seed, i)`.
pub fn mvn_sample(mean: &[f64], cov: &SymMatrix, seed: u64, count: usize) -> Result<DMatrix<f64>> {
    let sampler = MvnSampler::new(mean, cov)?;
    let p = sampler.dim();
    let mut out = DMatrix::zeros(count, p);
    let mut row = alloc::vec![0.0; p];
    for i in 0..count {
        let mut rng = substream(seed, i as u64);
        sampler.sample_into(&mut rng, &mut row);
        for j in 0..p {
            out[(i, j)] = row[j];
        }
    }
    Ok(out)
}
