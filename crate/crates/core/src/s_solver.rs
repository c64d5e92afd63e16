//! Decorrelation vectors `s` with `diag(s) <= 2 Sigma`.
//!
//! Three constructions: equicorrelated, the full SDP and the block
//! approximation followed by a uniform shrinkage `gamma`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::numerics::{min_eigenvalue_raw, psd_tolerance, semidefinite_cholesky, SymMatrix};

const UNIT_DIAG_TOL: f64 = 1e-8;
/// Below this smallest eigenvalue the SDP is solved on a slightly ridged
/// matrix and shrunk back onto the true one.
const SDP_RIDGE_THRESHOLD: f64 = 1e-6;
const SNAP_TO_ONE: f64 = 1e-6;
const GAMMA_BISECTION_TOL: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SMethod {
    Equi,
    Sdp,
    Asdp,
}

impl SMethod {
    pub fn name(self) -> &'static str {
        match self {
            SMethod::Equi => "eq",
            SMethod::Sdp => "sdp",
            SMethod::Asdp => "asdp",
        }
    }
}

impl core::str::FromStr for SMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eq" | "equi" | "equicorrelated" => Ok(SMethod::Equi),
            "sdp" => Ok(SMethod::Sdp),
            "asdp" => Ok(SMethod::Asdp),
            other => Err(invalid(alloc::format!("unknown s method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SVector {
    pub s: Vec<f64>,
    pub method: SMethod,
    /// Shrinkage applied to the block solution; 1 for the other methods.
    pub gamma: f64,
    /// Smallest eigenvalue of `2 Sigma - diag(s)`.
    pub feasibility_margin: f64,
}

impl SVector {
    fn build(sigma: &DMatrix<f64>, s: Vec<f64>, method: SMethod, gamma: f64) -> Self {
        let feasibility_margin = margin_raw(sigma, &s);
        SVector {
            s,
            method,
            gamma,
            feasibility_margin,
        }
    }
}

/// Smallest eigenvalue of `2 Sigma - diag(s)`.
pub fn feasibility_margin(sigma: &SymMatrix, s: &[f64]) -> f64 {
    margin_raw(sigma.as_matrix(), s)
}

fn margin_raw(sigma: &DMatrix<f64>, s: &[f64]) -> f64 {
    min_eigenvalue_raw(&slack(sigma, s, 1.0))
}

/// `2 Sigma - scale * diag(s)`.
fn slack(sigma: &DMatrix<f64>, s: &[f64], scale: f64) -> DMatrix<f64> {
    let mut m = sigma * 2.0;
    for (j, sj) in s.iter().enumerate() {
        m[(j, j)] -= scale * sj;
    }
    m
}

fn is_feasible(sigma: &DMatrix<f64>, s: &[f64], scale: f64) -> bool {
    let m = slack(sigma, s, scale);
    let tol = psd_tolerance(&(sigma * 2.0));
    semidefinite_cholesky(&m, 0.0, tol).is_some()
}

fn check_unit_diagonal(sigma: &SymMatrix) -> Result<()> {
    let m = sigma.as_matrix();
    for j in 0..sigma.dim() {
        if (m[(j, j)] - 1.0).abs() > UNIT_DIAG_TOL {
            return Err(invalid(alloc::format!(
                "covariance must have unit diagonal (entry {j} is {})",
                m[(j, j)]
            )));
        }
    }
    Ok(())
}

/// Smallest eigenvalue with values inside the PSD tolerance mapped to 0.
fn clamped_min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    let lam = min_eigenvalue_raw(m);
    let tol = psd_tolerance(m);
    if lam < -tol {
        return Err(Error::NotPsd { min_eigenvalue: lam });
    }
    Ok(if lam < tol { 0.0 } else { lam })
}

/// `s_j = min(2 lambda_min, 1)` for every `j`.
pub fn solve_equi(sigma: &SymMatrix) -> Result<SVector> {
    check_unit_diagonal(sigma)?;
    let lam = clamped_min_eigenvalue(sigma.as_matrix())?;
    let v = (2.0 * lam).min(1.0);
    Ok(SVector::build(sigma.as_matrix(), vec![v; sigma.dim()], SMethod::Equi, 1.0))
}

/// Maximizes `sum(s)` over `0 <= s <= 1`, `diag(s) <= 2 Sigma`.
///
/// `tol` bounds the optimality gap of the interior-point iterations.
pub fn solve_sdp(sigma: &SymMatrix, tol: f64) -> Result<SVector> {
    check_unit_diagonal(sigma)?;
    let s = sdp_block(sigma.as_matrix(), tol)?;
    Ok(SVector::build(sigma.as_matrix(), s, SMethod::Sdp, 1.0))
}

fn sdp_block(sigma: &DMatrix<f64>, tol: f64) -> Result<Vec<f64>> {
    let p = sigma.nrows();
    if p == 1 {
        return Ok(vec![(2.0 * sigma[(0, 0)]).min(1.0).max(0.0)]);
    }
    let lam = clamped_min_eigenvalue(sigma)?;
    let s = if lam < SDP_RIDGE_THRESHOLD {
        let mut ridged = sigma.clone();
        for j in 0..p {
            ridged[(j, j)] += SDP_RIDGE_THRESHOLD;
        }
        let s_hat = barrier_sdp(&ridged, SDP_RIDGE_THRESHOLD, tol)?;
        let gamma = max_gamma(sigma, &s_hat);
        s_hat.iter().map(|v| v * gamma).collect()
    } else {
        let mut s = barrier_sdp(sigma, lam, tol)?;
        snap_to_one(sigma, &mut s);
        s
    };
    Ok(s)
}

fn snap_to_one(sigma: &DMatrix<f64>, s: &mut [f64]) {
    let near: Vec<usize> = (0..s.len()).filter(|&j| s[j] < 1.0 && s[j] > 1.0 - SNAP_TO_ONE).collect();
    if near.is_empty() {
        return;
    }
    let mut all = s.to_vec();
    for &j in &near {
        all[j] = 1.0;
    }
    if is_feasible(sigma, &all, 1.0) {
        s.copy_from_slice(&all);
        return;
    }
    for &j in &near {
        let old = s[j];
        s[j] = 1.0;
        if !is_feasible(sigma, s, 1.0) {
            s[j] = old;
        }
    }
}

fn barrier_sdp(sigma: &DMatrix<f64>, lam_min: f64, tol: f64) -> Result<Vec<f64>> {
    const T_GROWTH: f64 = 8.0;
    const MAX_NEWTON: usize = 100;
    let p = sigma.nrows();
    let tol = if tol > 0.0 { tol } else { DEFAULT_TOL };
    let mut s = vec![0.5 * (2.0 * lam_min).min(1.0); p];
    let mut t = 1.0;
    let barrier_weight = 3.0 * p as f64;
    loop {
        for _ in 0..MAX_NEWTON {
            let chol = Cholesky::new(slack(sigma, &s, 1.0)).ok_or(Error::Singular("SDP iterate left the feasible region"))?;
            let minv = chol.inverse();
            let mut grad = DVector::zeros(p);
            let mut hess = minv.component_mul(&minv);
            for j in 0..p {
                let sj = s[j];
                grad[j] = -t + minv[(j, j)] - 1.0 / sj + 1.0 / (1.0 - sj);
                hess[(j, j)] += 1.0 / (sj * sj) + 1.0 / ((1.0 - sj) * (1.0 - sj));
            }
            let step = match Cholesky::new(hess) {
                Some(h) => -h.solve(&grad),
                None => return Err(Error::Singular("SDP Newton system")),
            };
            let decrement = -grad.dot(&step);
            if !(decrement > 1e-10) {
                break;
            }
            // damped step of a self-concordant function stays in the domain
            let lam = libm::sqrt(decrement);
            let mut alpha = if lam > 0.25 { 1.0 / (1.0 + lam) } else { 1.0 };
            loop {
                let trial: Vec<f64> = s.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
                if in_domain(sigma, &trial) {
                    s = trial;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-12 {
                    return Err(Error::Singular("SDP step collapsed"));
                }
            }
        }
        if barrier_weight / t < tol {
            break;
        }
        t *= T_GROWTH;
    }
    for v in &mut s {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(s)
}

fn in_domain(sigma: &DMatrix<f64>, s: &[f64]) -> bool {
    s.iter().all(|&v| v > 0.0 && v < 1.0) && Cholesky::new(slack(sigma, s, 1.0)).is_some()
}

/// Largest `gamma` in `[0, 1]` with `gamma diag(s) <= 2 Sigma`.
fn max_gamma(sigma: &DMatrix<f64>, s: &[f64]) -> f64 {
    if is_feasible(sigma, s, 1.0) {
        return 1.0;
    }
    if s.iter().all(|&v| v > 0.0) {
        // 2 Sigma - g D >= 0  iff  g <= 2 lambda_min(D^-1/2 Sigma D^-1/2)
        let p = s.len();
        let inv_root: Vec<f64> = s.iter().map(|v| 1.0 / libm::sqrt(*v)).collect();
        let scaled = DMatrix::from_fn(p, p, |i, j| sigma[(i, j)] * inv_root[i] * inv_root[j]);
        let lam = min_eigenvalue_raw(&scaled);
        let mut g = (2.0 * lam).clamp(0.0, 1.0);
        if lam < psd_tolerance(&scaled) {
            g = 0.0;
        }
        if is_feasible(sigma, s, g) {
            return g;
        }
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > GAMMA_BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if is_feasible(sigma, s, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// SDP on each diagonal block, then the largest uniform shrinkage that is
/// feasible for the full matrix.
pub fn solve_asdp(sigma: &SymMatrix, blocks: &[Vec<usize>], tol: f64) -> Result<SVector> {
    check_unit_diagonal(sigma)?;
    let p = sigma.dim();
    let mut seen = vec![false; p];
    for b in blocks {
        if b.is_empty() {
            return Err(invalid("empty block in partition"));
        }
        for &j in b {
            if j >= p || seen[j] {
                return Err(invalid(alloc::format!("partition repeats or exceeds index {j}")));
            }
            seen[j] = true;
        }
    }
    if seen.iter().any(|v| !v) {
        return Err(invalid("blocks do not cover every feature"));
    }
    let mut s_hat = vec![0.0; p];
    for b in blocks {
        let sub = sigma.submatrix(b);
        let sb = sdp_block(sub.as_matrix(), tol)?;
        for (&j, v) in b.iter().zip(sb) {
            s_hat[j] = v;
        }
    }
    let gamma = max_gamma(sigma.as_matrix(), &s_hat);
    let s: Vec<f64> = s_hat.iter().map(|v| v * gamma).collect();
    Ok(SVector::build(sigma.as_matrix(), s, SMethod::Asdp, gamma))
}

/// Single-linkage clustering on `|Sigma_ij|` where merges that would exceed
/// `max_size` are skipped. Blocks come back sorted, ordered by first index.
pub fn cluster_blocks(sigma: &SymMatrix, max_size: usize) -> Vec<Vec<usize>> {
    let p = sigma.dim();
    let max_size = max_size.max(1);
    let m = sigma.as_matrix();
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in (i + 1)..p {
            let w = m[(i, j)].abs();
            if w > 0.0 {
                edges.push((w, i, j));
            }
        }
    }
    edges.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut parent: Vec<usize> = (0..p).collect();
    let mut size = vec![1usize; p];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (_, i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj && size[ri] + size[rj] <= max_size {
            let (big, small) = if ri < rj { (ri, rj) } else { (rj, ri) };
            parent[small] = big;
            size[big] += size[small];
        }
    }
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; p];
    for j in 0..p {
        let r = find(&mut parent, j);
        if slot[r] == usize::MAX {
            slot[r] = blocks.len();
            blocks.push(Vec::new());
        }
        blocks[slot[r]].push(j);
    }
    blocks
}

/// Options for [`solve`].
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    /// Largest ASDP block.
    pub max_block: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_block: 100,
        }
    }
}

/// Runs the requested construction on a correlation matrix.
pub fn solve(sigma: &SymMatrix, method: SMethod, opts: SolveOptions) -> Result<SVector> {
    match method {
        SMethod::Equi => solve_equi(sigma),
        SMethod::Sdp => solve_sdp(sigma, opts.tol),
        SMethod::Asdp => {
            let blocks = cluster_blocks(sigma, opts.max_block);
            solve_asdp(sigma, &blocks, opts.tol)
        }
    }
}

/// Like [`solve`] for a covariance with arbitrary positive diagonal: the
/// problem is solved on the correlation matrix and scaled back by the
/// variances.
pub fn solve_covariance(sigma: &SymMatrix, method: SMethod, opts: SolveOptions) -> Result<SVector> {
    let p = sigma.dim();
    let m = sigma.as_matrix();
    let var: Vec<f64> = (0..p).map(|j| m[(j, j)]).collect();
    if var.iter().all(|v| (v - 1.0).abs() <= UNIT_DIAG_TOL) {
        return solve(sigma, method, opts);
    }
    let mut corr = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            let d = libm::sqrt(var[i] * var[j]);
            corr[(i, j)] = if i == j {
                1.0
            } else if d > 0.0 {
                m[(i, j)] / d
            } else {
                0.0
            };
        }
    }
    let sol = solve(&SymMatrix::new(corr)?, method, opts)?;
    let s: Vec<f64> = sol.s.iter().zip(&var).map(|(a, v)| a * v).collect();
    Ok(SVector::build(m, s, method, sol.gamma))
}
