//! Lasso and l1-penalized logistic regression by coordinate descent.
//!
//! Columns are standardized internally (mean 0, variance 1 with divisor `n`)
//! with an unpenalized intercept, and coefficients are reported on the
//! original scale. The penalty is `lambda * sum |beta_std|` against the loss
//! `1/(2n) RSS` (gaussian) or the mean negative log-likelihood (logistic), so
//! `lambda_max = max_j |z_j^T (y - mean y)| / n`.
//!
//! Before fitting, columns are put in a canonical order determined by their
//! contents, and bitwise identical columns are fitted as one and share the
//! coefficient equally. Permuting the columns of the design therefore permutes
//! the output exactly, which keeps lasso-based knockoff statistics exactly
//! antisymmetric under swaps.

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::cmp::Ordering;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::rng::{substream, TAG_CV_FOLDS};

const WEIGHT_FLOOR: f64 = 1e-5;
const PROB_CLIP: f64 = 1e-5;
const MAX_IRLS: usize = 100;
/// glmnet's path stopping rules.
const DEV_RATIO_MAX: f64 = 0.999;
const DEV_CHANGE_MIN: f64 = 1e-5;
const MIN_PATH_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Logistic,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Logistic => "logistic",
        }
    }

    pub fn default_tol(self) -> f64 {
        match self {
            Family::Gaussian => 1e-7,
            Family::Logistic => 1e-6,
        }
    }
}

impl core::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "linear" => Ok(Family::Gaussian),
            "logistic" | "binomial" => Ok(Family::Logistic),
            other => Err(invalid(alloc::format!("unknown family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// KKT tolerance, in units of the standardized gradient (gaussian
    /// responses are also scaled to unit variance).
    pub tol: f64,
    /// Budget of coordinate-descent sweeps per penalty value.
    pub max_sweeps: usize,
    /// Stop paths early with glmnet's deviance rules.
    pub truncate_path: bool,
    /// KKT tolerance for the paths that only feed cross-validation error
    /// curves. The selected fit is refined to `tol` afterwards.
    pub cv_tol: f64,
}

impl FitOptions {
    pub fn for_family(family: Family) -> Self {
        FitOptions {
            tol: family.default_tol(),
            max_sweeps: 20_000,
            truncate_path: true,
            cv_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub lambda: f64,
    /// One entry per design column, original scale.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub family: Family,
    pub converged: bool,
    /// Largest KKT violation at the returned point.
    pub kkt_violation: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    /// Penalties actually fitted; a prefix of the requested grid.
    pub lambdas: Vec<f64>,
    pub fits: Vec<LassoFit>,
    pub dev_ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub lambda_grid: Vec<f64>,
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub lambda_min: f64,
    pub index_min: usize,
    /// Fit on all rows at `lambda_min`.
    pub fit: LassoFit,
}

/// Column groups in canonical order: each group holds the indices of
/// bitwise identical columns, ascending.
#[derive(Debug, Clone)]
struct Canonical {
    groups: Vec<Vec<usize>>,
    m: usize,
}

fn compare_columns(x: &DMatrix<f64>, a: usize, b: usize) -> Ordering {
    for i in 0..x.nrows() {
        match x[(i, a)].total_cmp(&x[(i, b)]) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

fn canonicalize(x: &DMatrix<f64>) -> Canonical {
    let m = x.ncols();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| compare_columns(x, a, b).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &j in &order {
        match groups.last_mut() {
            Some(g) if compare_columns(x, g[0], j) == Ordering::Equal => g.push(j),
            _ => groups.push(vec![j]),
        }
    }
    Canonical { groups, m }
}

/// Standardized representative columns for a subset of rows.
#[derive(Debug, Clone)]
struct Prepared {
    n: usize,
    /// Column-major `n x groups` standardized design.
    z: Vec<f64>,
    center: Vec<f64>,
    /// Zero marks a constant column, which never enters.
    scale: Vec<f64>,
    /// `z_j^T z_j / n`.
    xv: Vec<f64>,
}

impl Prepared {
    fn new(x: &DMatrix<f64>, rows: &[usize], canon: &Canonical) -> Self {
        let n = rows.len();
        let r = canon.groups.len();
        let mut z = vec![0.0; n * r];
        let mut center = vec![0.0; r];
        let mut scale = vec![0.0; r];
        let mut xv = vec![0.0; r];
        for (g, members) in canon.groups.iter().enumerate() {
            let j = members[0];
            let col = &mut z[g * n..(g + 1) * n];
            for (k, &i) in rows.iter().enumerate() {
                col[k] = x[(i, j)];
            }
            let first = col.first().copied().unwrap_or(0.0);
            if n == 0 || col.iter().all(|v| v.to_bits() == first.to_bits()) {
                col.fill(0.0);
                continue;
            }
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let sd = libm::sqrt(var);
            if !(sd > 0.0) {
                col.fill(0.0);
                continue;
            }
            for v in col.iter_mut() {
                *v = (*v - mean) / sd;
            }
            center[g] = mean;
            scale[g] = sd;
            xv[g] = dot(col, col) / n as f64;
        }
        Prepared { n, z, center, scale, xv }
    }

    fn groups(&self) -> usize {
        self.scale.len()
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.z[j * self.n..(j + 1) * self.n]
    }

    fn live(&self, j: usize) -> bool {
        self.scale[j] > 0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn dot3(a: &[f64], w: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * w[i] * b[i];
        acc[1] += a[i + 1] * w[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * w[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * w[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * w[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn soft_threshold(u: f64, lambda: f64) -> f64 {
    if u > lambda {
        u - lambda
    } else if u < -lambda {
        u + lambda
    } else {
        0.0
    }
}

/// Coefficients in standardized units plus the intercept.
#[derive(Debug, Clone)]
struct State {
    beta: Vec<f64>,
    b0: f64,
    active: Vec<usize>,
    in_active: Vec<bool>,
    /// Gaussian only: `c - G beta`, the standardized gradient.
    grad: Vec<f64>,
}

impl State {
    fn zero(r: usize, b0: f64) -> Self {
        State {
            beta: vec![0.0; r],
            b0,
            active: Vec::new(),
            in_active: vec![false; r],
            grad: Vec::new(),
        }
    }

    fn activate(&mut self, j: usize) {
        if !self.in_active[j] {
            self.in_active[j] = true;
            self.active.push(j);
        }
    }
}

fn kkt_term(g: f64, beta: f64, lambda: f64) -> f64 {
    if beta > 0.0 {
        (g - lambda).abs()
    } else if beta < 0.0 {
        (g + lambda).abs()
    } else {
        (g.abs() - lambda).max(0.0)
    }
}

/// Weighted lasso `1/(2n) sum w_i r_i^2 + lambda |beta|_1` with residual
/// `resid` kept in sync with `state`. Returns whether the KKT conditions hold
/// within `tol`, and the final violation.
#[allow(clippy::too_many_arguments)]
fn weighted_cd(
    prep: &Prepared,
    w: Option<&[f64]>,
    xv: &[f64],
    resid: &mut [f64],
    state: &mut State,
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
    sweeps: &mut usize,
) -> (bool, f64) {
    let n = prep.n as f64;
    let wsum = w.map_or(n, |w| w.iter().sum());
    let mut inner_tol = 0.1 * tol;
    let mut budget = max_sweeps;
    loop {
        // full KKT scan, adding zero coefficients that want to move
        let mut violation = 0.0f64;
        let mut added = false;
        let g0 = match w {
            Some(w) => dot(w, resid) / n,
            None => resid.iter().sum::<f64>() / n,
        };
        violation = violation.max(g0.abs());
        for j in 0..prep.groups() {
            if !prep.live(j) {
                continue;
            }
            let g = match w {
                Some(w) => dot3(prep.col(j), w, resid) / n,
                None => dot(prep.col(j), resid) / n,
            };
            violation = violation.max(kkt_term(g, state.beta[j], lambda));
            if state.beta[j] == 0.0 && g.abs() > lambda && !state.in_active[j] {
                state.activate(j);
                added = true;
            }
        }
        if !added && violation <= tol {
            return (true, violation);
        }
        if !added {
            inner_tol = (inner_tol * 0.1).max(1e-15);
        }
        loop {
            if budget == 0 {
                return (false, violation);
            }
            budget -= 1;
            *sweeps += 1;
            let mut max_change = 0.0f64;
            for a in 0..state.active.len() {
                let j = state.active[a];
                let col = prep.col(j);
                let g = match w {
                    Some(w) => dot3(col, w, resid) / n,
                    None => dot(col, resid) / n,
                };
                let old = state.beta[j];
                let new = soft_threshold(g + xv[j] * old, lambda) / xv[j];
                let d = new - old;
                if d != 0.0 {
                    for (r, z) in resid.iter_mut().zip(col) {
                        *r -= d * z;
                    }
                    state.beta[j] = new;
                    max_change = max_change.max(xv[j] * d.abs());
                }
            }
            let d0 = match w {
                Some(w) => dot(w, resid) / wsum,
                None => resid.iter().sum::<f64>() / wsum,
            };
            if d0 != 0.0 {
                for r in resid.iter_mut() {
                    *r -= d0;
                }
                state.b0 += d0;
                max_change = max_change.max(d0.abs() * wsum / n);
            }
            if max_change <= inner_tol {
                break;
            }
        }
    }
}

/// `Z^T Z / n` (column-major, `r x r`) and `Z^T (y - mean y) / n`.
struct Gram {
    g: Vec<f64>,
    c: Vec<f64>,
    r: usize,
    /// Reused along a path, where supports change a little at a time.
    factor: RefCell<SupportFactor>,
}

impl Gram {
    fn new(prep: &Prepared, resp: &Response) -> Self {
        let n = prep.n;
        let r = prep.groups();
        let inv = 1.0 / n as f64;
        let mut g = vec![0.0; r * r];
        let full = r / 4 * 4;
        for jb in (0..full).step_by(4) {
            for kb in (0..=jb).step_by(4) {
                let mut acc = [[0.0f64; 4]; 4];
                let a = [prep.col(jb), prep.col(jb + 1), prep.col(jb + 2), prep.col(jb + 3)];
                let b = [prep.col(kb), prep.col(kb + 1), prep.col(kb + 2), prep.col(kb + 3)];
                for i in 0..n {
                    let av = [a[0][i], a[1][i], a[2][i], a[3][i]];
                    let bv = [b[0][i], b[1][i], b[2][i], b[3][i]];
                    for (row, &x) in acc.iter_mut().zip(&av) {
                        for (v, &y) in row.iter_mut().zip(&bv) {
                            *v += x * y;
                        }
                    }
                }
                for u in 0..4 {
                    for v in 0..4 {
                        g[(jb + u) * r + kb + v] = acc[u][v] * inv;
                    }
                }
            }
        }
        for j in full..r {
            for k in 0..=j {
                let s: f64 = prep.col(j).iter().zip(prep.col(k)).fold(0.0, |s, (a, b)| s + a * b);
                g[j * r + k] = s * inv;
            }
        }
        // mirror the lower triangle; the diagonal 4x4 blocks were filled whole
        for j in 0..r {
            for k in 0..j {
                g[k * r + j] = g[j * r + k];
            }
        }
        let centered: Vec<f64> = resp.y.iter().map(|v| v - resp.mean).collect();
        let c = (0..r).map(|j| dot(prep.col(j), &centered) / n as f64).collect();
        Gram {
            g,
            c,
            r,
            factor: RefCell::new(SupportFactor::new(r)),
        }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.g[j * self.r..(j + 1) * self.r]
    }

    /// Sets `state.grad` from scratch if it is missing.
    fn sync(&self, state: &mut State) {
        if state.grad.len() == self.r {
            return;
        }
        state.grad = self.c.clone();
        for &j in &state.active {
            let b = state.beta[j];
            if b != 0.0 {
                for (g, q) in state.grad.iter_mut().zip(self.col(j)) {
                    *g -= b * q;
                }
            }
        }
    }

    /// Residual sum of squares over `n`, up to the constant `tss / n`.
    fn rss_drop(&self, state: &State) -> f64 {
        state
            .active
            .iter()
            .map(|&j| state.beta[j] * (self.c[j] + state.grad[j]))
            .sum()
    }
}

const SUPPORT_SOLVE_EVERY: usize = 5;
const SUPPORT_SOLVE_ROUNDS: usize = 200;
/// Relative Cholesky pivot below which a column counts as a linear
/// combination of the factored ones.
const DEPENDENT_PIVOT: f64 = 1e-10;

/// Cholesky factor `L L^T = G_AA` for an ordered support `A`, updated one
/// column at a time. `l` is row-major with stride `r`.
struct SupportFactor {
    idx: Vec<usize>,
    l: Vec<f64>,
    r: usize,
}

impl SupportFactor {
    fn new(r: usize) -> Self {
        SupportFactor {
            idx: Vec::new(),
            l: Vec::new(),
            r,
        }
    }

    fn clear(&mut self) {
        self.idx.clear();
    }

    /// Solves `L y = b` (forward substitution).
    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let r = self.r;
        let mut y = vec![0.0; b.len()];
        for i in 0..b.len() {
            let row = &self.l[i * r..i * r + i];
            let s: f64 = row.iter().zip(&y).map(|(a, v)| a * v).sum();
            y[i] = (b[i] - s) / self.l[i * r + i];
        }
        y
    }

    /// Solves `L^T x = y` (back substitution).
    fn backward(&self, mut y: Vec<f64>) -> Vec<f64> {
        let r = self.r;
        let m = y.len();
        for i in (0..m).rev() {
            let s: f64 = (i + 1..m).map(|t| self.l[t * r + i] * y[t]).sum();
            y[i] = (y[i] - s) / self.l[i * r + i];
        }
        y
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(self.forward(b))
    }

    /// Appends column `j`. If it is a combination of the factored columns,
    /// leaves the factor unchanged and returns the coefficients `u` with
    /// `G_Aj = G_AA u`.
    fn append(&mut self, gram: &Gram, j: usize) -> Option<Vec<f64>> {
        let r = self.r;
        if self.l.is_empty() {
            self.l = vec![0.0; r * r];
        }
        let gj = gram.col(j);
        let a: Vec<f64> = self.idx.iter().map(|&k| gj[k]).collect();
        let w = self.forward(&a);
        let d = gj[j] - w.iter().map(|v| v * v).sum::<f64>();
        if !(d > DEPENDENT_PIVOT * gj[j]) {
            return Some(self.backward(w));
        }
        let m = self.idx.len();
        self.l[m * r..m * r + m].copy_from_slice(&w);
        self.l[m * r + m] = libm::sqrt(d);
        self.idx.push(j);
        None
    }

    /// Drops the column at position `pos`, restoring triangular form with
    /// Givens rotations.
    fn remove(&mut self, pos: usize) {
        let r = self.r;
        let m = self.idx.len();
        for i in pos..m - 1 {
            self.l.copy_within((i + 1) * r..(i + 1) * r + i + 2, i * r);
        }
        for k in pos..m - 1 {
            let (a, b) = (self.l[k * r + k], self.l[k * r + k + 1]);
            let h = libm::hypot(a, b);
            let (c, s) = (a / h, b / h);
            for i in k..m - 1 {
                let (x, y) = (self.l[i * r + k], self.l[i * r + k + 1]);
                self.l[i * r + k] = c * x + s * y;
                self.l[i * r + k + 1] = c * y - s * x;
            }
        }
        self.idx.remove(pos);
    }

    /// Brings the factor to `support` (kept in factor order, new columns
    /// appended in the given order). Stops at the first dependent column and
    /// returns it with its coefficients.
    fn sync(&mut self, gram: &Gram, support: &[usize], member: &[bool]) -> Option<(usize, Vec<f64>)> {
        let stale = self.idx.iter().filter(|&&k| !member[k]).count();
        if 2 * stale > self.idx.len() {
            self.clear();
        } else {
            let mut pos = self.idx.len();
            while pos > 0 {
                pos -= 1;
                if !member[self.idx[pos]] {
                    self.remove(pos);
                }
            }
        }
        for &j in support {
            if !self.idx.contains(&j) {
                if let Some(u) = self.append(gram, j) {
                    return Some((j, u));
                }
            }
        }
        None
    }
}

/// Feature-sign steps on the current nonzero set `A`: solve
/// `G_AA b = c_A - lambda sign(b_A)`; if some sign flips, move to the best
/// of the zero crossings along the segment and drop the coordinates that hit
/// zero, then repeat. When `G_AA` is singular (exactly collinear columns),
/// move along a null direction instead, which leaves the fit unchanged, until
/// a coordinate reaches zero. Returns true when an exact solution on the
/// support is reached. The gradient is rebuilt whenever `beta` changed.
fn support_solve(gram: &Gram, factor: &mut SupportFactor, state: &mut State, lambda: f64) -> bool {
    let mut changed = false;
    let mut exact = false;
    let mut member = vec![false; gram.r];
    for _ in 0..SUPPORT_SOLVE_ROUNDS {
        let support: Vec<usize> = state.active.iter().copied().filter(|&j| state.beta[j] != 0.0).collect();
        if support.is_empty() {
            break;
        }
        member.iter_mut().for_each(|v| *v = false);
        for &j in &support {
            member[j] = true;
        }
        if let Some((dep, u)) = factor.sync(gram, &support, &member) {
            // G (u, -1) = 0 on idx + dep: a direction that keeps the fit
            let mut cols = factor.idx.clone();
            cols.push(dep);
            let mut v = u;
            v.push(-1.0);
            let slope: f64 = cols.iter().zip(&v).map(|(&j, a)| a * state.beta[j].signum()).sum();
            if slope > 0.0 {
                v.iter_mut().for_each(|a| *a = -*a);
            }
            let mut first = (f64::INFINITY, usize::MAX);
            for (i, &j) in cols.iter().enumerate() {
                let b = state.beta[j];
                if v[i] * b < 0.0 {
                    let t = -b / v[i];
                    if t < first.0 {
                        first = (t, i);
                    }
                }
            }
            if first.1 == usize::MAX {
                break;
            }
            let t = first.0;
            let moved: Vec<f64> = cols.iter().zip(&v).map(|(&j, a)| state.beta[j] + t * a).collect();
            for (i, &j) in cols.iter().enumerate() {
                state.beta[j] = if i == first.1 { 0.0 } else { moved[i] };
            }
            changed = true;
            continue;
        }
        let idx = factor.idx.clone();
        let m = idx.len();
        let b: Vec<f64> = idx.iter().map(|&j| state.beta[j]).collect();
        let theta: Vec<f64> = b.iter().map(|v| v.signum()).collect();
        let rhs: Vec<f64> = (0..m).map(|i| gram.c[idx[i]] - lambda * theta[i]).collect();
        let x = factor.solve(&rhs);
        let flips = |i: usize| x[i] == 0.0 || x[i].signum() != theta[i];
        if !(0..m).any(flips) {
            for (&j, &v) in idx.iter().zip(&x) {
                state.beta[j] = v;
            }
            changed = true;
            exact = true;
            break;
        }
        let d: Vec<f64> = (0..m).map(|i| x[i] - b[i]).collect();
        // f(b + t d) = f(b) + t (g_b . d) + t^2/2 d'Gd + lambda (|b + t d|_1 - |b|_1)
        // with g_b = G b - c = -grad
        let mut gd = vec![0.0; m];
        for (k, &jk) in idx.iter().enumerate() {
            let col = gram.col(jk);
            gd[k] = idx.iter().zip(&d).map(|(&ji, di)| col[ji] * di).sum();
        }
        let dgd: f64 = d.iter().zip(&gd).map(|(a, b)| a * b).sum();
        let bgd: f64 = b.iter().zip(&gd).map(|(a, b)| a * b).sum();
        let cd: f64 = idx.iter().zip(&d).map(|(&j, di)| gram.c[j] * di).sum();
        let l1b: f64 = b.iter().map(|v| v.abs()).sum();
        let objective = |t: f64| {
            let l1: f64 = b.iter().zip(&d).map(|(u, v)| (u + t * v).abs()).sum();
            t * (bgd - cd) + 0.5 * t * t * dgd + lambda * (l1 - l1b)
        };
        let mut crossings: Vec<f64> = (0..m)
            .filter(|&i| flips(i))
            .map(|i| b[i] / (b[i] - x[i]))
            .filter(|t| *t > 0.0 && *t < 1.0)
            .collect();
        crossings.push(1.0);
        crossings.sort_by(f64::total_cmp);
        // the first crossing always descends; later ones only if they
        // measurably do better
        let mut best = (objective(crossings[0]), crossings[0]);
        for &t in &crossings[1..] {
            let f = objective(t);
            if f < best.0 {
                best = (f, t);
            }
        }
        let t = best.1;
        for i in 0..m {
            let crossed = flips(i) && b[i] / (b[i] - x[i]) == t;
            state.beta[idx[i]] = if crossed { 0.0 } else { b[i] + t * d[i] };
        }
        changed = true;
    }
    if changed {
        for k in 0..gram.r {
            let mut g = gram.c[k];
            for &j in &state.active {
                let b = state.beta[j];
                if b != 0.0 {
                    g -= gram.col(j)[k] * b;
                }
            }
            state.grad[k] = g;
        }
    }
    exact
}

/// Covariance-mode coordinate descent for the gaussian lasso. The gradient
/// is kept for every column, so KKT scans cost `O(r)`.
fn gram_cd(prep: &Prepared, gram: &Gram, state: &mut State, lambda: f64, tol: f64, max_sweeps: usize) -> (bool, f64, usize) {
    gram.sync(state);
    let mut sweeps = 0;
    let mut inner_tol = 0.1 * tol;
    loop {
        let mut violation = 0.0f64;
        let mut added = false;
        for j in 0..prep.groups() {
            if !prep.live(j) {
                continue;
            }
            let g = state.grad[j];
            violation = violation.max(kkt_term(g, state.beta[j], lambda));
            if state.beta[j] == 0.0 && g.abs() > lambda && !state.in_active[j] {
                state.activate(j);
                added = true;
            }
        }
        if !added && violation <= tol {
            return (true, violation, sweeps);
        }
        if !added {
            inner_tol = (inner_tol * 0.1).max(1e-15);
        }
        let mut stalled = 0;
        loop {
            if sweeps == max_sweeps {
                return (false, violation, sweeps);
            }
            sweeps += 1;
            let mut max_change = 0.0f64;
            for a in 0..state.active.len() {
                let j = state.active[a];
                let q = gram.col(j);
                let old = state.beta[j];
                let new = soft_threshold(state.grad[j] + q[j] * old, lambda) / q[j];
                let d = new - old;
                if d != 0.0 {
                    for (g, qk) in state.grad.iter_mut().zip(q) {
                        *g -= d * qk;
                    }
                    state.beta[j] = new;
                    max_change = max_change.max(q[j] * d.abs());
                }
            }
            if max_change <= inner_tol {
                break;
            }
            // slow linear convergence on correlated columns: try the exact
            // solution for the current signs
            stalled += 1;
            if stalled % SUPPORT_SOLVE_EVERY == 0 && support_solve(gram, &mut gram.factor.borrow_mut(), state, lambda) {
                break;
            }
        }
    }
}

fn linear_predictor(prep: &Prepared, state: &State) -> Vec<f64> {
    let mut eta = vec![state.b0; prep.n];
    for &j in &state.active {
        let b = state.beta[j];
        if b != 0.0 {
            for (e, z) in eta.iter_mut().zip(prep.col(j)) {
                *e += b * z;
            }
        }
    }
    eta
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + libm::exp(-t))
    } else {
        let e = libm::exp(t);
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))`.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + libm::log1p(libm::exp(-t.abs()))
}

fn logistic_loss(eta: &[f64], y: &[f64]) -> f64 {
    eta.iter().zip(y).map(|(&e, &yi)| softplus(e) - yi * e).sum::<f64>() / eta.len() as f64
}

fn l1(beta: &[f64]) -> f64 {
    beta.iter().map(|b| b.abs()).sum()
}

/// Penalized fit at one `lambda`, warm-started from `state`.
fn fit_at(
    prep: &Prepared,
    gram: Option<&Gram>,
    y: &[f64],
    family: Family,
    lambda: f64,
    state: &mut State,
    opts: &FitOptions,
) -> (bool, f64, usize) {
    let mut sweeps = 0;
    match family {
        Family::Gaussian => match gram {
            Some(gram) => gram_cd(prep, gram, state, lambda, opts.tol, opts.max_sweeps),
            None => {
                let eta = linear_predictor(prep, state);
                let mut resid: Vec<f64> = y.iter().zip(&eta).map(|(a, b)| a - b).collect();
                let (ok, viol) =
                    weighted_cd(prep, None, &prep.xv, &mut resid, state, lambda, opts.tol, opts.max_sweeps, &mut sweeps);
                (ok, viol, sweeps)
            }
        },
        Family::Logistic => {
            let n = prep.n as f64;
            let mut eta = linear_predictor(prep, state);
            let mut objective = logistic_loss(&eta, y) + lambda * l1(&state.beta);
            let mut violation = f64::INFINITY;
            let mut xv = vec![0.0; prep.groups()];
            for _ in 0..MAX_IRLS {
                let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
                let score: Vec<f64> = y.iter().zip(&prob).map(|(a, b)| a - b).collect();
                violation = (score.iter().sum::<f64>() / n).abs();
                for j in 0..prep.groups() {
                    if prep.live(j) {
                        let g = dot(prep.col(j), &score) / n;
                        violation = violation.max(kkt_term(g, state.beta[j], lambda));
                    }
                }
                if violation <= opts.tol {
                    return (true, violation, sweeps);
                }
                if sweeps >= opts.max_sweeps {
                    break;
                }
                let w: Vec<f64> = prob.iter().map(|&p| (p * (1.0 - p)).max(WEIGHT_FLOOR)).collect();
                for j in 0..prep.groups() {
                    if prep.live(j) {
                        let c = prep.col(j);
                        xv[j] = dot3(c, &w, c) / n;
                    }
                }
                let mut resid: Vec<f64> = score.iter().zip(&w).map(|(s, wi)| s / wi).collect();
                let old_beta = state.beta.clone();
                let old_b0 = state.b0;
                let remaining = opts.max_sweeps - sweeps;
                weighted_cd(prep, Some(&w), &xv, &mut resid, state, lambda, 0.1 * opts.tol, remaining, &mut sweeps);
                eta = linear_predictor(prep, state);
                let mut new_obj = logistic_loss(&eta, y) + lambda * l1(&state.beta);
                let mut halvings = 0;
                while new_obj > objective + 1e-12 * objective.abs() && halvings < 30 {
                    for (b, o) in state.beta.iter_mut().zip(&old_beta) {
                        *b = 0.5 * (*b + o);
                    }
                    state.b0 = 0.5 * (state.b0 + old_b0);
                    eta = linear_predictor(prep, state);
                    new_obj = logistic_loss(&eta, y) + lambda * l1(&state.beta);
                    halvings += 1;
                }
                objective = new_obj;
            }
            (false, violation, sweeps)
        }
    }
}

/// Response prepared for fitting: gaussian responses are scaled to unit
/// variance so tolerances are relative to the response scale.
struct Response {
    y: Vec<f64>,
    scale: f64,
    mean: f64,
}

fn prepare_response(y: &[f64], family: Family) -> Result<Response> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(invalid("response has non-finite entries"));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    match family {
        Family::Gaussian => {
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let scale = if var > 0.0 { libm::sqrt(var) } else { 1.0 };
            Ok(Response {
                y: y.iter().map(|v| v / scale).collect(),
                scale,
                mean: mean / scale,
            })
        }
        Family::Logistic => {
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(invalid("logistic response must be 0/1"));
            }
            if mean == 0.0 || mean == 1.0 {
                return Err(Error::DegenerateResponse("logistic response has a single class"));
            }
            Ok(Response {
                y: y.to_vec(),
                scale: 1.0,
                mean,
            })
        }
    }
}

fn gram_for(prep: &Prepared, resp: &Response, family: Family) -> Option<Gram> {
    match family {
        Family::Gaussian => Some(Gram::new(prep, resp)),
        Family::Logistic => None,
    }
}

fn initial_state(r: usize, family: Family, mean: f64) -> State {
    match family {
        Family::Gaussian => State::zero(r, mean),
        Family::Logistic => State::zero(r, libm::log(mean / (1.0 - mean))),
    }
}

fn check_dims(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "response length vs design rows",
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.nrows() < 2 {
        return Err(invalid("need at least two observations"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("design has non-finite entries"));
    }
    Ok(())
}

/// Raw-scale coefficients and intercept.
fn to_fit(
    prep: &Prepared,
    canon: &Canonical,
    resp: &Response,
    family: Family,
    lambda: f64,
    state: &State,
    conv: (bool, f64, usize),
) -> LassoFit {
    let mut coefficients = vec![0.0; canon.m];
    let mut intercept = resp.scale * state.b0;
    for (g, members) in canon.groups.iter().enumerate() {
        if !prep.live(g) || state.beta[g] == 0.0 {
            continue;
        }
        let raw = resp.scale * state.beta[g] / prep.scale[g];
        intercept -= raw * prep.center[g];
        let share = raw / members.len() as f64;
        for &j in members {
            coefficients[j] = share;
        }
    }
    LassoFit {
        lambda,
        coefficients,
        intercept,
        family,
        converged: conv.0,
        kkt_violation: conv.1,
        sweeps: conv.2,
    }
}

fn lambda_max_prepared(prep: &Prepared, resp: &Response) -> f64 {
    let centered: Vec<f64> = resp.y.iter().map(|v| v - resp.mean).collect();
    let n = prep.n as f64;
    let top = (0..prep.groups())
        .filter(|&j| prep.live(j))
        .map(|j| (dot(prep.col(j), &centered) / n).abs())
        .fold(0.0, f64::max);
    // round up so that `lambda_max / scale` still zeroes every coefficient
    let mut lmax = top * resp.scale;
    while lmax / resp.scale < top {
        lmax = lmax.next_up();
    }
    lmax
}

/// Smallest penalty at which every coefficient is zero.
pub fn lambda_max(x: &DMatrix<f64>, y: &[f64], family: Family) -> Result<f64> {
    check_dims(x, y)?;
    let resp = prepare_response(y, family)?;
    let canon = canonicalize(x);
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let prep = Prepared::new(x, &rows, &canon);
    Ok(lambda_max_prepared(&prep, &resp))
}

/// `size` values from `lambda_max` down `decades` orders of magnitude,
/// evenly spaced on the log scale.
pub fn lambda_grid(lambda_max: f64, size: usize, decades: f64) -> Vec<f64> {
    if size == 1 {
        return vec![lambda_max];
    }
    (0..size)
        .map(|k| lambda_max * libm::pow(10.0, -decades * k as f64 / (size - 1) as f64))
        .collect()
}

pub fn lasso_fit(x: &DMatrix<f64>, y: &[f64], lambda: f64, family: Family, opts: &FitOptions) -> Result<LassoFit> {
    check_dims(x, y)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid("lambda must be finite and nonnegative"));
    }
    let resp = prepare_response(y, family)?;
    let canon = canonicalize(x);
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let prep = Prepared::new(x, &rows, &canon);
    let gram = gram_for(&prep, &resp, family);
    let mut state = initial_state(prep.groups(), family, resp.mean);
    let conv = fit_at(&prep, gram.as_ref(), &resp.y, family, lambda / resp.scale, &mut state, opts);
    Ok(to_fit(&prep, &canon, &resp, family, lambda, &state, conv))
}

/// Deviance in the internal response units.
fn deviance(prep: &Prepared, gram: Option<&Gram>, y: &[f64], family: Family, null_dev: f64, state: &State) -> f64 {
    if let (Family::Gaussian, Some(gram)) = (family, gram) {
        return (null_dev - prep.n as f64 * gram.rss_drop(state)).max(0.0);
    }
    let eta = linear_predictor(prep, state);
    match family {
        Family::Gaussian => eta.iter().zip(y).map(|(e, v)| (v - e) * (v - e)).sum(),
        Family::Logistic => 2.0 * eta.len() as f64 * logistic_loss(&eta, y),
    }
}

fn null_deviance(y: &[f64], family: Family, mean: f64) -> f64 {
    match family {
        Family::Gaussian => y.iter().map(|v| (v - mean) * (v - mean)).sum(),
        Family::Logistic => {
            -2.0 * y
                .iter()
                .map(|&v| v * libm::log(mean) + (1.0 - v) * libm::log(1.0 - mean))
                .sum::<f64>()
        }
    }
}

struct PreparedPath {
    states: Vec<State>,
    conv: Vec<(bool, f64, usize)>,
    dev_ratio: Vec<f64>,
}

fn path_prepared(
    prep: &Prepared,
    gram: Option<&Gram>,
    resp: &Response,
    family: Family,
    lambdas: &[f64],
    opts: &FitOptions,
) -> PreparedPath {
    let mut state = initial_state(prep.groups(), family, resp.mean);
    let null_dev = null_deviance(&resp.y, family, resp.mean);
    let mut out = PreparedPath {
        states: Vec::with_capacity(lambdas.len()),
        conv: Vec::with_capacity(lambdas.len()),
        dev_ratio: Vec::with_capacity(lambdas.len()),
    };
    for (k, &lam) in lambdas.iter().enumerate() {
        let conv = fit_at(prep, gram, &resp.y, family, lam / resp.scale, &mut state, opts);
        let ratio = if null_dev > 0.0 {
            1.0 - deviance(prep, gram, &resp.y, family, null_dev, &state) / null_dev
        } else {
            0.0
        };
        let prev = out.dev_ratio.last().copied();
        out.states.push(state.clone());
        out.conv.push(conv);
        out.dev_ratio.push(ratio);
        if opts.truncate_path && k + 1 >= MIN_PATH_LEN {
            let stalled = prev.map_or(false, |p| ratio - p < DEV_CHANGE_MIN * ratio);
            if ratio >= DEV_RATIO_MAX || stalled {
                break;
            }
        }
    }
    out
}

/// Warm-started fits along a decreasing grid of penalties.
pub fn lasso_path(x: &DMatrix<f64>, y: &[f64], family: Family, lambdas: &[f64], opts: &FitOptions) -> Result<LassoPath> {
    check_dims(x, y)?;
    if lambdas.windows(2).any(|w| w[1] > w[0]) || lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(invalid("penalty grid must be nonnegative and decreasing"));
    }
    let resp = prepare_response(y, family)?;
    let canon = canonicalize(x);
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let prep = Prepared::new(x, &rows, &canon);
    let gram = gram_for(&prep, &resp, family);
    let path = path_prepared(&prep, gram.as_ref(), &resp, family, lambdas, opts);
    let fits: Vec<LassoFit> = path
        .states
        .iter()
        .zip(&path.conv)
        .zip(lambdas)
        .map(|((s, c), &lam)| to_fit(&prep, &canon, &resp, family, lam, s, *c))
        .collect();
    Ok(LassoPath {
        lambdas: lambdas[..fits.len()].to_vec(),
        fits,
        dev_ratio: path.dev_ratio,
    })
}

/// Fold label of each row: a seeded shuffle dealt round-robin, so labels
/// depend only on `(n, seed)`.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, TAG_CV_FOLDS);
    perm.shuffle(&mut rng);
    let mut fold = vec![0; n];
    for (k, &i) in perm.iter().enumerate() {
        fold[i] = k % folds;
    }
    fold
}

/// K-fold cross-validation over a geometric grid spanning four decades below
/// `lambda_max`. The error is the mean squared error (gaussian) or the mean
/// binomial deviance (logistic).
pub fn cv_lambda(
    x: &DMatrix<f64>,
    y: &[f64],
    family: Family,
    folds: usize,
    grid_size: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<CvResult> {
    check_dims(x, y)?;
    let n = x.nrows();
    if folds < 2 || folds > n {
        return Err(invalid("number of folds must lie in [2, n]"));
    }
    if grid_size == 0 {
        return Err(invalid("grid size must be positive"));
    }
    let resp = prepare_response(y, family)?;
    let canon = canonicalize(x);
    let all: Vec<usize> = (0..n).collect();
    let prep = Prepared::new(x, &all, &canon);
    let lmax = lambda_max_prepared(&prep, &resp);
    if !(lmax > 0.0) {
        return Err(Error::DegenerateResponse("response is constant or orthogonal to every column"));
    }
    let grid = lambda_grid(lmax, grid_size, 4.0);
    let gram = gram_for(&prep, &resp, family);
    let loose = FitOptions {
        tol: opts.cv_tol.max(opts.tol),
        ..*opts
    };
    let full = path_prepared(&prep, gram.as_ref(), &resp, family, &grid, &loose);
    let mut len = full.states.len();

    let label = fold_assignment(n, folds, seed);
    let mut errors: Vec<Vec<f64>> = Vec::with_capacity(folds);
    let mut sizes: Vec<f64> = Vec::with_capacity(folds);
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| label[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| label[i] == f).collect();
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let fresp = prepare_response(&y_train, family)?;
        let fprep = Prepared::new(x, &train, &canon);
        let fgram = gram_for(&fprep, &fresp, family);
        let fpath = path_prepared(&fprep, fgram.as_ref(), &fresp, family, &grid[..len], &loose);
        len = len.min(fpath.states.len());
        let errs: Vec<f64> = fpath
            .states
            .iter()
            .map(|s| {
                let fit = to_fit(&fprep, &canon, &fresp, family, 0.0, s, (true, 0.0, 0));
                heldout_error(x, y, &test, &fit, &canon, family)
            })
            .collect();
        errors.push(errs);
        sizes.push(test.len() as f64);
    }
    let total: f64 = sizes.iter().sum();
    let mut cv_mean = Vec::with_capacity(len);
    let mut cv_se = Vec::with_capacity(len);
    for l in 0..len {
        let mean = errors.iter().zip(&sizes).map(|(e, s)| e[l] * s).sum::<f64>() / total;
        let var = errors.iter().zip(&sizes).map(|(e, s)| s * (e[l] - mean) * (e[l] - mean)).sum::<f64>() / total;
        cv_mean.push(mean);
        cv_se.push(libm::sqrt(var / (folds - 1) as f64));
    }
    let mut index_min = 0;
    for l in 1..len {
        if cv_mean[l] < cv_mean[index_min] {
            index_min = l;
        }
    }
    // refine the selected fit to the requested tolerance
    let mut state = full.states[index_min].clone();
    let conv = fit_at(&prep, gram.as_ref(), &resp.y, family, grid[index_min] / resp.scale, &mut state, opts);
    let fit = to_fit(&prep, &canon, &resp, family, grid[index_min], &state, conv);
    Ok(CvResult {
        lambda_grid: grid[..len].to_vec(),
        cv_mean,
        cv_se,
        lambda_min: grid[index_min],
        index_min,
        fit,
    })
}

fn heldout_error(x: &DMatrix<f64>, y: &[f64], rows: &[usize], fit: &LassoFit, canon: &Canonical, family: Family) -> f64 {
    // canonical order keeps the sum independent of column order
    let nz: Vec<usize> = canon
        .groups
        .iter()
        .flatten()
        .copied()
        .filter(|&j| fit.coefficients[j] != 0.0)
        .collect();
    let mut total = 0.0;
    for &i in rows {
        let eta = fit.intercept + nz.iter().map(|&j| x[(i, j)] * fit.coefficients[j]).sum::<f64>();
        total += match family {
            Family::Gaussian => (y[i] - eta) * (y[i] - eta),
            Family::Logistic => {
                let p = sigmoid(eta).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                -2.0 * (y[i] * libm::log(p) + (1.0 - y[i]) * libm::log(1.0 - p))
            }
        };
    }
    total / rows.len().max(1) as f64
}

/// Standardized-scale penalized objective of a fit, used by tests and
/// diagnostics.
pub fn penalized_objective(x: &DMatrix<f64>, y: &[f64], fit: &LassoFit) -> f64 {
    let n = x.nrows() as f64;
    let eta: Vec<f64> = (0..x.nrows())
        .map(|i| fit.intercept + (0..x.ncols()).map(|j| x[(i, j)] * fit.coefficients[j]).sum::<f64>())
        .collect();
    let penalty: f64 = (0..x.ncols())
        .map(|j| {
            let col = x.column(j);
            let mean = col.mean();
            let sd = libm::sqrt(col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
            fit.coefficients[j].abs() * sd
        })
        .sum();
    match fit.family {
        Family::Gaussian => {
            eta.iter().zip(y).map(|(e, v)| (v - e) * (v - e)).sum::<f64>() / (2.0 * n) + fit.lambda * penalty
        }
        Family::Logistic => logistic_loss(&eta, y) + fit.lambda * penalty,
    }
}
