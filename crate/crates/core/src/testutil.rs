//! Shared fixtures for unit tests.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::numerics::SymMatrix;
use crate::rng::substream;

/// Random correlation matrix from a low-rank factor plus a small ridge, so
/// some draws are close to singular.
pub(crate) fn random_correlation(p: usize, seed: u64) -> SymMatrix {
    let mut rng = substream(seed, 0x7e57);
    let k = rng.random_range(1..=p);
    let a = DMatrix::<f64>::from_fn(p, k, |_, _| StandardNormal.sample(&mut rng));
    let ridge: f64 = 0.02 + 0.5 * rng.random::<f64>();
    let mut c: DMatrix<f64> = &a * a.transpose();
    for j in 0..p {
        c[(j, j)] += ridge;
    }
    let d: Vec<f64> = (0..p).map(|j| 1.0 / libm::sqrt(c[(j, j)])).collect();
    let corr = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { c[(i, j)] * d[i] * d[j] });
    SymMatrix::new(corr).unwrap()
}
