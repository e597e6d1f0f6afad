#![allow(dead_code)]

use mixinv::linops::{LinearOperator, RegularizerMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Well-conditioned upper-triangular regularizer with a unit-ish diagonal.
pub fn random_regularizer<R: Rng>(rng: &mut R, p: usize) -> (RegularizerMatrix, DMatrix<f64>) {
    let dense = DMatrix::from_fn(p, p, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 1.0 + rng.random::<f64>(),
        std::cmp::Ordering::Less if j - i == 1 => 0.3 * rng.sample::<f64, _>(StandardNormal),
        _ => 0.0,
    });
    (RegularizerMatrix::from_dense(&dense).unwrap(), dense)
}

pub fn operator(m: DMatrix<f64>) -> LinearOperator {
    LinearOperator::new(m).unwrap()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
