use nalgebra::DMatrix;
use rand::Rng;

use crate::{Error, Result};

/// Row-stochastic matrix on the proposal pool, reversible with respect to
/// the pool weights:
/// `T[k][l] = min(1, w_l / w_k) / N_par` for `k != l`, diagonal fills the row.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    t: DMatrix<f64>,
    w: Vec<f64>,
}

impl TransitionMatrix {
    /// Index 0 is the retained state and must have positive weight.
    pub fn new(w: &[f64]) -> Result<Self> {
        if w.len() < 2 {
            return Err(Error::InvalidArgument("weight vector needs at least two entries".into()));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        if !(w[0] > 0.0) {
            return Err(Error::InvalidArgument("retained state has zero weight".into()));
        }
        let logs: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        Ok(Self {
            t: build(&logs),
            w: w.to_vec(),
        })
    }

    /// Same matrix from natural-log weights (`-inf` for zero weight); the
    /// stored weights are rescaled so the largest is 1.
    pub fn from_log_weights(log_w: &[f64]) -> Result<Self> {
        if log_w.len() < 2 {
            return Err(Error::InvalidArgument("weight vector needs at least two entries".into()));
        }
        if !log_w[0].is_finite() {
            return Err(Error::InvalidArgument("retained state has zero weight".into()));
        }
        if log_w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidArgument("log weights must be finite or -inf".into()));
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            t: build(log_w),
            w: log_w.iter().map(|l| (l - max).exp()).collect(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn size(&self) -> usize {
        self.w.len()
    }

    /// Draws a column index from row `k`. Consumes one uniform.
    pub fn sample_row<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for l in 0..self.size() {
            acc += self.t[(k, l)];
            if u < acc {
                return l;
            }
        }
        // Rounding left the cumulative sum just below 1.
        (0..self.size()).rev().find(|&l| self.t[(k, l)] > 0.0).unwrap_or(k)
    }
}

fn build(log_w: &[f64]) -> DMatrix<f64> {
    let n = log_w.len();
    let n_par = (n - 1) as f64;
    let mut t = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut off = 0.0;
        for l in 0..n {
            if l == k {
                continue;
            }
            let ratio = if log_w[l] == f64::NEG_INFINITY {
                0.0
            } else if log_w[k] == f64::NEG_INFINITY {
                1.0
            } else {
                (log_w[l] - log_w[k]).exp().min(1.0)
            };
            t[(k, l)] = ratio / n_par;
            off += t[(k, l)];
        }
        t[(k, k)] = (1.0 - off).max(0.0);
    }
    t
}
