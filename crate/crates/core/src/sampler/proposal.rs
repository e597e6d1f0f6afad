use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Adds `rel * tr(sigma) / dim` to the diagonal.
pub fn jittered(sigma: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let dim = sigma.nrows();
    let mut out = (sigma + sigma.transpose()) * 0.5;
    let eps = rel * sigma.trace() / dim as f64;
    for i in 0..dim {
        out[(i, i)] += eps;
    }
    out
}

/// Two-component random-walk kernel
/// `(1 - beta) N(0, scale Sigma) + beta N(0, scale Sigma0)`.
/// Both components are centered, so the kernel is symmetric.
#[derive(Debug, Clone)]
pub struct MixtureKernel {
    main: DMatrix<f64>,
    fixed: DMatrix<f64>,
    beta: f64,
}

fn scaled_factor(sigma: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    Cholesky::<f64, Dyn>::new(sigma * scale)
        .map(|c| c.unpack())
        .ok_or(Error::NotPositiveDefinite)
}

impl MixtureKernel {
    /// Covariances are used as given; apply [`jittered`] upstream.
    pub fn new(sigma: &DMatrix<f64>, sigma0: &DMatrix<f64>, beta: f64, scale: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("beta must lie in [0, 1), got {beta}")));
        }
        Ok(Self {
            main: scaled_factor(sigma, scale)?,
            fixed: scaled_factor(sigma0, scale)?,
            beta,
        })
    }

    pub fn dim(&self) -> usize {
        self.main.nrows()
    }

    /// Draws `center + step`. Consumes one uniform and `dim` normals.
    pub fn draw<R: Rng + ?Sized>(&self, center: &[f64], rng: &mut R) -> Vec<f64> {
        let pick_fixed = rng.random::<f64>() < self.beta;
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let factor = if pick_fixed { &self.fixed } else { &self.main };
        let step = factor * z;
        center.iter().zip(step.iter()).map(|(c, s)| c + s).collect()
    }
}

/// One draw from the mixture proposal centered at `center`.
pub fn propose_gaussian<R: Rng + ?Sized>(
    center: &[f64],
    sigma: &DMatrix<f64>,
    sigma0: &DMatrix<f64>,
    beta: f64,
    scale: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(MixtureKernel::new(sigma, sigma0, beta, scale)?.draw(center, rng))
}

/// Metropolis acceptance test on log densities. Always consumes one uniform.
pub fn mh_accept<R: Rng + ?Sized>(log_r_current: f64, log_r_proposal: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    if log_r_proposal == f64::NEG_INFINITY || log_r_proposal.is_nan() {
        return false;
    }
    log_r_proposal >= log_r_current || u.ln() < log_r_proposal - log_r_current
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_spread_stays_at_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = DMatrix::identity(3, 3) * 1e-12;
        let x = propose_gaussian(&[1.0, 2.0, 3.0], &s, &s, 0.1, 1.0, &mut rng).unwrap();
        for (a, b) in x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn non_pd_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = DMatrix::zeros(2, 2);
        assert!(matches!(
            propose_gaussian(&[0.0, 0.0], &s, &s, 0.1, 1.0, &mut rng),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn jitter_scales_with_trace() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let j = jittered(&s, 1e-10);
        assert_eq!(j[(0, 0)], 2.0 + 3e-10);
        assert_eq!(j[(0, 1)], 0.0);
    }

    #[test]
    fn mh_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert!(!mh_accept(0.0, f64::NEG_INFINITY, &mut rng));
            assert!(mh_accept(-1.0, -1.0, &mut rng));
            assert!(mh_accept(-1.0, 5.0, &mut rng));
        }
    }
}
