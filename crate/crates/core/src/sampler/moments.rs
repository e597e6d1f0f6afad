use nalgebra::{DMatrix, DVector};

/// Single-pass (Welford) mean and covariance accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningMoments {
    count: usize,
    mean: DVector<f64>,
    /// Sum of outer products of deviations from the running mean.
    m2: DMatrix<f64>,
}

impl RunningMoments {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim());
        self.count += 1;
        let x = DVector::from_column_slice(x);
        let delta = &x - &self.mean;
        self.mean.axpy(1.0 / self.count as f64, &delta, 1.0);
        let delta2 = &x - &self.mean;
        self.m2.ger(1.0, &delta, &delta2, 1.0);
        // ger accumulates delta * delta2', which is symmetric only in exact
        // arithmetic.
        self.m2 = (&self.m2 + self.m2.transpose()) * 0.5;
    }

    /// Sample covariance with `count - 1` normalization; zero below two samples.
    pub fn covariance(&self) -> DMatrix<f64> {
        if self.count < 2 {
            return DMatrix::zeros(self.dim(), self.dim());
        }
        &self.m2 / (self.count - 1) as f64
    }

    pub fn std(&self) -> DVector<f64> {
        self.covariance().diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// Self-normalized importance-weighted mean and covariance from log weights.
/// Returns `None` when no weight is positive. The third value is the
/// effective sample size `(sum w)^2 / sum w^2`.
pub fn weighted_moments(xs: &[Vec<f64>], log_w: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>, f64)> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || xs.is_empty() {
        return None;
    }
    let dim = xs[0].len();
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut mean = DVector::zeros(dim);
    for (x, wi) in xs.iter().zip(&w) {
        mean.axpy(wi / total, &DVector::from_column_slice(x), 1.0);
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (x, wi) in xs.iter().zip(&w) {
        let d = DVector::from_column_slice(x) - &mean;
        cov.ger(wi / total, &d, &d, 1.0);
    }
    let ess = total * total / w.iter().map(|v| v * v).sum::<f64>();
    Some((mean, cov, ess))
}

/// Effective sample size of a correlated scalar series by non-overlapping
/// batch means, with `floor(sqrt(n))` batches. Capped at `n`; `None` below
/// four samples or for a constant series.
pub fn effective_sample_size(xs: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 4 {
        return None;
    }
    let batches = (n as f64).sqrt().floor() as usize;
    let size = n / batches;
    let used = batches * size;
    let mean = xs[..used].iter().sum::<f64>() / used as f64;
    let var = xs[..used].iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (used - 1) as f64;
    if !(var > 0.0) {
        return None;
    }
    let batch_var = xs[..used]
        .chunks(size)
        .map(|c| (c.iter().sum::<f64>() / size as f64 - mean).powi(2))
        .sum::<f64>()
        / (batches - 1) as f64;
    // Var(mean) ~ batch_var / batches = var / ess.
    let ess = if batch_var > 0.0 { var * batches as f64 / batch_var } else { n as f64 };
    Some(ess.min(n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_and_two_samples() {
        let mut m = RunningMoments::new(2);
        m.update(&[1.0, 2.0]);
        assert_eq!(m.mean().as_slice(), &[1.0, 2.0]);
        assert_eq!(m.covariance(), DMatrix::zeros(2, 2));
        m.update(&[3.0, -2.0]);
        assert_eq!(m.mean().as_slice(), &[2.0, 0.0]);
        // n-1 normalization: cov = 2 * outer((x - y) / 2)
        let h = DVector::from_vec(vec![-1.0, 2.0]);
        assert!((m.covariance() - &h * h.transpose() * 2.0).norm() < 1e-15);
    }

    #[test]
    fn weighted_equal_weights_is_population_covariance() {
        let xs = vec![vec![0.0], vec![2.0]];
        let (mean, cov, ess) = weighted_moments(&xs, &[0.0, 0.0]).unwrap();
        assert_eq!(mean[0], 1.0);
        assert_eq!(cov[(0, 0)], 1.0);
        assert_eq!(ess, 2.0);
        assert!(weighted_moments(&xs, &[f64::NEG_INFINITY; 2]).is_none());
    }

    #[test]
    fn batch_means_ess_of_iid_and_repeated_series() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let iid: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let ess = effective_sample_size(&iid).unwrap();
        assert!(ess > 5_000.0, "{ess}");
        // Repeating each value 10 times adds no information.
        let sticky: Vec<f64> = iid.iter().flat_map(|x| std::iter::repeat_n(*x, 10)).collect();
        let ess10 = effective_sample_size(&sticky).unwrap();
        assert!(ess10 > 5_000.0 && ess10 < 20_000.0, "{ess10}");
        assert!(effective_sample_size(&[1.0; 100]).is_none());
    }
}
