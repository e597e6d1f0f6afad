mod common;

use common::*;
use mixinv::linops::{dense_det_oracle, log_det_whitened, truncated_singular_values, WhitenedOperator};
use mixinv::regselect::log_grid;
use mixinv::sampler::{RunningMoments, TransitionMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transition_rows_sum_to_one(log_w in prop::collection::vec(-30.0f64..30.0, 2..25)) {
        let t = TransitionMatrix::from_log_weights(&log_w).unwrap();
        for k in 0..t.size() {
            prop_assert!((t.matrix().row(k).sum() - 1.0).abs() <= 1e-12);
            prop_assert!(t.matrix().row(k).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn running_moments_match_two_pass(xs in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..60)) {
        let mut m = RunningMoments::new(3);
        xs.iter().for_each(|x| m.update(x));
        let n = xs.len() as f64;
        let mean = xs.iter().fold(DVector::zeros(3), |acc, x| acc + DVector::from_column_slice(x)) / n;
        let mut cov = DMatrix::zeros(3, 3);
        for x in &xs {
            let d = DVector::from_column_slice(x) - &mean;
            cov += &d * d.transpose();
        }
        cov /= n - 1.0;
        prop_assert!((m.mean() - &mean).norm() <= 1e-9 * (1.0 + mean.norm()));
        prop_assert!((m.covariance() - &cov).norm() <= 1e-8 * (1.0 + cov.norm()));
    }

    #[test]
    fn log_grid_is_increasing_with_exact_ends(lo in -10.0f64..0.0, span in 0.5f64..10.0, points in 2usize..300) {
        let (a, b) = (10f64.powf(lo), 10f64.powf(lo + span));
        let g = log_grid(a, b, points).unwrap();
        prop_assert_eq!(g.len(), points);
        prop_assert_eq!(g[0], a);
        prop_assert_eq!(g[points - 1], b);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn determinant_lemma_and_spectral_log_det(seed in 0u64..10_000, n in 1usize..7, p in 1usize..7, t in -3.0f64..3.0) {
        let mut r = rng(seed);
        let b = gaussian_matrix(&mut r, n, p);
        let c = 10f64.powf(t);
        let (d1, d2, d3) = dense_det_oracle(&b, c).unwrap();
        prop_assert!(rel_diff(d1, d2) <= 1e-10 && rel_diff(d1, d3) <= 1e-10);
        let spec = truncated_singular_values(&WhitenedOperator::from_matrix(b), 1e-14).unwrap();
        prop_assert!((log_det_whitened(&spec, c) - 0.5 * d1.ln()).abs() <= 1e-8);
    }

    #[test]
    fn regularizer_solve_inverts_apply(seed in 0u64..10_000, p in 1usize..40) {
        let mut r = rng(seed);
        let (reg, _) = random_regularizer(&mut r, p);
        let g = gaussian_vector(&mut r, p);
        let back = reg.solve(&reg.apply(&g));
        prop_assert!((back - &g).norm() <= 1e-10 * (1.0 + g.norm()));
    }
}
