mod common;

use common::*;
use mixinv::linops::oracle::{dense_influence_complement, dense_log_det_whitened, dense_normal_solve};
use mixinv::linops::{
    dense_det_oracle, influence_residual, influence_trace, log_det_whitened, solve_gmin, solve_whitened,
    truncated_singular_values, truncated_svd, whiten_operator, SolverSettings, WhitenedOperator,
};
use nalgebra::DMatrix;
use rand::Rng;

#[test]
fn determinant_lemma_three_ways() {
    let mut r = rng(1);
    for _ in 0..50 {
        let n = r.random_range(1..=8);
        let p = r.random_range(1..=8);
        let b = gaussian_matrix(&mut r, n, p);
        for c in [1e-3, 1.0, 1e3] {
            let (d1, d2, d3) = dense_det_oracle(&b, c).unwrap();
            assert!(rel_diff(d1, d2) <= 1e-10, "{n}x{p} C={c}: {d1} {d2}");
            assert!(rel_diff(d1, d3) <= 1e-10, "{n}x{p} C={c}: {d1} {d3}");
            assert!(rel_diff(d2, d3) <= 1e-10, "{n}x{p} C={c}: {d2} {d3}");
        }
    }
}

#[test]
fn spectral_log_det_matches_dense() {
    let mut r = rng(2);
    for _ in 0..20 {
        let n = r.random_range(1..=64);
        let p = r.random_range(1..=64);
        let b = gaussian_matrix(&mut r, n, p);
        let spec = truncated_singular_values(&WhitenedOperator::from_matrix(b.clone()), 1e-14).unwrap();
        for c in [1e-3, 1.0, 1e3] {
            let fast = log_det_whitened(&spec, c);
            let dense = dense_log_det_whitened(&b, c).unwrap();
            assert!((fast - dense).abs() <= 1e-8, "{n}x{p} C={c}: {fast} vs {dense}");
        }
    }
}

#[test]
fn influence_matches_dense_complement() {
    let mut r = rng(3);
    let settings = SolverSettings {
        tol: 1e-13,
        max_iter: None,
    };
    for (n, p) in [(5, 9), (9, 5), (12, 12), (3, 30)] {
        let b = gaussian_matrix(&mut r, n, p);
        let u = gaussian_vector(&mut r, n);
        let bw = WhitenedOperator::from_matrix(b.clone());
        let spec = truncated_singular_values(&bw, 1e-14).unwrap();
        for c in [1e-2, 1.0, 1e2] {
            let m = dense_influence_complement(&b, c).unwrap();
            let inf = influence_residual(&bw, &spec, c, &u, &settings).unwrap();
            let resid = &m * &u;
            assert!(rel_diff(inf.quad_form, u.dot(&resid)) < 1e-8);
            assert!(rel_diff(inf.residual_norm_sq, resid.norm_squared()) < 1e-8);
            assert!(rel_diff(inf.trace, m.trace()) < 1e-10);
            assert!(rel_diff(influence_trace(n, &spec, c), m.trace()) < 1e-10);
        }
    }
}

#[test]
fn matrix_free_gmin_matches_dense_normal_equations() {
    let mut r = rng(4);
    let settings = SolverSettings {
        tol: 1e-12,
        max_iter: Some(5000),
    };
    for (n, p) in [(10, 20), (40, 120), (60, 200)] {
        let a = gaussian_matrix(&mut r, n, p);
        let (reg, dense_r) = random_regularizer(&mut r, p);
        let u = gaussian_vector(&mut r, n);
        for c in [1e-2, 1.0, 1e2] {
            let g = solve_gmin(&operator(a.clone()), &reg, c, &u, &settings).unwrap();
            let g_dense = dense_normal_solve(&a, &dense_r, c, &u).unwrap();
            assert!((&g - &g_dense).norm() <= 1e-7 * g_dense.norm(), "{n}x{p} C={c}");

            // Same minimizer through the whitened system.
            let b = whiten_operator(&operator(a.clone()), &reg).unwrap();
            let x = solve_whitened(&b, c, &u, &settings).unwrap().solution;
            let g_white = reg.solve(&x);
            assert!((&g_white - &g_dense).norm() <= 1e-7 * g_dense.norm(), "{n}x{p} C={c}");
        }
    }
}

#[test]
fn whitening_equals_a_times_r_inverse() {
    let mut r = rng(5);
    let a = gaussian_matrix(&mut r, 7, 15);
    let (reg, dense_r) = random_regularizer(&mut r, 15);
    let b = whiten_operator(&operator(a.clone()), &reg).unwrap();
    let expected = &a * dense_r.try_inverse().unwrap();
    assert!((b.matrix() - expected).norm() < 1e-12 * a.norm());
}

#[test]
fn truncation_drops_small_singular_values() {
    // diag(1, 1e-5, 1e-12) padded with a zero column.
    let mut m = DMatrix::zeros(3, 4);
    m[(0, 0)] = 1.0;
    m[(1, 1)] = 1e-5;
    m[(2, 2)] = 1e-12;
    let b = WhitenedOperator::from_matrix(m);
    let spec = truncated_singular_values(&b, 1e-10).unwrap();
    assert_eq!(spec.rank(), 2);
    let svd = truncated_svd(&b, 1e-10).unwrap();
    assert_eq!(svd.left.ncols(), 2);
    assert_eq!(svd.spectrum, spec);
}
