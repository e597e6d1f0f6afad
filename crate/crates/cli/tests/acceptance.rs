//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure or runtime overrun.

use std::path::Path;
use std::time::{Duration, Instant};

use mixinv::linops::oracle::{dense_det, dense_influence_complement, dense_log_det_whitened, dense_normal_solve};
use mixinv::linops::{
    dense_det_oracle, influence_residual, log_det_whitened, truncated_singular_values, LinearOperator,
    RegularizerMatrix, SolverSettings, WhitenedOperator,
};
use mixinv::models::dense_test_operator;
use mixinv::posterior::{dense_log_marginal, ml_ratio, quadrature_marginal_oracle, sigma_max_sq};
use mixinv::regselect::{cls_select, gcv_score, gcv_select, log_grid, ml_select};
use mixinv::sampler::{
    effective_sample_size, run_parallel_chain, run_single_chain, BoxPrior, ChainResult, GaussianTarget, RunningMoments,
    SamplerConfig, TransitionMatrix,
};
use mixinv_cli::commands::{cmd_baseline, cmd_generate, cmd_invert};
use mixinv_cli::config::BaselineMethod;
use mixinv_cli::{Overrides, RunConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

fn gaussian_vector(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.sample(StandardNormal))
}

fn regularizer(r: &mut ChaCha8Rng, p: usize) -> (RegularizerMatrix, DMatrix<f64>) {
    let dense = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0 + r.random::<f64>()
        } else if j == i + 1 {
            0.3 * r.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    });
    (RegularizerMatrix::from_dense(&dense).unwrap(), dense)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn tight() -> SolverSettings {
    SolverSettings {
        tol: 1e-13,
        max_iter: None,
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn c1_determinant_lemma() -> Outcome {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (n, p) = (r.random_range(1..=8), r.random_range(1..=8));
        let b = gaussian_matrix(&mut r, n, p);
        for c in [1e-3, 1.0, 1e3] {
            let (d1, d2, d3) = dense_det_oracle(&b, c).map_err(err)?;
            worst = worst.max(rel(d1, d2)).max(rel(d1, d3)).max(rel(d2, d3));
        }
    }
    ensure!(worst <= 1e-10, "max pairwise rel diff {worst:.2e}");
    Ok(format!("150 cases, max rel diff {worst:.1e}"))
}

fn c2_spectral_log_det() -> Outcome {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (n, p) = (r.random_range(1..=64), r.random_range(1..=64));
        let b = gaussian_matrix(&mut r, n, p);
        let spec = truncated_singular_values(&WhitenedOperator::from_matrix(b.clone()), 1e-14).map_err(err)?;
        for c in [1e-3, 1.0, 1e3] {
            let dense = dense_log_det_whitened(&b, c).map_err(err)?;
            worst = worst.max((log_det_whitened(&spec, c) - dense).abs());
        }
    }
    ensure!(worst <= 1e-8, "max abs diff {worst:.2e}");
    Ok(format!("20 instances, max abs diff {worst:.1e}"))
}

fn c3_quadrature() -> Outcome {
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let p = 1 + i % 2;
        let n = r.random_range(1..=4);
        let a = LinearOperator::new(gaussian_matrix(&mut r, n, p)).map_err(err)?;
        let reg = if p == 1 { RegularizerMatrix::identity(1).map_err(err)? } else { regularizer(&mut r, p).0 };
        let u = gaussian_vector(&mut r, n);
        let c = 10f64.powf(r.random_range(-1.0..1.0));
        let sigma = 10f64.powf(r.random_range(-0.5..0.5));
        let (closed, quad) = quadrature_marginal_oracle(&a, &reg, c, sigma, &u).map_err(err)?;
        worst = worst.max(rel(closed, quad));
    }
    ensure!(worst <= 1e-4, "max rel diff {worst:.2e}");
    Ok(format!("10 instances, max rel diff {worst:.1e}"))
}

fn c4_sigma_max() -> Outcome {
    let mut r = rng(4);
    let grid = log_grid(1e-3, 1e3, 400).map_err(err)?;
    let step = grid[1] / grid[0];
    let mut worst: f64 = 1.0;
    for _ in 0..10 {
        let (n, p) = (r.random_range(2..=6), r.random_range(1..=5));
        let a = gaussian_matrix(&mut r, n, p);
        let (reg, dense_r) = regularizer(&mut r, p);
        let u = gaussian_vector(&mut r, n);
        let c = 10f64.powf(r.random_range(-2.0..1.0));
        let op = LinearOperator::new(a.clone()).map_err(err)?;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for &s in &grid {
            let v = dense_log_marginal(&op, &reg, c, s, &u).map_err(err)?;
            if v > best.0 {
                best = (v, s);
            }
        }
        let g = dense_normal_solve(&a, &dense_r, c, &u).map_err(err)?;
        let closed = sigma_max_sq(c, (&dense_r * &g).norm_squared(), (&u - &a * &g).norm_squared(), n).sqrt();
        let ratio = (best.1 / closed).max(closed / best.1);
        worst = worst.max(ratio);
    }
    ensure!(worst <= step * (1.0 + 1e-12), "grid max off by factor {worst} > step {step}");
    Ok(format!("10 instances, worst factor {worst:.4} (step {step:.4})"))
}

fn whitened(a: LinearOperator) -> WhitenedOperator {
    WhitenedOperator::from_matrix(a.into_matrix())
}

fn c5_selection_oracles() -> Outcome {
    let mut r = rng(5);
    let mut checks = 0;
    let c_values = [1e-3, 1e-1, 1.0, 10.0, 1e3];
    for (n, p) in [(5, 9), (9, 5), (12, 20)] {
        let bm = gaussian_matrix(&mut r, n, p);
        let u = gaussian_vector(&mut r, n);
        let b = WhitenedOperator::from_matrix(bm.clone());
        let spec = truncated_singular_values(&b, 1e-14).map_err(err)?;

        // GCV and ML scores against dense influence complements.
        let mut dense_ml = Vec::new();
        for &c in &c_values {
            let m = dense_influence_complement(&bm, c).map_err(err)?;
            let g_dense = (&m * &u).norm_squared() / m.trace().powi(2);
            let g = gcv_score(&b, &spec, c, &u, &tight()).map_err(err)?;
            ensure!(rel(g, g_dense) <= 1e-8, "GCV {n}x{p} C={c}: {g} vs {g_dense}");
            let ml_dense = u.dot(&(&m * &u)) / dense_det(&m).map_err(err)?.powf(1.0 / n as f64);
            let ml = ml_ratio(&b, &spec, c, &u, &tight()).map_err(err)?;
            ensure!(rel(ml, ml_dense) <= 1e-8, "ML {n}x{p} C={c}: {ml} vs {ml_dense}");
            dense_ml.push(ml_dense);
            checks += 2;
        }
        let sel = ml_select(&b, &spec, &u, &c_values, &tight()).map_err(err)?;
        let k = (0..c_values.len()).min_by(|&i, &j| dense_ml[i].total_cmp(&dense_ml[j])).unwrap();
        ensure!(sel.c_star == c_values[k], "ML argmin {} vs dense {}", sel.c_star, c_values[k]);

        // CLS root against a target computed forward at a known C.
        let c_root = 0.37;
        let target = influence_residual(&b, &spec, c_root, &u, &tight()).map_err(err)?.residual_norm_sq;
        let cls = cls_select(&b, &spec, &u, (target / n as f64).sqrt(), (1e-8, 1e2), &tight()).map_err(err)?;
        let resid = influence_residual(&b, &spec, cls.c_star, &u, &tight()).map_err(err)?.residual_norm_sq;
        ensure!((resid - target).abs() <= 1e-8 * u.norm_squared(), "CLS residual {resid} vs {target}");
        checks += 2;
    }

    // ML invariance under u -> 3u on every instance, GCV grid sanity.
    let grid = log_grid(1e-8, 1e2, 100).map_err(err)?;
    for seed in 0..10 {
        let b = whitened(dense_test_operator(50 + seed, 20, 40, 0.1).map_err(err)?);
        let spec = truncated_singular_values(&b, 1e-10).map_err(err)?;
        let u = gaussian_vector(&mut r, 20);
        let s1 = ml_select(&b, &spec, &u, &grid, &tight()).map_err(err)?;
        let s3 = ml_select(&b, &spec, &(&u * 3.0), &grid, &tight()).map_err(err)?;
        ensure!(s1.c_star == s3.c_star, "ML argmin moved under scaling: {} vs {}", s1.c_star, s3.c_star);
        let gcv = gcv_select(&b, &spec, &u, &grid, &tight()).map_err(err)?;
        ensure!(grid.contains(&gcv.c_star), "GCV argmin off grid");
        checks += 1;
    }
    Ok(format!("{checks} oracle comparisons"))
}

fn c6_ml_sigma() -> Outcome {
    let (n, p) = (40, 60);
    let a = dense_test_operator(40, n, p, 0.05).map_err(err)?;
    let b = WhitenedOperator::from_matrix(a.matrix().clone());
    let spec = truncated_singular_values(&b, 1e-10).map_err(err)?;
    let sigma = 0.05;
    let c_true: f64 = 0.1;
    let grid = log_grid(1e-4, 1e2, 60).map_err(err)?;
    let mut r = rng(6);
    let mut total = 0.0;
    for _ in 0..100 {
        let g = gaussian_vector(&mut r, p) * (sigma / c_true.sqrt());
        let u = a.matrix() * g + gaussian_vector(&mut r, n) * sigma;
        let s1 = ml_select(&b, &spec, &u, &grid, &tight()).map_err(err)?;
        let s3 = ml_select(&b, &spec, &(&u * 3.0), &grid, &tight()).map_err(err)?;
        ensure!(s1.c_star == s3.c_star, "ML argmin not scale invariant");
        total += s1.sigma_est.ok_or("no sigma estimate")?;
    }
    let mean = total / 100.0;
    let off = (mean - sigma).abs() / sigma;
    ensure!(off <= 0.2, "mean sigma_est {mean:.4} vs {sigma} ({:.0}%)", off * 100.0);
    Ok(format!("mean sigma_est {mean:.4} vs {sigma} ({:.1}% off)", off * 100.0))
}

fn c7_transition_matrix() -> Outcome {
    let mut r = rng(7);
    let (mut row_err, mut balance_err): (f64, f64) = (0.0, 0.0);
    for n_par in [1usize, 5, 20] {
        for _ in 0..100 {
            let w: Vec<f64> = (0..=n_par)
                .map(|k| if k > 0 && r.random::<f64>() < 0.1 { 0.0 } else { 10f64.powf(r.random_range(-3.0..3.0)) })
                .collect();
            let t = TransitionMatrix::new(&w).map_err(err)?;
            let m = t.matrix();
            ensure!(m.iter().all(|v| *v >= 0.0), "negative entry");
            let scale = w.iter().copied().fold(0.0, f64::max);
            for k in 0..=n_par {
                row_err = row_err.max((m.row(k).sum() - 1.0).abs());
                for l in 0..=n_par {
                    balance_err = balance_err.max((w[k] * m[(k, l)] - w[l] * m[(l, k)]).abs() / scale);
                }
            }
        }
    }
    ensure!(row_err <= 1e-12 && balance_err <= 1e-12, "row {row_err:.2e}, balance {balance_err:.2e}");
    Ok(format!("300 matrices, row err {row_err:.1e}, balance err {balance_err:.1e}"))
}

fn gaussian_check(label: &str, res: &ChainResult) -> Result<String, String> {
    let mut m = RunningMoments::new(2);
    let mut coords = [Vec::new(), Vec::new()];
    for s in res.stage(3) {
        m.update(&s.x);
        coords[0].push(s.x[0]);
        coords[1].push(s.x[1]);
    }
    let mean_true = [1.0, -0.5];
    let cov_true = [[1.0, 0.5], [0.5, 2.0]];
    let cov = m.covariance();
    let mut worst_z: f64 = 0.0;
    for i in 0..2 {
        let ess = effective_sample_size(&coords[i]).ok_or("degenerate chain")?;
        let z = (m.mean()[i] - mean_true[i]).abs() / (cov_true[i][i] / ess).sqrt();
        worst_z = worst_z.max(z);
    }
    // Entries relative to sqrt(S_ii S_jj), so the off-diagonal is judged on
    // the same scale as the variances.
    let mut worst_cov: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let scale = (cov_true[i][i] * cov_true[j][j]).sqrt();
            worst_cov = worst_cov.max((cov[(i, j)] - cov_true[i][j]).abs() / scale);
        }
    }
    ensure!(worst_z <= 3.0, "{label}: mean off by {worst_z:.2} standard errors");
    ensure!(worst_cov <= 0.1, "{label}: covariance off by {:.1}%", worst_cov * 100.0);
    Ok(format!("{label} z={worst_z:.2} cov={:.1}%", worst_cov * 100.0))
}

fn c8_sampler() -> Outcome {
    let target = GaussianTarget::new(
        vec![1.0, -0.5],
        DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]),
        vec![(-10.0, 10.0); 2],
    )
    .map_err(err)?;
    let prior = BoxPrior::new(vec![(-10.0, 10.0); 2]).map_err(err)?;
    let cfg = |n_par| SamplerConfig {
        n1: 200,
        n2: 1000,
        n3: 20_000,
        n_par,
        ..SamplerConfig::default()
    };
    let single = run_single_chain(&cfg(1), &target, &prior, &mut rng(81)).map_err(err)?;
    let par1 = run_parallel_chain(&cfg(1), &target, &prior, &mut rng(82)).map_err(err)?;
    let par8 = run_parallel_chain(&cfg(8), &target, &prior, &mut rng(83)).map_err(err)?;
    let parts = [
        gaussian_check("single", &single)?,
        gaussian_check("par1", &par1)?,
        gaussian_check("par8", &par8)?,
    ];
    Ok(parts.join("; "))
}

fn e2e_config(out: &Path, seed: u64, noise: f64) -> Result<RunConfig, String> {
    let text = format!(
        r#"
[io]
seed = {seed}

[data]
noise_ratio = {noise}

[sampler]
n1 = 100
n2 = 300
n3 = 2500
n_par = 4
"#
    );
    let cfg = RunConfig::from_toml_str(&text).map_err(err)?;
    cfg.resolve(&Overrides {
        out: Some(out.to_path_buf()),
        ..Overrides::default()
    })
    .map_err(err)
}

fn c9_end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut log10_c = Vec::new();
    let mut parts = Vec::new();
    for (k, noise) in [0.05, 0.25].into_iter().enumerate() {
        let cfg = e2e_config(&tmp.path().join(format!("run{k}")), 9, noise)?;
        cmd_generate(&cfg).map_err(err)?;
        let report = cmd_invert(&cfg).map_err(err)?.report;
        let truth = cfg.data.true_plane;
        for (i, name) in ["a", "b", "d"].iter().enumerate() {
            let z = (report.mean[i] - truth[i]).abs() / report.std[i];
            ensure!(
                z <= 3.0,
                "noise {noise}: {name} mean {:.3} std {:.3} vs truth {} ({z:.2} std)",
                report.mean[i],
                report.std[i],
                truth[i]
            );
        }
        log10_c.push(report.mean[3]);
        parts.push(format!("noise {noise}: d={:.2}±{:.2} log10C={:.2}", report.mean[2], report.std[2], report.mean[3]));
    }
    ensure!(log10_c[1] > log10_c[0], "log10 C mean did not increase: {:?}", log10_c);
    Ok(parts.join("; "))
}

fn c10_depth_bias() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut shallower = 0;
    let mut pairs = Vec::new();
    for seed in 1..=10u64 {
        let mut cfg = e2e_config(&tmp.path().join(format!("s{seed}")), 1000 + seed, 0.05)?;
        cfg.sampler.n3 = 2000;
        cfg.baseline.method = BaselineMethod::ClsGlobal;
        cfg.baseline.err_ratios = vec![0.05];
        cfg.baseline.m_grid_bounds = Some(vec![(-0.5, 0.5), (-0.5, 0.5), (-0.4, -0.02)]);
        cmd_generate(&cfg).map_err(err)?;
        let bayes = cmd_invert(&cfg).map_err(err)?.report.mean[2].abs();
        let base = cmd_baseline(&cfg).map_err(err)?;
        let cls = base.rows[0].m.map(|m| m[2].abs());
        if cls.is_some_and(|d| d < bayes) {
            shallower += 1;
        }
        pairs.push(match cls {
            Some(d) => format!("{d:.1}/{bayes:.1}"),
            None => format!("no-root/{bayes:.1}"),
        });
    }
    ensure!(shallower >= 7, "only {shallower}/10 shallower (|d_cls|/|d_bayes|: {})", pairs.join(" "));
    Ok(format!("{shallower}/10 shallower (|d_cls|/|d_bayes|: {})", pairs.join(" ")))
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut cfg = e2e_config(&tmp.path().join("a"), 11, 0.05)?;
    cfg.sampler.n3 = 800;
    cmd_generate(&cfg).map_err(err)?;
    let first = cmd_invert(&cfg).map_err(err)?;
    let a = std::fs::read(&first.chain_path).map_err(err)?;
    std::fs::remove_file(&first.chain_path).map_err(err)?;
    let second = cmd_invert(&cfg).map_err(err)?;
    let b = std::fs::read(&second.chain_path).map_err(err)?;
    ensure!(a == b, "chain files differ");
    Ok(format!("{} identical bytes", a.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, u64); 11] = [
        (1, "determinant lemma", c1_determinant_lemma, 5),
        (2, "spectral log-determinant", c2_spectral_log_det, 10),
        (3, "Gaussian integral closed form", c3_quadrature, 30),
        (4, "sigma_max closed form", c4_sigma_max, 10),
        (5, "GCV/CLS/ML dense oracles", c5_selection_oracles, 30),
        (6, "ML sigma estimate", c6_ml_sigma, 60),
        (7, "transition matrix", c7_transition_matrix, 5),
        (8, "sampler on Gaussian target", c8_sampler, 120),
        (9, "end-to-end inversion", c9_end_to_end, 900),
        (10, "global discrepancy depth bias", c10_depth_bias, 1200),
        (11, "determinism", c11_determinism, 120),
    ];
    let mut failed = 0;
    for (id, name, run, limit) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > Duration::from_secs(limit) => {
                Err(format!("{detail}; took {:.1}s, limit {limit}s", elapsed.as_secs_f64()))
            }
            other => other,
        };
        match result {
            Ok(detail) => println!("criterion {id}: PASS {name} ({detail}) [{:.1}s]", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {id}: FAIL {name} ({why}) [{:.1}s]", elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
