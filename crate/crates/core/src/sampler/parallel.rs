use rand::Rng;

use super::{
    best_of, check_dims, evaluate_batch, frozen_covariance, jittered, rate, stage1_estimate, stage3_kernel, start_point, BoxPrior,
    Centering, ChainResult, MixtureKernel, Point, RunningMoments, Sample, SamplerConfig, Stage, Target,
    TransitionMatrix, TransitionMode,
};
use crate::Result;

/// Multi-proposal sampler: each stage-2/3 iteration evaluates `n_par`
/// proposals concurrently, then fills the `n_par` columns from the pool
/// `(retained state, proposals)` with the reversible transition matrix.
/// Produces `n3 * n_par` samples.
pub fn run_parallel_chain<T, R>(cfg: &SamplerConfig, target: &T, prior: &BoxPrior, rng: &mut R) -> Result<ChainResult>
where
    T: Target + ?Sized,
    R: Rng + ?Sized,
{
    check_dims(cfg, target, prior)?;
    let dim = target.dim();
    let np = cfg.n_par;
    let scale = cfg.scale_for(dim);
    let mut samples = Vec::with_capacity(cfg.n3 * np);
    let mut adapt = RunningMoments::new(dim);

    // Stage 1: n1 * n_par independent prior draws.
    let draws: Vec<Vec<f64>> = (0..cfg.n1 * np).map(|_| prior.sample(rng)).collect();
    let stage1 = evaluate_batch(target, draws, 0, cfg.execution)?;
    samples.extend(stage1.iter().enumerate().map(|(i, p)| p.sample(1, i % np, true)));
    if cfg.include_prior_in_moments {
        stage1.iter().for_each(|p| adapt.update(&p.x));
    }
    let (mean1, sigma1) = stage1_estimate(&stage1, prior, cfg)?;
    let mut best = best_of(&stage1).cloned();

    // Stage 2: every column starts at the stage-1 mean.
    let sigma = jittered(&sigma1, cfg.jitter);
    let kernel = MixtureKernel::new(&sigma, &sigma, 0.0, scale)?;
    let start = start_point(target, mean1, best.as_ref(), cfg.n1 * np)?;
    let mut cols = vec![start; np];
    push_iteration(&mut samples, &mut adapt, None, &cols, 2, &[false; 0]);
    let mut accepted2 = 0;
    for j in cfg.n1 + 1..cfg.n2 {
        let moved = iterate(cfg, target, &kernel, &mut cols, j * np, rng)?;
        accepted2 += moved.iter().filter(|&&m| m).count();
        if let Some(b) = best_of(&cols) {
            if best.as_ref().is_none_or(|cur| b.eval.log_density > cur.eval.log_density) {
                best = Some(b.clone());
            }
        }
        push_iteration(&mut samples, &mut adapt, None, &cols, 2, &moved);
    }

    // Stage 3: restart all columns at the refined mean, adapt the covariance.
    let sigma0 = frozen_covariance(&adapt.covariance(), &sigma1, cfg);
    let start = start_point(target, adapt.mean().as_slice().to_vec(), best.as_ref(), cfg.n2 * np)?;
    cols = vec![start; np];
    let mut moments = RunningMoments::new(dim);
    push_iteration(&mut samples, &mut adapt, Some(&mut moments), &cols, 3, &[false; 0]);
    let mut accepted3 = 0;
    for j in cfg.n2 + 1..cfg.n3 {
        let kernel = stage3_kernel(&adapt, &sigma0, j >= cfg.n2 + 2, cfg, scale)?;
        let moved = iterate(cfg, target, &kernel, &mut cols, j * np, rng)?;
        accepted3 += moved.iter().filter(|&&m| m).count();
        push_iteration(&mut samples, &mut adapt, Some(&mut moments), &cols, 3, &moved);
    }

    Ok(ChainResult {
        dim,
        n_par: np,
        samples,
        stage_marks: [0, cfg.n1 * np, cfg.n2 * np],
        acceptance: [
            1.0,
            rate(accepted2, (cfg.n2 - cfg.n1 - 1) * np),
            rate(accepted3, (cfg.n3 - cfg.n2 - 1) * np),
        ],
        moments,
    })
}

fn push_iteration(
    samples: &mut Vec<Sample>,
    adapt: &mut RunningMoments,
    stage_moments: Option<&mut RunningMoments>,
    cols: &[Point],
    stage: Stage,
    moved: &[bool],
) {
    for (k, p) in cols.iter().enumerate() {
        samples.push(p.sample(stage, k, moved.get(k).copied().unwrap_or(false)));
        adapt.update(&p.x);
    }
    if let Some(m) = stage_moments {
        cols.iter().for_each(|p| m.update(&p.x));
    }
}

/// One multi-proposal iteration. Returns, per column, whether it took a
/// fresh proposal.
fn iterate<T, R>(
    cfg: &SamplerConfig,
    target: &T,
    kernel: &MixtureKernel,
    cols: &mut [Point],
    position: usize,
    rng: &mut R,
) -> Result<Vec<bool>>
where
    T: Target + ?Sized,
    R: Rng + ?Sized,
{
    let np = cols.len();
    let retained = cols[np - 1].clone();
    let proposals: Vec<Vec<f64>> = match cfg.centering {
        Centering::Auxiliary => {
            let z = kernel.draw(&retained.x, rng);
            (0..np).map(|_| kernel.draw(&z, rng)).collect()
        }
        Centering::PerColumn => cols.iter().map(|c| kernel.draw(&c.x, rng)).collect(),
    };
    let mut pool = Vec::with_capacity(np + 1);
    pool.push(retained);
    pool.extend(evaluate_batch(target, proposals, position, cfg.execution)?);
    let log_w: Vec<f64> = pool.iter().map(|p| p.eval.log_density).collect();
    let t = TransitionMatrix::from_log_weights(&log_w).map_err(|e| e.at_position(position))?;

    let mut moved = Vec::with_capacity(np);
    let mut idx = 0;
    for (k, col) in cols.iter_mut().enumerate() {
        idx = match cfg.transition {
            TransitionMode::IndexChain => t.sample_row(idx, rng),
            TransitionMode::Literal => match t.sample_row(k, rng) {
                // Rows of zero-weight entries are not constrained by
                // reversibility; such a draw counts as a rejection.
                l if pool[l].eval.log_density == f64::NEG_INFINITY => 0,
                l => l,
            },
        };
        *col = pool[idx].clone();
        moved.push(idx != 0);
    }
    Ok(moved)
}
