use rand::Rng;

use super::{
    best_of, check_dims, evaluate_batch, frozen_covariance, jittered, mh_accept, rate, stage1_estimate, stage3_kernel, start_point, BoxPrior,
    ChainResult, MixtureKernel, Point, RunningMoments, SamplerConfig, Target,
};
use crate::Result;

/// Single-chain three-stage sampler producing `n3` samples. `cfg.n_par` is
/// ignored.
pub fn run_single_chain<T, R>(cfg: &SamplerConfig, target: &T, prior: &BoxPrior, rng: &mut R) -> Result<ChainResult>
where
    T: Target + ?Sized,
    R: Rng + ?Sized,
{
    check_dims(cfg, target, prior)?;
    let dim = target.dim();
    let scale = cfg.scale_for(dim);
    let mut samples = Vec::with_capacity(cfg.n3);
    let mut adapt = RunningMoments::new(dim);

    // Stage 1: prior draws.
    let draws: Vec<Vec<f64>> = (0..cfg.n1).map(|_| prior.sample(rng)).collect();
    let stage1 = evaluate_batch(target, draws, 0, cfg.execution)?;
    samples.extend(stage1.iter().map(|p| p.sample(1, 0, true)));
    if cfg.include_prior_in_moments {
        stage1.iter().for_each(|p| adapt.update(&p.x));
    }
    let (mean1, sigma1) = stage1_estimate(&stage1, prior, cfg)?;

    // Stage 2: fixed-covariance random walk from the stage-1 mean.
    let sigma = jittered(&sigma1, cfg.jitter);
    let kernel = MixtureKernel::new(&sigma, &sigma, 0.0, scale)?;
    let mut best = best_of(&stage1).cloned();
    let mut current = start_point(target, mean1, best.as_ref(), cfg.n1)?;
    samples.push(current.sample(2, 0, false));
    adapt.update(&current.x);
    let mut accepted2 = 0;
    for j in cfg.n1 + 1..cfg.n2 {
        let accepted = step(target, &kernel, &mut current, j, rng)?;
        accepted2 += usize::from(accepted);
        if accepted && best.as_ref().is_none_or(|b| current.eval.log_density > b.eval.log_density) {
            best = Some(current.clone());
        }
        samples.push(current.sample(2, 0, accepted));
        adapt.update(&current.x);
    }

    // Stage 3: adaptive mixture proposal from the refined mean.
    let sigma0 = frozen_covariance(&adapt.covariance(), &sigma1, cfg);
    current = start_point(target, adapt.mean().as_slice().to_vec(), best.as_ref(), cfg.n2)?;
    let mut moments = RunningMoments::new(dim);
    samples.push(current.sample(3, 0, false));
    adapt.update(&current.x);
    moments.update(&current.x);
    let mut accepted3 = 0;
    for j in cfg.n2 + 1..cfg.n3 {
        let kernel = stage3_kernel(&adapt, &sigma0, j >= cfg.n2 + 2, cfg, scale)?;
        let accepted = step(target, &kernel, &mut current, j, rng)?;
        accepted3 += usize::from(accepted);
        samples.push(current.sample(3, 0, accepted));
        adapt.update(&current.x);
        moments.update(&current.x);
    }

    Ok(ChainResult {
        dim,
        n_par: 1,
        samples,
        stage_marks: [0, cfg.n1, cfg.n2],
        acceptance: [
            1.0,
            rate(accepted2, cfg.n2 - cfg.n1 - 1),
            rate(accepted3, cfg.n3 - cfg.n2 - 1),
        ],
        moments,
    })
}

fn step<T, R>(target: &T, kernel: &MixtureKernel, current: &mut Point, position: usize, rng: &mut R) -> Result<bool>
where
    T: Target + ?Sized,
    R: Rng + ?Sized,
{
    let x = kernel.draw(&current.x, rng);
    let eval = target.evaluate(&x).map_err(|e| e.at_position(position))?;
    let accepted = mh_accept(current.eval.log_density, eval.log_density, rng);
    if accepted {
        *current = Point { x, eval };
    }
    Ok(accepted)
}
