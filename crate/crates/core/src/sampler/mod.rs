//! Three-stage adaptive Metropolis-Hastings, single-chain and multi-proposal.
//!
//! Stage 1 draws from the prior and forms importance-weighted moment
//! estimates. Stage 2 runs random-walk MH with the stage-1 covariance, and
//! stage 3 runs adaptive MH with the mixture proposal
//! `(1 - beta) N(0, s Sigma) + beta N(0, s Sigma0)`, where `Sigma` tracks
//! the sample covariance and `Sigma0` is frozen at the end of stage 2.
//!
//! All random numbers are drawn by the orchestrating thread in a fixed
//! order; only density evaluations are farmed out. Output therefore depends
//! on the seed alone, not on the worker count or scheduling.

mod moments;
mod parallel;
mod proposal;
mod single;
mod transition;

pub use moments::{effective_sample_size, weighted_moments, RunningMoments};
pub use parallel::run_parallel_chain;
pub use proposal::{jittered, mh_accept, propose_gaussian, MixtureKernel};
pub use single::run_single_chain;
pub use transition::TransitionMatrix;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::models::ForwardMap;
use crate::posterior::{log_unnormalized_posterior, AugmentedState, PosteriorSettings, PriorSpec};
use crate::{Error, Execution, Result};

/// Value of the target at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetEval {
    /// Natural log of the unnormalized density, `-inf` off the support.
    pub log_density: f64,
    /// Plug-in noise variance, when the target has one.
    pub sigma_max_sq: Option<f64>,
}

impl TargetEval {
    pub fn plain(log_density: f64) -> Self {
        Self {
            log_density,
            sigma_max_sq: None,
        }
    }
}

/// Unnormalized density over `R^dim`. Must be pure: the samplers evaluate
/// it concurrently and rely on repeatable values.
pub trait Target: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Result<TargetEval>;
}

/// The `(m, log10 C)` posterior as a sampler target.
pub struct PosteriorTarget<'a, M: ForwardMap + ?Sized> {
    pub model: &'a M,
    pub u: DVector<f64>,
    pub prior: PriorSpec,
    pub settings: PosteriorSettings,
}

impl<M: ForwardMap + ?Sized> Target for PosteriorTarget<'_, M> {
    fn dim(&self) -> usize {
        self.prior.n_params() + 1
    }

    fn evaluate(&self, x: &[f64]) -> Result<TargetEval> {
        let e = log_unnormalized_posterior(&AugmentedState::from_slice(x), &self.u, self.model, &self.prior, &self.settings)?;
        Ok(TargetEval {
            log_density: e.log_density,
            sigma_max_sq: e.is_finite().then_some(e.sigma_max_sq),
        })
    }
}

/// Gaussian density restricted to a box; a known target for testing.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    bounds: Vec<(f64, f64)>,
}

impl GaussianTarget {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let dim = mean.len();
        if cov.shape() != (dim, dim) || bounds.len() != dim {
            return Err(Error::Dimension("mean, covariance and bounds disagree".into()));
        }
        let precision = cov.try_inverse().ok_or(Error::NotPositiveDefinite)?;
        Ok(Self {
            mean: DVector::from_vec(mean),
            precision,
            bounds,
        })
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn evaluate(&self, x: &[f64]) -> Result<TargetEval> {
        if !x.iter().zip(&self.bounds).all(|(v, (lo, hi))| (*lo..=*hi).contains(v)) {
            return Ok(TargetEval::plain(f64::NEG_INFINITY));
        }
        let d = DVector::from_column_slice(x) - &self.mean;
        Ok(TargetEval::plain(-0.5 * d.dot(&(&self.precision * &d))))
    }
}

/// Uniform distribution on a box; the stage-1 prior sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxPrior {
    pub bounds: Vec<(f64, f64)>,
}

impl BoxPrior {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
            return Err(Error::InvalidArgument("box bounds need finite lower < upper".into()));
        }
        Ok(Self { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    /// Per-coordinate variance of the uniform distribution.
    pub fn variances(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| (hi - lo).powi(2) / 12.0).collect()
    }
}

impl From<&PriorSpec> for BoxPrior {
    fn from(p: &PriorSpec) -> Self {
        Self { bounds: p.bounds() }
    }
}

/// How the pool index for each column is chosen in the parallel sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionMode {
    /// `i_0 = 0`, `i_k ~ T[i_(k-1), .]`, column `k` takes pool entry `i_k`.
    #[default]
    IndexChain,
    /// Column `k` takes a draw from row `k` of `T`.
    Literal,
}

/// Where the parallel sampler centers its proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    /// One auxiliary point `z` drawn around the retained state, then every
    /// proposal drawn around `z`. The pool is exchangeable, so weights
    /// proportional to the target density are exact.
    #[default]
    Auxiliary,
    /// Proposal `k` drawn around the previous state of column `k`.
    PerColumn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub n_par: usize,
    pub beta: f64,
    /// Proposal covariance multiplier; `None` means `2.38^2 / dim`.
    pub scale: Option<f64>,
    pub seed: u64,
    /// Relative diagonal jitter, times `tr(Sigma) / dim`.
    pub jitter: f64,
    /// Added to the stage-1 covariance as a fraction of the prior variance.
    pub stage1_floor: f64,
    /// Count stage-1 prior draws (unweighted) in the stage-2/3 moments.
    pub include_prior_in_moments: bool,
    pub transition: TransitionMode,
    pub centering: Centering,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n1: 200,
            n2: 400,
            n3: 4000,
            n_par: 20,
            beta: 0.05,
            scale: None,
            seed: 0,
            jitter: 1e-10,
            stage1_floor: 1e-2,
            include_prior_in_moments: false,
            transition: TransitionMode::IndexChain,
            centering: Centering::Auxiliary,
            execution: Execution::Parallel,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(1 <= self.n1 && self.n1 < self.n2 && self.n2 < self.n3) {
            return bad("need 1 <= n1 < n2 < n3");
        }
        if self.n3 - self.n2 <= (self.n2 - self.n1).max(self.n1) {
            return bad("stage 3 must be longer than stages 1 and 2 (n3 - n2 > max(n2 - n1, n1))");
        }
        if self.n_par == 0 {
            return bad("n_par must be at least 1");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must lie in (0, 1)");
        }
        if self.scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return bad("scale must be positive");
        }
        if !(self.jitter >= 0.0 && self.stage1_floor >= 0.0) {
            return bad("jitter and stage1_floor must be nonnegative");
        }
        Ok(())
    }

    pub fn scale_for(&self, dim: usize) -> f64 {
        self.scale.unwrap_or(2.38 * 2.38 / dim as f64)
    }
}

/// Stage label, 1 to 3.
pub type Stage = u8;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub log_density: f64,
    pub sigma_max_sq: Option<f64>,
    pub stage: Stage,
    /// Column index in the parallel sampler, 0 for the single chain.
    pub column: usize,
    /// The state came from a fresh proposal rather than being carried over.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub dim: usize,
    pub n_par: usize,
    /// Iteration-major, column-minor.
    pub samples: Vec<Sample>,
    /// Index of the first sample of stages 1, 2 and 3.
    pub stage_marks: [usize; 3],
    /// Fraction of Metropolis steps that moved, per stage; stage 1 is
    /// always 1.
    pub acceptance: [f64; 3],
    /// Moments of the stage-3 samples.
    pub moments: RunningMoments,
}

impl ChainResult {
    pub fn stage(&self, stage: Stage) -> &[Sample] {
        let idx = usize::from(stage.clamp(1, 3)) - 1;
        let end = if idx == 2 { self.samples.len() } else { self.stage_marks[idx + 1] };
        &self.samples[self.stage_marks[idx]..end]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub x: Vec<f64>,
    pub eval: TargetEval,
}

impl Point {
    pub fn sample(&self, stage: Stage, column: usize, accepted: bool) -> Sample {
        Sample {
            x: self.x.clone(),
            log_density: self.eval.log_density,
            sigma_max_sq: self.eval.sigma_max_sq,
            stage,
            column,
            accepted,
        }
    }
}

/// Evaluates a batch; errors carry the chain position of the offending point.
pub(crate) fn evaluate_batch<T: Target + ?Sized>(
    target: &T,
    xs: Vec<Vec<f64>>,
    first_position: usize,
    execution: Execution,
) -> Result<Vec<Point>> {
    let indexed: Vec<(usize, Vec<f64>)> = xs.into_iter().enumerate().collect();
    execution
        .map(&indexed, |(i, x)| {
            target
                .evaluate(x)
                .map(|eval| Point { x: x.clone(), eval })
                .map_err(|e| e.at_position(first_position + i))
        })
        .into_iter()
        .collect()
}

pub(crate) fn check_dims<T: Target + ?Sized>(cfg: &SamplerConfig, target: &T, prior: &BoxPrior) -> Result<()> {
    cfg.validate()?;
    if target.dim() != prior.dim() || target.dim() == 0 {
        return Err(Error::Dimension(format!(
            "target has dimension {}, prior box {}",
            target.dim(),
            prior.dim()
        )));
    }
    Ok(())
}

/// Stage-1 estimate: importance-weighted moments plus a covariance floor.
pub(crate) fn stage1_estimate(points: &[Point], prior: &BoxPrior, cfg: &SamplerConfig) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let xs: Vec<Vec<f64>> = points.iter().map(|p| p.x.clone()).collect();
    let lw: Vec<f64> = points.iter().map(|p| p.eval.log_density).collect();
    let (mean, mut cov, _) = weighted_moments(&xs, &lw)
        .ok_or_else(|| Error::InvalidArgument("every stage-1 prior draw has zero density".into()))?;
    for (i, v) in prior.variances().into_iter().enumerate() {
        cov[(i, i)] += cfg.stage1_floor * v;
    }
    Ok((mean.as_slice().to_vec(), cov))
}

/// Evaluates `x`; if its density is zero, falls back to `best`.
pub(crate) fn start_point<T: Target + ?Sized>(target: &T, x: Vec<f64>, best: Option<&Point>, position: usize) -> Result<Point> {
    let eval = target.evaluate(&x).map_err(|e| e.at_position(position))?;
    if eval.log_density.is_finite() {
        return Ok(Point { x, eval });
    }
    best.cloned()
        .ok_or_else(|| Error::InvalidArgument("no state with positive density to start from".into()).at_position(position))
}

/// Highest-density point with finite density.
pub(crate) fn best_of<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<&'a Point> {
    points
        .into_iter()
        .filter(|p| p.eval.log_density.is_finite())
        .max_by(|a, b| a.eval.log_density.total_cmp(&b.eval.log_density))
}

/// `Sigma0` for stage 3: the jittered stage-2 covariance, or the stage-1
/// covariance when stage 2 moved too little for it to factor.
pub(crate) fn frozen_covariance(stage2: &DMatrix<f64>, stage1: &DMatrix<f64>, cfg: &SamplerConfig) -> DMatrix<f64> {
    let sigma0 = jittered(stage2, cfg.jitter);
    if sigma0.iter().all(|v| v.is_finite()) && sigma0.clone().cholesky().is_some() {
        sigma0
    } else {
        jittered(stage1, cfg.jitter)
    }
}

/// `(1 - beta) N(0, s Sigma) + beta N(0, s Sigma0)`; an adapted `Sigma`
/// that fails to factor is replaced by `Sigma0`.
pub(crate) fn stage3_kernel(
    adapt: &RunningMoments,
    sigma0: &DMatrix<f64>,
    use_adapted: bool,
    cfg: &SamplerConfig,
    scale: f64,
) -> Result<MixtureKernel> {
    if use_adapted {
        if let Ok(k) = MixtureKernel::new(&jittered(&adapt.covariance(), cfg.jitter), sigma0, cfg.beta, scale) {
            return Ok(k);
        }
    }
    MixtureKernel::new(sigma0, sigma0, cfg.beta, scale)
}

pub(crate) fn rate(accepted: usize, steps: usize) -> f64 {
    if steps == 0 {
        0.0
    } else {
        accepted as f64 / steps as f64
    }
}
