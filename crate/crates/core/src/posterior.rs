//! Unnormalized posterior of the augmented variable `(m, C)`.
//!
//! With `g_min` the Tikhonov minimizer and `B = A_m R^-1`,
//!
//! ```text
//! log R(m, C) = -1/2 sum_j log(1 + s_j^2 / C)
//!               - n/2 log(C |R g_min|^2 + |u - A_m g_min|^2)
//!               + log prior(m, C)
//! ```
//!
//! where `s_j` are the singular values of `B`. The second factor comes from
//! plugging in the noise level `sigma_max` that maximizes the marginal
//! likelihood of `u`. The chain coordinate for `C` is `t = log10 C`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::linops::{
    self, influence_residual, log_det_whitened, oracle, solve_gmin, solve_whitened, truncated_singular_values,
    LinearOperator, RegularizerMatrix, SolverSettings, SpectralSummary, WhitenedOperator,
};
use crate::models::ForwardMap;
use crate::{Error, Result};

/// Independent uniform priors: a box for `m` and a range for `log10 C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub m_box: Vec<(f64, f64)>,
    pub log_c_range: (f64, f64),
}

impl PriorSpec {
    pub fn new(m_box: Vec<(f64, f64)>, log_c_range: (f64, f64)) -> Result<Self> {
        let prior = Self { m_box, log_c_range };
        prior.validate()?;
        Ok(prior)
    }

    /// `m` uniform on `[-1, 1]^3`, `log10 C` uniform on `[-8, 2]`.
    pub fn planar_default() -> Self {
        Self {
            m_box: vec![(-1.0, 1.0); 3],
            log_c_range: (-8.0, 2.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self
            .m_box
            .iter()
            .chain(std::iter::once(&self.log_c_range))
            .all(|(lo, hi)| lo.is_finite() && hi.is_finite() && lo < hi);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("prior bounds need finite lower < upper".into()))
        }
    }

    pub fn n_params(&self) -> usize {
        self.m_box.len()
    }

    /// Bounds of the full chain vector `(m, t)`.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let mut b = self.m_box.clone();
        b.push(self.log_c_range);
        b
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.m_box.len() + 1
            && x.iter().zip(self.bounds()).all(|(v, (lo, hi))| (lo..=hi).contains(v))
    }
}

/// Chain state: geometry parameters and `t = log10 C`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub m: Vec<f64>,
    pub t: f64,
}

impl AugmentedState {
    pub fn new(m: Vec<f64>, t: f64) -> Self {
        Self { m, t }
    }

    pub fn from_slice(x: &[f64]) -> Self {
        let (m, t) = x.split_at(x.len() - 1);
        Self { m: m.to_vec(), t: t[0] }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.m.clone();
        v.push(self.t);
        v
    }

    pub fn c(&self) -> f64 {
        10f64.powf(self.t)
    }
}

/// Uniform (unnormalized) log prior: 0 inside the box, `-inf` outside.
pub fn log_prior(state: &AugmentedState, prior: &PriorSpec) -> f64 {
    let inside = state.m.len() == prior.m_box.len()
        && state.m.iter().zip(&prior.m_box).all(|(v, (lo, hi))| (*lo..=*hi).contains(v))
        && (prior.log_c_range.0..=prior.log_c_range.1).contains(&state.t);
    if inside {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// `sigma_max^2 = (C |R g|^2 + |u - A g|^2) / n`.
pub fn sigma_max_sq(c: f64, reg_sq: f64, resid_sq: f64, n: usize) -> f64 {
    (c * reg_sq + resid_sq) / n as f64
}

/// How `g_min` is computed inside the density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GminRoute {
    /// CG on `(B'B + C I) x = B'u`, then `g = R^-1 x`.
    #[default]
    Whitened,
    /// CG on `(A'A + C R'R) g = A'u`.
    Primal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSettings {
    pub rel_threshold: f64,
    pub solver: SolverSettings,
    pub route: GminRoute,
}

impl Default for PosteriorSettings {
    fn default() -> Self {
        Self {
            rel_threshold: linops::DEFAULT_REL_THRESHOLD,
            solver: SolverSettings::default(),
            route: GminRoute::Whitened,
        }
    }
}

/// Why a state has zero density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    OutsidePrior,
    /// Inside the prior box but outside the model's admissible set (for the
    /// planar model: the plane reaches the surface).
    Inadmissible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEval {
    /// Natural log of the unnormalized density; `-inf` when gated.
    pub log_density: f64,
    pub g_min: DVector<f64>,
    pub resid_sq: f64,
    pub reg_sq: f64,
    pub sigma_max_sq: f64,
    pub spec: SpectralSummary,
    pub gate: Option<Gate>,
}

impl DensityEval {
    fn gated(gate: Gate, rel_threshold: f64) -> Self {
        Self {
            log_density: f64::NEG_INFINITY,
            g_min: DVector::zeros(0),
            resid_sq: f64::NAN,
            reg_sq: f64::NAN,
            sigma_max_sq: f64::NAN,
            spec: SpectralSummary::empty(rel_threshold),
            gate: Some(gate),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.log_density.is_finite()
    }
}

/// Evaluates `log R(m, C)` and its by-products. States outside the prior
/// box or the admissible set return `-inf` before any operator is built.
pub fn log_unnormalized_posterior<M: ForwardMap + ?Sized>(
    state: &AugmentedState,
    u: &DVector<f64>,
    model: &M,
    prior: &PriorSpec,
    settings: &PosteriorSettings,
) -> Result<DensityEval> {
    if u.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroData);
    }
    if u.len() != model.n_measurements() {
        return Err(Error::Dimension(format!(
            "data has {} entries, model has {} measurements",
            u.len(),
            model.n_measurements()
        )));
    }
    let lp = log_prior(state, prior);
    if lp == f64::NEG_INFINITY {
        return Ok(DensityEval::gated(Gate::OutsidePrior, settings.rel_threshold));
    }
    if !model.is_admissible(&state.m) {
        return Ok(DensityEval::gated(Gate::Inadmissible, settings.rel_threshold));
    }

    let a = model.assemble(&state.m)?;
    let r = model.regularizer();
    let b = linops::whiten_operator(&a, r)?;
    let spec = truncated_singular_values(&b, settings.rel_threshold)?;
    let c = state.c();
    let g_min = match settings.route {
        GminRoute::Whitened => r.solve(&solve_whitened(&b, c, u, &settings.solver)?.solution),
        GminRoute::Primal => solve_gmin(&a, r, c, u, &settings.solver)?,
    };
    let resid_sq = (u - a.matrix() * &g_min).norm_squared();
    let reg_sq = r.apply(&g_min).norm_squared();
    let n = u.len();
    let s2 = sigma_max_sq(c, reg_sq, resid_sq, n);
    let log_density = log_det_whitened(&spec, c) - 0.5 * n as f64 * (n as f64 * s2).ln() + lp;
    Ok(DensityEval {
        log_density,
        g_min,
        resid_sq,
        reg_sq,
        sigma_max_sq: s2,
        spec,
        gate: None,
    })
}

/// Maximum-likelihood ratio `u'(I - B B#) u / det(I - B B#)^(1/n)`.
pub fn ml_ratio(
    b: &WhitenedOperator,
    spec: &SpectralSummary,
    c: f64,
    u: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<f64> {
    if u.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroData);
    }
    let inf = influence_residual(b, spec, c, u, settings)?;
    // det(I - B B#) = prod (1 + s^2/C)^-1 = exp(2 log_det_whitened)
    let log_det = 2.0 * log_det_whitened(spec, c);
    Ok(inf.quad_form * (-log_det / u.len() as f64).exp())
}

fn dense_pieces(
    a: &LinearOperator,
    r: &RegularizerMatrix,
    c: f64,
    u: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let am = a.matrix();
    let rd = r.to_dense();
    let hessian = am.transpose() * am + (rd.transpose() * &rd) * c;
    let g = oracle::dense_normal_solve(am, &rd, c, u)?;
    let misfit = c * (&rd * &g).norm_squared() + (u - am * &g).norm_squared();
    Ok((hessian, g, misfit))
}

/// Log of the marginal likelihood of `u` given `(sigma, m, C)` after
/// integrating out `g` under the Gaussian prior on `C^(1/2) R g`, by dense
/// linear algebra. Size-guarded.
pub fn dense_log_marginal(a: &LinearOperator, r: &RegularizerMatrix, c: f64, sigma: f64, u: &DVector<f64>) -> Result<f64> {
    let (n, p) = (a.nrows(), a.ncols());
    if p > oracle::DENSE_LIMIT || n > oracle::DENSE_LIMIT {
        return Err(Error::SizeGuard {
            limit: oracle::DENSE_LIMIT,
            got: n.max(p),
        });
    }
    let (hessian, _, misfit) = dense_pieces(a, r, c, u)?;
    let rd = r.to_dense();
    let log_det_prior = oracle::dense_log_abs_det(&((rd.transpose() * &rd) * c))?;
    let log_det_h = oracle::dense_log_abs_det(&hessian)?;
    let s2 = sigma * sigma;
    Ok(-0.5 * n as f64 * (2.0 * std::f64::consts::PI * s2).ln() + 0.5 * log_det_prior
        - misfit / (2.0 * s2)
        - 0.5 * log_det_h)
}

/// Closed form and tensor-grid quadrature of
/// `I = int exp(-C|Rg|^2 / 2 sigma^2 - |u - A g|^2 / 2 sigma^2) dg`
/// for `p <= 2`. The closed form is
/// `exp(-misfit(g_min) / 2 sigma^2) det((A'A + C R'R) / (2 pi sigma^2))^(-1/2)`.
///
/// The quadrature grid is laid along the principal axes of the integrand
/// and spans 10 standard deviations each way; the integrand itself is
/// evaluated directly from `A`, `R` and `u`.
pub fn quadrature_marginal_oracle(
    a: &LinearOperator,
    r: &RegularizerMatrix,
    c: f64,
    sigma: f64,
    u: &DVector<f64>,
) -> Result<(f64, f64)> {
    let p = a.ncols();
    if p > 2 {
        return Err(Error::SizeGuard { limit: 2, got: p });
    }
    if !(c > 0.0 && sigma > 0.0) {
        return Err(Error::InvalidArgument("C and sigma must be positive".into()));
    }
    let (hessian, g_min, misfit) = dense_pieces(a, r, c, u)?;
    let s2 = sigma * sigma;
    let scaled = &hessian / (2.0 * std::f64::consts::PI * s2);
    let closed = (-misfit / (2.0 * s2)).exp() / oracle::dense_det(&scaled)?.sqrt();

    let am = a.matrix();
    let rd = r.to_dense();
    let log_integrand = |g: &DVector<f64>| -(c * (&rd * g).norm_squared() + (u - am * g).norm_squared()) / (2.0 * s2);
    // Principal axes of the integrand: eigenvectors of the Hessian.
    let eig = SymmetricEigen::new(hessian / s2);
    let stds: Vec<f64> = eig.eigenvalues.iter().map(|&l| 1.0 / l.sqrt()).collect();
    let half_width = 10.0;
    let points = if p == 1 { 2001 } else { 601 };
    let h = 2.0 * half_width / (points - 1) as f64;
    let weight = |k: usize| if k == 0 || k == points - 1 { 0.5 } else { 1.0 };
    let coord = |k: usize| -half_width + k as f64 * h;
    // Peak value factored out so the sum is well scaled.
    let peak = log_integrand(&g_min);
    let mut sum = 0.0;
    let offsets: Vec<Vec<usize>> = if p == 1 {
        (0..points).map(|k| vec![k]).collect()
    } else {
        (0..points).flat_map(|i| (0..points).map(move |j| vec![i, j])).collect()
    };
    for idx in offsets {
        let mut g = g_min.clone();
        let mut w = 1.0;
        for (axis, &k) in idx.iter().enumerate() {
            g += eig.eigenvectors.column(axis) * (coord(k) * stds[axis]);
            w *= weight(k);
        }
        sum += w * (log_integrand(&g) - peak).exp();
    }
    let jacobian: f64 = stds.iter().map(|s| s * h).product();
    Ok((closed, peak.exp() * sum * jacobian))
}
