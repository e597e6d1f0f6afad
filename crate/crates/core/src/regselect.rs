//! Deterministic choices of the regularization constant and the
//! geometry searches built on them.
//!
//! For a fixed `m`, with `B = A_m R^-1` and `B# = (B'B + C I)^-1 B'`:
//!
//! * GCV minimizes `|(I - B B#) u|^2 / tr(I - B B#)^2` over a grid;
//! * the discrepancy principle (CLS) solves `|u - B B# u|^2 = n sigma^2`;
//! * ML minimizes `u'(I - B B#) u / det(I - B B#)^(1/n)` and estimates
//!   `sigma^2 = u'(I - B B#) u / n`.
//!
//! Searches over `m` use multi-start Nelder-Mead with projection onto the
//! admissible box.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::linops::{
    influence_residual, solve_whitened, truncated_singular_values, truncated_svd, whiten_operator, SolverSettings,
    SpectralSummary, WhitenedOperator, DEFAULT_REL_THRESHOLD,
};
use crate::models::ForwardMap;
use crate::posterior::ml_ratio;
use crate::{Error, Execution, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gcv,
    Cls,
    Ml,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub c_star: f64,
    pub criterion_value: f64,
    pub method: Method,
    /// The C-grid searched, or the bisection bracket for CLS.
    pub grid: Vec<f64>,
    /// Noise estimate, ML only.
    pub sigma_est: Option<f64>,
}

/// `n` points log-spaced over `[lo, hi]`, ascending.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && n >= 1) || (n == 1 && hi != lo) {
        return Err(Error::InvalidArgument(format!("bad log grid [{lo}, {hi}] with {n} points")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    let mut grid: Vec<f64> = (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect();
    // Ends exact, not rounded through powf.
    grid[0] = lo;
    grid[n - 1] = hi;
    Ok(grid)
}

/// 100 log-spaced values over `[1e-8, 1e2]`.
pub fn default_c_grid() -> Vec<f64> {
    log_grid(1e-8, 1e2, 100).expect("static grid")
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("C grid is empty".into()));
    }
    if grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("C grid must be positive and strictly ascending".into()));
    }
    Ok(())
}

/// Grid argmin; ties go to the larger C.
fn argmin_prefer_large(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if v.total_cmp(&values[best]).is_le() {
            best = i;
        }
    }
    best
}

pub fn gcv_score(
    b: &WhitenedOperator,
    spec: &SpectralSummary,
    c: f64,
    u: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<f64> {
    let inf = influence_residual(b, spec, c, u, settings)?;
    Ok(inf.residual_norm_sq / (inf.trace * inf.trace))
}

pub fn gcv_select(
    b: &WhitenedOperator,
    spec: &SpectralSummary,
    u: &DVector<f64>,
    grid: &[f64],
    settings: &SolverSettings,
) -> Result<SelectionResult> {
    check_grid(grid)?;
    let scores = grid
        .iter()
        .map(|&c| gcv_score(b, spec, c, u, settings))
        .collect::<Result<Vec<_>>>()?;
    let i = argmin_prefer_large(&scores);
    Ok(SelectionResult {
        c_star: grid[i],
        criterion_value: scores[i],
        method: Method::Gcv,
        grid: grid.to_vec(),
        sigma_est: None,
    })
}

/// Discrepancy principle by bisection in `log C` on `bracket`.
///
/// The residual `|u - B B# u|^2` is checked to be nondecreasing on a
/// 32-point log grid across the bracket before bisecting.
pub fn cls_select(
    b: &WhitenedOperator,
    spec: &SpectralSummary,
    u: &DVector<f64>,
    sigma: f64,
    bracket: (f64, f64),
    settings: &SolverSettings,
) -> Result<SelectionResult> {
    let (lo, hi) = bracket;
    if !(sigma > 0.0 && lo > 0.0 && hi > lo) {
        return Err(Error::InvalidArgument("cls_select needs sigma > 0 and 0 < C_lo < C_hi".into()));
    }
    let n = u.len() as f64;
    let target = n * sigma * sigma;
    let u2 = u.norm_squared();
    if target > u2 {
        return Err(Error::NoRoot(format!(
            "n sigma^2 = {target:e} exceeds |u|^2 = {u2:e}; sigma is inconsistent with the data"
        )));
    }
    let resid = |c: f64| influence_residual(b, spec, c, u, settings).map(|i| i.residual_norm_sq);
    let probe = log_grid(lo, hi, 32)?
        .into_iter()
        .map(resid)
        .collect::<Result<Vec<_>>>()?;
    let slack = 1e-10 * u2;
    if probe.windows(2).any(|w| w[1] < w[0] - slack) {
        return Err(Error::NoRoot("residual is not monotone on the bracket".into()));
    }
    let (r_lo, r_hi) = (probe[0], probe[probe.len() - 1]);
    if target < r_lo || target > r_hi {
        return Err(Error::NoRoot(format!(
            "target n sigma^2 = {target:e} outside residual range [{r_lo:e}, {r_hi:e}] on the bracket"
        )));
    }
    let tol = 1e-8 * u2;
    let (mut a, mut z) = (lo.ln(), hi.ln());
    let mut c = lo;
    let mut value = r_lo;
    for _ in 0..200 {
        let mid = 0.5 * (a + z);
        c = mid.exp();
        value = resid(c)?;
        if (value - target).abs() <= tol {
            break;
        }
        if value < target {
            a = mid;
        } else {
            z = mid;
        }
        if z - a < 1e-15 {
            break;
        }
    }
    Ok(SelectionResult {
        c_star: c,
        criterion_value: value - target,
        method: Method::Cls,
        grid: vec![lo, hi],
        sigma_est: Some(sigma),
    })
}

pub fn ml_select(
    b: &WhitenedOperator,
    spec: &SpectralSummary,
    u: &DVector<f64>,
    grid: &[f64],
    settings: &SolverSettings,
) -> Result<SelectionResult> {
    check_grid(grid)?;
    if u.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroData);
    }
    let ratios = grid
        .iter()
        .map(|&c| ml_ratio(b, spec, c, u, settings))
        .collect::<Result<Vec<_>>>()?;
    let i = argmin_prefer_large(&ratios);
    let quad = influence_residual(b, spec, grid[i], u, settings)?.quad_form;
    Ok(SelectionResult {
        c_star: grid[i],
        criterion_value: ratios[i],
        method: Method::Ml,
        grid: grid.to_vec(),
        sigma_est: Some((quad / u.len() as f64).sqrt()),
    })
}

/// C-selection inputs for the pointwise objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionGrids {
    pub c_grid: Vec<f64>,
    pub cls_bracket: (f64, f64),
    /// Noise level for CLS.
    pub sigma: Option<f64>,
    pub rel_threshold: f64,
    pub solver: SolverSettings,
}

impl Default for SelectionGrids {
    fn default() -> Self {
        Self {
            c_grid: default_c_grid(),
            cls_bracket: (1e-8, 1e2),
            sigma: None,
            rel_threshold: DEFAULT_REL_THRESHOLD,
            solver: SolverSettings::default(),
        }
    }
}

/// Tikhonov functional `|A g - u|^2 + C |R g|^2` at its minimizer, from
/// whitened coordinates (`R g = x`).
fn tikhonov_at_min(b: &WhitenedOperator, c: f64, u: &DVector<f64>, solver: &SolverSettings) -> Result<f64> {
    let x = solve_whitened(b, c, u, solver)?.solution;
    Ok((u - b.matrix() * &x).norm_squared() + c * x.norm_squared())
}

fn whitened_at<M: ForwardMap + ?Sized>(model: &M, m: &[f64]) -> Result<WhitenedOperator> {
    whiten_operator(&model.assemble(m)?, model.regularizer())
}

/// `f(m) = |A_m g_min - u|^2 + C(m) |R g_min|^2` with `C(m)` chosen per `m`
/// by GCV or CLS. Inadmissible `m` and CLS without a root give `+inf`.
pub fn pointwise_objective<M: ForwardMap + ?Sized>(
    m: &[f64],
    method: Method,
    model: &M,
    u: &DVector<f64>,
    grids: &SelectionGrids,
) -> Result<f64> {
    if u.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    if !model.is_admissible(m) {
        return Ok(f64::INFINITY);
    }
    let a = model.assemble(m)?;
    let b = whiten_operator(&a, model.regularizer())?;
    let spec = truncated_singular_values(&b, grids.rel_threshold)?;
    let c = match method {
        Method::Gcv => gcv_select(&b, &spec, u, &grids.c_grid, &grids.solver)?.c_star,
        Method::Cls => {
            let sigma = grids
                .sigma
                .ok_or_else(|| Error::InvalidArgument("CLS needs a noise level".into()))?;
            match cls_select(&b, &spec, u, sigma, grids.cls_bracket, &grids.solver) {
                Ok(sel) => sel.c_star,
                Err(Error::NoRoot(_)) => return Ok(f64::INFINITY),
                Err(e) => return Err(e),
            }
        }
        Method::Ml => ml_select(&b, &spec, u, &grids.c_grid, &grids.solver)?.c_star,
    };
    tikhonov_at_min(&b, c, u, &grids.solver)
}

/// Smallest GCV score over the C-grid at `m`; `+inf` if inadmissible.
pub fn global_gcv_objective<M: ForwardMap + ?Sized>(
    m: &[f64],
    model: &M,
    u: &DVector<f64>,
    grids: &SelectionGrids,
) -> Result<f64> {
    if !model.is_admissible(m) {
        return Ok(f64::INFINITY);
    }
    let b = whitened_at(model, m)?;
    let spec = truncated_singular_values(&b, grids.rel_threshold)?;
    Ok(gcv_select(&b, &spec, u, &grids.c_grid, &grids.solver)?.criterion_value)
}

/// `f_C(m) = |A_m g_min - u|^2 + C |R g_min|^2`; `+inf` if inadmissible.
pub fn f_c<M: ForwardMap + ?Sized>(m: &[f64], c: f64, model: &M, u: &DVector<f64>, solver: &SolverSettings) -> Result<f64> {
    if !model.is_admissible(m) {
        return Ok(f64::INFINITY);
    }
    tikhonov_at_min(&whitened_at(model, m)?, c, u, solver)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDiscrepancyResult {
    /// `max_i C_CLS(m_i)`; 0 when no grid point admits a value.
    pub c_bold: f64,
    pub per_m_values: Vec<(Vec<f64>, f64)>,
    pub err: f64,
}

/// Discrepancy distance `|A g_min - pi(u)|` on each C of `grid`, from the
/// truncated SVD `B = U S V'`:
/// `|A g_min - pi(u)|^2 = sum_j (C / (s_j^2 + C))^2 (U'u)_j^2`.
/// Also returns `|u - pi(u)|`.
pub fn discrepancy_profile(b: &WhitenedOperator, u: &DVector<f64>, grid: &[f64], rel_threshold: f64) -> Result<(Vec<f64>, f64)> {
    let svd = truncated_svd(b, rel_threshold)?;
    let coeffs = svd.left.tr_mul(u);
    let off_range = (u - &svd.left * &coeffs).norm();
    let values = grid
        .iter()
        .map(|&c| {
            svd.spectrum
                .singvals
                .iter()
                .zip(coeffs.iter())
                .map(|(s, k)| (c / (s * s + c) * k).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok((values, off_range))
}

/// `C_CLS(m)`: the largest grid C whose discrepancy distance is at most
/// `err`, or 0 when `err < |u - pi(u)|` or no grid value qualifies.
pub fn cls_of_m<M: ForwardMap + ?Sized>(
    model: &M,
    u: &DVector<f64>,
    m: &[f64],
    err: f64,
    grid: &[f64],
    rel_threshold: f64,
) -> Result<f64> {
    check_grid(grid)?;
    if !model.is_admissible(m) {
        return Ok(0.0);
    }
    let b = whitened_at(model, m)?;
    let (dist, off_range) = discrepancy_profile(&b, u, grid, rel_threshold)?;
    let slack = 1e-12 * u.norm();
    if dist.windows(2).any(|w| w[1] < w[0] - slack) {
        return Err(Error::InvalidArgument("discrepancy distance is not monotone in C".into()));
    }
    if err < off_range {
        return Ok(0.0);
    }
    Ok(grid
        .iter()
        .zip(&dist)
        .filter(|(_, d)| **d <= err)
        .map(|(c, _)| *c)
        .last()
        .unwrap_or(0.0))
}

pub fn global_discrepancy<M: ForwardMap + ?Sized>(
    model: &M,
    u: &DVector<f64>,
    err: f64,
    m_grid: &[Vec<f64>],
    c_grid: &[f64],
    rel_threshold: f64,
    execution: Execution,
) -> Result<GlobalDiscrepancyResult> {
    if m_grid.is_empty() {
        return Err(Error::InvalidArgument("m grid is empty".into()));
    }
    check_grid(c_grid)?;
    let per_m_values = execution
        .map(m_grid, |m| cls_of_m(model, u, m, err, c_grid, rel_threshold).map(|c| (m.clone(), c)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let c_bold = per_m_values.iter().map(|(_, c)| *c).fold(0.0, f64::max);
    Ok(GlobalDiscrepancyResult {
        c_bold,
        per_m_values,
        err,
    })
}

/// Tensor grid with `per_axis` nodes per coordinate, including the bounds.
pub fn box_grid(bounds: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            if per_axis == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..per_axis)
                    .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalMinimum {
    pub start: Vec<f64>,
    pub m: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiStartResult {
    pub m_hat: Vec<f64>,
    pub f_value: f64,
    /// Ascending by value.
    pub local_minima: Vec<LocalMinimum>,
    /// Some start used its whole evaluation budget without converging.
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadSettings {
    /// Evaluation budget per start.
    pub budget: usize,
    /// Initial simplex edge as a fraction of each box width.
    pub initial_step: f64,
    /// Stop when the simplex is smaller than this fraction of the box.
    pub x_tol: f64,
    /// Stop when the value spread is below `f_tol * (1 + |f_best|)`.
    pub f_tol: f64,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        Self {
            budget: 400,
            initial_step: 0.05,
            x_tol: 1e-7,
            f_tol: 1e-12,
        }
    }
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Nelder-Mead on a box: every trial point is projected onto the box.
/// Objective errors abort the search.
pub fn nelder_mead<F>(f: F, start: &[f64], bounds: &[(f64, f64)], settings: &NelderMeadSettings) -> Result<LocalMinimum>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let q = start.len();
    if bounds.len() != q || q == 0 {
        return Err(Error::Dimension("start and bounds disagree".into()));
    }
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| -> Result<f64> {
        evals.set(evals.get() + 1);
        let v = f(x)?;
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    };
    let mut x0 = start.to_vec();
    project(&mut x0, bounds);
    let mut simplex = vec![x0.clone()];
    for i in 0..q {
        let (lo, hi) = bounds[i];
        let step = settings.initial_step * (hi - lo);
        let mut v = x0.clone();
        // Step inward if the start sits on the upper bound.
        v[i] = if v[i] + step <= hi { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let mut values = simplex.iter().map(|x| eval(x)).collect::<Result<Vec<_>>>()?;
    let width: f64 = bounds.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    let mut converged = false;

    while evals.get() < settings.budget {
        let mut order: Vec<usize> = (0..=q).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let size = simplex[1..]
            .iter()
            .map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let spread = values[q] - values[0];
        if values[0].is_finite() && size <= settings.x_tol * width && spread <= settings.f_tol * (1.0 + values[0].abs()) {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..q)
            .map(|k| simplex[..q].iter().map(|x| x[k]).sum::<f64>() / q as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[q])
                .map(|(c, w)| c + t * (c - w))
                .collect();
            project(&mut p, bounds);
            p
        };
        let xr = along(1.0);
        let fr = eval(&xr)?;
        if fr < values[0] {
            let xe = along(2.0);
            let fe = eval(&xe)?;
            if fe < fr {
                simplex[q] = xe;
                values[q] = fe;
            } else {
                simplex[q] = xr;
                values[q] = fr;
            }
            continue;
        }
        if fr < values[q - 1] {
            simplex[q] = xr;
            values[q] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[q] {
            let xc = along(0.5);
            let fc = eval(&xc)?;
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc)?;
            (xc, fc)
        };
        if fc < values[q].min(fr) {
            simplex[q] = xc;
            values[q] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        for i in 1..=q {
            let mut p: Vec<f64> = simplex[i]
                .iter()
                .zip(&simplex[0])
                .map(|(x, b)| b + 0.5 * (x - b))
                .collect();
            project(&mut p, bounds);
            values[i] = eval(&p)?;
            simplex[i] = p;
        }
    }
    let best = (0..=q).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Ok(LocalMinimum {
        start: start.to_vec(),
        m: simplex[best].clone(),
        value: values[best],
        evaluations: evals.get(),
        converged,
    })
}

/// Independent Nelder-Mead runs from each start, run in parallel.
pub fn multi_start<F>(
    f: F,
    starts: &[Vec<f64>],
    bounds: &[(f64, f64)],
    settings: &NelderMeadSettings,
    execution: Execution,
) -> Result<MultiStartResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    if starts.is_empty() {
        return Err(Error::InvalidArgument("no starting points".into()));
    }
    let mut local_minima = execution
        .map(starts, |s| nelder_mead(&f, s, bounds, settings))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    local_minima.sort_by(|a, b| a.value.total_cmp(&b.value));
    let best = &local_minima[0];
    Ok(MultiStartResult {
        m_hat: best.m.clone(),
        f_value: best.value,
        budget_exhausted: local_minima.iter().any(|l| !l.converged),
        local_minima,
    })
}

/// Minimizes `f_C` over the model's box by multi-start Nelder-Mead.
pub fn minimize_f_c<M: ForwardMap + ?Sized>(
    model: &M,
    u: &DVector<f64>,
    c_bold: f64,
    starts: &[Vec<f64>],
    bounds: &[(f64, f64)],
    settings: &NelderMeadSettings,
    solver: &SolverSettings,
    execution: Execution,
) -> Result<MultiStartResult> {
    if !(c_bold > 0.0 && c_bold.is_finite()) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {c_bold}")));
    }
    multi_start(|m| f_c(m, c_bold, model, u, solver), starts, bounds, settings, execution)
}
