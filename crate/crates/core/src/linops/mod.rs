//! Regularized linear algebra: whitening by a sparse regularizer,
//! matrix-free Tikhonov solves, truncated spectra and the spectral
//! log-determinant.

mod cg;
pub mod oracle;
mod sparse;

use nalgebra::{DMatrix, DVector};

pub use cg::{conjugate_gradient, CgOutcome};
pub use oracle::dense_det_oracle;
pub use sparse::RegularizerMatrix;

use crate::{Error, Result};

/// Default relative truncation threshold for singular values.
pub const DEFAULT_REL_THRESHOLD: f64 = 1e-10;

/// Dense forward operator `A` (n measurements by p unknowns).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    entries: DMatrix<f64>,
}

impl LinearOperator {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::Dimension("operator must have at least one row and column".into()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("operator has non-finite entries".into()));
        }
        Ok(Self { entries })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }
}

/// `B = A R^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedOperator {
    matrix: DMatrix<f64>,
}

impl WhitenedOperator {
    /// Wraps an already-whitened matrix (used by tests and by callers that
    /// work with `B` directly).
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Nonzero singular values above a relative threshold, descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    pub singvals: Vec<f64>,
    pub rel_threshold: f64,
}

impl SpectralSummary {
    pub fn rank(&self) -> usize {
        self.singvals.len()
    }

    pub fn empty(rel_threshold: f64) -> Self {
        Self {
            singvals: Vec::new(),
            rel_threshold,
        }
    }
}

/// Truncated SVD of `B` keeping left singular vectors (n x r).
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub spectrum: SpectralSummary,
    pub left: DMatrix<f64>,
}

impl TruncatedSvd {
    /// Orthogonal projection of `u` onto the range of `B`.
    pub fn project(&self, u: &DVector<f64>) -> DVector<f64> {
        let coeffs = self.left.tr_mul(u);
        &self.left * coeffs
    }
}

/// Settings for the iterative solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    /// Iteration cap; `None` means ten times the system dimension.
    pub max_iter: Option<usize>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

impl SolverSettings {
    fn cap(&self, dim: usize) -> usize {
        self.max_iter.unwrap_or(10 * dim).max(1)
    }
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {value}")))
    }
}

/// Computes `B = A R^-1` through the factorization of `R`, one sparse
/// transposed solve per row of `A` (`R' b_i = a_i`).
pub fn whiten_operator(a: &LinearOperator, r: &RegularizerMatrix) -> Result<WhitenedOperator> {
    let (n, p) = (a.nrows(), a.ncols());
    if r.dim() != p {
        return Err(Error::Dimension(format!(
            "operator has {p} columns but regularizer is {0}x{0}",
            r.dim()
        )));
    }
    // Columns of A' are rows of A; solve in place on the transpose.
    let mut bt = a.matrix().transpose();
    for j in 0..n {
        r.solve_transpose_slice(bt.column_mut(j).as_mut_slice());
    }
    Ok(WhitenedOperator { matrix: bt.transpose() })
}

/// Minimizer of `|A g - u|^2 + C |R g|^2` by conjugate gradients on the
/// normal equations `(A'A + C R'R) g = A'u`. The operator is applied as
/// `A'(A g) + C R'(R g)`; neither `A'A` nor `R'R` is formed.
pub fn solve_gmin(
    a: &LinearOperator,
    r: &RegularizerMatrix,
    c: f64,
    u: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<DVector<f64>> {
    check_positive("C", c)?;
    check_positive("tol", settings.tol)?;
    if r.dim() != a.ncols() || u.len() != a.nrows() {
        return Err(Error::Dimension("solve_gmin: incompatible A, R, u".into()));
    }
    let am = a.matrix();
    let rhs = am.tr_mul(u);
    let apply = |g: &DVector<f64>| {
        let mut out = am.tr_mul(&(am * g));
        out.axpy(c, &r.apply_transpose(&r.apply(g)), 1.0);
        out
    };
    Ok(conjugate_gradient(apply, &rhs, settings.tol, settings.cap(a.ncols()))?.solution)
}

/// Solves `(B'B + C I) x = B'u` by matrix-free conjugate gradients.
///
/// This is the normal system of `|B h - u|^2 + C |h|^2`; `g = R^-1 x`
/// recovers the Tikhonov minimizer in the original unknowns.
pub fn solve_whitened(
    b: &WhitenedOperator,
    c: f64,
    u: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<CgOutcome> {
    check_positive("C", c)?;
    check_positive("tol", settings.tol)?;
    if u.len() != b.nrows() {
        return Err(Error::Dimension("solve_whitened: data length differs from operator rows".into()));
    }
    let bm = b.matrix();
    let rhs = bm.tr_mul(u);
    let apply = |x: &DVector<f64>| {
        let mut out = bm.tr_mul(&(bm * x));
        out.axpy(c, x, 1.0);
        out
    };
    conjugate_gradient(apply, &rhs, settings.tol, settings.cap(b.ncols()))
}

fn check_threshold(rel_threshold: f64) -> Result<()> {
    if rel_threshold > 0.0 && rel_threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("rel_threshold must lie in (0, 1), got {rel_threshold}")))
    }
}

fn truncate(mut values: Vec<f64>, rel_threshold: f64) -> Vec<f64> {
    values.sort_by(|a, b| b.total_cmp(a));
    let top = values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Vec::new();
    }
    values.retain(|&s| s > rel_threshold * top);
    values
}

/// Singular values of `B` above `rel_threshold * s_1`, descending.
pub fn truncated_singular_values(b: &WhitenedOperator, rel_threshold: f64) -> Result<SpectralSummary> {
    check_threshold(rel_threshold)?;
    let m = b.matrix();
    // Work on the tall orientation; the bidiagonalization is cheaper there.
    let values = if m.nrows() < m.ncols() {
        m.transpose().singular_values()
    } else {
        m.singular_values()
    };
    Ok(SpectralSummary {
        singvals: truncate(values.as_slice().to_vec(), rel_threshold),
        rel_threshold,
    })
}

/// Truncated SVD keeping the left singular vectors of the retained values.
pub fn truncated_svd(b: &WhitenedOperator, rel_threshold: f64) -> Result<TruncatedSvd> {
    check_threshold(rel_threshold)?;
    let m = b.matrix();
    let n = m.nrows();
    // Left vectors of B are right vectors of B'.
    let (values, left) = if n < m.ncols() {
        let svd = m.transpose().svd(false, true);
        let vt = svd.v_t.expect("requested V'");
        (svd.singular_values, vt.transpose())
    } else {
        let svd = m.clone().svd(true, false);
        (svd.singular_values, svd.u.expect("requested U"))
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let top = order.first().map(|&i| values[i]).unwrap_or(0.0);
    let kept: Vec<usize> = if top > 0.0 {
        order.into_iter().filter(|&i| values[i] > rel_threshold * top).collect()
    } else {
        Vec::new()
    };
    let mut u = DMatrix::zeros(n, kept.len());
    for (k, &i) in kept.iter().enumerate() {
        u.set_column(k, &left.column(i));
    }
    Ok(TruncatedSvd {
        spectrum: SpectralSummary {
            singvals: kept.iter().map(|&i| values[i]).collect(),
            rel_threshold,
        },
        left: u,
    })
}

/// `-1/2 sum_j log(1 + s_j^2 / C)`, i.e. `-1/2 log det(B'B/C + I)`.
pub fn log_det_whitened(spec: &SpectralSummary, c: f64) -> f64 {
    -0.5 * spec.singvals.iter().map(|s| (s * s / c).ln_1p()).sum::<f64>()
}

/// Quantities of the influence complement `I - B B#`, `B# = (B'B + C I)^-1 B'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Influence {
    /// `u'(I - B B#) u`
    pub quad_form: f64,
    /// `tr(I - B B#)`
    pub trace: f64,
    /// `|(I - B B#) u|^2`
    pub residual_norm_sq: f64,
}

/// Trace of `I - B B#` from the spectrum: `n - sum s^2 / (s^2 + C)`.
pub fn influence_trace(n: usize, spec: &SpectralSummary, c: f64) -> f64 {
    n as f64 - spec.singvals.iter().map(|s| s * s / (s * s + c)).sum::<f64>()
}

pub fn influence_residual(
    b: &WhitenedOperator,
    spec: &SpectralSummary,
    c: f64,
    u: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<Influence> {
    check_positive("C", c)?;
    let trace = influence_trace(b.nrows(), spec, c);
    if u.iter().all(|&v| v == 0.0) {
        return Ok(Influence {
            quad_form: 0.0,
            trace,
            residual_norm_sq: 0.0,
        });
    }
    let x = solve_whitened(b, c, u, settings)?.solution;
    let resid = u - b.matrix() * x;
    Ok(Influence {
        quad_form: u.dot(&resid),
        trace,
        residual_norm_sq: resid.norm_squared(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(rows: usize, cols: usize, data: &[f64]) -> LinearOperator {
        LinearOperator::new(DMatrix::from_row_slice(rows, cols, data)).unwrap()
    }

    #[test]
    fn whitening_identity_and_scaling() {
        let eye = op(3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let b = whiten_operator(&eye, &RegularizerMatrix::identity(3).unwrap()).unwrap();
        assert_eq!(b.matrix(), eye.matrix());

        let a = op(2, 3, &[1., -2., 3., 4., 5., -6.]);
        let b = whiten_operator(&a, &RegularizerMatrix::scaled_identity(3, 2.0).unwrap()).unwrap();
        assert!((b.matrix() - a.matrix() / 2.0).abs().max() < 1e-15);
    }

    #[test]
    fn whitening_rejects_mismatched_dimensions() {
        let a = op(1, 2, &[1., 1.]);
        let err = whiten_operator(&a, &RegularizerMatrix::identity(3).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn gmin_identity_case() {
        let a = op(2, 2, &[1., 0., 0., 1.]);
        let r = RegularizerMatrix::identity(2).unwrap();
        let g = solve_gmin(&a, &r, 1.0, &DVector::from_vec(vec![2.0, 0.0]), &Default::default()).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-14 && g[1].abs() < 1e-14);
        let g0 = solve_gmin(&a, &r, 1.0, &DVector::zeros(2), &Default::default()).unwrap();
        assert_eq!(g0, DVector::zeros(2));
    }

    #[test]
    fn gmin_rejects_bad_inputs() {
        let a = op(1, 1, &[1.]);
        let r = RegularizerMatrix::identity(1).unwrap();
        let u = DVector::from_element(1, 1.0);
        assert!(solve_gmin(&a, &r, 0.0, &u, &Default::default()).is_err());
        let bad_tol = SolverSettings { tol: 0.0, max_iter: None };
        assert!(solve_gmin(&a, &r, 1.0, &u, &bad_tol).is_err());
    }

    #[test]
    fn gmin_non_convergence_carries_diagnostics() {
        let a = LinearOperator::new(DMatrix::from_fn(3, 30, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0)).unwrap();
        let r = RegularizerMatrix::identity(30).unwrap();
        let u = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        let settings = SolverSettings { tol: 1e-14, max_iter: Some(1) };
        match solve_gmin(&a, &r, 1e-6, &u, &settings) {
            Err(Error::NotConverged { iterations: 1, residual }) => assert!(residual > 1e-14),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_values_of_padded_diagonal() {
        let b = WhitenedOperator::from_matrix(DMatrix::from_row_slice(2, 4, &[3., 0., 0., 0., 0., 1., 0., 0.]));
        let spec = truncated_singular_values(&b, 1e-10).unwrap();
        assert_eq!(spec.rank(), 2);
        assert!((spec.singvals[0] - 3.0).abs() < 1e-14 && (spec.singvals[1] - 1.0).abs() < 1e-14);

        let zero = WhitenedOperator::from_matrix(DMatrix::zeros(3, 5));
        assert_eq!(truncated_singular_values(&zero, 1e-10).unwrap().rank(), 0);
        assert!(truncated_singular_values(&zero, 1.0).is_err());
    }

    #[test]
    fn log_det_trivial_values() {
        assert_eq!(log_det_whitened(&SpectralSummary::empty(1e-10), 2.0), 0.0);
        let one = SpectralSummary {
            singvals: vec![1.0],
            rel_threshold: 1e-10,
        };
        assert!((log_det_whitened(&one, 1.0) + 0.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn influence_trivial_values() {
        let b = WhitenedOperator::from_matrix(DMatrix::zeros(3, 4));
        let spec = truncated_singular_values(&b, 1e-10).unwrap();
        let u = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let inf = influence_residual(&b, &spec, 0.3, &u, &Default::default()).unwrap();
        assert_eq!(inf.quad_form, 9.0);
        assert_eq!(inf.trace, 3.0);
        assert_eq!(inf.residual_norm_sq, 9.0);

        let b = WhitenedOperator::from_matrix(DMatrix::from_row_slice(2, 2, &[1., 0., 0., 2.]));
        let spec = truncated_singular_values(&b, 1e-10).unwrap();
        let inf = influence_residual(&b, &spec, 1.0, &DVector::zeros(2), &Default::default()).unwrap();
        assert_eq!(inf.quad_form, 0.0);
        assert_eq!(inf.residual_norm_sq, 0.0);
        assert!((inf.trace - (2.0 - 0.5 - 0.8)).abs() < 1e-15);
    }

    #[test]
    fn projection_onto_range() {
        let b = WhitenedOperator::from_matrix(DMatrix::from_row_slice(3, 2, &[1., 0., 0., 1., 0., 0.]));
        let svd = truncated_svd(&b, 1e-10).unwrap();
        let pu = svd.project(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert!((pu - DVector::from_vec(vec![1.0, 2.0, 0.0])).norm() < 1e-14);
    }
}
