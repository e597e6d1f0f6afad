use nalgebra::DVector;

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: DVector<f64>,
    pub iterations: usize,
    /// True relative residual `|b - M x| / |b|` at exit.
    pub relative_residual: f64,
}

/// Conjugate gradients for a symmetric positive definite operator given
/// only through its action `apply`.
///
/// Convergence is declared on the true residual: whenever the recursively
/// updated residual drops below `tol`, the residual is recomputed from
/// scratch and the iteration restarts from it if it has drifted.
pub fn conjugate_gradient<F>(apply: F, rhs: &DVector<f64>, tol: f64, max_iter: usize) -> Result<CgOutcome>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let b_norm = rhs.norm();
    let mut x = DVector::zeros(rhs.len());
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let target = tol * b_norm;
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();

    for it in 1..=max_iter {
        let mp = apply(&p);
        let pmp = p.dot(&mp);
        if !(pmp > 0.0) {
            // Operator is numerically singular along p; report what we have.
            let res = (rhs - apply(&x)).norm();
            return Err(Error::NotConverged {
                iterations: it,
                residual: res / b_norm,
            });
        }
        let alpha = rr / pmp;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &mp, 1.0);
        let rr_new = r.norm_squared();

        if rr_new.sqrt() <= target {
            r = rhs - apply(&x);
            let true_res = r.norm();
            if true_res <= target {
                return Ok(CgOutcome {
                    solution: x,
                    iterations: it,
                    relative_residual: true_res / b_norm,
                });
            }
            rr = r.norm_squared();
            p.copy_from(&r);
            continue;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        p.axpy(1.0, &r, beta);
    }
    let exact = (rhs - apply(&x)).norm();
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: exact / b_norm,
    })
}
