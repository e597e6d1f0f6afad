//! Dense reference evaluations for testing the matrix-free paths.
//!
//! Everything here is evaluated in double-double arithmetic with plain
//! Gaussian elimination, independent of the SVD and iterative solvers used
//! in production. Inputs are size-guarded so these paths cannot run at
//! production scale.

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use twofloat::TwoFloat;

use crate::{Error, Result};

/// Size limit for the determinant and influence-matrix oracles.
pub const DENSE_LIMIT: usize = 64;
/// Size limit for the dense normal-equation solve.
pub const SOLVE_LIMIT: usize = 256;

fn guard(limit: usize, dims: &[usize]) -> Result<()> {
    let got = dims.iter().copied().max().unwrap_or(0);
    if got > limit {
        return Err(Error::SizeGuard { limit, got });
    }
    Ok(())
}

pub(crate) trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn of(x: f64) -> Self;
    fn approx(self) -> f64;
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn approx(self) -> f64 {
        self
    }
}

impl Scalar for TwoFloat {
    fn of(x: f64) -> Self {
        TwoFloat::from(x)
    }
    fn approx(self) -> f64 {
        self.hi() + self.lo()
    }
}

/// Row-major dense matrix over an oracle scalar.
#[derive(Clone, Debug)]
pub(crate) struct Dense<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub(crate) fn from_na(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(T::of(m[(i, j)]));
            }
        }
        Self { rows, cols, data }
    }

    pub(crate) fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).approx())
    }

    fn identity(n: usize) -> Self {
        let mut m = Self {
            rows: n,
            cols: n,
            data: vec![T::of(0.0); n * n],
        };
        for i in 0..n {
            m.data[i * n + i] = T::of(1.0);
        }
        m
    }

    fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut data = Vec::with_capacity(self.rows * other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut s = T::of(0.0);
                for k in 0..self.cols {
                    s = s + self.get(i, k) * other.get(k, j);
                }
                data.push(s);
            }
        }
        Self {
            rows: self.rows,
            cols: other.cols,
            data,
        }
    }

    fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    fn add(&self, other: &Self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    fn sub(&self, other: &Self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    fn add_diag(&self, s: T) -> Self {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m.data[i * self.cols + i] = m.data[i * self.cols + i] + s;
        }
        m
    }

    /// LU with partial pivoting; returns (lu, perm, sign) or `None` when a
    /// pivot is exactly zero.
    fn lu(&self) -> Option<(Self, Vec<usize>, f64)> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut piv = k;
            for r in k + 1..n {
                if a.get(r, k).approx().abs() > a.get(piv, k).approx().abs() {
                    piv = r;
                }
            }
            if a.get(piv, k).approx() == 0.0 {
                return None;
            }
            if piv != k {
                for c in 0..n {
                    a.data.swap(k * n + c, piv * n + c);
                }
                perm.swap(k, piv);
                sign = -sign;
            }
            let d = a.get(k, k);
            for r in k + 1..n {
                let l = a.get(r, k) / d;
                a.data[r * n + k] = l;
                for c in k + 1..n {
                    a.data[r * n + c] = a.data[r * n + c] - l * a.get(k, c);
                }
            }
        }
        Some((a, perm, sign))
    }

    fn det(&self) -> T {
        match self.lu() {
            None => T::of(0.0),
            Some((lu, _, sign)) => {
                let mut d = T::of(sign);
                for i in 0..self.rows {
                    d = d * lu.get(i, i);
                }
                d
            }
        }
    }

    /// Natural log of |det| as a sum of log-pivots (no overflow).
    fn log_abs_det(&self) -> f64 {
        match self.lu() {
            None => f64::NEG_INFINITY,
            Some((lu, _, _)) => (0..self.rows).map(|i| lu.get(i, i).approx().abs().ln()).sum(),
        }
    }

    fn solve(&self, rhs: &Self) -> Option<Self> {
        let n = self.rows;
        let (lu, perm, _) = self.lu()?;
        let mut out = Self {
            rows: n,
            cols: rhs.cols,
            data: vec![T::of(0.0); n * rhs.cols],
        };
        for j in 0..rhs.cols {
            let mut x: Vec<T> = perm.iter().map(|&p| rhs.get(p, j)).collect();
            for i in 0..n {
                for k in 0..i {
                    x[i] = x[i] - lu.get(i, k) * x[k];
                }
            }
            for i in (0..n).rev() {
                for k in i + 1..n {
                    x[i] = x[i] - lu.get(i, k) * x[k];
                }
                x[i] = x[i] / lu.get(i, i);
            }
            for i in 0..n {
                out.data[i * rhs.cols + j] = x[i];
            }
        }
        Some(out)
    }

    fn inverse(&self) -> Option<Self> {
        self.solve(&Self::identity(self.rows))
    }
}

type DD = Dense<TwoFloat>;

fn singular() -> Error {
    Error::InvalidArgument("dense oracle hit an exactly singular matrix".into())
}

/// The three determinants of the whitened-operator lemma:
/// `det(B'B/C + I)^-1`, `det(I - B'B (B'B + C I)^-1)` and
/// `det(I - B (B'B + C I)^-1 B')`, each evaluated directly.
pub fn dense_det_oracle(b: &DMatrix<f64>, c: f64) -> Result<(f64, f64, f64)> {
    guard(DENSE_LIMIT, &[b.nrows(), b.ncols()])?;
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {c}")));
    }
    let bm = DD::from_na(b);
    let bt = bm.transpose();
    let gram = bt.matmul(&bm);
    let cc = TwoFloat::from(c);
    let p = bm.cols;
    let n = bm.rows;

    let d1 = TwoFloat::from(1.0) / gram.scale(TwoFloat::from(1.0) / cc).add_diag(TwoFloat::from(1.0)).det();
    let shifted_inv = gram.add_diag(cc).inverse().ok_or_else(singular)?;
    let d2 = DD::identity(p).sub(&gram.matmul(&shifted_inv)).det();
    let d3 = DD::identity(n).sub(&bm.matmul(&shifted_inv).matmul(&bt)).det();
    Ok((d1.approx(), d2.approx(), d3.approx()))
}

/// `-1/2 log det(B'B/C + I)` from a dense LU.
pub fn dense_log_det_whitened(b: &DMatrix<f64>, c: f64) -> Result<f64> {
    guard(DENSE_LIMIT, &[b.nrows(), b.ncols()])?;
    let bm = DD::from_na(b);
    let gram = bm.transpose().matmul(&bm);
    let m = gram.scale(TwoFloat::from(1.0 / c)).add_diag(TwoFloat::from(1.0));
    Ok(-0.5 * m.log_abs_det())
}

/// `I - B B#` with `B# = (B'B + C I)^-1 B'`.
pub fn dense_influence_complement(b: &DMatrix<f64>, c: f64) -> Result<DMatrix<f64>> {
    guard(DENSE_LIMIT, &[b.nrows(), b.ncols()])?;
    let bm = DD::from_na(b);
    let bt = bm.transpose();
    let pinv = bt.matmul(&bm).add_diag(TwoFloat::from(c)).solve(&bt).ok_or_else(singular)?;
    Ok(DD::identity(bm.rows).sub(&bm.matmul(&pinv)).to_na())
}

/// Dense solution of `(A'A + C R'R) g = A'u`.
pub fn dense_normal_solve(a: &DMatrix<f64>, r: &DMatrix<f64>, c: f64, u: &DVector<f64>) -> Result<DVector<f64>> {
    guard(SOLVE_LIMIT, &[a.nrows(), a.ncols()])?;
    let am = Dense::<f64>::from_na(a);
    let rm = Dense::<f64>::from_na(r);
    let at = am.transpose();
    let lhs = at.matmul(&am).add(&rm.transpose().matmul(&rm).scale(c));
    let rhs = at.matmul(&Dense::from_na(&DMatrix::from_column_slice(u.len(), 1, u.as_slice())));
    let x = lhs.solve(&rhs).ok_or_else(singular)?;
    Ok(DVector::from_iterator(x.rows, x.data.iter().copied()))
}

/// Dense determinant in double-double precision.
pub fn dense_det(m: &DMatrix<f64>) -> Result<f64> {
    guard(DENSE_LIMIT, &[m.nrows(), m.ncols()])?;
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension("determinant of a non-square matrix".into()));
    }
    Ok(DD::from_na(m).det().approx())
}

/// Dense `log|det|` in double-double precision.
pub fn dense_log_abs_det(m: &DMatrix<f64>) -> Result<f64> {
    guard(DENSE_LIMIT, &[m.nrows(), m.ncols()])?;
    Ok(DD::from_na(m).log_abs_det())
}

/// Dense solve `M x = b` in double-double precision.
pub fn dense_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    guard(DENSE_LIMIT, &[m.nrows(), m.ncols()])?;
    let rhs = DD::from_na(&DMatrix::from_column_slice(b.len(), 1, b.as_slice()));
    let x = DD::from_na(m).solve(&rhs).ok_or_else(singular)?;
    Ok(DVector::from_iterator(x.rows, x.data.iter().map(|v| v.approx())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_operator_gives_unit_determinants() {
        let (d1, d2, d3) = dense_det_oracle(&DMatrix::zeros(3, 4), 0.7).unwrap();
        assert_eq!((d1, d2, d3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn scalar_case() {
        let (d1, d2, d3) = dense_det_oracle(&DMatrix::from_element(1, 1, 1.0), 1.0).unwrap();
        for d in [d1, d2, d3] {
            assert!((d - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn size_guard_rejects_large_inputs() {
        let err = dense_det_oracle(&DMatrix::zeros(2, 65), 1.0).unwrap_err();
        assert!(matches!(err, Error::SizeGuard { limit: 64, got: 65 }));
    }

    #[test]
    fn determinant_and_solve() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        assert!((dense_det(&m).unwrap() - 5.0).abs() < 1e-15);
        let x = dense_solve(&m, &DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }
}
