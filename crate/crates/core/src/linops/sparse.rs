//! Sparse square regularizer `R` with a banded LU factorization.
//!
//! `R` is stored in CSR form for products and factored once, at
//! construction, with partial pivoting inside the band. The factorization
//! serves both `R x = b` and `R' x = b`, and a pivot check on it is the
//! invertibility certificate.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct RegularizerMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    factor: BandLu,
}

impl RegularizerMatrix {
    /// Builds `R` from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets<I>(dim: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if dim == 0 {
            return Err(Error::InvalidArgument("regularizer dimension must be >= 1".into()));
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dim];
        for (i, j, v) in triplets {
            if i >= dim || j >= dim {
                return Err(Error::Dimension(format!(
                    "triplet ({i}, {j}) outside a {dim}x{dim} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite entry at ({i}, {j})")));
            }
            rows[i].push((j, v));
        }

        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for &(j, v) in row.iter() {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(col_idx.len());
        }

        let factor = BandLu::factor(dim, &row_ptr, &col_idx, &values)?;
        Ok(Self {
            dim,
            row_ptr,
            col_idx,
            values,
            factor,
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Result<Self> {
        Self::from_triplets(dim, (0..dim).map(|i| (i, i, scale)))
    }

    /// Sparsifies a dense square matrix (exact zeros are dropped).
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension(format!(
                "regularizer must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let dim = m.nrows();
        let triplets = (0..dim)
            .flat_map(|i| (0..dim).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let v = m[(i, j)];
                (v != 0.0).then_some((i, j, v))
            });
        Self::from_triplets(dim, triplets)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Lower and upper bandwidth of the sparsity pattern.
    pub fn bandwidths(&self) -> (usize, usize) {
        (self.factor.kl, self.factor.ku)
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim);
        DVector::from_fn(self.dim, |i, _| {
            (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(|k| self.values[k] * x[self.col_idx[k]])
                .sum()
        })
    }

    pub fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim);
        let mut out = DVector::zeros(self.dim);
        for i in 0..self.dim {
            let xi = x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.col_idx[k]] += self.values[k] * xi;
            }
        }
        out
    }

    /// Solves `R x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.dim);
        let mut x = b.clone();
        self.factor.solve_in_place(x.as_mut_slice());
        x
    }

    /// Solves `R' x = b`.
    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.dim);
        let mut x = b.clone();
        self.factor.solve_transpose_in_place(x.as_mut_slice());
        x
    }

    pub(crate) fn solve_transpose_slice(&self, x: &mut [f64]) {
        self.factor.solve_transpose_in_place(x);
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.values[k];
            }
        }
        m
    }

    /// Smallest absolute pivot of the LU factorization.
    pub fn min_abs_pivot(&self) -> f64 {
        self.factor.min_abs_pivot
    }
}

/// LU with partial pivoting restricted to the band, LAPACK `gbtrf` layout:
/// row `i` of the working array covers columns `i - kl ..= i + ku + kl`.
#[derive(Debug, Clone)]
struct BandLu {
    dim: usize,
    kl: usize,
    ku: usize,
    width: usize,
    upper: Vec<f64>,
    multipliers: Vec<f64>,
    pivots: Vec<usize>,
    min_abs_pivot: f64,
}

impl BandLu {
    fn factor(dim: usize, row_ptr: &[usize], col_idx: &[usize], values: &[f64]) -> Result<Self> {
        let mut kl = 0;
        let mut ku = 0;
        let mut max_abs = 0.0f64;
        for i in 0..dim {
            for k in row_ptr[i]..row_ptr[i + 1] {
                let j = col_idx[k];
                if values[k] != 0.0 {
                    kl = kl.max(i.saturating_sub(j));
                    ku = ku.max(j.saturating_sub(i));
                    max_abs = max_abs.max(values[k].abs());
                }
            }
        }
        let width = 2 * kl + ku + 1;
        let mut lu = Self {
            dim,
            kl,
            ku,
            width,
            upper: vec![0.0; dim * width],
            multipliers: vec![0.0; dim * kl.max(1)],
            pivots: (0..dim).collect(),
            min_abs_pivot: f64::INFINITY,
        };
        for i in 0..dim {
            for k in row_ptr[i]..row_ptr[i + 1] {
                *lu.at_mut(i, col_idx[k]) = values[k];
            }
        }

        let tiny = f64::EPSILON * max_abs * dim as f64;
        for k in 0..dim {
            let last_row = (k + kl).min(dim - 1);
            let mut piv = k;
            let mut best = lu.at(k, k).abs();
            for r in k + 1..=last_row {
                let v = lu.at(r, k).abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if !(best > tiny) {
                return Err(Error::SingularRegularizer { row: k, pivot: best });
            }
            lu.min_abs_pivot = lu.min_abs_pivot.min(best);
            lu.pivots[k] = piv;
            let last_col = (k + ku + kl).min(dim - 1);
            if piv != k {
                for c in k..=last_col {
                    let a = lu.at(k, c);
                    let b = lu.at(piv, c);
                    *lu.at_mut(k, c) = b;
                    *lu.at_mut(piv, c) = a;
                }
            }
            let d = lu.at(k, k);
            for r in k + 1..=last_row {
                let l = lu.at(r, k) / d;
                lu.multipliers[k * kl + (r - k - 1)] = l;
                *lu.at_mut(r, k) = 0.0;
                if l != 0.0 {
                    for c in k + 1..=last_col {
                        let upd = l * lu.at(k, c);
                        *lu.at_mut(r, c) -= upd;
                    }
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.upper[self.offset(i, j)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let o = self.offset(i, j);
        &mut self.upper[o]
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim;
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            let xk = x[k];
            if xk != 0.0 {
                for r in k + 1..=(k + self.kl).min(n - 1) {
                    x[r] -= self.multipliers[k * self.kl + (r - k - 1)] * xk;
                }
            }
        }
        let span = self.ku + self.kl;
        for k in (0..n).rev() {
            let mut s = x[k];
            for c in k + 1..=(k + span).min(n - 1) {
                s -= self.at(k, c) * x[c];
            }
            x[k] = s / self.at(k, k);
        }
    }

    fn solve_transpose_in_place(&self, x: &mut [f64]) {
        let n = self.dim;
        let span = self.ku + self.kl;
        for k in 0..n {
            let mut s = x[k];
            for c in k.saturating_sub(span)..k {
                s -= self.at(c, k) * x[c];
            }
            x[k] = s / self.at(k, k);
        }
        for k in (0..n).rev() {
            let mut s = 0.0;
            for r in k + 1..=(k + self.kl).min(n - 1) {
                s += self.multipliers[k * self.kl + (r - k - 1)] * x[r];
            }
            x[k] -= s;
            x.swap(k, self.pivots[k]);
        }
    }
}
