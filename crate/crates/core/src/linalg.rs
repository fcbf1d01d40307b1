//! Small dense, banded, and compressed-sparse-row containers.
//!
//! These back the direct-solve oracles and the coarse-level solves; the
//! production operator path is matrix-free and never materialises a matrix.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::num;

#[derive(Debug, Clone, PartialEq)]
pub enum LinalgError {
    NotPositiveDefinite { row: usize, pivot: f64 },
    DimensionMismatch { expected: usize, got: usize },
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinalgError::NotPositiveDefinite { row, pivot } => {
                write!(f, "matrix not positive definite at row {row} (pivot {pivot:e})")
            }
            LinalgError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn norm2(a: &[f64]) -> f64 {
    num::sqrt(dot(a, a))
}

/// Row-major dense square matrix.
#[derive(Clone, Debug)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(0.0);
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            out[i] = dot(&self.data[i * self.n..(i + 1) * self.n], x);
        }
        out
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        let mut m = 0.0;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let d = num::abs(self.at(i, j) - self.at(j, i));
                if d > m {
                    m = d;
                }
            }
        }
        m
    }
}

/// Symmetric positive definite matrix stored as a lower band.
///
/// `data[i * (bw + 1) + (i - j)]` holds entry `(i, j)` for `i - bw <= j <= i`.
#[derive(Clone, Debug)]
pub struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedSpd { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Accumulate into the lower triangle; entries with `j > i` are ignored
    /// (the caller scatters the full symmetric stencil).
    #[inline]
    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        if j <= i {
            debug_assert!(i - j <= self.bw);
            self.data[i * (self.bw + 1) + (i - j)] += v;
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (i - j)]
    }

    /// In-place banded Cholesky: `A = L L^T` with `L` in the same band.
    pub fn cholesky(mut self) -> Result<BandedCholesky, LinalgError> {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = self.at(i, j);
                let kmin = j.saturating_sub(bw).max(lo);
                for k in kmin..j {
                    s -= self.at(i, k) * self.at(j, k);
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(LinalgError::NotPositiveDefinite { row: i, pivot: s });
                    }
                    self.data[i * (bw + 1)] = num::sqrt(s);
                } else {
                    let d = self.at(j, j);
                    self.data[i * (bw + 1) + (i - j)] = s / d;
                }
            }
        }
        Ok(BandedCholesky { n: self.n, bw, data: self.data })
    }
}

/// Factorised form of [`BandedSpd`]; solves by forward/back substitution.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedCholesky {
    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (i - j)]
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if b.len() != self.n {
            return Err(LinalgError::DimensionMismatch { expected: self.n, got: b.len() });
        }
        let mut y = b.to_vec();
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut s = y[i];
            for j in lo..i {
                s -= self.l(i, j) * y[j];
            }
            y[i] = s / self.l(i, i);
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.bw).min(self.n - 1);
            let mut s = y[i];
            for j in (i + 1)..=hi {
                s -= self.l(j, i) * y[j];
            }
            y[i] = s / self.l(i, i);
        }
        Ok(y)
    }
}

/// Compressed sparse row matrix, possibly rectangular.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from triplets; duplicate entries are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &mut [(usize, usize, f64)]) -> Self {
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last = None;
        for &(r, c, v) in triplets.iter() {
            debug_assert!(r < rows && c < cols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] = indices.len();
                last = Some((r, c));
            }
        }
        // rows with no entries inherit the running offset
        for r in 0..rows {
            if indptr[r + 1] < indptr[r] {
                indptr[r + 1] = indptr[r];
            }
        }
        CsrMatrix { rows, cols, indptr, indices, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.cols {
            return Err(LinalgError::DimensionMismatch { expected: self.cols, got: x.len() });
        }
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            let mut s = 0.0;
            for (&c, &v) in idx.iter().zip(val) {
                s += v * x[c];
            }
            out[r] = s;
        }
        Ok(out)
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.rows {
            return Err(LinalgError::DimensionMismatch { expected: self.rows, got: x.len() });
        }
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                out[c] += v * x[r];
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        assert_eq!(self.rows, self.cols, "to_dense expects a square matrix");
        let mut d = DenseMatrix::zeros(self.rows);
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                d.add(r, c, v);
            }
        }
        d
    }

    pub fn to_dense_rect(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                d[r][c] += v;
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banded_cholesky_solves_small_spd_system() {
        // tridiagonal [2 -1; -1 2 -1; -1 2]
        let mut a = BandedSpd::zeros(3, 1);
        for i in 0..3 {
            a.add_lower(i, i, 2.0);
        }
        a.add_lower(1, 0, -1.0);
        a.add_lower(2, 1, -1.0);
        let f = a.cholesky().unwrap();
        let x = f.solve(&[1.0, 0.0, 0.0]).unwrap();
        // inverse first column: [3/4, 1/2, 1/4]
        assert!(num::abs(x[0] - 0.75) < 1e-14);
        assert!(num::abs(x[1] - 0.5) < 1e-14);
        assert!(num::abs(x[2] - 0.25) < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = BandedSpd::zeros(2, 1);
        a.add_lower(0, 0, 1.0);
        a.add_lower(1, 1, -1.0);
        assert!(matches!(a.cholesky(), Err(LinalgError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn csr_transpose_is_adjoint() {
        let mut t = vec![(0usize, 1usize, 2.0), (1, 0, -1.0), (2, 1, 3.0), (2, 1, 1.0)];
        let m = CsrMatrix::from_triplets(3, 2, &mut t);
        assert_eq!(m.nnz(), 3); // duplicates merged
        let x = [1.0, 2.0];
        let y = [3.0, 4.0, 5.0];
        let mx = m.matvec(&x).unwrap();
        let mty = m.matvec_transpose(&y).unwrap();
        let lhs = dot(&mx, &y);
        let rhs = dot(&x, &mty);
        assert!(num::abs(lhs - rhs) < 1e-14);
    }
}
