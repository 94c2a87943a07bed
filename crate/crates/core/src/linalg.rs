//! Dense symmetric matrices and the small amount of linear algebra the
//! rest of the crate needs.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{LwError, Result};

/// General square matrix (used for coordinate transformations).
pub type Matrix = DMatrix<f64>;

/// Real symmetric `N x N` matrix.
///
/// Symmetry is exact: every constructor either checks it bit-for-bit or
/// builds the lower triangle by mirroring the upper one.
#[derive(Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Builds from row-major entries, failing if `entries[i][j] != entries[j][i]`.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(LwError::InvalidInput("matrix dimension must be >= 1".into()));
        }
        if entries.len() != dim * dim {
            return Err(LwError::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        let m = DMatrix::from_row_slice(dim, dim, &entries);
        Self::try_from_matrix(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(LwError::DimensionMismatch {
                    expected: n,
                    found: r.len(),
                });
            }
            entries.extend_from_slice(r);
        }
        Self::new(n, entries)
    }

    /// Wraps a matrix that must already be exactly symmetric.
    pub fn try_from_matrix(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(LwError::InvalidInput(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if m[(i, j)] != m[(j, i)] {
                    return Err(LwError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self(m))
    }

    /// Averages `m` with its transpose.
    pub fn symmetrize(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "symmetrize needs a square matrix");
        Self::from_fn(n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
    }

    /// Evaluates `f(i, j)` for `i <= j` and mirrors.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self(m)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn scalar(value: f64) -> Self {
        Self(DMatrix::from_element(1, 1, value))
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Sets `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.0[(i, j)] = value;
        self.0[(j, i)] = value;
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn row_major(&self) -> Vec<f64> {
        let n = self.dim();
        let mut v = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                v.push(self.0[(i, j)]);
            }
        }
        v
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| self.0[(i, j)]).collect()).collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Lower Cholesky factor, or `None` if the matrix is not positive definite.
    pub fn cholesky(&self) -> Option<DMatrix<f64>> {
        nalgebra::Cholesky::new(self.0.clone()).map(|c| c.l())
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_some()
    }

    pub fn require_positive_definite(&self, what: &str) -> Result<()> {
        if self.is_positive_definite() {
            Ok(())
        } else {
            Err(LwError::NotPositiveDefinite(what.to_string()))
        }
    }

    /// Inverse of a positive definite matrix via Cholesky; falls back to LU
    /// for indefinite but invertible input.
    pub fn inverse(&self) -> Result<Self> {
        if let Some(ch) = nalgebra::Cholesky::new(self.0.clone()) {
            return Ok(Self::symmetrize(&ch.inverse()));
        }
        self.0
            .clone()
            .try_inverse()
            .map(|m| Self::symmetrize(&m))
            .ok_or_else(|| LwError::InvalidInput("matrix is singular".into()))
    }

    /// `log det` of a positive definite matrix.
    pub fn log_det(&self) -> Result<f64> {
        let l = self
            .cholesky()
            .ok_or_else(|| LwError::NotPositiveDefinite("log_det".into()))?;
        Ok(2.0 * (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>())
    }

    /// `T S T^T`.
    pub fn congruence(&self, t: &Matrix) -> Result<Self> {
        if t.nrows() != self.dim() || t.ncols() != self.dim() {
            return Err(LwError::DimensionMismatch {
                expected: self.dim(),
                found: t.nrows(),
            });
        }
        Ok(Self::symmetrize(&(t * &self.0 * t.transpose())))
    }

    /// Leading `p x p` block.
    pub fn leading_block(&self, p: usize) -> Self {
        Self::from_fn(p, |i, j| self.0[(i, j)])
    }

    /// Principal submatrix on the given index set.
    pub fn principal(&self, idx: &[usize]) -> Self {
        Self::from_fn(idx.len(), |a, b| self.0[(idx[a], idx[b])])
    }

    /// `diag(self, other)`.
    pub fn block_diag(&self, other: &SymMatrix) -> Self {
        let (p, q) = (self.dim(), other.dim());
        Self::from_fn(p + q, |i, j| {
            if i < p && j < p {
                self.get(i, j)
            } else if i >= p && j >= p {
                other.get(i - p, j - p)
            } else {
                0.0
            }
        })
    }

    /// Number of independent entries, `N(N+1)/2`.
    pub fn packed_len(dim: usize) -> usize {
        dim * (dim + 1) / 2
    }

    /// Upper-triangular entries in row order.
    pub fn pack(&self) -> Vec<f64> {
        let n = self.dim();
        let mut v = Vec::with_capacity(Self::packed_len(n));
        for i in 0..n {
            for j in i..n {
                v.push(self.0[(i, j)]);
            }
        }
        v
    }

    pub fn unpack(dim: usize, packed: &[f64]) -> Self {
        assert_eq!(packed.len(), Self::packed_len(dim));
        let mut k = 0;
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, packed[k]);
                k += 1;
            }
        }
        m
    }

    /// Index pairs `(i, j)`, `i <= j`, in packing order.
    pub fn packed_indices(dim: usize) -> Vec<(usize, usize)> {
        let mut v = Vec::with_capacity(Self::packed_len(dim));
        for i in 0..dim {
            for j in i..dim {
                v.push((i, j));
            }
        }
        v
    }

    /// The symmetric direction `E^(ij)` with `E_kl = d_ik d_jl + d_il d_jk`.
    pub fn unit_direction(dim: usize, i: usize, j: usize) -> Self {
        let mut e = Self::zeros(dim);
        if i == j {
            e.set(i, i, 2.0);
        } else {
            e.set(i, j, 1.0);
        }
        e
    }

    /// `x^T S x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut s = 0.0;
        for i in 0..n {
            let xi = x[i];
            let mut row = 0.0;
            for j in 0..n {
                row += self.0[(i, j)] * x[j];
            }
            s += xi * row;
        }
        s
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(&self.0 * s)
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymMatrix{:?}", self.rows())
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        self.scale(rhs)
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SymMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Totally symmetric rank-4 tensor stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensor4 {
    dim: usize,
    data: Vec<f64>,
}

impl SymTensor4 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim.pow(4)],
        }
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.dim + j) * self.dim + k) * self.dim + l
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.offset(i, j, k, l)]
    }

    /// Writes `value` to every permutation of `(i, j, k, l)`.
    pub fn set_all_perms(&mut self, i: usize, j: usize, k: usize, l: usize, value: f64) {
        let idx = [i, j, k, l];
        for a in 0..4 {
            for b in 0..4 {
                if b == a {
                    continue;
                }
                for c in 0..4 {
                    if c == a || c == b {
                        continue;
                    }
                    let d = 6 - a - b - c;
                    let o = self.offset(idx[a], idx[b], idx[c], idx[d]);
                    self.data[o] = value;
                }
            }
        }
    }

    /// Sorted index quadruples `i <= j <= k <= l`.
    pub fn unique_indices(dim: usize) -> Vec<[usize; 4]> {
        let mut v = Vec::new();
        for i in 0..dim {
            for j in i..dim {
                for k in j..dim {
                    for l in k..dim {
                        v.push([i, j, k, l]);
                    }
                }
            }
        }
        v
    }
}

/// Small dense solve used by Newton and least squares.
pub fn solve_dense(a: &DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let rhs = nalgebra::DVector::from_column_slice(b);
    a.clone().full_piv_lu().solve(&rhs).map(|x| x.iter().copied().collect())
}

/// Least-squares solution of `a x ~ b` via SVD.
pub fn least_squares(a: &DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let rhs = nalgebra::DVector::from_column_slice(b);
    let svd = a.clone().svd(true, true);
    svd.solve(&rhs, 1e-14).ok().map(|x| x.iter().copied().collect())
}

/// Plane rotation by `theta`.
pub fn rotation2(theta: f64) -> Matrix {
    let (s, c) = theta.sin_cos();
    Matrix::from_row_slice(2, 2, &[c, -s, s, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_asymmetric_input() {
        let err = SymMatrix::new(2, vec![1.0, 2.0, 2.0000001, 1.0]).unwrap_err();
        assert!(matches!(err, LwError::NotSymmetric { row: 0, col: 1 }));
    }

    #[test]
    fn rejects_zero_dim_and_bad_length() {
        assert!(SymMatrix::new(0, vec![]).is_err());
        assert!(matches!(
            SymMatrix::new(2, vec![1.0; 3]),
            Err(LwError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pack_unpack_and_directions() {
        let m = SymMatrix::new(3, vec![1., 2., 3., 2., 4., 5., 3., 5., 6.]).unwrap();
        assert_eq!(m.pack(), vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(SymMatrix::unpack(3, &m.pack()), m);
        let e = SymMatrix::unit_direction(2, 0, 0);
        assert_eq!(e.rows(), vec![vec![2.0, 0.0], vec![0.0, 0.0]]);
        let e = SymMatrix::unit_direction(2, 0, 1);
        assert_eq!(e.rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn log_det_and_inverse() {
        let a = SymMatrix::diag(&[2.0, 4.0]);
        assert!((a.log_det().unwrap() - 8f64.ln()).abs() < 1e-15);
        assert!((&a.inverse().unwrap() - &SymMatrix::diag(&[0.5, 0.25])).max_abs() < 1e-16);
        assert!(SymMatrix::diag(&[1.0, -1.0]).log_det().is_err());
    }

    #[test]
    fn tensor_permutations() {
        let mut t = SymTensor4::zeros(3);
        t.set_all_perms(0, 1, 1, 2, 7.0);
        assert_eq!(t.get(1, 2, 0, 1), 7.0);
        assert_eq!(t.get(2, 1, 1, 0), 7.0);
        assert_eq!(SymTensor4::unique_indices(2).len(), 5);
        assert_eq!(SymTensor4::unique_indices(3).len(), 15);
    }
}
