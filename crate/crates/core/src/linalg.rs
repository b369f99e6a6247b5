//! Small dense matrix kernels.
//!
//! [`Matrix`] is a plain column-major buffer. Unfoldings, Kronecker blocks and
//! gauge matrices are all stored this way. Factorizations (SVD, inverse) are
//! delegated to `nalgebra`, which shares the column-major layout so the
//! conversion is a straight copy.

use nalgebra::DMatrix;

use crate::error::{arg_err, Result};

/// Relative singular-value threshold used to declare a least-squares system
/// rank deficient.
pub const LSTSQ_RANK_TOL: f64 = 1e-10;

/// Dense real matrix, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i + i * n] = 1.0;
        }
        m
    }

    /// Builds a matrix from a column-major buffer.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return arg_err(format!(
                "matrix buffer has {} entries, expected {rows}x{cols}",
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices; convenient in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let nr = rows.len();
        let nc = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != nc) {
            return arg_err("ragged rows");
        }
        let mut m = Self::zeros(nr, nc);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i + j * self.rows]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i + j * self.rows] = v;
    }

    /// Column stacking; the column-major buffer itself.
    pub fn vec(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t.data[j + i * self.cols] = self.data[i + j * self.rows];
            }
        }
        t
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| alpha * v).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return arg_err(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return arg_err(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(self.rows, self.cols, other.cols, &self.data, &other.data, &mut out.data);
        Ok(out)
    }

    /// `self * other^T`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return arg_err(format!(
                "matmul_t: {}x{} times ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for l in 0..self.cols {
            let a_col = &self.data[l * self.rows..(l + 1) * self.rows];
            for j in 0..other.rows {
                let b = other.data[j + l * other.rows];
                if b == 0.0 {
                    continue;
                }
                let o = &mut out.data[j * self.rows..(j + 1) * self.rows];
                for (oi, ai) in o.iter_mut().zip(a_col) {
                    *oi += ai * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return arg_err(format!(
                "t_matmul: ({}x{})^T times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for j in 0..other.cols {
            let b_col = &other.data[j * other.rows..(j + 1) * other.rows];
            for i in 0..self.cols {
                let a_col = &self.data[i * self.rows..(i + 1) * self.rows];
                out.data[i + j * self.cols] = a_col.iter().zip(b_col).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
        Matrix { rows: m.nrows(), cols: m.ncols(), data: m.as_slice().to_vec() }
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Vec<f64> {
        if self.rows == 0 || self.cols == 0 {
            return Vec::new();
        }
        let mut s: Vec<f64> = self.to_nalgebra().singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Number of singular values above `rel_tol * sigma_max`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let s = self.singular_values();
        match s.first() {
            Some(&smax) if smax > 0.0 => s.iter().filter(|&&v| v > rel_tol * smax).count(),
            _ => 0,
        }
    }

    /// Inverse of a square matrix; fails when the matrix is numerically singular
    /// (smallest singular value below `1e-12` times the largest).
    pub fn inverse(&self) -> Result<Matrix> {
        if self.rows != self.cols {
            return arg_err(format!("cannot invert a {}x{} matrix", self.rows, self.cols));
        }
        let s = self.singular_values();
        let (smax, smin) = (s[0], *s.last().unwrap());
        if !(smin > 1e-12 * smax) {
            return arg_err("matrix is numerically singular");
        }
        match self.to_nalgebra().try_inverse() {
            Some(inv) => Ok(Matrix::from_nalgebra(&inv)),
            None => arg_err("matrix is numerically singular"),
        }
    }
}

/// Column-major `c += a (m x k) * b (k x n)`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for j in 0..n {
        let c_col = &mut c[j * m..(j + 1) * m];
        for l in 0..k {
            let blj = b[l + j * k];
            if blj == 0.0 {
                continue;
            }
            let a_col = &a[l * m..(l + 1) * m];
            for (ci, ai) in c_col.iter_mut().zip(a_col) {
                *ci += ai * blj;
            }
        }
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac, br, bc) = (a.rows, a.cols, b.rows, b.cols);
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for ja in 0..ac {
        for ia in 0..ar {
            let s = a.get(ia, ja);
            if s == 0.0 {
                continue;
            }
            for jb in 0..bc {
                for ib in 0..br {
                    out.set(ia * br + ib, ja * bc + jb, s * b.get(ib, jb));
                }
            }
        }
    }
    out
}

/// Solution of a dense least-squares problem.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub x: Vec<f64>,
    /// Numerical rank of the coefficient matrix.
    pub rank: usize,
    /// Set when `rank < cols`; `x` is then the minimum-norm minimizer.
    pub rank_deficient: bool,
}

/// Minimizes `||a x - b||_2` through a singular value decomposition.
///
/// Singular values below `LSTSQ_RANK_TOL * sigma_max` are truncated, which
/// yields the minimum-norm minimizer when `a` is rank deficient.
pub fn solve_least_squares(a: &Matrix, b: &[f64]) -> Result<LeastSquares> {
    if a.rows < a.cols {
        return arg_err(format!("least squares needs rows >= cols, got {}x{}", a.rows, a.cols));
    }
    if b.len() != a.rows {
        return arg_err(format!("rhs has length {}, expected {}", b.len(), a.rows));
    }
    let n = a.cols;
    if n == 0 {
        return Ok(LeastSquares { x: Vec::new(), rank: 0, rank_deficient: false });
    }
    let svd = a.to_nalgebra().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = LSTSQ_RANK_TOL * smax;

    let mut x = vec![0.0; n];
    let mut rank = 0;
    for (i, &sigma) in svd.singular_values.iter().enumerate() {
        if !(sigma > cutoff) || sigma == 0.0 {
            continue;
        }
        rank += 1;
        let coef = u.column(i).iter().zip(b).map(|(ui, bi)| ui * bi).sum::<f64>() / sigma;
        for (j, xj) in x.iter_mut().enumerate() {
            *xj += coef * v_t[(i, j)];
        }
    }
    Ok(LeastSquares { x, rank, rank_deficient: rank < n })
}
