//! Dense tensors with first-index-fastest storage and mode-k unfoldings.
//!
//! Indices are 0-based throughout the library. Entry `(i_1, ..., i_d)` is
//! stored at offset `sum_l i_l * prod_{m<l} n_m`, and the mode-k unfolding
//! places it at row `i_k`, column [`column_index`], which enumerates the
//! remaining indices first-index-fastest as well. Text formats convert to the
//! 1-based convention at the boundary.

use crate::error::{arg_err, Error, Result};
use crate::linalg::Matrix;

/// Dimensions `(n_1, ..., n_d)` of a tensor, each at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return arg_err("shape must have at least one mode");
        }
        if dims.iter().any(|&n| n == 0) {
            return arg_err(format!("shape {dims:?} has a zero dimension"));
        }
        dims.iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::Resource(format!("shape {dims:?} overflows addressable size")))?;
        Ok(Self(dims))
    }

    /// `n` repeated `d` times.
    pub fn cube(n: usize, d: usize) -> Result<Self> {
        Self::new(vec![n; d])
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn dim(&self, k: usize) -> usize {
        self.0[k]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Product of all dimensions except mode `k`.
    pub fn numel_except(&self, k: usize) -> usize {
        self.0.iter().enumerate().filter(|&(l, _)| l != k).map(|(_, &n)| n).product()
    }

    /// Storage offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> Result<usize> {
        self.check_index(idx)?;
        Ok(self.offset_unchecked(idx))
    }

    #[inline]
    pub(crate) fn offset_unchecked(&self, idx: &[usize]) -> usize {
        let mut off = 0;
        let mut stride = 1;
        for (&i, &n) in idx.iter().zip(&self.0) {
            off += i * stride;
            stride *= n;
        }
        off
    }

    /// Inverse of [`Shape::offset`].
    pub fn multi_index(&self, mut offset: usize) -> Vec<usize> {
        self.0
            .iter()
            .map(|&n| {
                let i = offset % n;
                offset /= n;
                i
            })
            .collect()
    }

    pub fn check_index(&self, idx: &[usize]) -> Result<()> {
        if idx.len() != self.order() {
            return arg_err(format!("index has {} entries, tensor order is {}", idx.len(), self.order()));
        }
        if let Some((l, (&i, &n))) = idx.iter().zip(&self.0).enumerate().find(|(_, (&i, &n))| i >= n) {
            return arg_err(format!("index {i} out of range for mode {l} of size {n}"));
        }
        Ok(())
    }
}

/// Column of the mode-`k` unfolding that holds the entry at `idx`.
///
/// `idx` is a full 0-based multi-index; its `k`-th component is ignored. The
/// result is `pi_k(...) - 1` for the usual 1-based enumeration
/// `1 + sum_{l != k} (i_l - 1) prod_{m < l, m != k} n_m`.
pub fn column_index(k: usize, idx: &[usize], shape: &Shape) -> Result<usize> {
    if k >= shape.order() {
        return arg_err(format!("mode {k} out of range for order {}", shape.order()));
    }
    shape.check_index(idx)?;
    let mut col = 0;
    let mut stride = 1;
    for (l, (&i, &n)) in idx.iter().zip(shape.dims()).enumerate() {
        if l == k {
            continue;
        }
        col += i * stride;
        stride *= n;
    }
    Ok(col)
}

/// Dense real tensor in first-index-fastest storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return arg_err(format!(
                "tensor buffer has {} entries, shape {:?} needs {}",
                data.len(),
                shape.dims(),
                shape.numel()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Self { shape, data: vec![0.0; n] }
    }

    /// Order-3 tensor from raw dims; used for TR cores.
    pub fn order3(p: usize, q: usize, s: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Shape::new(vec![p, q, s])?, data)
    }

    #[inline]
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.shape.order()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.shape.offset(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], v: f64) -> Result<()> {
        let off = self.shape.offset(idx)?;
        self.data[off] = v;
        Ok(())
    }

    /// Entry of an order-3 tensor without bounds checks beyond the slice's own.
    #[inline]
    pub fn at3(&self, a: usize, i: usize, b: usize) -> f64 {
        let d = self.shape.dims();
        self.data[a + d[0] * (i + d[1] * b)]
    }

    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return arg_err(format!(
                "inner product of shapes {:?} and {:?}",
                self.dims(),
                other.dims()
            ));
        }
        Ok(dot(&self.data, &other.data))
    }

    pub fn fro_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> DenseTensor {
        DenseTensor { shape: self.shape.clone(), data: self.data.iter().map(|v| alpha * v).collect() }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return arg_err(format!("axpy on shapes {:?} and {:?}", self.dims(), other.dims()));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// Mode-`k` unfolding, an `n_k x prod_{i != k} n_i` matrix.
    pub fn unfold(&self, k: usize) -> Result<Matrix> {
        let d = self.order();
        if k >= d {
            return arg_err(format!("mode {k} out of range for order {d}"));
        }
        let rows = self.shape.dim(k);
        let cols = self.shape.numel_except(k);
        if k == 0 {
            return Matrix::from_col_major(rows, cols, self.data.clone());
        }
        let mut out = vec![0.0; rows * cols];
        let dims = self.shape.dims();
        // Elements with i_k fixed and earlier modes varying are contiguous in
        // both layouts: offsets step by `inner` in the tensor, by 1 in columns.
        let inner: usize = dims[..k].iter().product();
        let outer: usize = dims[k + 1..].iter().product();
        for o in 0..outer {
            for ik in 0..rows {
                let src = inner * (ik + rows * o);
                for j in 0..inner {
                    let col = j + inner * o;
                    out[ik + rows * col] = self.data[src + j];
                }
            }
        }
        Matrix::from_col_major(rows, cols, out)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &Matrix, k: usize, shape: &Shape) -> Result<DenseTensor> {
        let d = shape.order();
        if k >= d {
            return arg_err(format!("mode {k} out of range for order {d}"));
        }
        let rows = shape.dim(k);
        let cols = shape.numel_except(k);
        if m.rows() != rows || m.cols() != cols {
            return arg_err(format!(
                "cannot fold a {}x{} matrix along mode {k} into shape {:?}",
                m.rows(),
                m.cols(),
                shape.dims()
            ));
        }
        let src = m.as_slice();
        if k == 0 {
            return DenseTensor::new(shape.clone(), src.to_vec());
        }
        let dims = shape.dims();
        let inner: usize = dims[..k].iter().product();
        let outer: usize = dims[k + 1..].iter().product();
        let mut data = vec![0.0; shape.numel()];
        for o in 0..outer {
            for ik in 0..rows {
                let dst = inner * (ik + rows * o);
                for j in 0..inner {
                    data[dst + j] = src[ik + rows * (j + inner * o)];
                }
            }
        }
        DenseTensor::new(shape.clone(), data)
    }

    fn require_order3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match *self.dims() {
            [p, q, s] => Ok((p, q, s)),
            _ => arg_err(format!("{what} needs an order-3 tensor, got order {}", self.order())),
        }
    }

    /// `U x_1 A` for an order-3 tensor: every lateral slice `U(:, j, :)` is
    /// left-multiplied by `a`.
    pub fn mode1_product(&self, a: &Matrix) -> Result<DenseTensor> {
        let (p, q, s) = self.require_order3("mode-1 product")?;
        if a.cols() != p {
            return arg_err(format!("mode-1 product: matrix has {} columns, mode size is {p}", a.cols()));
        }
        let r = a.rows();
        let mut out = vec![0.0; r * q * s];
        crate::linalg::gemm(r, p, q * s, a.as_slice(), &self.data, &mut out);
        DenseTensor::order3(r, q, s, out)
    }

    /// `U x_3 B` for an order-3 tensor: every lateral slice is
    /// right-multiplied by `b^T`.
    pub fn mode3_product(&self, b: &Matrix) -> Result<DenseTensor> {
        let (p, q, s) = self.require_order3("mode-3 product")?;
        if b.cols() != s {
            return arg_err(format!("mode-3 product: matrix has {} columns, mode size is {s}", b.cols()));
        }
        let r = b.rows();
        let bt = b.transpose();
        let mut out = vec![0.0; p * q * r];
        crate::linalg::gemm(p * q, s, r, &self.data, bt.as_slice(), &mut out);
        DenseTensor::order3(p, q, r, out)
    }

    /// `U x_1 A x_3 B`.
    pub fn mode13_product(&self, a: &Matrix, b: &Matrix) -> Result<DenseTensor> {
        self.mode1_product(a)?.mode3_product(b)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
