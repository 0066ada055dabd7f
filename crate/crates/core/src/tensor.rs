//! Dense row-major tensors of `f64`.

use crate::error::{Error, Result};

/// A dense tensor stored in row-major order.
///
/// Every entry is finite; constructors reject NaN and infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.contains(&0) || expected != data.len() {
            return Err(Error::ShapeData { shape, expected, found: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension in {shape:?}");
        Self { shape, data: vec![0.0; len] }
    }

    /// Builds a 2-D tensor from a list of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    /// Builds a matrix entry-by-entry.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        let t = Self { shape: vec![rows, cols], data };
        debug_assert!(t.data.iter().all(|v| v.is_finite()));
        t
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a 2-D tensor (panics on other ranks).
    pub fn rows(&self) -> usize {
        assert_eq!(self.rank(), 2, "rows() on rank-{} tensor", self.rank());
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.rank(), 2, "cols() on rank-{} tensor", self.rank());
        self.shape[1]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    /// Column `c` of a matrix, copied out.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows()).map(|r| self.get(r, c)).collect()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Number of entries that are exactly nonzero.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> Tensor {
        Tensor::from_fn(self.cols(), self.rows(), |r, c| self.get(c, r))
    }

    /// Same shape, values mapped elementwise.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn hcat(parts: &[Tensor]) -> Result<Tensor> {
        let rows = parts.first().ok_or_else(|| Error::Shape("empty hcat".into()))?.rows();
        if parts.iter().any(|p| p.rows() != rows) {
            return Err(Error::Shape("hcat row mismatch".into()));
        }
        let cols: usize = parts.iter().map(Tensor::cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Tensor { shape: vec![rows, cols], data })
    }

    /// Concatenates matrices with equal column counts along rows.
    pub fn vcat(parts: &[Tensor]) -> Result<Tensor> {
        let cols = parts.first().ok_or_else(|| Error::Shape("empty vcat".into()))?.cols();
        if parts.iter().any(|p| p.cols() != cols) {
            return Err(Error::Shape("vcat column mismatch".into()));
        }
        let rows = parts.iter().map(Tensor::rows).sum();
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(Tensor { shape: vec![rows, cols], data })
    }

    /// Columns `start..end` of a matrix.
    pub fn column_range(&self, start: usize, end: usize) -> Tensor {
        Tensor::from_fn(self.rows(), end - start, |r, c| self.get(r, start + c))
    }

    /// Rows `start..end` of a matrix.
    pub fn row_range(&self, start: usize, end: usize) -> Tensor {
        let cols = self.cols();
        Tensor { shape: vec![end - start, cols], data: self.data[start * cols..end * cols].to_vec() }
    }
}

/// Largest elementwise relative error `|a-b| / max(|b|, 1)`.
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}
