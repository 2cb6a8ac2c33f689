//! Dense row-major `f64` tensors.
//!
//! Every operation in the crate works on rank-1 or rank-2 values; a rank-1
//! tensor of length `n` behaves as a `1 × n` row wherever a matrix is
//! expected. Entries are always finite: constructors reject NaN and infinity.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{len} values cannot fill shape {shape:?}")]
    ValueCount { shape: Vec<usize>, len: usize },
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects a tensor of rank at most 2, got shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("{op}: range {start}..{end} out of bounds for extent {extent}")]
    OutOfRange {
        op: &'static str,
        start: usize,
        end: usize,
        extent: usize,
    },
    #[error("concat needs at least one input")]
    EmptyConcat,
    #[error("concat axis must be 0 or 1, got {0}")]
    Axis(usize),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("clamp epsilon {0} outside (0, 0.5)")]
    ClampEpsilon(f64),
    #[error("unknown tape node {0}")]
    UnknownNode(usize),
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::ValueCount {
                shape,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                context: "tensor construction",
            });
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], data)
    }

    /// A `1 × n` row.
    pub fn row(data: Vec<f64>) -> Result<Self, TensorError> {
        let n = data.len();
        Self::new(vec![1, n], data)
    }

    pub fn scalar(value: f64) -> Result<Self, TensorError> {
        Self::new(vec![1, 1], vec![value])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self, TensorError> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    /// Skips the finiteness scan; callers own the invariant.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// `(rows, cols)` of the matrix view.
    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            [] => Ok((1, 1)),
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            _ => Err(TensorError::Rank {
                op: "matrix view",
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().map_or(0, |d| d.0)
    }

    pub fn cols(&self) -> usize {
        self.dims2().map_or(0, |d| d.1)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Whether every entry equals the other's bit for bit.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Same matrix with its row order reversed.
    pub fn reversed_rows(&self) -> Tensor {
        let (r, c) = self.dims2().unwrap_or((1, self.numel()));
        let mut data = Vec::with_capacity(self.numel());
        for i in (0..r).rev() {
            data.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Tensor::from_parts(self.shape.clone(), data)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(self.row_slice(r));
        }
        Tensor::from_parts(vec![rows.len(), c], data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor, TensorError> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Tensor::from_parts(
            vec![m, n],
            matmul_kernel(&self.data, &other.data, m, k, n),
        ))
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// `out[i, j] = Σ_k a[i, k] · b[k, j]`, accumulated over `k` in increasing
/// order for every `(i, j)` so a row computed alone matches the same row of
/// a larger product bit for bit.
pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_bad_counts() {
        assert!(matches!(
            Tensor::row(vec![1.0, f64::NAN]),
            Err(TensorError::NonFinite { .. })
        ));
        assert!(matches!(
            Tensor::matrix(2, 2, vec![1.0; 3]),
            Err(TensorError::ValueCount { .. })
        ));
    }

    #[test]
    fn identity_matmul() {
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::matrix(2, 2, vec![0.3, -1.5, 2.0, 7.25]).unwrap();
        assert!(eye.matmul(&m).unwrap().bitwise_eq(&m));
    }

    #[test]
    fn small_product() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_dimension_error() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(
            a.matmul(&b),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn single_row_product_matches_full_product_bitwise() {
        let a = Tensor::from_rows(&[vec![0.1, 0.7, -0.3], vec![1.1, -2.2, 0.9]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.5, 1.5], vec![-0.25, 0.125], vec![3.0, -1.0]]).unwrap();
        let full = a.matmul(&b).unwrap();
        let second = a.select_rows(&[1]).matmul(&b).unwrap();
        assert!(second.data().iter().zip(full.row_slice(1)).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
