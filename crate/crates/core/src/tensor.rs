//! Dense row-major `f64` arrays.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0:?} has a zero-sized dimension")]
    EmptyDimension(Vec<usize>),
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },
}

/// A dense tensor with row-major storage.
///
/// Tensors built through [`Tensor::new`] are validated: the data length must
/// equal the product of the shape and every value must be finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::EmptyDimension(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TensorError::NonFinite { index, value });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor without the finiteness scan. Length is still checked in
    /// debug builds.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::from_raw(shape, vec![0.0; n])
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_raw(shape, vec![value; n])
    }

    /// Builds a matrix from nested rows. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
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

    /// Number of rows when viewed as a matrix (first dimension).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all dimensions after the first.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::from_raw(shape, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// `out[n×m] = a[n×k] · b[m×k]ᵀ`, the layout used by dense layers whose
/// weights are stored one neuron per row.
pub(crate) fn matmul_bt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (j, o) in orow.iter_mut().enumerate() {
            *o = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// Dot product with four independent accumulators so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out[n×k] = a[n×m] · b[m×k]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let orow = &mut out[i * k..(i + 1) * k];
        for j in 0..m {
            let aij = a[i * m + j];
            if aij == 0.0 {
                continue;
            }
            let br = &b[j * k..(j + 1) * k];
            for (o, bv) in orow.iter_mut().zip(br) {
                *o += aij * bv;
            }
        }
    }
    out
}

/// `out[m×k] = a[n×m]ᵀ · b[n×k]`.
pub(crate) fn matmul_at(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for r in 0..n {
        let ar = &a[r * m..(r + 1) * m];
        let br = &b[r * k..(r + 1) * k];
        for (j, &aj) in ar.iter().enumerate() {
            if aj == 0.0 {
                continue;
            }
            let orow = &mut out[j * k..(j + 1) * k];
            for (o, bv) in orow.iter_mut().zip(br) {
                *o += aj * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch_and_nan() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(TensorError::LengthMismatch { .. })
        ));
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(TensorError::NonFinite { index: 1, .. })
        ));
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn matmul_variants_agree() {
        // a: 2×3, b: 3×2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let ab = matmul(&a, &b, 2, 3, 2);
        assert_eq!(ab, vec![58.0, 64.0, 139.0, 154.0]);
        // bᵀ stored row-wise is 2×3
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        assert_eq!(matmul_bt(&a, &bt, 2, 3, 2), ab);
        // aᵀ·a (3×3)
        let ata = matmul_at(&a, &a, 2, 3, 3);
        assert_eq!(ata[0], 1.0 + 16.0);
        assert_eq!(ata[4], 4.0 + 25.0);
    }

    #[test]
    fn select_rows_keeps_trailing_shape() {
        let t = Tensor::new(vec![3, 1, 2], (0..6).map(f64::from).collect()).unwrap();
        let s = t.select_rows(&[2, 0]);
        assert_eq!(s.shape(), &[2, 1, 2]);
        assert_eq!(s.data(), &[4.0, 5.0, 0.0, 1.0]);
    }
}
