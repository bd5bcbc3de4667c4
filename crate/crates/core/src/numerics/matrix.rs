//! Dense row-major f64 matrices.
//!
//! All training and evaluation math runs in 64-bit floats; the matrices
//! here are deliberately plain so that identity-level tests (1e-12
//! tolerances) hold without framework-specific rounding surprises.

use serde::{Deserialize, Serialize};

/// A dense `rows x cols` matrix of f64 values in row-major order.
///
/// Row vectors are represented as `1 x n` matrices. Shape mismatches in
/// arithmetic are programming errors and panic with both shapes named.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data. Panics if the length does not
    /// equal `rows * cols` or any entry is non-finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match shape {}x{}",
            data.len(),
            rows,
            cols
        );
        assert!(
            data.iter().all(|v| v.is_finite()),
            "matrix {}x{} contains non-finite entries",
            rows,
            cols
        );
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix::from_vec(rows, cols, data)
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    /// A `1 x n` row vector.
    pub fn row_vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Matrix::from_vec(1, n, data)
    }

    pub fn scalar(v: f64) -> Self {
        Matrix::from_vec(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The single entry of a `1 x 1` matrix.
    pub fn item(&self) -> f64 {
        assert!(
            self.rows == 1 && self.cols == 1,
            "item() on a {}x{} matrix",
            self.rows,
            self.cols
        );
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product. Panics on inner-dimension mismatch, naming both shapes.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        // i-k-j order keeps both the rhs row and the output row contiguous.
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = rhs.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a_ik * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    fn assert_same_shape(&self, rhs: &Matrix, op: &str) {
        assert_eq!(
            (self.rows, self.cols),
            (rhs.rows, rhs.cols),
            "{op} shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            rhs.rows,
            rhs.cols
        );
    }

    pub fn add(&self, rhs: &Matrix) -> Matrix {
        self.assert_same_shape(rhs, "add");
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(a, b)| a + b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        self.assert_same_shape(rhs, "sub");
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(a, b)| a - b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add_assign(&mut self, rhs: &Matrix) {
        self.assert_same_shape(rhs, "add_assign");
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }

    pub fn add_scaled_assign(&mut self, rhs: &Matrix, c: f64) {
        self.assert_same_shape(rhs, "add_scaled_assign");
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b * c;
        }
    }

    /// Adds a `1 x cols` bias row to every row.
    pub fn add_row_broadcast(&self, bias: &Matrix) -> Matrix {
        assert_eq!(
            (bias.rows, bias.cols),
            (1, self.cols),
            "row-broadcast shape mismatch: {}x{} vs bias {}x{}",
            self.rows,
            self.cols,
            bias.rows,
            bias.cols
        );
        let mut out = self.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(bias.data.iter()) {
                *o += b;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Largest absolute entry-wise difference; shapes must match.
    pub fn max_abs_diff(&self, rhs: &Matrix) -> f64 {
        self.assert_same_shape(rhs, "max_abs_diff");
        self.data
            .iter()
            .zip(rhs.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Dot product of two equal-length slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Row-vector affine map `x * w + b` for an `m x n` input.
///
/// Panics with both shapes named when the dimensions do not conform.
pub fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    x.matmul(w).add_row_broadcast(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let x = Matrix::row_vector(vec![1.0, 2.0]);
        let id = Matrix::identity(2);
        assert_eq!(x.matmul(&id), x);
    }

    #[test]
    fn affine_identity_and_zero() {
        let id = Matrix::identity(2);
        let b0 = Matrix::row_vector(vec![0.0, 0.0]);
        let x = Matrix::row_vector(vec![1.0, 2.0]);
        assert_eq!(affine(&x, &id, &b0), x);

        let w = Matrix::from_vec(2, 2, vec![3.0, -1.0, 0.5, 2.0]);
        let b = Matrix::row_vector(vec![7.0, -4.0]);
        let zero = Matrix::row_vector(vec![0.0, 0.0]);
        assert_eq!(affine(&zero, &w, &b), b);
    }

    #[test]
    fn affine_hand_case() {
        // [1,-1] * diag(2,3) + [1,1] = [3,-2]
        let w = Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 3.0]);
        let b = Matrix::row_vector(vec![1.0, 1.0]);
        let x = Matrix::row_vector(vec![1.0, -1.0]);
        let y = affine(&x, &w, &b);
        assert_eq!(y.data(), &[3.0, -2.0]);
    }

    #[test]
    #[should_panic(expected = "matmul shape mismatch: 1x2 * 3x3")]
    fn matmul_mismatch_names_shapes() {
        let x = Matrix::row_vector(vec![1.0, 2.0]);
        let w = Matrix::zeros(3, 3);
        let _ = x.matmul(&w);
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        // Independent j-ordered oracle against the i-k-j implementation.
        let a = Matrix::from_fn(3, 4, |r, c| (r * 7 + c) as f64 * 0.37 - 1.0);
        let b = Matrix::from_fn(4, 5, |r, c| (r as f64 - c as f64) * 0.21 + 0.5);
        let fast = a.matmul(&b);
        for i in 0..3 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((fast.get(i, j) - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn transpose_round_trip() {
        let a = Matrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        assert_eq!(a.transpose().transpose(), a);
    }
}
