//! Row-major `f64` matrix with the handful of products backpropagation needs.
//!
//! Inner products go through `matrixmultiply::dgemm`, which lets the three
//! orientations used by the training code (`A B`, `A B^T`, `A^T B`) share one
//! packed kernel without materializing any transpose.

use crate::error::{Error, Result};

/// Dense row-major matrix. Entries are finite by construction; debug builds
/// assert that invariant after every constructor.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Zero-filled matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Matrix with every entry set to `value`.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        let m = Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        };
        m.debug_check_finite();
        m
    }

    /// Builds a matrix from row-major data; `data.len()` must equal
    /// `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "matrix data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        let m = Matrix { rows, cols, data };
        m.debug_check_finite();
        Ok(m)
    }

    /// Builds a matrix from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::Contract(format!(
                    "ragged rows: expected {} columns, found {}",
                    n_cols,
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(n_rows, n_cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = value;
    }

    /// Row `r` as a slice of length `cols`.
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert!(r < self.rows);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        debug_assert!(r < self.rows);
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Returns an error naming the offending entry if any value is not finite.
    pub fn validate_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{} at row {}, col {} (value {})",
                    context,
                    i / self.cols.max(1),
                    i % self.cols.max(1),
                    v
                )));
            }
        }
        Ok(())
    }

    fn debug_check_finite(&self) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "matrix holds a non-finite entry"
        );
    }

    /// `self * other`, shapes `[m x k] * [k x n]`.
    pub fn mul_nn(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(self.shape_err("mul_nn", other));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            self,
            false,
            other,
            false,
            &mut out,
        );
        Ok(out)
    }

    /// `self * other^T`, shapes `[m x k] * [n x k]^T`.
    pub fn mul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(self.shape_err("mul_nt", other));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            self,
            false,
            other,
            true,
            &mut out,
        );
        Ok(out)
    }

    /// `self^T * other`, shapes `[k x m]^T * [k x n]`.
    pub fn mul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(self.shape_err("mul_tn", other));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            self,
            true,
            other,
            false,
            &mut out,
        );
        Ok(out)
    }

    fn shape_err(&self, op: &'static str, other: &Matrix) -> Error {
        Error::ShapeMismatch {
            op,
            left_rows: self.rows,
            left_cols: self.cols,
            right_rows: other.rows,
            right_cols: other.cols,
        }
    }
}

/// `C = alpha A B + beta C` with optional logical transposes, via dgemm.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &Matrix,
    trans_a: bool,
    b: &Matrix,
    trans_b: bool,
    c: &mut Matrix,
) {
    if m == 0 || n == 0 {
        return;
    }
    // Row stride / column stride of the logical (possibly transposed) view.
    let (rsa, csa) = if trans_a {
        (1isize, a.cols as isize)
    } else {
        (a.cols as isize, 1isize)
    };
    let (rsb, csb) = if trans_b {
        (1isize, b.cols as isize)
    } else {
        (b.cols as isize, 1isize)
    };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Affine map applied to a batch of row vectors:
/// `output[b] = weights * input[b] + bias`.
///
/// `weights` is `[out_dim x in_dim]`, `input` is `[batch x in_dim]`, `bias`
/// has length `out_dim`; the result is `[batch x out_dim]`.  A wrong `input`
/// width or bias length is a contract violation naming both shapes.
pub fn affine(weights: &Matrix, input: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if input.cols() != weights.cols() {
        return Err(Error::ShapeMismatch {
            op: "affine",
            left_rows: weights.rows(),
            left_cols: weights.cols(),
            right_rows: input.rows(),
            right_cols: input.cols(),
        });
    }
    if bias.len() != weights.rows() {
        return Err(Error::Contract(format!(
            "affine bias length {} does not match weight rows {}",
            bias.len(),
            weights.rows()
        )));
    }
    let mut out = input.mul_nt(weights)?;
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(out)
}
