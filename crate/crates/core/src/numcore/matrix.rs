use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`. Batches are stored one sample per row.
///
/// Every public constructor and operation rejects non-finite entries, so a
/// `Matrix` obtained through the public API never holds NaN or infinity.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 32 {
            f.debug_list()
                .entries(self.data.chunks(self.cols.max(1)))
                .finish()?;
        }
        Ok(())
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { op, index }),
        None => Ok(()),
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::new",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        check_finite("Matrix::new", &data)?;
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for buffers whose length and finiteness the
    /// caller has already established.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices; ragged input is a shape error.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "Matrix::from_rows",
                    left: (rows.len(), cols),
                    right: (1, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn row_vector(values: &[f64]) -> Result<Self> {
        Self::new(1, values.len(), values.to_vec())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_parts(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Overwrites one entry. Rejects non-finite values.
    pub fn set(&mut self, row: usize, col: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: "Matrix::set",
                index: row * self.cols + col,
            });
        }
        self.data[row * self.cols + col] = value;
        Ok(())
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let out = gemm(
            m,
            k,
            n,
            &self.data,
            (k as isize, 1),
            &other.data,
            (n as isize, 1),
        );
        check_finite("matmul", &out)?;
        Ok(Self::from_parts(m, n, out))
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape {
                op: "matmul_tn",
                left: (self.cols, self.rows),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.cols, self.rows, other.cols);
        let out = gemm(
            m,
            k,
            n,
            &self.data,
            (1, self.cols as isize),
            &other.data,
            (n as isize, 1),
        );
        check_finite("matmul_tn", &out)?;
        Ok(Self::from_parts(m, n, out))
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape {
                op: "matmul_nt",
                left: self.shape(),
                right: (other.cols, other.rows),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let out = gemm(
            m,
            k,
            n,
            &self.data,
            (k as isize, 1),
            &other.data,
            (1, other.cols as isize),
        );
        check_finite("matmul_nt", &out)?;
        Ok(Self::from_parts(m, n, out))
    }

    /// `self·w + bias` with `bias` a `1 × w.cols` row added to every row.
    pub(crate) fn affine(&self, w: &Matrix, bias: &Matrix) -> Result<Matrix> {
        if self.cols != w.rows || bias.rows != 1 || bias.cols != w.cols {
            return Err(Error::Shape {
                op: "affine",
                left: self.shape(),
                right: w.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, w.cols);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&bias.data);
        }
        gemm_into(
            m,
            k,
            n,
            &self.data,
            (k as isize, 1),
            &w.data,
            (n as isize, 1),
            1.0,
            &mut out,
        );
        check_finite("affine", &out)?;
        Ok(Self::from_parts(m, n, out))
    }

    /// In-place `self += aᵀ·b`.
    pub(crate) fn add_matmul_tn(&mut self, a: &Matrix, b: &Matrix) -> Result<()> {
        if a.rows != b.rows || self.shape() != (a.cols, b.cols) {
            return Err(Error::Shape {
                op: "add_matmul_tn",
                left: (a.cols, a.rows),
                right: b.shape(),
            });
        }
        let (m, k, n) = (a.cols, a.rows, b.cols);
        gemm_into(
            m,
            k,
            n,
            &a.data,
            (1, a.cols as isize),
            &b.data,
            (n as isize, 1),
            1.0,
            &mut self.data,
        );
        check_finite("add_matmul_tn", &self.data)
    }

    /// Textbook triple loop with the inner sum taken strictly left to right
    /// over the shared dimension. Slow; kept as an independent reference for
    /// the blocked kernel behind [`Matrix::matmul`].
    pub fn matmul_reference(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul_reference",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += self.data[i * k + p] * other.data[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        check_finite("matmul_reference", &out)?;
        Ok(Self::from_parts(m, n, out))
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self::from_parts(self.cols, self.rows, out)
    }

    /// Applies `f` to every entry. A non-finite result is reported with its
    /// flat row-major index.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Matrix> {
        let mut out = Vec::with_capacity(self.data.len());
        for (index, &v) in self.data.iter().enumerate() {
            let y = f(v);
            if !y.is_finite() {
                return Err(Error::NonFinite { op: "map", index });
            }
            out.push(y);
        }
        Ok(Self::from_parts(self.rows, self.cols, out))
    }

    /// Entry-wise combination of two equally shaped matrices.
    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.same_shape(other, "zip_map")?;
        let mut out = Vec::with_capacity(self.data.len());
        for (index, (&a, &b)) in self.data.iter().zip(&other.data).enumerate() {
            let y = f(a, b);
            if !y.is_finite() {
                return Err(Error::NonFinite {
                    op: "zip_map",
                    index,
                });
            }
            out.push(y);
        }
        Ok(Self::from_parts(self.rows, self.cols, out))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Result<Matrix> {
        self.map(|v| v * s)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        check_finite("add_assign", &self.data)
    }

    /// Applies a `1 × cols` row vector to every row with `f(entry, row_value)`.
    pub fn broadcast_rows(&self, row: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::Shape {
                op: "broadcast_rows",
                left: self.shape(),
                right: row.shape(),
            });
        }
        let mut out = Vec::with_capacity(self.data.len());
        for chunk in self.data.chunks(self.cols.max(1)) {
            for (&a, &b) in chunk.iter().zip(&row.data) {
                out.push(f(a, b));
            }
        }
        check_finite("broadcast_rows", &out)?;
        Ok(Self::from_parts(self.rows, self.cols, out))
    }

    /// Column sums as a `1 × cols` matrix, accumulated top to bottom.
    pub fn column_sums(&self) -> Matrix {
        let mut out = vec![0.0; self.cols];
        for chunk in self.data.chunks(self.cols.max(1)) {
            for (acc, &v) in out.iter_mut().zip(chunk) {
                *acc += v;
            }
        }
        Self::from_parts(1, self.cols, out)
    }

    /// Sum of all entries in row-major order.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            out.extend_from_slice(self.row(i));
        }
        Self::from_parts(indices.len(), self.cols, out)
    }

    /// Contiguous row range `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Self::from_parts(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        )
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Blocked product through `matrixmultiply`. Single-threaded, so the
/// accumulation order is fixed for a given shape and the result is
/// reproducible run to run.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm_into(m, k, n, a, a_strides, b, b_strides, 0.0, &mut out);
    out
}

/// `out = a·b + beta·out` with `out` row-major `m × n`.
#[allow(clippy::too_many_arguments)]
fn gemm_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        if beta == 0.0 {
            out.fill(0.0);
        }
        return;
    }
    // SAFETY: strides describe the exact extents of `a` (m×k), `b` (k×n) and
    // `out` (m×n, row-major); all three buffers are live for the call.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
