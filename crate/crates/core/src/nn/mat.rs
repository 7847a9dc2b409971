use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix entries", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("matrix row", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Columns `start..start + len` as a new matrix.
    pub fn columns(&self, start: usize, len: usize) -> Mat {
        let mut out = Mat::zeros(self.rows, len);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + len]);
        }
        out
    }

    /// `[self | other]`, row by row.
    pub fn hcat(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows {
            return Err(Error::shape("hcat rows", self.rows, other.rows));
        }
        let cols = self.cols + other.cols;
        let mut out = Mat::zeros(self.rows, cols);
        for i in 0..self.rows {
            let row = out.row_mut(i);
            row[..self.cols].copy_from_slice(self.row(i));
            row[self.cols..].copy_from_slice(other.row(i));
        }
        Ok(out)
    }

    /// `self * bᵀ` for `self: n×k`, `b: m×k`.
    pub fn matmul_nt(&self, b: &Mat) -> Result<Mat> {
        if self.cols != b.cols {
            return Err(Error::shape("matmul inner dimension", self.cols, b.cols));
        }
        let mut out = Mat::zeros(self.rows, b.rows);
        // b is stored m×k row-major; its transpose has row stride 1, col stride k.
        gemm(self.rows, self.cols, b.rows, &self.data, self.cols, 1, &b.data, 1, b.cols, &mut out.data);
        Ok(out)
    }

    /// `selfᵀ * b` for `self: n×m`, `b: n×k`.
    pub fn matmul_tn(&self, b: &Mat) -> Result<Mat> {
        if self.rows != b.rows {
            return Err(Error::shape("matmul inner dimension", self.rows, b.rows));
        }
        let mut out = Mat::zeros(self.cols, b.cols);
        gemm(self.cols, self.rows, b.cols, &self.data, 1, self.cols, &b.data, b.cols, 1, &mut out.data);
        Ok(out)
    }

    /// `self * b` for `self: n×m`, `b: m×k`.
    pub fn matmul(&self, b: &Mat) -> Result<Mat> {
        if self.cols != b.rows {
            return Err(Error::shape("matmul inner dimension", self.cols, b.rows));
        }
        let mut out = Mat::zeros(self.rows, b.cols);
        gemm(self.rows, self.cols, b.cols, &self.data, self.cols, 1, &b.data, b.cols, 1, &mut out.data);
        Ok(out)
    }

    /// Matrix-vector product `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape("matvec input", self.cols, x.len()));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }
}

/// `c = a * b` where `a` is m×k and `b` is k×n with explicit strides; `c`
/// is row-major m×n and is overwritten.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the strides above address only elements inside `a`, `b` and
    // `c`, which are checked by the callers' shape validation.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
