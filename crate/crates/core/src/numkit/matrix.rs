//! Row-major dense matrices and the symmetric positive definite kernels used by
//! the Laplace posterior: Cholesky with jitter escalation, log-determinants and
//! solves.

use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};

use crate::error::{shape_err, Error, Result};

/// Largest diagonal jitter tried before a factorization is declared singular.
pub const MAX_JITTER: f64 = 1e-3;
/// First non-zero jitter tried when the caller passes zero.
pub const MIN_JITTER: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-9;

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

pub type Vector = Vec<f64>;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape_err(format!("{} values cannot fill a {rows}x{cols} matrix", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return shape_err(format!("row {i} has {} columns, expected {cols}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Single-row matrix.
    pub fn row_vector(v: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    /// Single-column matrix.
    pub fn col_vector(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return shape_err(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(1.0, self.as_view(), other.as_view(), 0.0, &mut out.data, other.cols);
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return shape_err(format!(
                "cannot multiply {}x{} by transpose of {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(1.0, self.as_view(), other.as_view().t(), 0.0, &mut out.data, other.rows);
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return shape_err(format!(
                "cannot multiply transpose of {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(1.0, self.as_view().t(), other.as_view(), 0.0, &mut out.data, other.cols);
        Ok(out)
    }

    pub fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return shape_err(format!(
                "cannot apply {}x{} to vector of length {}",
                self.rows,
                self.cols,
                v.len()
            ));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return shape_err(format!("cannot add {:?} and {:?}", self.shape(), other.shape()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix { data, ..*self })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return shape_err(format!("cannot subtract {:?} and {:?}", self.shape(), other.shape()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { data, ..*self })
    }

    pub fn scale(&self, k: f64) -> Matrix {
        Matrix {
            data: self.data.iter().map(|x| x * k).collect(),
            ..*self
        }
    }

    /// Adds `k` to every diagonal entry in place.
    pub fn add_to_diag(&mut self, k: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += k;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                let (a, b) = (self[(r, c)], self[(c, r)]);
                if (a - b).abs() > tol * (1.0 + a.abs().max(b.abs())) {
                    return false;
                }
            }
        }
        true
    }

    /// Replaces the matrix by `(A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                let m = 0.5 * (self[(r, c)] + self[(c, r)]);
                self[(r, c)] = m;
                self[(c, r)] = m;
            }
        }
    }

    pub(crate) fn as_view(&self) -> View<'_> {
        View {
            data: &self.data,
            rows: self.rows,
            cols: self.cols,
            rs: self.cols as isize,
            cs: 1,
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Strided read-only view used to feed `matrixmultiply`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl View<'_> {
    pub fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }
}

/// `out = alpha·a·b + beta·out`, with `out` row-major of row stride `out_cols`.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, out: &mut [f64], out_cols: usize) {
    assert_eq!(a.cols, b.rows);
    assert_eq!(out.len(), a.rows * out_cols);
    assert_eq!(out_cols, b.cols);
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for o in out.iter_mut() {
            *o *= beta;
        }
        return;
    }
    // SAFETY: dimensions and strides are checked above and describe
    // in-bounds row-major storage for every operand.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            out.as_mut_ptr(),
            out_cols as isize,
            1,
        );
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower Cholesky factor together with the jitter that made it succeed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cholesky {
    pub lower: Matrix,
    pub logdet: f64,
    pub jitter: f64,
}

impl Cholesky {
    /// Rebuilds a factor from a stored lower-triangular matrix.
    pub fn from_lower(lower: Matrix, jitter: f64) -> Result<Self> {
        if !lower.is_square() {
            return shape_err("cholesky factor must be square");
        }
        let n = lower.rows();
        for i in 0..n {
            if !(lower[(i, i)] > 0.0) || lower.row(i)[i + 1..].iter().any(|&v| v != 0.0) {
                return shape_err("stored factor is not lower triangular with positive diagonal");
            }
        }
        let logdet = 2.0 * lower.diag().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { lower, logdet, jitter })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// Solves `L·y = b` in place.
    pub fn forward_solve(&self, b: &mut [f64]) {
        forward_substitute(&self.lower, b);
    }

    /// Solves `Lᵀ·x = y` in place.
    pub fn backward_solve(&self, y: &mut [f64]) {
        backward_substitute_t(&self.lower, y);
    }

    /// Solves `(L·Lᵀ)·x = b`.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_solve(&mut x);
        self.backward_solve(&mut x);
        x
    }

    /// Solves `(L·Lᵀ)·X = B` column by column.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        if b.rows() != self.dim() {
            return shape_err(format!(
                "right-hand side has {} rows, factor is {}x{}",
                b.rows(),
                self.dim(),
                self.dim()
            ));
        }
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for c in 0..b.cols() {
            let x = self.solve_vec(&b.column(c));
            for (r, v) in x.into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        Ok(out)
    }

    /// `L⁻¹·B`, the whitened right-hand side.
    pub fn whiten(&self, b: &Matrix) -> Result<Matrix> {
        if b.rows() != self.dim() {
            return shape_err("whiten: row count must match factor dimension");
        }
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for c in 0..b.cols() {
            let mut col = b.column(c);
            self.forward_solve(&mut col);
            for (r, v) in col.into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        Ok(out)
    }

    /// Reconstructs `L·Lᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        self.lower
            .matmul_t(&self.lower)
            .expect("square factor always multiplies with its transpose")
    }
}

fn forward_substitute(l: &Matrix, b: &mut [f64]) {
    let n = l.rows();
    for i in 0..n {
        let row = l.row(i);
        let s = b[i] - dot(&row[..i], &b[..i]);
        b[i] = s / row[i];
    }
}

fn backward_substitute_t(l: &Matrix, y: &mut [f64]) {
    let n = l.rows();
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
}

fn try_cholesky(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let lj = l.row(j)[..j].to_vec();
        let d = a[(j, j)] + jitter - dot(&lj, &lj);
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let s = a[(i, j)] - dot(&l.row(i)[..j], &lj);
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Cholesky factorization of a symmetric positive (semi-)definite matrix.
///
/// The first attempt uses `jitter` on the diagonal. On failure the jitter grows
/// tenfold (starting at [`MIN_JITTER`] when zero was passed) until it exceeds
/// [`MAX_JITTER`], at which point the matrix is reported singular.
pub fn cholesky_logdet(a: &Matrix, jitter: f64) -> Result<Cholesky> {
    if !a.is_square() {
        return shape_err(format!("cholesky of non-square {:?} matrix", a.shape()));
    }
    if !a.is_symmetric(SYMMETRY_TOL) {
        return shape_err("cholesky of asymmetric matrix");
    }
    if jitter < 0.0 || !jitter.is_finite() {
        return Err(Error::InvalidArgument(format!("jitter must be >= 0, got {jitter}")));
    }
    let mut j = jitter;
    loop {
        if let Some(lower) = try_cholesky(a, j) {
            let logdet = 2.0 * lower.diag().iter().map(|d| d.ln()).sum::<f64>();
            return Ok(Cholesky {
                lower,
                logdet,
                jitter: j,
            });
        }
        j = if j == 0.0 { MIN_JITTER } else { j * 10.0 };
        if j > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::Singular { jitter: j / 10.0 });
        }
    }
}

/// Solves `A·X = B` for symmetric positive definite `A`.
pub fn solve_psd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let chol = cholesky_logdet(a, 0.0)?;
    chol.solve(b)
}

/// Log-determinant of `A + εI` for a symmetric PSD matrix.
pub fn logdet_psd(a: &Matrix, eps: f64) -> Result<f64> {
    let mut m = a.clone();
    m.add_to_diag(eps);
    Ok(cholesky_logdet(&m, 0.0)?.logdet)
}
