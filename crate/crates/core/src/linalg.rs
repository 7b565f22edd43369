//! Dense complex matrices and the handful of kernels the estimators need.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Reciprocal condition estimate below which a Gram matrix is treated as singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;

const HERMITIAN_TOL: f64 = 1e-9;

/// Dense row-major complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::dim(
                "from_vec",
                format!("{} entries for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::dim("from_rows", "ragged rows"));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Column vector from a slice.
    pub fn column_vector(entries: &[Complex64]) -> Result<Self> {
        Self::from_vec(entries.len(), 1, entries.to_vec())
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

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> CMatrix {
        CMatrix::from_fn(self.rows, 1, |i, _| self[(i, j)])
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Result<CMatrix> {
        if start >= end || end > self.cols {
            return Err(Error::dim(
                "columns",
                format!("range {start}..{end} of {} columns", self.cols),
            ));
        }
        Ok(CMatrix::from_fn(self.rows, end - start, |i, j| self[(i, start + j)]))
    }

    pub fn set_column(&mut self, j: usize, col: &CMatrix) -> Result<()> {
        if col.cols != 1 || col.rows != self.rows || j >= self.cols {
            return Err(Error::dim("set_column", format!("column {j}")));
        }
        for i in 0..self.rows {
            self[(i, j)] = col.data[i];
        }
        Ok(())
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!("{}x{} times {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn conj_transpose(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn fro_norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&self, s: f64) -> CMatrix {
        self.map(|z| z * s)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn add(&self, other: &CMatrix) -> Result<CMatrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &CMatrix) -> Result<CMatrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &CMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim("add_assign", "shape mismatch"));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    fn zip_with(
        &self,
        other: &CMatrix,
        op: &'static str,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<CMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &CMatrix) -> Result<f64> {
        Ok(self.sub(other)?.data.iter().map(|z| z.norm()).fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// `p^H (p p^H)^{-1}` for a wide, full-row-rank `p`.
    pub fn right_pseudoinverse(&self) -> Result<CMatrix> {
        if self.rows > self.cols {
            return Err(Error::dim(
                "right_pseudoinverse",
                format!("{}x{} is taller than wide", self.rows, self.cols),
            ));
        }
        let gram = self.matmul(&self.conj_transpose())?;
        let chol = Cholesky::factor(&gram).map_err(|_| Error::RankDeficient { rcond: 0.0 })?;
        let rcond = chol.rcond_estimate();
        if rcond < RCOND_THRESHOLD {
            return Err(Error::RankDeficient { rcond });
        }
        // (p p^H)^{-1} p, then conjugate-transpose.
        Ok(chol.solve(self)?.conj_transpose())
    }

    /// Column-stack the given column vectors.
    pub fn hstack(columns: &[CMatrix]) -> Result<CMatrix> {
        let first = columns.first().ok_or_else(|| Error::dim("hstack", "no columns"))?;
        let rows = first.rows;
        let total: usize = columns.iter().map(|c| c.cols).sum();
        if columns.iter().any(|c| c.rows != rows) {
            return Err(Error::dim("hstack", "row counts differ"));
        }
        let mut out = CMatrix::zeros(rows, total);
        let mut j0 = 0;
        for c in columns {
            for i in 0..rows {
                for j in 0..c.cols {
                    out[(i, j0 + j)] = c[(i, j)];
                }
            }
            j0 += c.cols;
        }
        Ok(out)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds");
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds");
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.4}{:+.4}j ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Lower-triangular Cholesky factor `a = L L^H` of a Hermitian positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: CMatrix,
}

impl Cholesky {
    pub fn factor(a: &CMatrix) -> Result<Self> {
        let n = a.rows;
        if a.cols != n {
            return Err(Error::dim("cholesky", format!("{}x{} is not square", a.rows, a.cols)));
        }
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (a[(i, j)] - a[(j, i)].conj()).norm() > HERMITIAN_TOL * scale {
                    return Err(Error::NotPositiveDefinite(format!("not Hermitian at ({i}, {j})")));
                }
            }
        }
        let mut l = CMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite(format!(
                    "non-positive pivot {d:.3e} at column {j}"
                )));
            }
            let djj = d.sqrt();
            l[(j, j)] = Complex64::new(djj, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    /// Cheap reciprocal condition estimate from the factor's diagonal.
    pub fn rcond_estimate(&self) -> f64 {
        let n = self.l.rows;
        let (lo, hi) = (0..n)
            .map(|i| self.l[(i, i)].re)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
        (lo / hi).powi(2)
    }

    pub fn solve(&self, b: &CMatrix) -> Result<CMatrix> {
        let n = self.l.rows;
        if b.rows != n {
            return Err(Error::dim(
                "cholesky solve",
                format!("rhs has {} rows, need {n}", b.rows),
            ));
        }
        let mut x = b.clone();
        for col in 0..b.cols {
            // L y = b
            for i in 0..n {
                let mut s = x[(i, col)];
                for k in 0..i {
                    s -= self.l[(i, k)] * x[(k, col)];
                }
                x[(i, col)] = s / self.l[(i, i)].re;
            }
            // L^H x = y
            for i in (0..n).rev() {
                let mut s = x[(i, col)];
                for k in i + 1..n {
                    s -= self.l[(k, i)].conj() * x[(k, col)];
                }
                x[(i, col)] = s / self.l[(i, i)].re;
            }
        }
        Ok(x)
    }
}

/// Solve `a x = b` for Hermitian positive definite `a`.
pub fn hermitian_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    Cholesky::factor(a)?.solve(b)
}
