//! Small dense complex linear algebra.
//!
//! Matrices here are at most a few dozen rows (L ≤ 16 in every experiment),
//! so a straightforward column-major layout with an unblocked Cholesky is
//! both fast enough and easy to audit.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Column-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
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

    /// Build from a column-major buffer.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "buffer of {} entries cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn col(&self, j: usize) -> &[Complex64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [Complex64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks_exact(self.rows.max(1)).take(self.cols)
    }

    pub fn matmul(&self, rhs: &CMatrix) -> Result<CMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for j in 0..rhs.cols {
            let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for (k, &b) in rhs.col(j).iter().enumerate() {
                if b == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (d, &a) in dst.iter_mut().zip(self.col(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn sub(&self, rhs: &CMatrix) -> Result<CMatrix> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::Shape("matrix dimensions differ".into()));
        }
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[j * self.rows + i]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[j * self.rows + i]
    }
}

/// Lower-triangular factor `A = G Gᴴ` of a Hermitian positive-definite matrix.
#[derive(Debug, Clone)]
pub struct HermitianCholesky {
    factor: CMatrix,
}

impl HermitianCholesky {
    /// Factor using only the lower triangle of `a`.
    pub fn factor(a: &CMatrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Shape(format!(
                "Cholesky needs a square matrix, got {}x{}",
                n,
                a.cols()
            )));
        }
        let mut g = CMatrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)].re;
            for k in 0..j {
                diag -= g[(j, k)].norm_sqr();
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::numerical(format!(
                    "matrix not positive definite (pivot {j} = {diag:e})"
                )));
            }
            let d = diag.sqrt();
            g[(j, j)] = Complex64::new(d, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= g[(i, k)] * g[(j, k)].conj();
                }
                g[(i, j)] = s / d;
            }
        }
        Ok(Self { factor: g })
    }

    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    pub fn lower(&self) -> &CMatrix {
        &self.factor
    }

    /// `ln det A`, from the factor diagonal.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim())
            .map(|i| self.factor[(i, i)].re.ln())
            .sum::<f64>()
    }

    /// In place `b ← G⁻¹ b`.
    pub fn forward_solve(&self, b: &mut [Complex64]) {
        let g = &self.factor;
        let n = self.dim();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= g[(i, k)] * b[k];
            }
            b[i] = s / g[(i, i)].re;
        }
    }

    /// In place `b ← G⁻ᴴ b`.
    pub fn backward_solve(&self, b: &mut [Complex64]) {
        let g = &self.factor;
        let n = self.dim();
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= g[(k, i)].conj() * b[k];
            }
            b[i] = s / g[(i, i)].re;
        }
    }

    /// In place `b ← A⁻¹ b`.
    pub fn solve(&self, b: &mut [Complex64]) {
        self.forward_solve(b);
        self.backward_solve(b);
    }

    /// `G⁻¹ B` for every column of `b`.
    pub fn whiten(&self, b: &CMatrix) -> CMatrix {
        let mut out = b.clone();
        for j in 0..out.cols() {
            self.forward_solve(out.col_mut(j));
        }
        out
    }
}

/// `Σ conj(a_i) b_i`.
pub fn dot_conj(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}
