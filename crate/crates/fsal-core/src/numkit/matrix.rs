use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// `self * x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// `self^T * y` without materializing the transpose.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "matvec_t dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            let yi = y[i];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
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

    /// `self += s * a * b^T`.
    pub fn add_scaled_outer(&mut self, a: &[f64], b: &[f64], s: f64) {
        assert_eq!(a.len(), self.rows);
        assert_eq!(b.len(), self.cols);
        for i in 0..self.rows {
            let sa = s * a[i];
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, bj) in row.iter_mut().zip(b) {
                *r += sa * bj;
            }
        }
    }

    /// L2 norm of each column.
    pub fn col_norms(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (a, v) in acc.iter_mut().zip(self.row(i)) {
                *a += v * v;
            }
        }
        acc.into_iter().map(f64::sqrt).collect()
    }

    /// Numerical rank via Gaussian elimination with partial pivoting.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let mut m = self.clone();
        let max_abs = m.data.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        if max_abs == 0.0 {
            return 0;
        }
        let tol = rel_tol * max_abs;
        let mut rank = 0;
        let mut pivot_row = 0;
        for col in 0..m.cols {
            if pivot_row >= m.rows {
                break;
            }
            let (best, best_abs) = (pivot_row..m.rows)
                .map(|r| (r, m.get(r, col).abs()))
                .fold((pivot_row, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best_abs <= tol {
                continue;
            }
            m.swap_rows(pivot_row, best);
            let p = m.get(pivot_row, col);
            for r in (pivot_row + 1)..m.rows {
                let factor = m.get(r, col) / p;
                if factor == 0.0 {
                    continue;
                }
                for c in col..m.cols {
                    let v = m.get(r, c) - factor * m.get(pivot_row, c);
                    m.set(r, c, v);
                }
            }
            pivot_row += 1;
            rank += 1;
        }
        rank
    }

    /// True when all columns are linearly independent.
    pub fn has_full_column_rank(&self) -> bool {
        self.rows >= self.cols && self.rank(1e-10) == self.cols
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for c in 0..self.cols {
            let t = self.get(a, c);
            self.set(a, c, self.get(b, c));
            self.set(b, c, t);
        }
    }

    /// Solve `self * x = b` for square `self` (Gaussian elimination,
    /// partial pivoting).
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if self.rows != self.cols {
            return Err(Error::Dimension("solve requires a square matrix".into()));
        }
        if b.len() != self.rows {
            return Err(Error::Dimension("solve rhs length mismatch".into()));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut x = b.to_vec();
        for col in 0..n {
            let (best, best_abs) = (col..n)
                .map(|r| (r, a.get(r, col).abs()))
                .fold((col, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc });
            if best_abs < 1e-300 {
                return Err(Error::Numeric("singular matrix in solve".into()));
            }
            a.swap_rows(col, best);
            x.swap(col, best);
            let p = a.get(col, col);
            for r in (col + 1)..n {
                let factor = a.get(r, col) / p;
                if factor == 0.0 {
                    continue;
                }
                for c in col..n {
                    let v = a.get(r, c) - factor * a.get(col, c);
                    a.set(r, c, v);
                }
                x[r] -= factor * x[col];
            }
        }
        for col in (0..n).rev() {
            let mut v = x[col];
            for c in (col + 1)..n {
                v -= a.get(col, c) * x[c];
            }
            x[col] = v / a.get(col, col);
        }
        Ok(x)
    }

    /// Left pseudo-inverse `(A^T A)^-1 A^T` for full-column-rank `A`.
    pub fn pseudo_inverse(&self) -> Result<Matrix> {
        if !self.has_full_column_rank() {
            return Err(Error::Numeric(
                "pseudo_inverse requires full column rank".into(),
            ));
        }
        let at = self.transpose();
        let ata = at.matmul(self);
        // Solve (A^T A) X = A^T column by column.
        let mut out = Matrix::zeros(self.cols, self.rows);
        for j in 0..self.rows {
            let rhs = at.col(j);
            let x = ata.solve(&rhs)?;
            for (i, v) in x.into_iter().enumerate() {
                out.set(i, j, v);
            }
        }
        Ok(out)
    }
}
