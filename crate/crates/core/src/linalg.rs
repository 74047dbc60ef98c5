//! Small dense linear algebra: row-major matrices, vector helpers, and a
//! one-sided Jacobi SVD used for spectral information, pseudo-inverses and
//! row-space projections.
//!
//! Everything here targets desk-scale problems (dimensions up to a few
//! hundred), so the routines favour accuracy and simplicity over blocking.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must have at least one row and one column (got {rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("expected {expected} entries for a {rows}x{cols} matrix, got {got}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },
    #[error("matrix rows have unequal lengths")]
    RaggedRows,
    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("zero matrix has no nonzero singular value")]
    ZeroMatrix,
    #[error("dimension mismatch: expected length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular linear system")]
    Singular,
}

/// Dense row-major matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::ShapeMismatch {
                rows,
                cols,
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: idx / cols,
                col: idx % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(LinalgError::RaggedRows);
        }
        Self::new(m, n, rows.iter().flatten().copied().collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Aᵀ y`.
    pub fn tmul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "tmul_vec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        out
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "mul dimension mismatch");
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

    /// `A diag(d) Aᵀ`, the Gram matrix weighted by `d` (length `cols`).
    pub fn weighted_gram(&self, d: &[f64]) -> Matrix {
        assert_eq!(d.len(), self.cols);
        let m = self.rows;
        let mut g = Matrix::zeros(m, m);
        for i in 0..m {
            for k in 0..=i {
                let s: f64 = self
                    .row(i)
                    .iter()
                    .zip(self.row(k))
                    .zip(d)
                    .map(|((a, b), w)| a * b * w)
                    .sum();
                g.set(i, k, s);
                g.set(k, i, s);
            }
        }
        g
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add_diagonal(&mut self, shift: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += shift;
        }
    }
}

// ---------------------------------------------------------------------------
// vector helpers

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// ℓ_p norm for `p ≥ 1`.
pub fn norm_p(a: &[f64], p: f64) -> f64 {
    a.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `a + s b`
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

// ---------------------------------------------------------------------------
// SVD

/// Thin singular value decomposition `A = U diag(s) Vᵀ` with singular values
/// sorted in decreasing order. `U` is `M×k`, `V` is `N×k`, `k = min(M, N)`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// One-sided (Hestenes) Jacobi on the columns of a tall matrix.
fn jacobi_tall(a: &Matrix) -> Svd {
    let m = a.rows;
    let n = a.cols;
    debug_assert!(m >= n);
    let mut u = a.clone();
    let mut v = Matrix::identity(n);
    let eps = f64::EPSILON;

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let up = u.get(i, p);
                    let uq = u.get(i, q);
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let up = u.get(i, p);
                    let uq = u.get(i, q);
                    u.set(i, p, c * up - s * uq);
                    u.set(i, q, s * up + c * uq);
                }
                for i in 0..n {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<(f64, usize)> = (0..n)
        .map(|j| ((0..m).map(|i| u.get(i, j).powi(2)).sum::<f64>().sqrt(), j))
        .collect();
    sigma.sort_by(|x, y| y.0.total_cmp(&x.0));

    let mut uo = Matrix::zeros(m, n);
    let mut vo = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &(sv, j)) in sigma.iter().enumerate() {
        s.push(sv);
        for i in 0..m {
            uo.set(i, k, if sv > 0.0 { u.get(i, j) / sv } else { 0.0 });
        }
        for i in 0..n {
            vo.set(i, k, v.get(i, j));
        }
    }
    Svd { u: uo, s, v: vo }
}

pub fn svd(a: &Matrix) -> Svd {
    if a.rows >= a.cols {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose());
        Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        }
    }
}

impl Svd {
    /// Numerical-rank threshold `max(M, N) · ε · σ_max`.
    pub fn rank_tolerance(&self) -> f64 {
        let dim = self.u.rows.max(self.v.rows) as f64;
        dim * f64::EPSILON * self.s.first().copied().unwrap_or(0.0)
    }

    pub fn rank(&self) -> usize {
        let tol = self.rank_tolerance();
        self.s.iter().filter(|&&s| s > tol).count()
    }

    /// Moore–Penrose solution `A† b`.
    pub fn pinv_apply(&self, b: &[f64]) -> Vec<f64> {
        let n = self.v.rows;
        let tol = self.rank_tolerance();
        let mut x = vec![0.0; n];
        for (k, &s) in self.s.iter().enumerate() {
            if s <= tol {
                continue;
            }
            let coef = (0..self.u.rows).map(|i| self.u.get(i, k) * b[i]).sum::<f64>() / s;
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += coef * self.v.get(i, k);
            }
        }
        x
    }

    /// `(Aᵀ)† b`, the least-squares solution of `Aᵀ x = b`.
    pub fn pinv_transpose_apply(&self, b: &[f64]) -> Vec<f64> {
        let m = self.u.rows;
        let tol = self.rank_tolerance();
        let mut x = vec![0.0; m];
        for (k, &s) in self.s.iter().enumerate() {
            if s <= tol {
                continue;
            }
            let coef = (0..self.v.rows).map(|i| self.v.get(i, k) * b[i]).sum::<f64>() / s;
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += coef * self.u.get(i, k);
            }
        }
        x
    }

    /// Orthogonal projection of `x` onto the row space of `A`.
    pub fn project_row_space(&self, x: &[f64]) -> Vec<f64> {
        let n = self.v.rows;
        let tol = self.rank_tolerance();
        let mut out = vec![0.0; n];
        for (k, &s) in self.s.iter().enumerate() {
            if s <= tol {
                continue;
            }
            let c: f64 = (0..n).map(|i| self.v.get(i, k) * x[i]).sum();
            for (i, o) in out.iter_mut().enumerate() {
                *o += c * self.v.get(i, k);
            }
        }
        out
    }
}

/// Smallest nonzero singular value and numerical rank of a matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralInfo {
    pub sigma_min_nonzero: f64,
    pub rank: usize,
}

pub fn sigma_min_nonzero(a: &Matrix) -> Result<SpectralInfo, LinalgError> {
    if a.is_zero() {
        return Err(LinalgError::ZeroMatrix);
    }
    let dec = svd(a);
    let tol = dec.rank_tolerance();
    let rank = dec.rank();
    let sigma = dec
        .s
        .iter()
        .copied()
        .filter(|&s| s > tol)
        .fold(f64::INFINITY, f64::min);
    if !sigma.is_finite() {
        return Err(LinalgError::ZeroMatrix);
    }
    Ok(SpectralInfo {
        sigma_min_nonzero: sigma,
        rank,
    })
}

/// Solve `A x = b` for square `A` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = a.rows;
    if a.cols != n || b.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let mut m = a.data.clone();
    let mut x = b.to_vec();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap();
        if m[piv * n + col].abs() <= f64::EPSILON * scale * 1e-4 {
            return Err(LinalgError::Singular);
        }
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        for i in (col + 1)..n {
            let f = m[i * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[i * n + j] -= f * m[col * n + j];
            }
            x[i] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|j| m[i * n + j] * x[j]).sum();
        x[i] = (x[i] - s) / m[i * n + i];
    }
    Ok(x)
}

/// Smallest eigenvalue of a symmetric positive semidefinite matrix.
pub fn min_eigenvalue_psd(a: &Matrix) -> f64 {
    svd(a).s.last().copied().unwrap_or(0.0)
}
