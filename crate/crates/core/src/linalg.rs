//! Dense small-matrix primitives.
//!
//! Everything here works on row-major `f64` matrices of modest size (the
//! models in this crate are one- and two-dimensional). Routines are pure and
//! allocate their results.

use std::fmt;
use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("result out of floating-point range ({0})")]
    Range(&'static str),
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {min_eig:e}, largest {max_eig:e})")]
    NotPsd { min_eig: f64, max_eig: f64 },
    #[error("singular matrix")]
    Singular,
    #[error("quadrature did not converge: {nodes} nodes, last relative change {last_change:e}")]
    NoConvergence { nodes: usize, last_change: f64 },
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{:e}", self[(i, j)])?;
            }
        }
        write!(f, "]")
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Matrix {
    /// Builds a matrix from row-major entries. Entries must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Argument("matrix dimensions must be positive".into()));
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite("matrix entries"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::DimensionMismatch("ragged rows".into()));
        }
        Self::new(r, c, rows.iter().flat_map(|row| row.iter().copied()).collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Matrix product. Panics on incompatible shapes, which is a caller bug.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `out = self · x`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        self.add(&other.scale(-1.0))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm_one(&self) -> f64 {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// `(M + Mᵀ)/2`.
    pub fn symmetrize(&self) -> Matrix {
        assert!(self.is_square());
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    pub fn determinant(&self) -> Result<f64, LinalgError> {
        self.require_square()?;
        match self.rows {
            1 => Ok(self.data[0]),
            2 => Ok(self[(0, 0)] * self[(1, 1)] - self[(0, 1)] * self[(1, 0)]),
            _ => match Lu::factor(self) {
                Ok(lu) => Ok(lu.determinant()),
                Err(LinalgError::Singular) => Ok(0.0),
                Err(e) => Err(e),
            },
        }
    }

    /// Solves `self · X = rhs`.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        self.require_square()?;
        if rhs.rows != self.rows {
            return Err(LinalgError::DimensionMismatch("solve: rhs rows".into()));
        }
        Lu::factor(self).map(|lu| lu.solve(rhs))
    }

    pub fn inverse(&self) -> Result<Matrix, LinalgError> {
        self.solve(&Matrix::identity(self.rows))
    }

    fn require_square(&self) -> Result<(), LinalgError> {
        if self.is_square() {
            Ok(())
        } else {
            Err(LinalgError::NotSquare { rows: self.rows, cols: self.cols })
        }
    }
}

/// LU with partial pivoting.
struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    fn factor(m: &Matrix) -> Result<Self, LinalgError> {
        let n = m.rows;
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let scale = m.max_abs();
        for k in 0..n {
            let p = (k..n).max_by(|&a, &b| lu[a * n + k].abs().total_cmp(&lu[b * n + k].abs())).unwrap_or(k);
            if lu[p * n + k].abs() <= f64::EPSILON * scale * n as f64 || lu[p * n + k] == 0.0 {
                return Err(LinalgError::Singular);
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                for j in (k + 1)..n {
                    lu[i * n + j] -= f * lu[k * n + j];
                }
            }
        }
        Ok(Self { n, lu, perm, sign })
    }

    fn determinant(&self) -> f64 {
        (0..self.n).map(|i| self.lu[i * self.n + i]).product::<f64>() * self.sign
    }

    fn solve(&self, rhs: &Matrix) -> Matrix {
        let n = self.n;
        let mut x = Matrix::zeros(n, rhs.cols);
        for c in 0..rhs.cols {
            let mut y: Vec<f64> = self.perm.iter().map(|&p| rhs[(p, c)]).collect();
            for i in 0..n {
                for k in 0..i {
                    y[i] -= self.lu[i * n + k] * y[k];
                }
            }
            for i in (0..n).rev() {
                for k in (i + 1)..n {
                    y[i] -= self.lu[i * n + k] * y[k];
                }
                y[i] /= self.lu[i * n + i];
            }
            for i in 0..n {
                x[(i, c)] = y[i];
            }
        }
        x
    }
}

/// `e^{A t}`.
///
/// 1×1 and 2×2 matrices use closed forms; larger ones use Padé(13) scaling
/// and squaring.
pub fn mat_exp(a: &Matrix, t: f64) -> Result<Matrix, LinalgError> {
    a.require_square()?;
    if !t.is_finite() {
        return Err(LinalgError::NonFinite("time"));
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite("matrix entries"));
    }
    let out = match a.rows {
        1 => Matrix::scalar((a.data[0] * t).exp()),
        2 => exp_2x2(a, t),
        _ => exp_pade13(&a.scale(t))?,
    };
    if out.is_finite() {
        Ok(out)
    } else {
        Err(LinalgError::Range("matrix exponential overflow"))
    }
}

/// Closed form for 2×2 matrices: with `A = τI + B`, `B² = δI`, so
/// `e^{At} = e^{τt}(cosh(√δ t) I + sinh(√δ t)/√δ · B)`.
fn exp_2x2(a: &Matrix, t: f64) -> Matrix {
    let tau = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let b11 = a[(0, 0)] - tau;
    let (b12, b21) = (a[(0, 1)], a[(1, 0)]);
    let delta = b11 * b11 + b12 * b21;
    let x = delta * t * t;

    // Near-coincident eigenvalues (including the defective case): the
    // power series in x = δt² converges fast and has no cancellation.
    let (c, s) = if x.abs() < 1.0 {
        let (mut c, mut s) = (1.0, 1.0);
        let (mut tc, mut ts) = (1.0, 1.0);
        for k in 1..40 {
            let k = k as f64;
            tc *= x / ((2.0 * k - 1.0) * (2.0 * k));
            ts *= x / ((2.0 * k) * (2.0 * k + 1.0));
            c += tc;
            s += ts;
            if tc.abs() < 1e-18 && ts.abs() < 1e-18 {
                break;
            }
        }
        let g = (tau * t).exp();
        (g * c, g * s * t)
    } else if delta > 0.0 {
        let r = delta.sqrt();
        let hi = ((tau + r) * t).exp();
        let lo = ((tau - r) * t).exp();
        (0.5 * (hi + lo), 0.5 * (hi - lo) / r)
    } else {
        let r = (-delta).sqrt();
        let g = (tau * t).exp();
        (g * (r * t).cos(), g * (r * t).sin() / r)
    };
    let mut e = Matrix::zeros(2, 2);
    e[(0, 0)] = c + s * b11;
    e[(0, 1)] = s * b12;
    e[(1, 0)] = s * b21;
    e[(1, 1)] = c - s * b11;
    e
}

fn exp_pade13(a: &Matrix) -> Result<Matrix, LinalgError> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.rows;
    let norm = a.norm_one();
    let squarings = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    if squarings > 1000 {
        return Err(LinalgError::Range("matrix exponential overflow"));
    }
    let a = a.scale(0.5f64.powi(squarings));
    let id = Matrix::identity(n);
    let a2 = a.matmul(&a);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);
    let u_inner = a6.scale(B[13]).add(&a4.scale(B[11])).add(&a2.scale(B[9]));
    let u = a.matmul(
        &a6.matmul(&u_inner).add(&a6.scale(B[7])).add(&a4.scale(B[5])).add(&a2.scale(B[3])).add(&id.scale(B[1])),
    );
    let v_inner = a6.scale(B[12]).add(&a4.scale(B[10])).add(&a2.scale(B[8]));
    let v = a6.matmul(&v_inner).add(&a6.scale(B[6])).add(&a4.scale(B[4])).add(&a2.scale(B[2])).add(&id.scale(B[0]));
    let mut r = v.sub(&u).solve(&v.add(&u))?;
    for _ in 0..squarings {
        r = r.matmul(&r);
        if !r.is_finite() {
            return Err(LinalgError::Range("matrix exponential overflow"));
        }
    }
    Ok(r)
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a symmetric matrix,
/// by cyclic Jacobi rotations.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix), LinalgError> {
    m.require_square()?;
    if !m.is_finite() {
        return Err(LinalgError::NonFinite("matrix entries"));
    }
    let n = m.rows;
    let mut a = m.symmetrize();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let diag: f64 = (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum();
        if off == 0.0 || off <= 1e-36 * diag {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new)] = v[(k, old)];
        }
    }
    Ok((values, vectors))
}

/// Logarithmic norm for the Euclidean norm: largest eigenvalue of `(A+Aᵀ)/2`.
pub fn log_norm(a: &Matrix) -> Result<f64, LinalgError> {
    a.require_square()?;
    let (values, _) = symmetric_eigen(&a.symmetrize())?;
    Ok(*values.last().expect("non-empty matrix"))
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> Result<f64, LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::NonFinite("matrix entries"));
    }
    let gram = m.transpose().matmul(m);
    let (values, _) = symmetric_eigen(&gram)?;
    Ok(values.last().expect("non-empty matrix").max(0.0).sqrt())
}

pub const DEFAULT_QUADRATURE_TOL: f64 = 1e-10;
const GL_ORDER: usize = 10;
const MAX_QUADRATURE_NODES: usize = 1 << 20;

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_ORDER;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(n, x);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// `C(t) = ∫₀ᵗ e^{Au} ΣΣᵀ e^{Aᵀu} du` by composite Gauss-Legendre.
///
/// The panel count doubles until two successive estimates agree to `tol`
/// relative to the largest entry.
pub fn cov_quadrature(a: &Matrix, sigma: &Matrix, t: f64, tol: f64) -> Result<Matrix, LinalgError> {
    a.require_square()?;
    let d = a.rows;
    if sigma.rows != d {
        return Err(LinalgError::DimensionMismatch(format!(
            "diffusion matrix has {} rows, drift matrix is {d}x{d}",
            sigma.rows
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(LinalgError::Argument(format!("time must be finite and >= 0, got {t}")));
    }
    if !(tol > 0.0) {
        return Err(LinalgError::Argument(format!("tolerance must be positive, got {tol}")));
    }
    if t == 0.0 {
        return Ok(Matrix::zeros(d, d));
    }
    let q = sigma.matmul(&sigma.transpose());
    let (nodes, weights) = gauss_legendre();

    let estimate = |panels: usize| -> Result<Matrix, LinalgError> {
        let h = t / panels as f64;
        let mut acc = Matrix::zeros(d, d);
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * h;
            for (x, w) in nodes.iter().zip(weights) {
                let u = mid + 0.5 * h * x;
                let e = mat_exp(a, u)?;
                let term = e.matmul(&q).matmul(&e.transpose());
                acc = acc.add(&term.scale(0.5 * h * w));
            }
        }
        Ok(acc)
    };

    let mut panels = 1;
    let mut prev = estimate(panels)?;
    let mut last_change = f64::INFINITY;
    while panels * 2 * GL_ORDER <= MAX_QUADRATURE_NODES {
        panels *= 2;
        let next = estimate(panels)?;
        let scale = next.max_abs();
        let change = next.sub(&prev).max_abs();
        last_change = if scale > 0.0 { change / scale } else { change };
        if last_change < tol {
            return Ok(next.symmetrize());
        }
        prev = next;
    }
    Err(LinalgError::NoConvergence { nodes: panels * GL_ORDER, last_change })
}

/// A square root `L` of a covariance matrix with `L·Lᵀ ≈ C`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdFactor {
    pub factor: Matrix,
    pub original: Matrix,
    /// Eigenvalues set to zero by the fallback route.
    pub clip_count: usize,
}

impl PsdFactor {
    pub fn reconstruct(&self) -> Matrix {
        self.factor.matmul(&self.factor.transpose())
    }

    pub fn dim(&self) -> usize {
        self.factor.rows
    }
}

const SYMMETRY_TOL: f64 = 1e-12;
const NEGATIVE_EIG_TOL: f64 = 1e-9;

/// Cholesky when `C` is positive definite, otherwise an eigen-decomposition
/// with small negative eigenvalues clipped to zero.
pub fn psd_factor(c: &Matrix) -> Result<PsdFactor, LinalgError> {
    c.require_square()?;
    if !c.is_finite() {
        return Err(LinalgError::NonFinite("covariance entries"));
    }
    let n = c.rows;
    let scale = c.max_abs();
    let asymmetry = c.sub(&c.transpose()).max_abs();
    if asymmetry > SYMMETRY_TOL * scale {
        return Err(LinalgError::NotSymmetric { asymmetry });
    }
    let sym = c.symmetrize();
    if let Some(l) = cholesky(&sym) {
        return Ok(PsdFactor { factor: l, original: sym, clip_count: 0 });
    }
    let (values, vectors) = symmetric_eigen(&sym)?;
    let max_eig = values.iter().fold(0.0f64, |m, v| m.max(*v));
    let min_eig = values[0];
    if min_eig < -NEGATIVE_EIG_TOL * max_eig || (max_eig == 0.0 && min_eig < 0.0) {
        return Err(LinalgError::NotPsd { min_eig, max_eig });
    }
    let mut clip_count = 0;
    let mut factor = vectors;
    for (j, &lambda) in values.iter().enumerate() {
        let root = if lambda > 0.0 {
            lambda.sqrt()
        } else {
            clip_count += 1;
            0.0
        };
        for i in 0..n {
            factor[(i, j)] *= root;
        }
    }
    Ok(PsdFactor { factor, original: sym, clip_count })
}

fn cholesky(c: &Matrix) -> Option<Matrix> {
    let n = c.rows;
    let mut l = Matrix::zeros(n, n);
    let diag_scale = (0..n).map(|i| c[(i, i)]).fold(0.0, f64::max);
    for j in 0..n {
        let mut s = c[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        // A pivot at roundoff level means the matrix is numerically singular;
        // the eigen route handles that more accurately.
        if !(s > 1e-14 * diag_scale) {
            return None;
        }
        let pivot = s.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut s = c[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    Some(l)
}
