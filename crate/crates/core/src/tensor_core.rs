//! Small dense matrices and tensors.
//!
//! Everything here works on the per-point objects of the dilation calculus:
//! gradients `P ∈ ℝ^{N×n}`, metrics `PᵀP`, fourth-order derivative tensors. The
//! sizes are tiny (`n, N ≤ 8`), so storage is dense row-major and the spectral
//! routines are plain Jacobi sweeps.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use crate::error::{QcError, Result};

/// Default relative tolerance for ε-ranks.
pub const DEFAULT_TAU: f64 = 1e-8;

const JACOBI_MAX_SWEEPS: usize = 80;

/// Dense row-major `rows × cols` matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(QcError::Shape(format!(
                "cannot build {rows}x{cols} matrix from {} entries",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Matrix { rows: r, cols: c, data: rows.iter().flat_map(|row| row.iter().copied()).collect() }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Matrix with the given columns.
    pub fn from_columns(cols: &[Vec<f64>]) -> Self {
        let c = cols.len();
        let r = cols.first().map_or(0, |v| v.len());
        Matrix::from_fn(r, c, |i, j| cols[j][i])
    }

    /// Outer product `a bᵀ`.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        Matrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Matrix product. Panics on inner-dimension mismatch.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul: {}x{} * {}x{}", self.rows, self.cols, other.rows, other.cols);
        let mut out = Matrix::zeros(self.rows, other.cols);
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

    /// `PᵀP`, computed symmetrically.
    pub fn gram(&self) -> Matrix {
        let n = self.cols;
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..self.rows).map(|a| self[(a, i)] * self[(a, j)]).sum();
                g[(i, j)] = s;
                g[(j, i)] = s;
            }
        }
        g
    }

    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// `Mᵀ v`.
    pub fn tr_mat_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len());
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j] += self[(i, j)] * v[i];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius pairing `A : B = tr(AᵀB)`.
    pub fn frobenius_dot(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Euclidean (Frobenius) norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// LU factorisation with partial pivoting. Returns `(lu, perm, sign)` or
    /// `None` when a pivot vanishes exactly.
    fn lu(&self) -> Option<(Matrix, Vec<usize>, f64)> {
        let n = self.rows;
        let mut a = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let (piv, best) = (k..n)
                .map(|i| (i, a[(i, k)].abs()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best == 0.0 {
                return None;
            }
            if piv != k {
                for j in 0..n {
                    a.data.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
                sign = -sign;
            }
            let d = a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / d;
                a[(i, k)] = f;
                for j in k + 1..n {
                    let v = a[(k, j)];
                    a[(i, j)] -= f * v;
                }
            }
        }
        Some((a, perm, sign))
    }

    /// Determinant of a square matrix. Panics if not square.
    pub fn determinant(&self) -> f64 {
        assert!(self.is_square(), "determinant of non-square matrix");
        match self.rows {
            1 => self.data[0],
            2 => self.data[0] * self.data[3] - self.data[1] * self.data[2],
            _ => match self.lu() {
                None => 0.0,
                Some((lu, _, sign)) => (0..self.rows).map(|i| lu[(i, i)]).product::<f64>() * sign,
            },
        }
    }

    /// Inverse of a square matrix, `None` if singular.
    pub fn inverse(&self) -> Option<Matrix> {
        assert!(self.is_square(), "inverse of non-square matrix");
        let n = self.rows;
        let (lu, perm, _) = self.lu()?;
        let mut inv = Matrix::zeros(n, n);
        for c in 0..n {
            let mut x: Vec<f64> = (0..n).map(|i| if perm[i] == c { 1.0 } else { 0.0 }).collect();
            for i in 0..n {
                for k in 0..i {
                    x[i] -= lu[(i, k)] * x[k];
                }
            }
            for i in (0..n).rev() {
                for k in i + 1..n {
                    x[i] -= lu[(i, k)] * x[k];
                }
                x[i] /= lu[(i, i)];
            }
            for i in 0..n {
                inv[(i, c)] = x[i];
            }
        }
        inv.is_finite().then_some(inv)
    }

    /// Symmetric part `½(A + Aᵀ)`.
    pub fn symmetric_part(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..i {
                m = m.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        m
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl AddAssign<&Matrix> for Matrix {
    fn add_assign(&mut self, rhs: &Matrix) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

impl Mul<f64> for &Matrix {
    type Output = Matrix;
    fn mul(self, s: f64) -> Matrix {
        self.scale(s)
    }
}

impl Neg for &Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

/// Dense row-major tensor of arbitrary order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Tensor { dims: dims.to_vec(), data: vec![0.0; dims.iter().product()] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) || data.len() != dims.iter().product::<usize>() {
            return Err(QcError::Shape(format!("dims {dims:?} do not match {} entries", data.len())));
        }
        Ok(Tensor { dims: dims.to_vec(), data })
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Tensor::zeros(dims);
        let mut idx = vec![0; dims.len()];
        for k in 0..t.data.len() {
            t.data[k] = f(&idx);
            for a in (0..dims.len()).rev() {
                idx[a] += 1;
                if idx[a] < dims[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        t
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { dims: Vec::new(), data: vec![v] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    #[inline]
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    #[inline]
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// Value of an order-0 tensor (or the single entry of any 1-element tensor).
    pub fn as_scalar(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Reorders slots: slot `k` of the result is slot `axes[k]` of `self`.
    pub fn permute(&self, axes: &[usize]) -> Tensor {
        assert_eq!(axes.len(), self.dims.len());
        let dims: Vec<usize> = axes.iter().map(|&a| self.dims[a]).collect();
        let mut src = vec![0; axes.len()];
        Tensor::from_fn(&dims, |idx| {
            for (k, &a) in axes.iter().enumerate() {
                src[a] = idx[k];
            }
            self.get(&src)
        })
    }

    pub fn scale(&self, s: f64) -> Tensor {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        match self.dims.as_slice() {
            [r, c] => Matrix::from_vec(*r, *c, self.data.clone()),
            d => Err(QcError::Shape(format!("tensor of dims {d:?} is not a matrix"))),
        }
    }
}

impl From<&Matrix> for Tensor {
    fn from(m: &Matrix) -> Self {
        Tensor { dims: vec![m.rows(), m.cols()], data: m.data().to_vec() }
    }
}

impl From<Matrix> for Tensor {
    fn from(m: Matrix) -> Self {
        Tensor { dims: vec![m.rows, m.cols], data: m.data }
    }
}

impl Sub for &Tensor {
    type Output = Tensor;
    fn sub(self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.dims, rhs.dims);
        Tensor { dims: self.dims.clone(), data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect() }
    }
}

impl Add for &Tensor {
    type Output = Tensor;
    fn add(self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.dims, rhs.dims);
        Tensor { dims: self.dims.clone(), data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect() }
    }
}

/// Which slots a contraction sums over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slots {
    /// Every slot of the right operand is paired with the trailing slots of the left one.
    All,
    /// The last `k` slots of the left operand against the first `k` of the right one.
    Trailing(usize),
}

/// The `:` contraction: trailing slots of `s` summed against leading slots of `t`.
///
/// With `Slots::All` and two matrices this is the Frobenius pairing `tr(SᵀT)`;
/// for `S` of dims `(N, N, n, n)` and `T` of dims `(N, n, n)` it yields the vector
/// `S_{αβij} T_{βij}`.
pub fn contract(s: &Tensor, t: &Tensor, slots: Slots) -> Result<Tensor> {
    let k = match slots {
        Slots::All => t.order(),
        Slots::Trailing(k) => k,
    };
    if k > s.order() || k > t.order() {
        return Err(QcError::Shape(format!(
            "cannot contract {k} slots of {:?} against {:?}",
            s.dims, t.dims
        )));
    }
    let q = s.order() - k;
    if s.dims[q..] != t.dims[..k] {
        return Err(QcError::Shape(format!(
            "contracted slots differ: {:?} vs {:?}",
            &s.dims[q..],
            &t.dims[..k]
        )));
    }
    let inner: usize = t.dims[..k].iter().product();
    let outer: usize = s.dims[..q].iter().product();
    let rest: usize = t.dims[k..].iter().product();
    let mut data = vec![0.0; outer * rest];
    for a in 0..outer {
        let srow = &s.data[a * inner..(a + 1) * inner];
        for (m, &sv) in srow.iter().enumerate() {
            if sv == 0.0 {
                continue;
            }
            let trow = &t.data[m * rest..(m + 1) * rest];
            let out = &mut data[a * rest..(a + 1) * rest];
            for (o, &tv) in out.iter_mut().zip(trow) {
                *o += sv * tv;
            }
        }
    }
    let mut dims = s.dims[..q].to_vec();
    dims.extend_from_slice(&t.dims[k..]);
    Ok(Tensor { dims, data })
}

/// Cofactor matrix, `cof(A)_{ij} = (-1)^{i+j} det(A without row i, column j)`.
pub fn cofactor(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(QcError::Shape(format!("cofactor of {}x{} matrix", a.rows(), a.cols())));
    }
    let n = a.rows();
    if n == 1 {
        return Ok(Matrix::identity(1));
    }
    Ok(Matrix::from_fn(n, n, |i, j| {
        let minor = Matrix::from_fn(n - 1, n - 1, |r, c| {
            a[(if r < i { r } else { r + 1 }, if c < j { c } else { c + 1 })]
        });
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * minor.determinant()
    }))
}

/// Ahlfors operator `S(A) = ½(A + Aᵀ) − (tr A / n) I`.
pub fn ahlfors(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(QcError::Shape(format!("Ahlfors operator of {}x{} matrix", a.rows(), a.cols())));
    }
    let n = a.rows();
    let shift = a.trace() / n as f64;
    let mut s = a.symmetric_part();
    for i in 0..n {
        s[(i, i)] -= shift;
    }
    Ok(s)
}

/// Thin singular value decomposition `M = U Σ Vᵀ` by one-sided Jacobi rotations.
#[derive(Clone, Debug)]
pub struct Svd {
    /// Left singular vectors as columns (`rows × cols`); zero columns for vanishing σ.
    pub u: Matrix,
    /// Singular values, descending.
    pub sigma: Vec<f64>,
    /// Right singular vectors as columns (`cols × cols`).
    pub v: Matrix,
}

pub fn svd(m: &Matrix) -> Svd {
    let (rows, cols) = (m.rows(), m.cols());
    let mut a = m.clone();
    let mut v = Matrix::identity(cols);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    a[(i, p)] = c * x - s * y;
                    a[(i, q)] = s * x + c * y;
                }
                for i in 0..cols {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..cols).map(|j| a.col(j).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let mut u = Matrix::zeros(rows, cols);
    let mut vs = Matrix::zeros(cols, cols);
    let mut sigma = Vec::with_capacity(cols);
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        for i in 0..rows {
            u[(i, k)] = if s > 0.0 { a[(i, j)] / s } else { 0.0 };
        }
        for i in 0..cols {
            vs[(i, k)] = v[(i, j)];
        }
    }
    Svd { u, sigma, v: vs }
}

/// Orthogonal projections onto `range(M)` and `null(Mᵀ)`.
#[derive(Clone, Debug)]
pub struct ProjectionPair {
    pub proj_range: Matrix,
    pub proj_null: Matrix,
    pub eps_rank: usize,
    /// Singular values of `M`, descending (`min(N, n)` of them).
    pub sigma: Vec<f64>,
}

impl ProjectionPair {
    /// Applies the range projection `[M]^⊤` to a vector.
    pub fn tangential(&self, v: &[f64]) -> Vec<f64> {
        self.proj_range.mat_vec(v)
    }

    /// Applies the null projection `[M]^⊥` to a vector.
    pub fn normal(&self, v: &[f64]) -> Vec<f64> {
        self.proj_null.mat_vec(v)
    }

    /// Orthonormal basis of `null(Mᵀ)` (columns of the result).
    pub fn null_basis(&self) -> Vec<Vec<f64>> {
        let n = self.proj_null.rows();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        // Columns of the null projector span the null space; pick them in order of size.
        let mut cols: Vec<Vec<f64>> = (0..n).map(|j| self.proj_null.col(j)).collect();
        cols.sort_by(|a, b| norm(b).total_cmp(&norm(a)));
        for c in cols {
            if basis.len() == n - self.eps_rank {
                break;
            }
            let mut w = c;
            for b in &basis {
                let d = dot(&w, b);
                axpy(-d, b, &mut w);
            }
            let nw = norm(&w);
            if nw > 1e-6 {
                basis.push(w.iter().map(|x| x / nw).collect());
            }
        }
        basis
    }
}

/// ε-rank projections with the purely relative threshold `σᵢ > τ·σ₁`.
pub fn projections(m: &Matrix, tau: f64) -> Result<ProjectionPair> {
    projections_scaled(m, tau, 0.0)
}

/// ε-rank projections with threshold `σᵢ > τ·max(σ₁, scale)`.
///
/// `scale` is the natural magnitude of `M`; it keeps round-off-sized matrices
/// (such as `K_P` at a conformal point) at rank 0.
pub fn projections_scaled(m: &Matrix, tau: f64, scale: f64) -> Result<ProjectionPair> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(QcError::Precondition(format!("rank tolerance must lie in (0, 1), got {tau}")));
    }
    if !m.is_finite() {
        return Err(QcError::Precondition("non-finite matrix in projections".into()));
    }
    let big = m.rows();
    let dec = svd(m);
    let kept = m.rows().min(m.cols());
    let sigma: Vec<f64> = dec.sigma.iter().take(kept).copied().collect();
    let s1 = sigma.first().copied().unwrap_or(0.0);
    let threshold = tau * s1.max(scale);
    let rank = if s1 == 0.0 { 0 } else { sigma.iter().filter(|&&s| s > threshold).count() };

    if rank == big {
        return Ok(ProjectionPair {
            proj_range: Matrix::identity(big),
            proj_null: Matrix::zeros(big, big),
            eps_rank: rank,
            sigma,
        });
    }
    // Re-orthonormalise the kept left singular vectors so the projector is
    // idempotent to working precision.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rank);
    for k in 0..rank {
        let mut w = dec.u.col(k);
        for _ in 0..2 {
            for b in &basis {
                let d = dot(&w, b);
                axpy(-d, b, &mut w);
            }
        }
        let nw = norm(&w);
        basis.push(w.iter().map(|x| x / nw).collect());
    }
    let mut proj_range = Matrix::zeros(big, big);
    for b in &basis {
        for i in 0..big {
            for j in 0..big {
                proj_range[(i, j)] += b[i] * b[j];
            }
        }
    }
    let proj_null = &Matrix::identity(big) - &proj_range;
    Ok(ProjectionPair { proj_range, proj_null, eps_rank: rank, sigma })
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricSpectrum {
    /// Eigenvalues, ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigen-solver for symmetric matrices.
pub fn symmetric_spectrum(a: &Matrix) -> Result<SymmetricSpectrum> {
    if !a.is_square() {
        return Err(QcError::Shape(format!("spectrum of {}x{} matrix", a.rows(), a.cols())));
    }
    let scale = a.norm();
    if a.asymmetry() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(QcError::Precondition("symmetric_spectrum needs a symmetric matrix".into()));
    }
    let n = a.rows();
    let mut m = a.symmetric_part();
    let mut v = Matrix::identity(n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| m[(i, j)].powi(2)).sum();
        if off <= (f64::EPSILON * scale).powi(2) * 1e-2 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta.is_finite() {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                } else {
                    0.0
                };
                if t == 0.0 {
                    continue;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[(x, x)].total_cmp(&m[(y, y)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok(SymmetricSpectrum { values, vectors })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    // Leibniz expansion, independent of the LU path.
    fn det_permutation(a: &Matrix) -> f64 {
        fn perms(n: usize) -> Vec<Vec<usize>> {
            if n == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for p in perms(n - 1) {
                for pos in 0..n {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }
        let n = a.rows();
        perms(n)
            .into_iter()
            .map(|p| {
                let mut inv = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        if p[i] > p[j] {
                            inv += 1;
                        }
                    }
                }
                let sign = if inv % 2 == 0 { 1.0 } else { -1.0 };
                sign * (0..n).map(|i| a[(i, p[i])]).product::<f64>()
            })
            .sum()
    }

    #[test]
    fn contract_identity_and_frobenius() {
        let i2 = Tensor::from(Matrix::identity(2));
        assert_eq!(contract(&i2, &i2, Slots::All).unwrap().as_scalar(), Some(2.0));
        let a = Tensor::from(Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = Tensor::from(Matrix::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]));
        assert_eq!(contract(&a, &b, Slots::All).unwrap().as_scalar(), Some(70.0));
    }

    #[test]
    fn contract_four_by_three_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (big, n) = (3, 2);
        let s = Tensor::from_fn(&[big, big, n, n], |_| rng.random_range(-1.0..1.0));
        let t = Tensor::from_fn(&[big, n, n], |_| rng.random_range(-1.0..1.0));
        let got = contract(&s, &t, Slots::Trailing(3)).unwrap();
        assert_eq!(got.dims(), &[big]);
        for a in 0..big {
            let mut naive = 0.0;
            for b in 0..big {
                for i in 0..n {
                    for j in 0..n {
                        naive += s.get(&[a, b, i, j]) * t.get(&[b, i, j]);
                    }
                }
            }
            assert!((got.get(&[a]) - naive).abs() <= 1e-12 * naive.abs().max(1.0));
        }
    }

    #[test]
    fn contract_rejects_mismatched_slots() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 2]);
        assert!(matches!(contract(&a, &b, Slots::All), Err(QcError::Shape(_))));
        assert!(matches!(contract(&a, &b, Slots::Trailing(3)), Err(QcError::Shape(_))));
    }

    #[test]
    fn cofactor_closed_forms() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(cofactor(&a).unwrap(), Matrix::from_rows(&[&[4.0, -3.0], &[-2.0, 1.0]]));
        assert_eq!(cofactor(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
        assert!(cofactor(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn cofactor_identity_against_leibniz_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..=4 {
            for _ in 0..50 {
                let a = random_matrix(&mut rng, n, n);
                let det = det_permutation(&a);
                assert!((a.determinant() - det).abs() <= 1e-12 * det.abs().max(1.0));
                let lhs = a.matmul(&cofactor(&a).unwrap().transpose());
                let err = (&lhs - &Matrix::identity(n).scale(det)).max_abs();
                assert!(err <= 1e-10 * det.abs().max(1.0), "n={n} err={err}");
            }
        }
    }

    #[test]
    fn ahlfors_examples() {
        assert_eq!(ahlfors(&Matrix::identity(3)).unwrap().max_abs(), 0.0);
        assert_eq!(ahlfors(&Matrix::diag(&[3.0, 1.0])).unwrap(), Matrix::diag(&[1.0, -1.0]));
    }

    #[test]
    fn projections_examples() {
        let e11 = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let p = projections(&e11, DEFAULT_TAU).unwrap();
        assert_eq!(p.eps_rank, 1);
        assert!((&p.proj_range - &Matrix::diag(&[1.0, 0.0])).max_abs() < 1e-15);
        assert!((&p.proj_null - &Matrix::diag(&[0.0, 1.0])).max_abs() < 1e-15);

        let z = projections(&Matrix::zeros(3, 2), DEFAULT_TAU).unwrap();
        assert_eq!(z.eps_rank, 0);
        assert_eq!(z.proj_null, Matrix::identity(3));
        assert!(projections(&e11, 0.0).is_err());
    }

    #[test]
    fn projections_match_gram_schmidt_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let m = random_matrix(&mut rng, 3, 2);
            // Gram–Schmidt on the columns of M.
            let c0 = m.col(0);
            let q0: Vec<f64> = c0.iter().map(|x| x / norm(&c0)).collect();
            let mut c1 = m.col(1);
            let d = dot(&c1, &q0);
            axpy(-d, &q0, &mut c1);
            let q1: Vec<f64> = c1.iter().map(|x| x / norm(&c1)).collect();
            let oracle = &Matrix::outer(&q0, &q0) + &Matrix::outer(&q1, &q1);
            let p = projections(&m, DEFAULT_TAU).unwrap();
            assert_eq!(p.eps_rank, 2);
            assert!((&p.proj_range - &oracle).max_abs() < 1e-10);
            assert!((&p.proj_range.matmul(&m) - &m).max_abs() < 1e-10);
            assert!(p.proj_null.matmul(&m).max_abs() < 1e-10);
        }
    }

    #[test]
    fn projections_scaled_floor_suppresses_roundoff() {
        let tiny = Matrix::from_rows(&[&[1e-17, 0.0], &[0.0, -2e-17]]);
        assert_eq!(projections(&tiny, DEFAULT_TAU).unwrap().eps_rank, 2);
        assert_eq!(projections_scaled(&tiny, DEFAULT_TAU, 1.0).unwrap().eps_rank, 0);
    }

    #[test]
    fn spectrum_examples() {
        let s = symmetric_spectrum(&Matrix::diag(&[3.0, 1.0, 2.0])).unwrap();
        assert_eq!(s.values, vec![1.0, 2.0, 3.0]);
        let g = Matrix::from_rows(&[&[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0], &[0.0, 0.0, 0.0]]);
        let sg = symmetric_spectrum(&ahlfors(&g).unwrap()).unwrap();
        assert!(sg.values.iter().sum::<f64>().abs() < 1e-14);
        assert!(symmetric_spectrum(&Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]])).is_err());
    }

    // Trigonometric roots of the characteristic cubic of a symmetric 3x3 matrix.
    fn cubic_eigenvalues(a: &Matrix) -> [f64; 3] {
        let q = a.trace() / 3.0;
        let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let mut b = a.clone();
        for i in 0..3 {
            b[(i, i)] -= q;
        }
        let r = (b.scale(1.0 / p).determinant() / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let mut e = [e3, 3.0 * q - e1 - e3, e1];
        e.sort_by(f64::total_cmp);
        e
    }

    #[test]
    fn spectrum_matches_characteristic_polynomial_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let b = random_matrix(&mut rng, 3, 3);
            let a = b.symmetric_part();
            let s = symmetric_spectrum(&a).unwrap();
            let oracle = cubic_eigenvalues(&a);
            for (x, y) in s.values.iter().zip(oracle) {
                assert!((x - y).abs() < 1e-9 * a.norm().max(1.0));
            }
            let v = &s.vectors;
            let recon = v.matmul(&Matrix::diag(&s.values)).matmul(&v.transpose());
            assert!((&recon - &a).max_abs() < 1e-9 * a.norm());
            assert!((&v.transpose().matmul(v) - &Matrix::identity(3)).max_abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn ahlfors_is_symmetric_and_traceless(entries in prop::collection::vec(-10.0f64..10.0, 9)) {
            let a = Matrix::from_vec(3, 3, entries).unwrap();
            let s = ahlfors(&a).unwrap();
            prop_assert!(s.trace().abs() <= 1e-12 * 3.0 * a.norm().max(1.0));
            prop_assert_eq!(s.asymmetry(), 0.0);
        }

        #[test]
        fn projection_pair_invariants(entries in prop::collection::vec(-5.0f64..5.0, 8), rank_cut in 0usize..3) {
            let mut m = Matrix::from_vec(4, 2, entries).unwrap();
            if rank_cut == 1 {
                for i in 0..4 { m[(i, 1)] = 2.0 * m[(i, 0)]; }
            }
            let p = projections(&m, DEFAULT_TAU).unwrap();
            let id = Matrix::identity(4);
            prop_assert!((&(&p.proj_range + &p.proj_null) - &id).max_abs() <= 1e-12);
            prop_assert!((&p.proj_range.matmul(&p.proj_range) - &p.proj_range).max_abs() <= 1e-10);
            prop_assert!((&p.proj_null.matmul(&p.proj_null) - &p.proj_null).max_abs() <= 1e-10);
            prop_assert!(p.proj_range.asymmetry() <= 1e-10);
            let s1 = p.sigma[0];
            prop_assert!(p.proj_null.transpose().matmul(&m).norm() <= DEFAULT_TAU * s1 * 2f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn ahlfors_never_has_eps_rank_one() {
        // Traceless symmetric matrices cannot have exactly one non-zero eigenvalue.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for k in 0..10_000 {
            let n = 2 + k % 3;
            let a = random_matrix(&mut rng, n, n);
            let s = ahlfors(&a).unwrap();
            let spec = symmetric_spectrum(&s).unwrap();
            let scale = spec.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let rank = spec.values.iter().filter(|v| v.abs() > DEFAULT_TAU * scale).count();
            assert_ne!(rank, 1);
        }
    }
}
