//! Dense column-major linear algebra.
//!
//! Everything here accumulates in `f64` with a fixed sequential order per
//! output entry, so that two parties running the same inputs on different
//! machines produce bit-identical Gram products and factors.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{DashError, Result};

/// Relative rank tolerance for [`qr_positive`]:
/// `|R_kk| <= RANK_TOL * max_column_norm * sqrt(N)` flags a dependent column.
pub const RANK_TOL: f64 = 1e-10;

/// Relative tolerance on the triangular diagonal in [`solve_rt_transposed`].
pub const TRIANGULAR_TOL: f64 = 1e-14;

/// Cholesky pivot tolerance relative to `trace / K`.
pub const PIVOT_TOL: f64 = 1e-12;

/// Symmetry tolerance accepted by [`solve_spd`], relative to the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Column-major matrix of finite `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from column-major data, rejecting non-finite entries.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DashError::DimensionMismatch(format!("data length {} != {rows} x {cols}", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(DashError::NonFinite { row: i % rows.max(1), col: i / rows.max(1) });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DashError::DimensionMismatch(format!("data length {} != {rows} x {cols}", data.len())));
        }
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = data[i * cols + j];
            }
        }
        Self::from_col_major(rows, cols, out)
    }

    /// Builds a matrix from a list of equal-length columns.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(DashError::DimensionMismatch(format!(
                    "column {j} has length {} (expected {rows})",
                    c.len()
                )));
            }
            data.extend_from_slice(c);
        }
        Self::from_col_major(rows, columns.len(), data)
    }

    pub fn column_vector(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::from_col_major(n, 1, values)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, &d) in diag.iter().enumerate() {
            data[i * n + i] = d;
        }
        Self::from_col_major(n, n, data)
    }

    /// Internal constructor for results of arithmetic on finite inputs.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
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

    /// Column-major backing storage.
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    #[inline]
    pub(crate) fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[col * self.rows + row] = value;
    }

    #[inline]
    pub fn column(&self, col: usize) -> &[f64] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    /// Copies a contiguous range of columns.
    pub fn column_range(&self, range: Range<usize>) -> DenseMatrix {
        let data = self.data[range.start * self.rows..range.end * self.rows].to_vec();
        Self::from_parts(self.rows, range.len(), data)
    }

    /// Copies the listed columns in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for &c in cols {
            data.extend_from_slice(self.column(c));
        }
        Self::from_parts(self.rows, cols.len(), data)
    }

    /// Copies the listed rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for c in 0..self.cols {
            let col = self.column(c);
            data.extend(rows.iter().map(|&r| col[r]));
        }
        Self::from_parts(rows.len(), self.cols, data)
    }

    /// Copies a contiguous range of rows.
    pub fn row_range(&self, range: Range<usize>) -> DenseMatrix {
        let mut data = Vec::with_capacity(range.len() * self.cols);
        for c in 0..self.cols {
            data.extend_from_slice(&self.column(c)[range.clone()]);
        }
        Self::from_parts(range.len(), self.cols, data)
    }

    /// `[self | other]`.
    pub fn hstack(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(DashError::DimensionMismatch(format!("hstack rows {} vs {}", self.rows, other.rows)));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self::from_parts(self.rows, self.cols + other.cols, data))
    }

    /// Stacks matrices with equal column counts on top of one another.
    pub fn vstack(blocks: &[&DenseMatrix]) -> Result<DenseMatrix> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        if let Some(b) = blocks.iter().find(|b| b.cols != cols) {
            return Err(DashError::DimensionMismatch(format!("vstack columns {} vs {cols}", b.cols)));
        }
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for b in blocks {
                data.extend_from_slice(b.column(c));
            }
        }
        Ok(Self::from_parts(rows, cols, data))
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = vec![0.0; self.data.len()];
        for c in 0..self.cols {
            for r in 0..self.rows {
                out[r * self.cols + c] = self.data[c * self.rows + r];
            }
        }
        Self::from_parts(self.cols, self.rows, out)
    }

    /// Plain product `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(DashError::DimensionMismatch(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = vec![0.0; self.rows * other.cols];
        for j in 0..other.cols {
            let dst = &mut out[j * self.rows..(j + 1) * self.rows];
            for (l, &b) in other.column(j).iter().enumerate() {
                if b != 0.0 {
                    for (d, &a) in dst.iter_mut().zip(self.column(l)) {
                        *d += a * b;
                    }
                }
            }
        }
        Ok(Self::from_parts(self.rows, other.cols, out))
    }

    /// Entrywise sum. Shapes must agree.
    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(DashError::DimensionMismatch(format!("add {:?} vs {:?}", self.shape(), other.shape())));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self::from_parts(self.rows, self.cols, data))
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        Self::from_parts(self.rows, self.cols, self.data.iter().map(|v| v * s).collect())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.cols.min(self.rows) {
            for i in 0..j {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Row-major copy of the data.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.transpose().data
    }

    /// Row-major upper triangle (including the diagonal) of a square matrix.
    pub fn upper_triangle_row_major(&self) -> Vec<f64> {
        let n = self.rows;
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..self.cols {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Inverse of [`upper_triangle_row_major`](Self::upper_triangle_row_major).
    pub fn from_upper_triangle_row_major(n: usize, values: &[f64]) -> Result<DenseMatrix> {
        if values.len() != n * (n + 1) / 2 {
            return Err(DashError::DimensionMismatch(format!(
                "upper triangle of order {n} needs {} values, got {}",
                n * (n + 1) / 2,
                values.len()
            )));
        }
        let mut m = Self::zeros(n, n);
        let mut it = values.iter();
        for i in 0..n {
            for j in i..n {
                m.set(i, j, *it.next().unwrap());
            }
        }
        if let Some(i) = m.data.iter().position(|v| !v.is_finite()) {
            return Err(DashError::NonFinite { row: i % n, col: i / n });
        }
        Ok(m)
    }
}

/// Veltkamp splitting constant, `2^27 + 1`.
const SPLITTER: f64 = 134_217_729.0;

#[inline(always)]
fn split(a: f64) -> (f64, f64) {
    let c = SPLITTER * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

#[inline(always)]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let t = a + b;
    let z = t - a;
    (t, (a - (t - z)) + (b - z))
}

/// Exact rounding error of `x * y` (Dekker), symmetric in its arguments.
#[inline(always)]
fn product_error(x: f64, y: f64, p: f64) -> f64 {
    let (xh, xl) = split(x);
    let (yh, yl) = split(y);
    ((xh * yh - p) + (xh * yl + xl * yh)) + xl * yl
}

const DOT_LANES: usize = 4;

/// Compensated dot product (error-free products and sums, accumulated in a
/// second word). The result is about as accurate as a dot product carried
/// out in twice the working precision and then rounded, so partial sums
/// taken over different row partitions agree to the last bit or two even
/// when the sum cancels heavily. Symmetric in its arguments bit for bit.
/// Four interleaved lanes hide the latency of the dependent adds.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0f64; DOT_LANES];
    let mut c = [0.0f64; DOT_LANES];
    let mut ca = a.chunks_exact(DOT_LANES);
    let mut cb = b.chunks_exact(DOT_LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..DOT_LANES {
            let p = xa[l] * xb[l];
            let (t, q) = two_sum(s[l], p);
            c[l] += q + product_error(xa[l], xb[l], p);
            s[l] = t;
        }
    }
    let (mut st, mut ct) = (0.0f64, 0.0f64);
    for l in 0..DOT_LANES {
        let (t, q) = two_sum(st, s[l]);
        ct += q + c[l];
        st = t;
    }
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        let p = x * y;
        let (t, q) = two_sum(st, p);
        ct += q + product_error(x, y, p);
        st = t;
    }
    let r = st + ct;
    if r.is_finite() {
        r
    } else {
        // splitting overflows near f64::MAX; fall back to the plain sum
        a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
    }
}

/// `aᵀb`, each entry a compensated dot product over rows.
///
/// Output columns may be computed in parallel; the per-entry accumulation
/// order is fixed, so the result is bitwise reproducible and
/// `gram(a, b)ᵀ == gram(b, a)` exactly.
pub fn gram(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(DashError::DimensionMismatch(format!("gram rows {} vs {}", a.rows, b.rows)));
    }
    let k = a.cols;
    let mut out = vec![0.0; k * b.cols];
    let fill = |(j, dst): (usize, &mut [f64])| {
        let bj = b.column(j);
        for (i, d) in dst.iter_mut().enumerate() {
            *d = dot(a.column(i), bj);
        }
    };
    if k == 0 {
        return Ok(DenseMatrix::from_parts(0, b.cols, out));
    }
    if a.rows * k * b.cols >= 1 << 20 {
        out.par_chunks_mut(k).enumerate().for_each(fill);
    } else {
        out.chunks_mut(k).enumerate().for_each(fill);
    }
    Ok(DenseMatrix::from_parts(k, b.cols, out))
}

/// `Σ_i a_im²` for every column `m`.
pub fn column_squared_norms(a: &DenseMatrix) -> Vec<f64> {
    (0..a.cols)
        .map(|c| {
            let col = a.column(c);
            dot(col, col)
        })
        .collect()
}

/// Thin QR factors with `diag(R) > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct QRFactors {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
}

/// Householder reflectors and the (sign-unnormalized) R produced by them.
struct Householder {
    // Each reflector is stored over rows j..N of column j.
    vectors: Vec<Vec<f64>>,
    betas: Vec<f64>,
    r: DenseMatrix,
    // Sign applied to row k of R (and column k of Q) so that R_kk > 0.
    signs: Vec<f64>,
}

fn householder(a: &DenseMatrix) -> Result<Householder> {
    let (n, k) = a.shape();
    if k == 0 || n < k {
        return Err(DashError::DimensionMismatch(format!("QR requires N >= K >= 1, got {n} x {k}")));
    }
    let max_norm = column_squared_norms(a).into_iter().fold(0.0f64, f64::max).sqrt();
    let tolerance = RANK_TOL * max_norm * (n as f64).sqrt();

    let mut work = a.data.clone();
    let mut vectors = Vec::with_capacity(k);
    let mut betas = Vec::with_capacity(k);
    for j in 0..k {
        let x = &work[j * n + j..(j + 1) * n];
        let norm = dot(x, x).sqrt();
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vtv = dot(&v, &v);
        let beta = if vtv > 0.0 { 2.0 / vtv } else { 0.0 };
        for c in j..k {
            let col = &mut work[c * n + j..(c + 1) * n];
            let s = beta * dot(&v, col);
            if s != 0.0 {
                for (w, vi) in col.iter_mut().zip(&v) {
                    *w -= s * vi;
                }
            }
        }
        vectors.push(v);
        betas.push(beta);
    }

    let mut r = DenseMatrix::zeros(k, k);
    let mut signs = vec![1.0; k];
    for j in 0..k {
        for i in 0..=j {
            r.set(i, j, work[j * n + i]);
        }
    }
    for (i, sign) in signs.iter_mut().enumerate() {
        let d = r.get(i, i);
        if !(d.abs() > tolerance) {
            return Err(DashError::RankDeficient { column: i, value: d.abs(), tolerance });
        }
        if d < 0.0 {
            *sign = -1.0;
            for j in i..k {
                r.set(i, j, -r.get(i, j));
            }
        }
    }
    Ok(Householder { vectors, betas, r, signs })
}

/// Thin Householder QR of a full-column-rank `N x K` matrix, normalized so
/// that every diagonal entry of `R` is strictly positive (the unique QR).
///
/// Deterministic: identical input bytes give identical output bytes.
pub fn qr_positive(a: &DenseMatrix) -> Result<QRFactors> {
    let h = householder(a)?;
    let (n, k) = a.shape();
    let mut q = vec![0.0; n * k];
    for j in 0..k {
        q[j * n + j] = 1.0;
    }
    for j in (0..k).rev() {
        let v = &h.vectors[j];
        let beta = h.betas[j];
        for c in j..k {
            let col = &mut q[c * n + j..(c + 1) * n];
            let s = beta * dot(v, col);
            if s != 0.0 {
                for (w, vi) in col.iter_mut().zip(v) {
                    *w -= s * vi;
                }
            }
        }
    }
    for (c, &sign) in h.signs.iter().enumerate() {
        if sign < 0.0 {
            q[c * n..(c + 1) * n].iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(QRFactors { q: DenseMatrix::from_parts(n, k, q), r: h.r })
}

/// The `R` factor of [`qr_positive`] without forming `Q`. Bitwise equal to
/// `qr_positive(a)?.r`.
pub fn r_factor(a: &DenseMatrix) -> Result<DenseMatrix> {
    householder(a).map(|h| h.r)
}

fn check_triangular_diag(r: &DenseMatrix) -> Result<()> {
    let k = r.rows;
    if r.cols != k {
        return Err(DashError::DimensionMismatch(format!("triangular factor must be square, got {k} x {}", r.cols)));
    }
    let max_diag = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..k {
        let d = r.get(i, i);
        if !(d > TRIANGULAR_TOL * max_diag) {
            return Err(DashError::SingularTriangular { index: i, value: d });
        }
    }
    Ok(())
}

/// `(R⁻¹)ᵀ b` by forward substitution on `Rᵀ`; no inverse is formed.
pub fn solve_rt_transposed(r: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let k = r.rows;
    if b.rows != k {
        return Err(DashError::DimensionMismatch(format!("solve: R is {k} x {k}, rhs has {} rows", b.rows)));
    }
    check_triangular_diag(r)?;
    let mut out = b.data.clone();
    for col in out.chunks_mut(k.max(1)).take(b.cols) {
        for i in 0..k {
            // (Rᵀ)_{i,j} = R_{j,i} for j < i; column i of R holds these contiguously.
            let ri = r.column(i);
            let mut s = col[i];
            for j in 0..i {
                s -= ri[j] * col[j];
            }
            col[i] = s / ri[i];
        }
    }
    Ok(DenseMatrix::from_parts(k, b.cols, out))
}

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        let k = a.rows;
        if a.cols != k {
            return Err(DashError::DimensionMismatch(format!("Cholesky needs a square matrix, got {k} x {}", a.cols)));
        }
        let asym = a.asymmetry();
        if asym > SYMMETRY_TOL * a.max_abs().max(1.0) {
            return Err(DashError::NotSymmetric(asym));
        }
        let trace: f64 = a.diagonal().iter().sum();
        let pivot_floor = PIVOT_TOL * trace / k.max(1) as f64;
        let mut l = DenseMatrix::zeros(k, k);
        for j in 0..k {
            let mut d = a.get(j, j);
            for p in 0..j {
                d -= l.get(j, p) * l.get(j, p);
            }
            if !(d > 0.0) || d <= pivot_floor {
                return Err(DashError::NotPositiveDefinite { index: j, value: d });
            }
            let d = d.sqrt();
            l.set(j, j, d);
            for i in j + 1..k {
                let mut s = a.get(i, j);
                for p in 0..j {
                    s -= l.get(i, p) * l.get(j, p);
                }
                l.set(i, j, s / d);
            }
        }
        Ok(Self { l })
    }

    pub fn lower(&self) -> &DenseMatrix {
        &self.l
    }

    /// `Lᵀ`: the unique upper-triangular `R` with positive diagonal and `RᵀR = A`.
    pub fn upper(&self) -> DenseMatrix {
        self.l.transpose()
    }

    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        let k = self.l.rows;
        if b.rows != k {
            return Err(DashError::DimensionMismatch(format!("solve: A is {k} x {k}, rhs has {} rows", b.rows)));
        }
        let mut out = b.data.clone();
        for col in out.chunks_mut(k.max(1)).take(b.cols) {
            for i in 0..k {
                let mut s = col[i];
                for j in 0..i {
                    s -= self.l.get(i, j) * col[j];
                }
                col[i] = s / self.l.get(i, i);
            }
            for i in (0..k).rev() {
                let mut s = col[i];
                for j in i + 1..k {
                    s -= self.l.get(j, i) * col[j];
                }
                col[i] = s / self.l.get(i, i);
            }
        }
        Ok(DenseMatrix::from_parts(k, b.cols, out))
    }

    /// `diag(A⁻¹)`: squared row norms of `L⁻¹`.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let k = self.l.rows;
        // Column c of L⁻¹ by forward substitution on e_c, stored column-major.
        let mut linv = vec![0.0; k * k];
        for c in 0..k {
            for i in c..k {
                let mut s = if i == c { 1.0 } else { 0.0 };
                for j in c..i {
                    s -= self.l.get(i, j) * linv[c * k + j];
                }
                linv[c * k + i] = s / self.l.get(i, i);
            }
        }
        // A⁻¹ = L⁻ᵀ L⁻¹, so (A⁻¹)_jj is the squared norm of column j of L⁻¹.
        (0..k).map(|j| linv[j * k..(j + 1) * k].iter().map(|v| v * v).sum()).collect()
    }
}

/// Solution of an SPD system via Cholesky, plus `diag(A⁻¹)`.
#[derive(Clone, Debug)]
pub struct SpdSolution {
    pub x: DenseMatrix,
    pub inverse_diagonal: Vec<f64>,
}

pub fn solve_spd(a: &DenseMatrix, b: &DenseMatrix) -> Result<SpdSolution> {
    let chol = Cholesky::factor(a)?;
    let x = chol.solve(b)?;
    Ok(SpdSolution { x, inverse_diagonal: chol.inverse_diagonal() })
}
