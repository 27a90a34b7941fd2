//! Dense complex linear algebra for small systems (d up to a few dozen).
//!
//! Matrices are row-major. Signal blocks are stored as `d x N` matrices so a
//! sensor's samples are contiguous, which keeps the per-iteration reductions
//! `w^H X` and `X phi^T` streaming through memory.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{IceError, Result};
use crate::rng::Rng;

pub type C64 = Complex64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Condition estimate above which a Hermitian factorization is rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct CVector(Vec<C64>);

impl CVector {
    pub fn new(entries: Vec<C64>) -> Self {
        Self(entries)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![ZERO; n])
    }

    /// `e_i` of length `n`.
    pub fn basis(n: usize, i: usize) -> Self {
        let mut v = Self::zeros(n);
        v.0[i] = ONE;
        v
    }

    pub fn from_reals(re: &[f64]) -> Self {
        Self(re.iter().map(|&r| C64::new(r, 0.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, C64> {
        self.0.iter()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Inner product `self^H other`.
    pub fn dot(&self, other: &CVector) -> C64 {
        debug_assert_eq!(self.len(), other.len());
        self.0
            .iter()
            .zip(&other.0)
            .fold(ZERO, |acc, (a, b)| acc + a.conj() * b)
    }

    pub fn scale(&self, alpha: C64) -> CVector {
        CVector(self.0.iter().map(|z| z * alpha).collect())
    }

    pub fn scale_real(&self, alpha: f64) -> CVector {
        CVector(self.0.iter().map(|z| z * alpha).collect())
    }

    pub fn conj(&self) -> CVector {
        CVector(self.0.iter().map(|z| z.conj()).collect())
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: C64, x: &CVector) {
        debug_assert_eq!(self.len(), x.len());
        for (y, xi) in self.0.iter_mut().zip(&x.0) {
            *y += alpha * xi;
        }
    }

    pub fn add(&self, other: &CVector) -> CVector {
        CVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &CVector) -> CVector {
        CVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Mean of the entries.
    pub fn mean(&self) -> C64 {
        let n = self.0.len().max(1) as f64;
        self.0.iter().sum::<C64>() / n
    }

    /// Mean of `|z|^2` over the entries.
    pub fn mean_power(&self) -> f64 {
        self.norm_sqr() / self.0.len().max(1) as f64
    }

    /// Copy of `self` rotated so the largest-magnitude entry is real positive.
    /// Used to compare phase-ambiguous vectors.
    pub fn phase_aligned(&self) -> CVector {
        let pivot = self
            .0
            .iter()
            .copied()
            .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
            .unwrap_or(ONE);
        if pivot.norm() == 0.0 {
            return self.clone();
        }
        self.scale(pivot.conj() / pivot.norm())
    }
}

impl Index<usize> for CVector {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for CVector {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.0[i]
    }
}

impl From<Vec<C64>> for CVector {
    fn from(v: Vec<C64>) -> Self {
        Self(v)
    }
}

impl FromIterator<C64> for CVector {
    fn from_iter<I: IntoIterator<Item = C64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(IceError::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[CVector]) -> Result<Self> {
        let cols = rows.first().map_or(0, CVector::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(IceError::Dimension("rows of unequal length".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_columns(cols: &[CVector]) -> Result<Self> {
        let rows = cols.first().map_or(0, CVector::len);
        if cols.iter().any(|c| c.len() != rows) {
            return Err(IceError::Dimension("columns of unequal length".into()));
        }
        Ok(Self::from_fn(rows, cols.len(), |i, j| cols[j][i]))
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let d: Vec<C64> = diag.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::from_diag(&d)
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

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_vector(&self, i: usize) -> CVector {
        CVector::new(self.row(i).to_vec())
    }

    pub fn column(&self, j: usize) -> CVector {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_row(&mut self, i: usize, v: &[C64]) {
        self.row_mut(i).copy_from_slice(v);
    }

    pub fn adjoint(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.cols != other.rows {
            return Err(IceError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `M v`.
    pub fn mul_vec(&self, v: &CVector) -> CVector {
        assert_eq!(self.cols, v.len(), "mul_vec dimension");
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v.iter())
                    .fold(ZERO, |acc, (a, b)| acc + a * b)
            })
            .collect()
    }

    /// `M^H v` without forming the adjoint.
    pub fn adjoint_mul_vec(&self, v: &CVector) -> CVector {
        assert_eq!(self.rows, v.len(), "adjoint_mul_vec dimension");
        let mut out = vec![ZERO; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            for (o, m) in out.iter_mut().zip(self.row(i)) {
                *o += m.conj() * vi;
            }
        }
        CVector::new(out)
    }

    /// Extracted row signal `w^H M` (length `cols`).
    pub fn project(&self, w: &CVector) -> CVector {
        assert_eq!(self.rows, w.len(), "project dimension");
        let mut out = vec![ZERO; self.cols];
        for i in 0..self.rows {
            let wi = w[i].conj();
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o += wi * x;
            }
        }
        CVector::new(out)
    }

    pub fn scale(&self, alpha: C64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * alpha).collect(),
        }
    }

    pub fn scale_real(&self, alpha: f64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * alpha).collect(),
        }
    }

    pub fn add(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows)
                .all(|i| (i..self.cols).all(|j| (self[(i, j)] - self[(j, i)].conj()).norm() <= tol))
    }

    /// Sub-block `[r0, r0+nr) x [c0, c0+nc)`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> CMatrix {
        CMatrix::from_fn(nr, nc, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &CMatrix) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Stack matrices with equal column counts vertically.
    pub fn vstack(blocks: &[&CMatrix]) -> Result<CMatrix> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(IceError::Dimension("vstack column mismatch".into()));
        }
        let rows = blocks.iter().map(|b| b.rows).sum();
        let data = blocks.iter().flat_map(|b| b.data.iter().copied()).collect();
        Ok(CMatrix { rows, cols, data })
    }

    /// Determinant by LU with partial pivoting.
    pub fn determinant(&self) -> Result<C64> {
        if !self.is_square() {
            return Err(IceError::Dimension("determinant of non-square matrix".into()));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut det = ONE;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].norm().total_cmp(&a[(j, k)].norm()))
                .unwrap();
            if a[(p, k)] == ZERO {
                return Ok(ZERO);
            }
            if p != k {
                a.swap_rows(p, k);
                det = -det;
            }
            let pivot = a[(k, k)];
            det *= pivot;
            for i in k + 1..n {
                let f = a[(i, k)] / pivot;
                for j in k..n {
                    let akj = a[(k, j)];
                    a[(i, j)] -= f * akj;
                }
            }
        }
        Ok(det)
    }

    /// General inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<CMatrix> {
        if !self.is_square() || self.rows == 0 {
            return Err(IceError::Dimension("inverse of non-square or empty matrix".into()));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = CMatrix::identity(n);
        let scale = self.frobenius_norm().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[(i, k)].norm().total_cmp(&a[(j, k)].norm()))
                .unwrap();
            if a[(p, k)].norm() <= 1e-14 * scale {
                return Err(IceError::Singular(f64::INFINITY));
            }
            a.swap_rows(p, k);
            inv.swap_rows(p, k);
            let pivot_inv = ONE / a[(k, k)];
            for j in 0..n {
                a[(k, j)] *= pivot_inv;
                inv[(k, j)] *= pivot_inv;
            }
            for i in 0..n {
                if i == k {
                    continue;
                }
                let f = a[(i, k)];
                if f == ZERO {
                    continue;
                }
                for j in 0..n {
                    let akj = a[(k, j)];
                    let ikj = inv[(k, j)];
                    a[(i, j)] -= f * akj;
                    inv[(i, j)] -= f * ikj;
                }
            }
        }
        Ok(inv)
    }

    fn swap_rows(&mut self, p: usize, q: usize) {
        if p == q {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(p * self.cols + j, q * self.cols + j);
        }
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Complex matrix stored as separate real and imaginary row-major planes.
///
/// Used for the long `d x N` data blocks, where the plane layout lets the
/// per-sample loops vectorize.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitMatrix {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl From<&CMatrix> for SplitMatrix {
    fn from(m: &CMatrix) -> Self {
        Self {
            rows: m.rows,
            cols: m.cols,
            re: m.data.iter().map(|z| z.re).collect(),
            im: m.data.iter().map(|z| z.im).collect(),
        }
    }
}

impl SplitMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn plane_row(&self, i: usize) -> (&[f64], &[f64]) {
        let r = i * self.cols..(i + 1) * self.cols;
        (&self.re[r.clone()], &self.im[r])
    }

    /// `w^H M` as a row signal.
    pub fn project(&self, w: &CVector) -> CVector {
        assert_eq!(self.rows, w.len(), "project dimension");
        let n = self.cols;
        let mut out_re = vec![0.0; n];
        let mut out_im = vec![0.0; n];
        for i in 0..self.rows {
            let (xr, xi) = self.plane_row(i);
            axpy_conj(w[i], xr, xi, &mut out_re, &mut out_im);
        }
        out_re.into_iter().zip(out_im).map(|(r, i)| C64::new(r, i)).collect()
    }

    /// `W M` for a small left factor.
    pub fn left_mul(&self, w: &CMatrix) -> CMatrix {
        assert_eq!(w.cols, self.rows, "left_mul dimension");
        let n = self.cols;
        let mut out = CMatrix::zeros(w.rows, n);
        let mut out_re = vec![0.0; n];
        let mut out_im = vec![0.0; n];
        for r in 0..w.rows {
            out_re.fill(0.0);
            out_im.fill(0.0);
            for i in 0..self.rows {
                let (xr, xi) = self.plane_row(i);
                axpy_conj(w[(r, i)].conj(), xr, xi, &mut out_re, &mut out_im);
            }
            for ((o, &a), &b) in out.row_mut(r).iter_mut().zip(&out_re).zip(&out_im) {
                *o = C64::new(a, b);
            }
        }
        out
    }

    /// `M v^T / N` for a row signal `v`.
    pub fn mean_product(&self, v: &[C64]) -> CVector {
        assert_eq!(self.cols, v.len(), "mean_product dimension");
        let vr: Vec<f64> = v.iter().map(|z| z.re).collect();
        let vi: Vec<f64> = v.iter().map(|z| z.im).collect();
        let n = self.cols as f64;
        (0..self.rows)
            .map(|i| {
                let (xr, xi) = self.plane_row(i);
                let [rr, ii, ri, ir] = dot_split(xr, xi, &vr, &vi);
                C64::new((rr - ii) / n, (ri + ir) / n)
            })
            .collect()
    }
}

crate::kernels::avx2_dispatch! {
/// `out += conj(w) * x` on split planes.
fn axpy_conj(w: C64, xr: &[f64], xi: &[f64], out_re: &mut [f64], out_im: &mut [f64]) {
    let n = out_re.len();
    let (xr, xi, out_im) = (&xr[..n], &xi[..n], &mut out_im[..n]);
    let (wr, wi) = (w.re, w.im);
    for j in 0..n {
        out_re[j] += wr * xr[j] + wi * xi[j];
        out_im[j] += wr * xi[j] - wi * xr[j];
    }
}
}

crate::kernels::avx2_dispatch! {
/// `[xr.vr, xi.vi, xr.vi, xi.vr]` in one pass, four lanes per sum.
fn dot_split(xr: &[f64], xi: &[f64], vr: &[f64], vi: &[f64]) -> [f64; 4] {
    const L: usize = 4;
    let n = xr.len();
    let (xi, vr, vi) = (&xi[..n], &vr[..n], &vi[..n]);
    let mut acc = [[0.0f64; L]; 4];
    let body = n - n % L;
    let mut j = 0;
    while j < body {
        for l in 0..L {
            let (a, b, c, e) = (xr[j + l], xi[j + l], vr[j + l], vi[j + l]);
            acc[0][l] += a * c;
            acc[1][l] += b * e;
            acc[2][l] += a * e;
            acc[3][l] += b * c;
        }
        j += L;
    }
    let mut out = [0.0; 4];
    for (o, a) in out.iter_mut().zip(&acc) {
        *o = (a[0] + a[2]) + (a[1] + a[3]);
    }
    for j in body..n {
        out[0] += xr[j] * vr[j];
        out[1] += xi[j] * vi[j];
        out[2] += xr[j] * vi[j];
        out[3] += xi[j] * vr[j];
    }
    out
}
}

/// `X X^H / N` for a `d x N` data block.
pub fn sample_covariance(x: &CMatrix) -> Result<CMatrix> {
    cross_covariance(x, x)
}

/// `X Y^H / N` for blocks sharing the sample count.
pub fn cross_covariance(x: &CMatrix, y: &CMatrix) -> Result<CMatrix> {
    if x.rows() == 0 || x.cols() == 0 || y.rows() == 0 {
        return Err(IceError::Dimension("covariance of an empty matrix".into()));
    }
    if x.cols() != y.cols() {
        return Err(IceError::Dimension("sample counts differ".into()));
    }
    let same = std::ptr::eq(x, y);
    let n = x.cols() as f64;
    let mut c = CMatrix::zeros(x.rows(), y.rows());
    for i in 0..x.rows() {
        let first = if same { i } else { 0 };
        for j in first..y.rows() {
            let s = x
                .row(i)
                .iter()
                .zip(y.row(j))
                .fold(ZERO, |acc, (a, b)| acc + a * b.conj());
            c[(i, j)] = s / n;
            if same {
                c[(j, i)] = (s / n).conj();
            }
        }
        if same {
            // exact real diagonal
            c[(i, i)].im = 0.0;
        }
    }
    Ok(c)
}

/// Cholesky factor `C = L L^H` of a Hermitian positive definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: CMatrix,
    condition_estimate: f64,
}

impl Cholesky {
    pub fn new(c: &CMatrix) -> Result<Self> {
        if !c.is_square() || c.rows() == 0 {
            return Err(IceError::Dimension("Cholesky of non-square or empty matrix".into()));
        }
        let n = c.rows();
        let mut l = CMatrix::zeros(n, n);
        for j in 0..n {
            let mut diag = c[(j, j)].re;
            for k in 0..j {
                diag -= l[(j, k)].norm_sqr();
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(IceError::NotPositiveDefinite);
            }
            let ljj = diag.sqrt();
            l[(j, j)] = C64::new(ljj, 0.0);
            for i in j + 1..n {
                let mut s = c[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / ljj;
            }
        }
        let (lo, hi) = (0..n)
            .map(|i| l[(i, i)].re)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
        let condition_estimate = (hi / lo).powi(2);
        Ok(Self {
            l,
            condition_estimate,
        })
    }

    /// Factorize and reject matrices whose condition estimate exceeds
    /// [`MAX_CONDITION`].
    pub fn new_guarded(c: &CMatrix) -> Result<Self> {
        let f = Self::new(c)?;
        if f.condition_estimate > MAX_CONDITION {
            return Err(IceError::Singular(f.condition_estimate));
        }
        Ok(f)
    }

    /// Lower bound on the 2-norm condition number from the factor's diagonal.
    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    pub fn factor(&self) -> &CMatrix {
        &self.l
    }

    pub fn solve(&self, v: &CVector) -> CVector {
        let n = self.l.rows();
        assert_eq!(v.len(), n);
        let l = &self.l;
        let mut y = v.clone().into_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)].re;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)].conj() * y[k];
            }
            y[i] = s / l[(i, i)].re;
        }
        CVector::new(y)
    }

    pub fn inverse(&self) -> CMatrix {
        let n = self.l.rows();
        let cols: Vec<CVector> = (0..n).map(|j| self.solve(&CVector::basis(n, j))).collect();
        let mut inv = CMatrix::from_columns(&cols).expect("square");
        // symmetrize rounding
        for i in 0..n {
            inv[(i, i)].im = 0.0;
            for j in i + 1..n {
                let avg = (inv[(i, j)] + inv[(j, i)].conj()) * 0.5;
                inv[(i, j)] = avg;
                inv[(j, i)] = avg.conj();
            }
        }
        inv
    }

    pub fn log_det(&self) -> f64 {
        (0..self.l.rows()).map(|i| 2.0 * self.l[(i, i)].re.ln()).sum()
    }
}

/// Solve `C u = v` for Hermitian positive definite `C`.
pub fn hermitian_solve(c: &CMatrix, v: &CVector) -> Result<CVector> {
    if c.rows() != v.len() {
        return Err(IceError::Dimension("solve right-hand side length".into()));
    }
    Ok(Cholesky::new_guarded(c)?.solve(v))
}

/// Inverse of a Hermitian positive definite matrix.
pub fn hermitian_inverse(c: &CMatrix) -> Result<CMatrix> {
    Ok(Cholesky::new_guarded(c)?.inverse())
}

/// Eigen-decomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the unitary matrix whose
/// columns are the matching eigenvectors.
pub fn hermitian_eigen(c: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    if !c.is_square() {
        return Err(IceError::Dimension("eigen-decomposition of non-square matrix".into()));
    }
    let n = c.rows();
    let mut a = c.clone();
    let mut v = CMatrix::identity(n);
    let scale = c.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= 1e-300 {
                    continue;
                }
                let phase = apq / r;
                let theta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * r);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                // J = [[c, s e^{i phi}], [-s e^{-i phi}, c]] on (p, q)
                let jpq = phase * sn;
                let jqp = -phase.conj() * sn;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * cs + akq * jqp;
                    a[(k, q)] = akp * jpq + akq * cs;
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * cs + vkq * jqp;
                    v[(k, q)] = vkp * jpq + vkq * cs;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * cs + aqk * jqp.conj();
                    a[(q, k)] = apk * jpq.conj() + aqk * cs;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)].im = 0.0;
                a[(q, q)].im = 0.0;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok((values, vectors))
}

/// Hermitian inverse square root `C^{-1/2}`.
pub fn inv_sqrt(c: &CMatrix) -> Result<CMatrix> {
    if !c.is_square() || c.rows() == 0 {
        return Err(IceError::Dimension("inverse square root of non-square matrix".into()));
    }
    if !c.is_hermitian(1e-12 * c.frobenius_norm().max(1.0)) {
        return Err(IceError::NotPositiveDefinite);
    }
    let (values, vectors) = hermitian_eigen(c)?;
    if values.iter().any(|&l| !(l > 0.0)) {
        return Err(IceError::NotPositiveDefinite);
    }
    let n = c.rows();
    let scaled = CMatrix::from_fn(n, n, |i, j| vectors[(i, j)] / values[j].sqrt());
    let mut out = scaled.matmul(&vectors.adjoint())?;
    for i in 0..n {
        out[(i, i)].im = 0.0;
    }
    Ok(out)
}

/// Haar-distributed unitary matrix: Gram-Schmidt orthonormalization of a
/// circular complex Gaussian matrix. Column norms are positive real, which
/// fixes the phase convention that makes the result Haar.
pub fn random_unitary(d: usize, rng: &mut Rng) -> Result<CMatrix> {
    if d == 0 {
        return Err(IceError::Dimension("random_unitary with d = 0".into()));
    }
    loop {
        let mut cols: Vec<CVector> = (0..d)
            .map(|_| (0..d).map(|_| rng.complex_normal()).collect())
            .collect();
        let mut ok = true;
        for j in 0..d {
            // two passes of modified Gram-Schmidt for orthogonality to rounding
            for _ in 0..2 {
                for k in 0..j {
                    let proj = cols[k].dot(&cols[j]);
                    let qk = cols[k].clone();
                    cols[j].axpy(-proj, &qk);
                }
            }
            let nrm = cols[j].norm();
            if nrm < 1e-8 {
                ok = false;
                break;
            }
            cols[j] = cols[j].scale_real(1.0 / nrm);
        }
        if ok {
            return CMatrix::from_columns(&cols);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| rng.complex_normal())
    }

    fn random_pd(d: usize, rng: &mut Rng) -> CMatrix {
        let m = random_matrix(d, d, rng);
        m.matmul(&m.adjoint())
            .unwrap()
            .add(&CMatrix::identity(d).scale_real(0.1))
    }

    #[test]
    fn covariance_of_zeros_and_ones() {
        let z = CMatrix::zeros(3, 10);
        assert_eq!(sample_covariance(&z).unwrap(), CMatrix::zeros(3, 3));
        let ones = CMatrix::from_fn(1, 7, |_, _| ONE);
        assert_eq!(sample_covariance(&ones).unwrap()[(0, 0)], ONE);
        assert!(sample_covariance(&CMatrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn covariance_matches_naive_sum() {
        let mut rng = Rng::new(1);
        let x = random_matrix(4, 50, &mut rng);
        let c = sample_covariance(&x).unwrap();
        let mut naive = CMatrix::zeros(4, 4);
        for n in 0..50 {
            let col = x.column(n);
            for i in 0..4 {
                for j in 0..4 {
                    naive[(i, j)] += col[i] * col[j].conj() / 50.0;
                }
            }
        }
        assert!(c.sub(&naive).frobenius_norm() < 1e-12);
        assert!(c.is_hermitian(0.0));
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let v = CVector::new(vec![c(1.0, 0.0), c(0.0, 2.0), c(-1.0, 0.0)]);
        assert_eq!(hermitian_solve(&CMatrix::identity(3), &v).unwrap(), v);
        let d = CMatrix::from_real_diag(&[2.0, 4.0]);
        let u = hermitian_solve(&d, &CVector::from_reals(&[2.0, 4.0])).unwrap();
        assert!(u.sub(&CVector::from_reals(&[1.0, 1.0])).norm() < 1e-15);
    }

    #[test]
    fn solve_rejects_singular() {
        let d = CMatrix::from_real_diag(&[1.0, 1e-14]);
        assert!(matches!(
            hermitian_solve(&d, &CVector::from_reals(&[1.0, 1.0])),
            Err(IceError::Singular(_))
        ));
        let neg = CMatrix::from_real_diag(&[1.0, -1.0]);
        assert_eq!(
            hermitian_solve(&neg, &CVector::from_reals(&[1.0, 1.0])),
            Err(IceError::NotPositiveDefinite)
        );
    }

    #[test]
    fn solve_residual_random() {
        let mut rng = Rng::new(2);
        for d in 2..=10 {
            let cm = random_pd(d, &mut rng);
            let v: CVector = (0..d).map(|_| rng.complex_normal()).collect();
            let u = hermitian_solve(&cm, &v).unwrap();
            assert!(cm.mul_vec(&u).sub(&v).norm() <= 1e-10 * v.norm());
        }
    }

    #[test]
    fn inv_sqrt_cases() {
        let i3 = CMatrix::identity(3);
        assert!(inv_sqrt(&i3).unwrap().sub(&i3).frobenius_norm() < 1e-15);
        let d = inv_sqrt(&CMatrix::from_real_diag(&[4.0, 9.0])).unwrap();
        assert!(d.sub(&CMatrix::from_real_diag(&[0.5, 1.0 / 3.0])).frobenius_norm() < 1e-15);
        assert_eq!(
            inv_sqrt(&CMatrix::from_real_diag(&[1.0, -2.0])),
            Err(IceError::NotPositiveDefinite)
        );
    }

    #[test]
    fn inv_sqrt_whitens_and_commutes() {
        let mut rng = Rng::new(3);
        for d in 2..=8 {
            let cm = random_pd(d, &mut rng);
            let s = inv_sqrt(&cm).unwrap();
            let white = s.matmul(&cm).unwrap().matmul(&s.adjoint()).unwrap();
            assert!(white.sub(&CMatrix::identity(d)).frobenius_norm() < 1e-9);
            let comm = s.matmul(&cm).unwrap().sub(&cm.matmul(&s).unwrap());
            assert!(comm.frobenius_norm() <= 1e-9 * cm.frobenius_norm());
        }
    }

    #[test]
    fn eigen_reconstructs() {
        let mut rng = Rng::new(4);
        let cm = random_pd(6, &mut rng);
        let (vals, vecs) = hermitian_eigen(&cm).unwrap();
        let lam: Vec<C64> = vals.iter().map(|&l| c(l, 0.0)).collect();
        let rec = vecs
            .matmul(&CMatrix::from_diag(&lam))
            .unwrap()
            .matmul(&vecs.adjoint())
            .unwrap();
        assert!(rec.sub(&cm).frobenius_norm() < 1e-10 * cm.frobenius_norm());
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn unitary_properties() {
        let mut rng = Rng::new(5);
        let u1 = random_unitary(1, &mut rng).unwrap();
        assert!((u1[(0, 0)].norm() - 1.0).abs() < 1e-12);
        let u = random_unitary(4, &mut rng).unwrap();
        let g = u.adjoint().matmul(&u).unwrap();
        assert!(g.sub(&CMatrix::identity(4)).frobenius_norm() < 1e-10);
        let a = random_unitary(4, &mut Rng::new(9)).unwrap();
        let b = random_unitary(4, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert!(random_unitary(0, &mut rng).is_err());
    }

    #[test]
    fn determinant_and_inverse() {
        let m = CMatrix::from_vec(2, 2, vec![c(1.0, 0.0), c(2.0, 1.0), c(0.0, -1.0), c(3.0, 0.0)]).unwrap();
        // 1*3 - (2+i)(-i) = 3 + 2i - 1 ... = 3 - (-2i + 1) = 2 + 2i
        assert!((m.determinant().unwrap() - c(2.0, 2.0)).norm() < 1e-14);
        let inv = m.inverse().unwrap();
        assert!(m.matmul(&inv).unwrap().sub(&CMatrix::identity(2)).frobenius_norm() < 1e-14);
    }

    #[test]
    fn covariance_unitary_equivariance() {
        let mut rng = Rng::new(6);
        let x = random_matrix(5, 40, &mut rng);
        let u = random_unitary(5, &mut rng).unwrap();
        let lhs = sample_covariance(&u.matmul(&x).unwrap()).unwrap();
        let rhs = u
            .matmul(&sample_covariance(&x).unwrap())
            .unwrap()
            .matmul(&u.adjoint())
            .unwrap();
        assert!(lhs.sub(&rhs).frobenius_norm() < 1e-10);
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn solve_inverts_multiplication(seed in any::<u64>(), d in 2usize..=10) {
            let mut rng = crate::rng::Rng::new(seed);
            let m = CMatrix::from_fn(d, d, |_, _| rng.complex_normal());
            let cm = m.matmul(&m.adjoint()).unwrap().add(&CMatrix::identity(d).scale_real(0.5));
            let v: CVector = (0..d).map(|_| rng.complex_normal()).collect();
            let back = hermitian_solve(&cm, &cm.mul_vec(&v)).unwrap();
            prop_assert!(back.sub(&v).norm() <= 1e-9 * v.norm());
        }
    }
}
