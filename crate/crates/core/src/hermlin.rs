//! Dense complex linear algebra for the small Hermitian matrices that show up
//! per frequency bin: spatial covariances, weighted observation covariances
//! and demixing matrices.
//!
//! Everything here is a pure function over borrowed inputs. Matrices are row
//! major and tiny (a few dozen channels at most), so the kernels favour simple
//! loops with a fixed reduction order over blocked BLAS-style code.

use std::ops::{Index, IndexMut, Range};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Pivots smaller than this fraction of the largest entry make LU report a
/// singular matrix.
const LU_SINGULAR_REL: f64 = 1e-13;
/// Singular values below this fraction of the largest are treated as zero by
/// the pseudo-inverse.
const PINV_RCOND: f64 = 1e-12;
/// Eigenvalue floor, relative to the trace, for Hermitian square roots.
const SQRT_EIG_FLOOR: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 80;

/// Default relative tolerance of [`is_jointly_diagonalizable`].
pub const JOINT_DIAG_TOL: f64 = 1e-8;

/// Dense row-major complex matrix.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(into = "CMatRepr", try_from = "CMatRepr")]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for k in 0..n {
            m[(k, k)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from real row slices.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        Self::from_fn(n_rows, n_cols, |r, c| C64::new(rows[r][c], 0.0))
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (k, &d) in diag.iter().enumerate() {
            m[(k, k)] = C64::new(d, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Side length of a square matrix.
    pub fn dim(&self) -> usize {
        debug_assert_eq!(self.rows, self.cols);
        self.rows
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[C64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self[(r, c)] = v;
        }
    }

    pub fn adjoint(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, rhs: &CMat) -> CMat {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = CMat::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^H * rhs` without materializing the adjoint.
    pub fn adjoint_matmul(&self, rhs: &CMat) -> CMat {
        assert_eq!(self.rows, rhs.rows, "adjoint_matmul shape mismatch");
        let mut out = CMat::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
            for r in 0..self.cols {
                let a = self.data[k * self.cols + r].conj();
                let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `self^H * v`.
    pub fn adjoint_matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.rows, v.len(), "adjoint_matvec shape mismatch");
        let mut out = vec![ZERO; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a.conj() * vr;
            }
        }
        out
    }

    pub fn add(&self, rhs: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect();
        CMat { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, rhs: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        CMat { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: C64) -> CMat {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * s).collect() }
    }

    pub fn add_assign_scaled(&mut self, rhs: &CMat, s: C64) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b * s;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|k| self[(k, k)]).sum()
    }

    /// Frobenius norm of the off-diagonal part.
    pub fn off_diagonal_norm(&self) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                if r != c {
                    acc += self[(r, c)].norm_sqr();
                }
            }
        }
        acc.sqrt()
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for r in 0..self.rows {
            for c in r..self.cols {
                if (self[(r, c)] - self[(c, r)].conj()).norm() > rel_tol * scale {
                    return false;
                }
            }
        }
        true
    }

    /// Replaces the matrix by `(A + A^H) / 2`.
    pub fn symmetrize(&mut self) {
        let n = self.dim();
        for r in 0..n {
            self[(r, r)] = C64::new(self[(r, r)].re, 0.0);
            for c in r + 1..n {
                let avg = (self[(r, c)] + self[(c, r)].conj()) * 0.5;
                self[(r, c)] = avg;
                self[(c, r)] = avg.conj();
            }
        }
    }

    pub fn submatrix(&self, rows: Range<usize>, cols: Range<usize>) -> CMat {
        CMat::from_fn(rows.len(), cols.len(), |r, c| self[(rows.start + r, cols.start + c)])
    }
}

/// Serialized form: shape plus interleaved `[re, im]` pairs.
#[derive(serde::Serialize, serde::Deserialize)]
struct CMatRepr {
    rows: usize,
    cols: usize,
    data: Vec<[f64; 2]>,
}

impl From<CMat> for CMatRepr {
    fn from(m: CMat) -> Self {
        Self { rows: m.rows, cols: m.cols, data: m.data.iter().map(|c| [c.re, c.im]).collect() }
    }
}

impl TryFrom<CMatRepr> for CMat {
    type Error = Error;

    fn try_from(r: CMatRepr) -> Result<Self> {
        CMat::from_vec(r.rows, r.cols, r.data.into_iter().map(|[re, im]| C64::new(re, im)).collect())
    }
}

impl Index<(usize, usize)> for CMat {
    type Output = C64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Nonnegative diagonal matrix, stored as its diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagMatrix(pub Vec<f64>);

impl DiagMatrix {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn to_cmat(&self) -> CMat {
        CMat::from_real_diag(&self.0)
    }
}

/// Partition of `M` channels into contiguous subarrays.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BlockLayout {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidConfig("block layout needs at least one block".into()));
        }
        if let Some(pos) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidConfig(format!("block {pos} has size 0")));
        }
        let offsets = sizes
            .iter()
            .scan(0usize, |acc, &s| {
                let off = *acc;
                *acc += s;
                Some(off)
            })
            .collect();
        Ok(Self { sizes, offsets })
    }

    /// One block spanning all `m` channels.
    pub fn single(m: usize) -> Self {
        Self::new(vec![m]).expect("single block layout needs m >= 1")
    }

    /// `n_blocks` blocks of `size` channels each.
    pub fn uniform(n_blocks: usize, size: usize) -> Result<Self> {
        Self::new(vec![size; n_blocks])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn n_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        self.offsets.last().unwrap() + self.sizes.last().unwrap()
    }

    pub fn size(&self, l: usize) -> usize {
        self.sizes[l]
    }

    pub fn offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    pub fn range(&self, l: usize) -> Range<usize> {
        self.offsets[l]..self.offsets[l] + self.sizes[l]
    }

    /// Global channel index of channel `mu` of block `l` (both zero based).
    pub fn map_index(&self, l: usize, mu: usize) -> Result<usize> {
        if l >= self.n_blocks() {
            return Err(Error::IndexOutOfRange(format!(
                "block {l} of {} blocks",
                self.n_blocks()
            )));
        }
        if mu >= self.sizes[l] {
            return Err(Error::IndexOutOfRange(format!(
                "channel {mu} of block {l} with {} channels",
                self.sizes[l]
            )));
        }
        Ok(self.offsets[l] + mu)
    }

    /// Inverse of [`BlockLayout::map_index`].
    pub fn locate(&self, m: usize) -> Result<(usize, usize)> {
        if m >= self.total() {
            return Err(Error::IndexOutOfRange(format!("channel {m} of {}", self.total())));
        }
        let l = self.offsets.partition_point(|&off| off <= m) - 1;
        Ok((l, m - self.offsets[l]))
    }
}

impl TryFrom<Vec<usize>> for BlockLayout {
    type Error = Error;

    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Self::new(sizes)
    }
}

impl From<BlockLayout> for Vec<usize> {
    fn from(layout: BlockLayout) -> Self {
        layout.sizes
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L^H`.
pub fn cholesky(a: &CMat) -> Result<CMat> {
    let n = a.dim();
    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[(j, j)] = C64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

fn forward_substitute(l: &CMat, b: &[C64]) -> Vec<C64> {
    let n = l.dim();
    let mut y = vec![ZERO; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `L^H x = y` for lower-triangular `L`.
fn back_substitute_adjoint(l: &CMat, y: &[C64]) -> Vec<C64> {
    let n = l.dim();
    let mut x = vec![ZERO; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)].conj() * x[k];
        }
        x[i] = s / l[(i, i)].conj();
    }
    x
}

/// Solves `A x = b` for Hermitian positive-definite `A` via Cholesky.
pub fn herm_solve(a: &CMat, b: &[C64]) -> Result<Vec<C64>> {
    if !a.is_square() || a.dim() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} system with {} right-hand entries",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let l = cholesky(a)?;
    Ok(back_substitute_adjoint(&l, &forward_substitute(&l, b)))
}

/// Inverse of a lower-triangular matrix.
fn lower_inverse(l: &CMat) -> CMat {
    let n = l.dim();
    let mut inv = CMat::zeros(n, n);
    let mut e = vec![ZERO; n];
    for c in 0..n {
        e.iter_mut().for_each(|v| *v = ZERO);
        e[c] = ONE;
        let col = forward_substitute(l, &e);
        inv.set_column(c, &col);
    }
    inv
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: CMat,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn factor(a: &CMat) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::ShapeMismatch(format!("LU of a {}x{} matrix", a.rows(), a.cols())));
        }
        let n = a.dim();
        let scale = a.max_abs();
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Singular);
        }
        let threshold = LU_SINGULAR_REL * scale;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let (p, best) = (k..n)
                .map(|r| (r, lu[(r, k)].norm()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if !(best > threshold) {
                return Err(Error::Singular);
            }
            if p != k {
                for c in 0..n {
                    lu.data.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[(k, k)];
            for r in k + 1..n {
                let f = lu[(r, k)] / pivot;
                lu[(r, k)] = f;
                if f == ZERO {
                    continue;
                }
                for c in k + 1..n {
                    let u = lu[(k, c)];
                    lu[(r, c)] -= f * u;
                }
            }
        }
        Ok(Self { lu, perm, sign })
    }

    pub fn dim(&self) -> usize {
        self.lu.dim()
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.dim();
        let mut y: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                let l = self.lu[(i, k)];
                let yk = y[k];
                y[i] -= l * yk;
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let u = self.lu[(i, k)];
                let yk = y[k];
                y[i] -= u * yk;
            }
            y[i] /= self.lu[(i, i)];
        }
        y
    }

    pub fn det(&self) -> C64 {
        (0..self.dim()).fold(C64::new(self.sign, 0.0), |acc, k| acc * self.lu[(k, k)])
    }

    /// `ln |det A|^2`, accumulated in the pivot order.
    pub fn ln_abs_det_sq(&self) -> f64 {
        (0..self.dim()).map(|k| self.lu[(k, k)].norm_sqr().ln()).sum()
    }

    pub fn inverse(&self) -> CMat {
        let n = self.dim();
        let mut inv = CMat::zeros(n, n);
        let mut e = vec![ZERO; n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = ZERO);
            e[c] = ONE;
            inv.set_column(c, &self.solve(&e));
        }
        inv
    }
}

/// `ln |det A|^2` of a square matrix, or `SingularDemixer`-style failure as
/// `Error::Singular`.
pub fn ln_abs_det_sq(a: &CMat) -> Result<f64> {
    Ok(Lu::factor(a)?.ln_abs_det_sq())
}

pub fn inverse(a: &CMat) -> Result<CMat> {
    Ok(Lu::factor(a)?.inverse())
}

/// Complex 2x2 Jacobi rotation in the `(p, q)` plane that zeros the
/// off-diagonal entry `off` of the Hermitian pair `[[app, off], [off*, aqq]]`.
/// Returns `(u_pp, u_pq, u_qp, u_qq)` of the unitary `U` such that
/// `U^H A U` has a zero `(p, q)` entry.
fn jacobi_rotation(app: f64, aqq: f64, off: C64) -> (C64, C64, C64, C64) {
    let r = off.norm();
    let phase = off.conj() / r;
    let theta = (aqq - app) / (2.0 * r);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    (C64::new(c, 0.0), C64::new(s, 0.0), phase * (-s), phase * c)
}

/// Eigendecomposition of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermEig {
    /// Eigenvalues, descending; ties keep their diagonal order.
    pub values: Vec<f64>,
    /// Unitary matrix whose columns are the matching eigenvectors.
    pub vectors: CMat,
}

/// Cyclic Jacobi eigensolver for Hermitian matrices.
pub fn herm_eig(a: &CMat) -> HermEig {
    let n = a.dim();
    let mut m = a.clone();
    m.symmetrize();
    let mut v = CMat::identity(n);
    let fro = m.frobenius_norm();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = m.off_diagonal_norm();
        if off <= 1e-16 * fro || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.norm() <= f64::MIN_POSITIVE {
                    continue;
                }
                let (upp, upq, uqp, uqq) = jacobi_rotation(m[(p, p)].re, m[(q, q)].re, apq);
                for k in 0..n {
                    let (akp, akq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = akp * upp + akq * uqp;
                    m[(k, q)] = akp * upq + akq * uqq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = upp.conj() * apk + uqp.conj() * aqk;
                    m[(q, k)] = upq.conj() * apk + uqq.conj() * aqk;
                }
                m[(p, q)] = ZERO;
                m[(q, p)] = ZERO;
                m[(p, p)] = C64::new(m[(p, p)].re, 0.0);
                m[(q, q)] = C64::new(m[(q, q)].re, 0.0);
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = vkp * upp + vkq * uqp;
                    v[(k, q)] = vkp * upq + vkq * uqq;
                }
            }
        }
    }
    let diag: Vec<f64> = (0..n).map(|k| m[(k, k)].re).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| diag[y].partial_cmp(&diag[x]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&k| diag[k]).collect();
    let vectors = CMat::from_fn(n, n, |r, c| v[(r, order[c])]);
    HermEig { values, vectors }
}

/// Thin singular value decomposition `A = U diag(s) V^H` of an `m x n`
/// matrix with `m >= n`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: CMat,
    /// Singular values, descending.
    pub s: Vec<f64>,
    pub v: CMat,
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &CMat) -> Svd {
    assert!(a.rows() >= a.cols(), "svd expects a tall or square matrix");
    let (rows, n) = (a.rows(), a.cols());
    let mut w = a.clone();
    let mut v = CMat::identity(n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, ZERO);
                for r in 0..rows {
                    let (wp, wq) = (w[(r, p)], w[(r, q)]);
                    alpha += wp.norm_sqr();
                    beta += wq.norm_sqr();
                    gamma += wp.conj() * wq;
                }
                if gamma.norm() <= 1e-15 * (alpha * beta).sqrt() || gamma.norm() <= f64::MIN_POSITIVE
                {
                    continue;
                }
                rotated = true;
                let (upp, upq, uqp, uqq) = jacobi_rotation(alpha, beta, gamma);
                for r in 0..rows {
                    let (wp, wq) = (w[(r, p)], w[(r, q)]);
                    w[(r, p)] = wp * upp + wq * uqp;
                    w[(r, q)] = wp * upq + wq * uqq;
                }
                for r in 0..n {
                    let (vp, vq) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = vp * upp + vq * uqp;
                    v[(r, q)] = vp * upq + vq * uqq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> =
        (0..n).map(|c| (0..rows).map(|r| w[(r, c)].norm_sqr()).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap_or(std::cmp::Ordering::Equal));
    let s: Vec<f64> = order.iter().map(|&k| norms[k]).collect();
    let u = CMat::from_fn(rows, n, |r, c| {
        let k = order[c];
        if norms[k] > 0.0 {
            w[(r, k)] / norms[k]
        } else {
            ZERO
        }
    });
    let v = CMat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Svd { u, s, v }
}

/// Minimum-norm least-squares solution `A^+ b` of a square system.
pub fn pinv_solve(a: &CMat, b: &[C64]) -> Vec<C64> {
    assert!(a.is_square() && a.dim() == b.len(), "pinv_solve shape mismatch");
    let n = a.dim();
    let Svd { u, s, v } = svd(a);
    let cutoff = PINV_RCOND * s.first().copied().unwrap_or(0.0);
    let mut x = vec![ZERO; n];
    for k in 0..n {
        if !(s[k] > cutoff) {
            continue;
        }
        let coeff: C64 = (0..n).map(|r| u[(r, k)].conj() * b[r]).sum::<C64>() / s[k];
        for (r, xr) in x.iter_mut().enumerate() {
            *xr += v[(r, k)] * coeff;
        }
    }
    x
}

/// Generalized Hermitian eigenproblem `A w = d B w` for PSD `A` and PD `B`.
///
/// The columns of the returned `W` are normalized so that `W^H B W = I`,
/// hence `W^H A W = diag(d)`. Eigenvalues are sorted in descending order.
pub fn gevd_joint_diag(a: &CMat, b: &CMat) -> Result<(CMat, Vec<f64>)> {
    if a.rows() != b.rows() || !a.is_square() || !b.is_square() {
        return Err(Error::ShapeMismatch("gevd needs two square matrices of equal size".into()));
    }
    let l = cholesky(b)?;
    let l_inv = lower_inverse(&l);
    let mut c = l_inv.matmul(a).matmul(&l_inv.adjoint());
    c.symmetrize();
    let HermEig { values, vectors } = herm_eig(&c);
    let w = l_inv.adjoint_matmul(&vectors);
    Ok((w, values))
}

/// Projection onto nonnegative diagonal matrices: keeps the real parts of
/// the diagonal, clamped at zero, and drops everything else.
pub fn ddiag(a: &CMat) -> DiagMatrix {
    DiagMatrix((0..a.rows().min(a.cols())).map(|k| a[(k, k)].re.max(0.0)).collect())
}

/// Block-diagonal assembly. Off-block entries are exactly zero.
pub fn blkdiag(blocks: &[CMat]) -> CMat {
    assert!(!blocks.is_empty(), "blkdiag needs at least one block");
    let n: usize = blocks.iter().map(|b| b.dim()).sum();
    let mut out = CMat::zeros(n, n);
    let mut off = 0;
    for b in blocks {
        let m = b.dim();
        for r in 0..m {
            for c in 0..m {
                out[(off + r, off + c)] = b[(r, c)];
            }
        }
        off += m;
    }
    out
}

/// The `l`-th diagonal block of `a` under `layout`.
pub fn diag_block(a: &CMat, layout: &BlockLayout, l: usize) -> CMat {
    let r = layout.range(l);
    a.submatrix(r.clone(), r)
}

fn checked_sum(family: &[CMat]) -> Result<CMat> {
    let first = family.first().ok_or_else(|| Error::ShapeMismatch("empty family".into()))?;
    let n = first.dim();
    let mut s = CMat::zeros(n, n);
    for r in family {
        if !r.is_square() || r.dim() != n {
            return Err(Error::ShapeMismatch("family members differ in size".into()));
        }
        s = s.add(r);
    }
    Ok(s)
}

/// `S^{-1/2}` of a Hermitian positive-definite matrix, with eigenvalues
/// floored at `1e-12 * trace`.
pub fn herm_inv_sqrt(s: &CMat) -> Result<CMat> {
    cholesky(s)?;
    let HermEig { values, vectors } = herm_eig(s);
    let floor = SQRT_EIG_FLOOR * s.trace().re.abs();
    let n = s.dim();
    let scales: Vec<f64> = values.iter().map(|&x| 1.0 / x.max(floor).sqrt()).collect();
    let mut out = CMat::from_fn(n, n, |r, c| {
        (0..n).map(|k| vectors[(r, k)] * scales[k] * vectors[(c, k)].conj()).sum()
    });
    out.symmetrize();
    Ok(out)
}

/// Principal square root of a Hermitian PSD matrix (negative eigenvalues are
/// clamped to zero).
pub fn herm_sqrt(s: &CMat) -> CMat {
    let HermEig { values, vectors } = herm_eig(s);
    let n = s.dim();
    let roots: Vec<f64> = values.iter().map(|&x| x.max(0.0).sqrt()).collect();
    let mut out = CMat::from_fn(n, n, |r, c| {
        (0..n).map(|k| vectors[(r, k)] * roots[k] * vectors[(c, k)].conj()).sum()
    });
    out.symmetrize();
    out
}

/// Whitens a PSD family by its sum: `R~_n = S^{-1/2} R_n S^{-1/2}`.
pub fn whiten_family(family: &[CMat]) -> Result<Vec<CMat>> {
    let s = checked_sum(family)?;
    let p = herm_inv_sqrt(&s)?;
    Ok(family
        .iter()
        .map(|r| {
            let mut w = p.matmul(r).matmul(&p);
            w.symmetrize();
            w
        })
        .collect())
}

/// Frobenius norm of `AB - BA`.
pub fn commutator_norm(a: &CMat, b: &CMat) -> f64 {
    a.matmul(b).sub(&b.matmul(a)).frobenius_norm()
}

/// Largest whitened commutator norm over all pairs, relative to the largest
/// whitened member. Zero for a commuting (jointly diagonalizable) family.
pub fn joint_diag_defect(family: &[CMat]) -> Result<f64> {
    let whitened = whiten_family(family)?;
    let scale = whitened.iter().map(CMat::frobenius_norm).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for (n, a) in whitened.iter().enumerate() {
        for b in &whitened[n + 1..] {
            worst = worst.max(commutator_norm(a, b));
        }
    }
    Ok(if scale > 0.0 { worst / scale } else { 0.0 })
}

/// Decides whether a PSD family with positive-definite sum admits one
/// nonsingular `W` diagonalizing every member, by testing that the family
/// whitened by its sum commutes pairwise.
pub fn is_jointly_diagonalizable(family: &[CMat], tol: f64) -> Result<bool> {
    Ok(joint_diag_defect(family)? <= tol)
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn herm_solve_identity_and_diagonal() {
        let b = vec![c(1.0, 0.0), c(0.0, 2.0), c(-1.0, 0.0)];
        let x = herm_solve(&CMat::identity(3), &b).unwrap();
        assert!(vec_dist(&x, &b) < 1e-15);

        let a = CMat::from_real_rows(&[&[2.0, 0.0], &[0.0, 4.0]]);
        let x = herm_solve(&a, &[c(2.0, 0.0), c(4.0, 0.0)]).unwrap();
        assert!(vec_dist(&x, &[c(1.0, 0.0), c(1.0, 0.0)]) < 1e-15);
    }

    #[test]
    fn herm_solve_residual_random_pd() {
        let mut rng = rng(7);
        for _ in 0..50 {
            let a = rand_pd(&mut rng, 4, 0.1);
            let b = rand_vec(&mut rng, 4);
            let x = herm_solve(&a, &b).unwrap();
            let r = vec_dist(&a.matvec(&x), &b);
            assert!(r <= 1e-10 * vec_norm(&b), "residual {r}");
        }
    }

    #[test]
    fn herm_solve_rejects_indefinite() {
        let a = CMat::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert!(matches!(
            herm_solve(&a, &[ONE, ONE]),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn herm_solve_conditioned_family() {
        // condition numbers up to 1e6 via U diag U^H
        let mut rng = rng(11);
        for trial in 0..30 {
            let u = rand_unitary(&mut rng, 5);
            let cond = 10f64.powf(trial as f64 / 29.0 * 6.0);
            let eigs: Vec<f64> = (0..5).map(|k| cond.powf(-(k as f64) / 4.0)).collect();
            let mut a = u.matmul(&CMat::from_real_diag(&eigs)).matmul(&u.adjoint());
            a.symmetrize();
            let b = rand_vec(&mut rng, 5);
            let x = herm_solve(&a, &b).unwrap();
            assert!(vec_dist(&a.matvec(&x), &b) <= 1e-10 * vec_norm(&b));
        }
    }

    #[test]
    fn pinv_examples() {
        let x = pinv_solve(&CMat::identity(2), &[ONE, ONE]);
        assert!(vec_dist(&x, &[ONE, ONE]) < 1e-14);
        let a = CMat::from_real_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let x = pinv_solve(&a, &[c(3.0, 0.0), c(5.0, 0.0)]);
        assert!(vec_dist(&x, &[c(3.0, 0.0), ZERO]) < 1e-14);
    }

    #[test]
    fn pinv_matches_constructed_svd_oracle() {
        // A = U diag(s1, s2, 0) V^H with known factors, so A^+ = V diag(1/s1, 1/s2, 0) U^H.
        let mut rng = rng(3);
        for _ in 0..20 {
            let u = rand_unitary(&mut rng, 3);
            let v = rand_unitary(&mut rng, 3);
            let s = [2.5, 0.7, 0.0];
            let a = u.matmul(&CMat::from_real_diag(&s)).matmul(&v.adjoint());
            let pinv = v
                .matmul(&CMat::from_real_diag(&[1.0 / s[0], 1.0 / s[1], 0.0]))
                .matmul(&u.adjoint());
            let b = rand_vec(&mut rng, 3);
            let expected = pinv.matvec(&b);
            let got = pinv_solve(&a, &b);
            assert!(vec_dist(&got, &expected) < 1e-9, "{:?} vs {:?}", got, expected);
        }
    }

    #[test]
    fn svd_reconstructs() {
        let mut rng = rng(5);
        let a = rand_mat(&mut rng, 6, 4);
        let Svd { u, s, v } = svd(&a);
        let back = u.matmul(&CMat::from_real_diag(&s)).matmul(&v.adjoint());
        assert!(back.sub(&a).frobenius_norm() < 1e-12);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn lu_solve_det_inverse() {
        let mut rng = rng(9);
        let a = rand_mat(&mut rng, 5, 5);
        let lu = Lu::factor(&a).unwrap();
        let b = rand_vec(&mut rng, 5);
        let x = lu.solve(&b);
        assert!(vec_dist(&a.matvec(&x), &b) < 1e-12);
        assert!(a.matmul(&lu.inverse()).sub(&CMat::identity(5)).frobenius_norm() < 1e-12);
        // det of a triangular matrix is the product of its diagonal
        let t = CMat::from_fn(3, 3, |r, c2| if c2 >= r { c(1.0 + r as f64, 0.5) } else { ZERO });
        let det = Lu::factor(&t).unwrap().det();
        let expected = c(1.0, 0.5) * c(2.0, 0.5) * c(3.0, 0.5);
        assert!((det - expected).norm() < 1e-12);
        assert!((Lu::factor(&t).unwrap().ln_abs_det_sq() - expected.norm_sqr().ln()).abs() < 1e-12);
        assert!(matches!(Lu::factor(&CMat::zeros(2, 2)), Err(Error::Singular)));
    }

    #[test]
    fn pinv_agrees_with_herm_solve_on_pd() {
        let mut rng = rng(21);
        for _ in 0..30 {
            let a = rand_pd(&mut rng, 4, 0.2);
            let b = rand_vec(&mut rng, 4);
            let x1 = herm_solve(&a, &b).unwrap();
            let x2 = pinv_solve(&a, &b);
            assert!(vec_dist(&x1, &x2) < 1e-9);
        }
    }

    #[test]
    fn herm_eig_diagonalizes() {
        let mut rng = rng(13);
        for n in 1..7 {
            let a = rand_pd(&mut rng, n, 0.0);
            let HermEig { values, vectors } = herm_eig(&a);
            let d = vectors.adjoint().matmul(&a).matmul(&vectors);
            assert!(d.off_diagonal_norm() < 1e-12 * a.frobenius_norm());
            for k in 0..n {
                assert!((d[(k, k)].re - values[k]).abs() < 1e-12 * a.frobenius_norm());
            }
            assert!(vectors.adjoint().matmul(&vectors).sub(&CMat::identity(n)).frobenius_norm() < 1e-12);
            assert!(values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn gevd_examples() {
        let (w, d) =
            gevd_joint_diag(&CMat::from_real_diag(&[2.0, 3.0]), &CMat::identity(2)).unwrap();
        assert_eq!(d.len(), 2);
        assert!((d[0] - 3.0).abs() < 1e-14 && (d[1] - 2.0).abs() < 1e-14);
        // columns are (phase-scaled) unit basis vectors, permuted
        assert!((w[(1, 0)].norm() - 1.0).abs() < 1e-14 && w[(0, 0)].norm() < 1e-14);
        assert!((w[(0, 1)].norm() - 1.0).abs() < 1e-14 && w[(1, 1)].norm() < 1e-14);

        let mut rng = rng(17);
        let b = rand_pd(&mut rng, 4, 0.5);
        let (w, d) = gevd_joint_diag(&b, &b).unwrap();
        assert!(d.iter().all(|x| (x - 1.0).abs() < 1e-10));
        assert!(w.adjoint().matmul(&b).matmul(&w).sub(&CMat::identity(4)).frobenius_norm() < 1e-10);
    }

    #[test]
    fn gevd_random_residuals() {
        let mut rng = rng(19);
        for _ in 0..40 {
            let a = rand_pd(&mut rng, 4, 0.0);
            let b = rand_pd(&mut rng, 4, 0.3);
            let (w, d) = gevd_joint_diag(&a, &b).unwrap();
            let wbw = w.adjoint().matmul(&b).matmul(&w);
            let waw = w.adjoint().matmul(&a).matmul(&w);
            assert!(wbw.sub(&CMat::identity(4)).frobenius_norm() <= 1e-10);
            assert!(waw.off_diagonal_norm() <= 1e-9 * a.frobenius_norm());
            for k in 0..4 {
                let lhs = a.matvec(&w.column(k));
                let rhs: Vec<C64> = b.matvec(&w.column(k)).iter().map(|x| x * d[k]).collect();
                assert!(vec_dist(&lhs, &rhs) < 1e-9 * a.frobenius_norm());
            }
        }
    }

    #[test]
    fn ddiag_examples() {
        assert_eq!(ddiag(&CMat::identity(3)).0, vec![1.0, 1.0, 1.0]);
        let a = CMat::from_fn(2, 2, |r, k| match (r, k) {
            (0, 0) => c(2.0, 0.0),
            (0, 1) => c(0.0, 5.0),
            (1, 0) => c(0.0, -5.0),
            _ => c(3.0, 0.0),
        });
        assert_eq!(ddiag(&a).0, vec![2.0, 3.0]);
        assert_eq!(ddiag(&CMat::from_real_diag(&[-0.1, 4.0])).0, vec![0.0, 4.0]);
    }

    #[test]
    fn blkdiag_examples_and_round_trip() {
        assert_eq!(blkdiag(&[CMat::identity(1)]), CMat::identity(1));
        let m = blkdiag(&[CMat::identity(2), CMat::from_real_diag(&[2.0])]);
        assert_eq!(m, CMat::from_real_diag(&[1.0, 1.0, 2.0]));

        let mut rng = rng(23);
        let blocks: Vec<CMat> = (0..3).map(|_| rand_mat(&mut rng, 4, 4)).collect();
        let big = blkdiag(&blocks);
        let layout = BlockLayout::uniform(3, 4).unwrap();
        for (l, b) in blocks.iter().enumerate() {
            assert_eq!(&diag_block(&big, &layout, l), b);
        }
        for r in 0..12 {
            for k in 0..12 {
                if layout.locate(r).unwrap().0 != layout.locate(k).unwrap().0 {
                    assert_eq!(big[(r, k)], ZERO);
                }
            }
        }
    }

    #[test]
    fn whiten_examples() {
        let w = whiten_family(&[CMat::identity(3)]).unwrap();
        assert!(w[0].sub(&CMat::identity(3)).frobenius_norm() < 1e-14);
        let w = whiten_family(&[CMat::from_real_diag(&[1.0, 3.0]), CMat::from_real_diag(&[3.0, 1.0])])
            .unwrap();
        assert!(w[0].sub(&CMat::from_real_diag(&[0.25, 0.75])).frobenius_norm() < 1e-14);
        assert!(w[1].sub(&CMat::from_real_diag(&[0.75, 0.25])).frobenius_norm() < 1e-14);
        assert!(matches!(
            whiten_family(&[CMat::from_real_diag(&[1.0, 0.0])]),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn whiten_random_sums_to_identity_and_stays_psd() {
        let mut rng = rng(29);
        for _ in 0..30 {
            let fam: Vec<CMat> = (0..3).map(|_| rand_pd(&mut rng, 4, 0.0)).collect();
            let w = whiten_family(&fam).unwrap();
            let s = w.iter().fold(CMat::zeros(4, 4), |acc, x| acc.add(x));
            assert!(s.sub(&CMat::identity(4)).frobenius_norm() < 1e-10);
            for x in &w {
                assert!(*herm_eig(x).values.last().unwrap() >= -1e-10);
            }
        }
    }

    #[test]
    fn commutator_examples() {
        let mut rng = rng(31);
        let a = rand_mat(&mut rng, 3, 3);
        assert!(commutator_norm(&a, &a) < 1e-15);
        let d1 = CMat::from_real_diag(&[1.0, 2.0, 3.0]);
        let d2 = CMat::from_real_diag(&[-1.0, 5.0, 0.5]);
        assert_eq!(commutator_norm(&d1, &d2), 0.0);
        let e12 = CMat::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let e21 = CMat::from_real_rows(&[&[0.0, 0.0], &[1.0, 0.0]]);
        assert!((commutator_norm(&e12, &e21) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn joint_diagonalizability_examples() {
        let fam = [CMat::from_real_diag(&[1.0, 2.0]), CMat::from_real_diag(&[3.0, 4.0])];
        assert!(is_jointly_diagonalizable(&fam, JOINT_DIAG_TOL).unwrap());

        // three members: I, U diag(1,2) U^H, U' diag(2,1) U'^H with unrelated unitaries
        let mut rng = rng(37);
        let u = rand_unitary(&mut rng, 2);
        let u2 = rand_unitary(&mut rng, 2);
        let r2 = u.matmul(&CMat::from_real_diag(&[1.0, 2.0])).matmul(&u.adjoint());
        let r3 = u2.matmul(&CMat::from_real_diag(&[2.0, 1.0])).matmul(&u2.adjoint());
        let fam = [CMat::identity(2), r2.clone(), r3.clone()];
        // oracle: the raw members already fail to commute
        assert!(commutator_norm(&r2, &r3) > 1e-3);
        assert!(!is_jointly_diagonalizable(&fam, JOINT_DIAG_TOL).unwrap());
    }

    #[test]
    fn layout_mapping() {
        let layout = BlockLayout::uniform(3, 4).unwrap();
        assert_eq!(layout.map_index(0, 0).unwrap(), 0);
        // second block, third channel
        assert_eq!(layout.map_index(1, 2).unwrap(), 6);
        assert!(layout.map_index(3, 0).is_err());
        assert!(layout.map_index(0, 4).is_err());
        let layout = BlockLayout::new(vec![2, 3]).unwrap();
        let mut seen = vec![0; 5];
        for l in 0..2 {
            for mu in 0..layout.size(l) {
                let m = layout.map_index(l, mu).unwrap();
                seen[m] += 1;
                assert_eq!(layout.locate(m).unwrap(), (l, mu));
            }
        }
        assert_eq!(seen, vec![1; 5]);
        assert!(BlockLayout::new(vec![]).is_err());
        assert!(BlockLayout::new(vec![2, 0]).is_err());
    }

    /// Jointly diagonalizable PSD family `A diag(d_n) A^H` for a random
    /// nonsingular `A`.
    fn jd_family(rng: &mut impl Rng, m: usize, n: usize) -> Vec<CMat> {
        let a = rand_mat(rng, m, m).add(&CMat::identity(m).scale(C64::new(1.5, 0.0)));
        (0..n)
            .map(|_| {
                let d: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..2.0)).collect();
                let mut r = a.matmul(&CMat::from_real_diag(&d)).matmul(&a.adjoint());
                r.symmetrize();
                r
            })
            .collect()
    }

    use rand::Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn block_theorem_holds(seed in 0u64..1_000_000, n_blocks in 1usize..4, n in 2usize..5) {
            let mut rng = rng(seed);
            let sizes: Vec<usize> = (0..n_blocks).map(|_| rng.gen_range(1..5)).collect();
            let flip = rng.gen_range(0..n_blocks + 1);
            let mut per_block: Vec<Vec<CMat>> = Vec::new();
            for (l, &m) in sizes.iter().enumerate() {
                let fam = if l == flip {
                    (0..n).map(|_| rand_pd(&mut rng, m, 0.05)).collect()
                } else {
                    jd_family(&mut rng, m, n)
                };
                per_block.push(fam);
            }
            let assembled: Vec<CMat> = (0..n)
                .map(|k| blkdiag(&per_block.iter().map(|f| f[k].clone()).collect::<Vec<_>>()))
                .collect();
            let whole = is_jointly_diagonalizable(&assembled, JOINT_DIAG_TOL).unwrap();
            let parts = per_block
                .iter()
                .all(|f| is_jointly_diagonalizable(f, JOINT_DIAG_TOL).unwrap());
            prop_assert_eq!(whole, parts);
        }
    }
}
