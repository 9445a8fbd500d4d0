//! Dense complex tensors and the handful of linear-algebra kernels the
//! simulator needs: pairwise contraction, truncated SVD, QR, and the matrix
//! exponential of small anti-Hermitian generators.
//!
//! Entries are stored row-major (last axis fastest). Matrix kernels go
//! through `faer` on borrowed row-major views.

use faer::MatRef;
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Singular values below this fraction of the largest are treated as exact
/// zeros by [`svd_truncate`], whatever the cutoff.
const NUMERICAL_ZERO: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("axis mismatch: axis {axis_a} (extent {extent_a}) vs axis {axis_b} (extent {extent_b})")]
    AxisMismatch {
        axis_a: usize,
        extent_a: usize,
        axis_b: usize,
        extent_b: usize,
    },
    #[error("generator is not anti-Hermitian (deviation {0:.3e})")]
    NotAntiHermitian(f64),
    #[error("decomposition failed: {0}")]
    Decomposition(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<C64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::Shape(format!("zero extent in {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(TensorError::Shape(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![ZERO; len],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = ONE;
        }
        t
    }

    /// Builds a matrix from nested rows.
    pub fn from_rows(rows: &[&[C64]]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(TensorError::Shape("ragged rows".into()));
        }
        Self::new(vec![m, n], rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> C64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: C64) {
        let k = self.offset(index);
        self.data[k] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| {
                debug_assert!(i < e);
                acc * e + i
            })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    /// Reorders axes: axis `k` of the result is axis `perm[k]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let r = self.rank();
        assert_eq!(perm.len(), r, "permutation length");
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return self.clone();
        }
        let strides = strides(&self.shape);
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let new_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; r];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[src]);
            // odometer increment over the new axis order
            let mut ax = r;
            while ax > 0 {
                ax -= 1;
                idx[ax] += 1;
                src += new_strides[ax];
                if idx[ax] < new_shape[ax] {
                    break;
                }
                src -= new_strides[ax] * new_shape[ax];
                idx[ax] = 0;
            }
        }
        Self {
            shape: new_shape,
            data,
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(mut self, alpha: C64) -> Self {
        self.data.iter_mut().for_each(|z| *z *= alpha);
        self
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Largest elementwise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Conjugate transpose of a matrix.
    pub fn adjoint(&self) -> Self {
        assert_eq!(self.rank(), 2, "adjoint needs a matrix");
        self.permute(&[1, 0]).conj()
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(TensorError::Shape("matmul needs matrices".into()));
        }
        if self.shape[1] != other.shape[0] {
            return Err(TensorError::AxisMismatch {
                axis_a: 1,
                extent_a: self.shape[1],
                axis_b: 0,
                extent_b: other.shape[0],
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        Ok(Self {
            shape: vec![m, n],
            data: matmul_row_major(&self.data, &other.data, m, k, n),
        })
    }

    /// Kronecker product of two matrices.
    pub fn kron(&self, other: &Self) -> Self {
        assert!(self.rank() == 2 && other.rank() == 2, "kron needs matrices");
        let (a0, a1) = (self.shape[0], self.shape[1]);
        let (b0, b1) = (other.shape[0], other.shape[1]);
        let mut out = Self::zeros(&[a0 * b0, a1 * b1]);
        for i in 0..a0 {
            for j in 0..a1 {
                let x = self.data[i * a1 + j];
                if x == ZERO {
                    continue;
                }
                for k in 0..b0 {
                    for l in 0..b1 {
                        out.data[(i * b0 + k) * (a1 * b1) + j * b1 + l] = x * other.data[k * b1 + l];
                    }
                }
            }
        }
        out
    }

    /// `max |(U†U - 1)_ij|` for a matrix with at least as many rows as columns.
    pub fn isometry_defect(&self) -> f64 {
        let gram = self.adjoint().matmul(self).expect("square gram");
        gram.max_abs_diff(&Self::identity(self.shape[1]))
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// Row-major `(m x k) * (k x n)`.
pub(crate) fn matmul_row_major(a: &[C64], b: &[C64], m: usize, k: usize, n: usize) -> Vec<C64> {
    let c = MatRef::from_row_major_slice(a, m, k) * MatRef::from_row_major_slice(b, k, n);
    to_row_major(c.as_ref())
}

fn to_row_major(m: MatRef<'_, C64>) -> Vec<C64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Contracts `a` and `b` over the listed `(axis of a, axis of b)` pairs.
/// The result carries the free axes of `a` followed by those of `b`, each in
/// their original order.
pub fn contract(a: &DenseTensor, b: &DenseTensor, pairs: &[(usize, usize)]) -> Result<DenseTensor> {
    for &(x, y) in pairs {
        if x >= a.rank() || y >= b.rank() {
            return Err(TensorError::Shape(format!(
                "axis pair ({x}, {y}) out of range for ranks {} and {}",
                a.rank(),
                b.rank()
            )));
        }
        if a.shape[x] != b.shape[y] {
            return Err(TensorError::AxisMismatch {
                axis_a: x,
                extent_a: a.shape[x],
                axis_b: y,
                extent_b: b.shape[y],
            });
        }
    }
    let mut seen_a = vec![false; a.rank()];
    let mut seen_b = vec![false; b.rank()];
    for &(x, y) in pairs {
        if std::mem::replace(&mut seen_a[x], true) || std::mem::replace(&mut seen_b[y], true) {
            return Err(TensorError::Shape("axis paired twice".into()));
        }
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|&k| !seen_a[k]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&k| !seen_b[k]).collect();

    let perm_a: Vec<usize> = free_a.iter().copied().chain(pairs.iter().map(|p| p.0)).collect();
    let perm_b: Vec<usize> = pairs.iter().map(|p| p.1).chain(free_b.iter().copied()).collect();
    let ap = a.permute(&perm_a);
    let bp = b.permute(&perm_b);
    let m: usize = free_a.iter().map(|&k| a.shape[k]).product();
    let k: usize = pairs.iter().map(|p| a.shape[p.0]).product();
    let n: usize = free_b.iter().map(|&k| b.shape[k]).product();
    let data = matmul_row_major(&ap.data, &bp.data, m, k, n);
    let mut shape: Vec<usize> = free_a.iter().map(|&k| a.shape[k]).collect();
    shape.extend(free_b.iter().map(|&k| b.shape[k]));
    if shape.is_empty() {
        shape.push(1);
    }
    DenseTensor::new(shape, data)
}

/// A split of a tensor's axes into a row group and a column group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bipartition {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

impl Bipartition {
    pub fn new(left: Vec<usize>, right: Vec<usize>) -> Self {
        Self { left, right }
    }

    /// First `k` axes versus the remaining ones of a rank-`rank` tensor.
    pub fn at(k: usize, rank: usize) -> Self {
        Self {
            left: (0..k).collect(),
            right: (k..rank).collect(),
        }
    }

    fn validate(&self, rank: usize) -> Result<()> {
        if self.left.is_empty() || self.right.is_empty() {
            return Err(TensorError::Shape("bipartition groups must be non-empty".into()));
        }
        let mut seen = vec![false; rank];
        for &ax in self.left.iter().chain(&self.right) {
            if ax >= rank || std::mem::replace(&mut seen[ax], true) {
                return Err(TensorError::Shape(format!("bad bipartition {self:?} for rank {rank}")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(TensorError::Shape(format!("bipartition {self:?} misses axes")));
        }
        Ok(())
    }

    fn arrange(&self, t: &DenseTensor) -> Result<(DenseTensor, Vec<usize>, Vec<usize>)> {
        self.validate(t.rank())?;
        let perm: Vec<usize> = self.left.iter().chain(&self.right).copied().collect();
        let lshape = self.left.iter().map(|&k| t.shape[k]).collect();
        let rshape = self.right.iter().map(|&k| t.shape[k]).collect();
        Ok((t.permute(&perm), lshape, rshape))
    }
}

#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Shape `(left extents..., k)`, orthonormal columns.
    pub left_isometry: DenseTensor,
    /// Descending, length `k`.
    pub singular_values: Vec<f64>,
    /// Shape `(k, right extents...)`, orthonormal rows.
    pub right_isometry: DenseTensor,
    /// Squared weight of the dropped singular values relative to the total.
    pub discarded_weight: f64,
}

impl SvdResult {
    /// Left isometry with the singular values absorbed into its last axis.
    pub fn left_weighted(&self) -> DenseTensor {
        let mut t = self.left_isometry.clone();
        let k = self.singular_values.len();
        for (i, z) in t.data.iter_mut().enumerate() {
            *z *= self.singular_values[i % k];
        }
        t
    }

    /// Right isometry with the singular values absorbed into its first axis.
    pub fn right_weighted(&self) -> DenseTensor {
        let mut t = self.right_isometry.clone();
        let k = self.singular_values.len();
        let row = t.len() / k;
        for (i, z) in t.data.iter_mut().enumerate() {
            *z *= self.singular_values[i / row];
        }
        t
    }
}

/// Rank kept under the truncation rule: the smallest rank whose relative
/// discarded weight falls below `cutoff`, capped at `max_bond`. Equality at
/// the cutoff keeps the extra value. Values below the numerical floor are
/// always dropped.
pub fn truncation_rank(singular_values: &[f64], max_bond: usize, cutoff: f64) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let smax = singular_values.first().copied().unwrap_or(0.0);
    if total == 0.0 || smax == 0.0 {
        return 1;
    }
    let mut rank = singular_values.len();
    let mut tail = 0.0;
    while rank > 1 {
        let s = singular_values[rank - 1];
        let next_tail = tail + s * s;
        let negligible = s <= NUMERICAL_ZERO * smax;
        if negligible || next_tail < cutoff * total {
            tail = next_tail;
            rank -= 1;
        } else {
            break;
        }
    }
    rank.min(max_bond.max(1))
}

/// Singular value decomposition of `t` across `split`, truncated to at most
/// `max_bond` values and to a relative discarded weight below `cutoff`.
///
/// A zero tensor yields rank 1 with a single zero singular value.
pub fn svd_truncate(t: &DenseTensor, split: &Bipartition, max_bond: usize, cutoff: f64) -> Result<SvdResult> {
    let (arranged, lshape, rshape) = split.arrange(t)?;
    let m: usize = lshape.iter().product();
    let n: usize = rshape.iter().product();
    let (u, s, vt) = svd_matrix(&arranged.data, m, n)?;
    let full = s.len();
    let keep = truncation_rank(&s, max_bond, cutoff);
    let total: f64 = s.iter().map(|x| x * x).sum();
    let dropped: f64 = s[keep..].iter().map(|x| x * x).sum();
    let discarded_weight = if total > 0.0 { (dropped / total).clamp(0.0, 1.0) } else { 0.0 };

    let mut left = Vec::with_capacity(m * keep);
    for i in 0..m {
        left.extend_from_slice(&u[i * full..i * full + keep]);
    }
    let right = vt[..keep * n].to_vec();
    let mut left_shape = lshape;
    left_shape.push(keep);
    let mut right_shape = vec![keep];
    right_shape.extend(rshape);
    Ok(SvdResult {
        left_isometry: DenseTensor::new(left_shape, left)?,
        singular_values: s[..keep].to_vec(),
        right_isometry: DenseTensor::new(right_shape, right)?,
        discarded_weight,
    })
}

/// Thin SVD of a row-major `m x n` matrix. Returns row-major `U (m x r)`,
/// descending `S`, and row-major `V† (r x n)` with `r = min(m, n)`.
///
/// Non-square inputs are reduced to their square triangular factor by QR
/// first, which is faster and avoids convergence failures on very
/// elongated, rank-deficient blocks.
fn svd_matrix(a: &[C64], m: usize, n: usize) -> Result<(Vec<C64>, Vec<f64>, Vec<C64>)> {
    let r = m.min(n);
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(TensorError::Decomposition(format!("SVD of {m}x{n}: non-finite entries")));
    }
    if a.iter().all(|z| *z == ZERO) {
        let mut u = vec![ZERO; m * r];
        let mut vt = vec![ZERO; r * n];
        for k in 0..r {
            u[k * r + k] = ONE;
            vt[k * n + k] = ONE;
        }
        return Ok((u, vec![0.0; r], vt));
    }
    let (a, scale) = conditioned(a);
    let (u, mut s, vt) = svd_scaled(&a, m, n)?;
    s.iter_mut().for_each(|x| *x *= scale);
    Ok((u, s, vt))
}

/// Rescales `a` to unit max-modulus and flushes entries too small to matter
/// next to it. Householder reflections on columns of ~1e-160 entries
/// underflow to 0/0 otherwise.
fn conditioned(a: &[C64]) -> (Vec<C64>, f64) {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return (a.to_vec(), 1.0);
    }
    let out = a
        .iter()
        .map(|z| {
            let w = z / scale;
            if w.norm() < FLUSH { ZERO } else { w }
        })
        .collect();
    (out, scale)
}

const FLUSH: f64 = 1e-150;

fn all_finite(v: &[C64]) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn svd_scaled(a: &[C64], m: usize, n: usize) -> Result<(Vec<C64>, Vec<f64>, Vec<C64>)> {
    if m < n {
        // A† = U' S V'†, so A = V' S U'†
        let at = adjoint(a, m, n);
        let (u2, s, vt2) = svd_scaled(&at, n, m)?;
        return Ok((adjoint(&vt2, m, m), s, adjoint(&u2, n, m)));
    }
    if m == n {
        return svd_square(a, n);
    }
    let (q, rr, _) = qr_unit(a, m, n);
    let (ur, s, vt) = svd_square(&rr, n)?;
    Ok((matmul_row_major(&q, &ur, m, n, n), s, vt))
}

/// Conjugate transpose of a row-major `m x n` matrix.
fn adjoint(a: &[C64], m: usize, n: usize) -> Vec<C64> {
    let mut out = vec![ZERO; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j].conj();
        }
    }
    out
}

fn svd_square(a: &[C64], n: usize) -> Result<(Vec<C64>, Vec<f64>, Vec<C64>)> {
    let svd = match MatRef::from_row_major_slice(a, n, n).thin_svd() {
        Ok(svd) => svd,
        Err(_) => return svd_gram(a, n),
    };
    let (uu, vv) = (svd.U(), svd.V());
    let sv: Vec<f64> = (0..n).map(|k| svd.S()[k].re).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| sv[y].total_cmp(&sv[x]));
    let s: Vec<f64> = order.iter().map(|&k| sv[k]).collect();
    let mut u = vec![ZERO; n * n];
    let mut vt = vec![ZERO; n * n];
    for (c, &k) in order.iter().enumerate() {
        for i in 0..n {
            u[i * n + c] = uu[(i, k)];
            vt[c * n + i] = vv[(i, k)].conj();
        }
    }
    if !all_finite(&u) || !all_finite(&vt) || s.iter().any(|x| !x.is_finite()) {
        return svd_gram(a, n);
    }
    Ok((u, s, vt))
}

/// Fallback through the Hermitian eigenproblem of `A†A`. Right vectors come
/// from the eigenbasis; left vectors and singular values from a QR of `AV`,
/// which keeps `U` orthonormal even where the spectrum is degenerate.
fn svd_gram(a: &[C64], n: usize) -> Result<(Vec<C64>, Vec<f64>, Vec<C64>)> {
    let am = MatRef::from_row_major_slice(a, n, n);
    let gram = am.adjoint() * am;
    let eig = gram
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| TensorError::Decomposition(format!("SVD of {n}x{n} failed: {e:?}")))?;
    // descending eigenvalues
    let v = faer::Mat::<C64>::from_fn(n, n, |i, j| eig.U()[(i, n - 1 - j)]);
    let b = am * &v;
    let qr = b.qr();
    let q = qr.compute_thin_Q();
    let rr = qr.thin_R();
    let mut u = vec![ZERO; n * n];
    let mut s = vec![0.0; n];
    let mut vt = vec![ZERO; n * n];
    for k in 0..n {
        let d = rr[(k, k)];
        s[k] = d.norm();
        let phase = if s[k] > 0.0 { d / s[k] } else { ONE };
        for i in 0..n {
            u[i * n + k] = q[(i, k)] * phase;
            vt[k * n + i] = v[(i, k)].conj();
        }
    }
    if !all_finite(&u) || !all_finite(&vt) {
        return Err(TensorError::Decomposition(format!("SVD of {n}x{n}: fallback produced non-finite factors")));
    }
    Ok((u, s, vt))
}

/// QR factorization across `split`: returns an isometry of shape
/// `(left extents..., k)` and a remainder `(k, right extents...)` with
/// `k = min(rows, cols)`.
pub fn qr_orthogonalize(t: &DenseTensor, split: &Bipartition) -> Result<(DenseTensor, DenseTensor)> {
    let (arranged, lshape, rshape) = split.arrange(t)?;
    let m: usize = lshape.iter().product();
    let n: usize = rshape.iter().product();
    let (q, r, k) = qr_matrix(&arranged.data, m, n);
    let mut qshape = lshape;
    qshape.push(k);
    let mut rshape_out = vec![k];
    rshape_out.extend(rshape);
    Ok((DenseTensor::new(qshape, q)?, DenseTensor::new(rshape_out, r)?))
}

/// Row-major thin QR.
fn qr_matrix(a: &[C64], m: usize, n: usize) -> (Vec<C64>, Vec<C64>, usize) {
    let (a, scale) = conditioned(a);
    let (mut q, mut r, k) = qr_unit(&a, m, n);
    if !all_finite(&q) || !all_finite(&r) {
        // A = U (S V†) is a valid, if non-triangular, isometry split
        if let Ok((u, sv, vt)) = svd_scaled(&a, m, n) {
            q = u;
            r = vt;
            for (row, x) in r.chunks_mut(n).zip(&sv) {
                row.iter_mut().for_each(|z| *z *= x);
            }
        }
    }
    r.iter_mut().for_each(|z| *z *= scale);
    (q, r, k)
}

fn qr_unit(a: &[C64], m: usize, n: usize) -> (Vec<C64>, Vec<C64>, usize) {
    let k = m.min(n);
    let qr = MatRef::from_row_major_slice(a, m, n).qr();
    let qv = to_row_major(qr.compute_thin_Q().as_ref());
    let rv = to_row_major(qr.thin_R());
    (qv, rv, k)
}

/// `exp(g)` for an anti-Hermitian matrix `g`, by scaling and squaring around a
/// Taylor core. The result is unitary to within `tol` (checked).
pub fn expm_antihermitian(g: &DenseTensor, tol: f64) -> Result<DenseTensor> {
    if g.rank() != 2 || g.shape[0] != g.shape[1] {
        return Err(TensorError::Shape(format!("expm needs a square matrix, got {:?}", g.shape)));
    }
    let n = g.shape[0];
    let scale = g.data.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((g.data[i * n + j] + g.data[j * n + i].conj()).norm());
        }
    }
    if dev > 1e-12 * scale {
        return Err(TensorError::NotAntiHermitian(dev));
    }
    let u = expm(g);
    let defect = u.isometry_defect();
    if defect > tol.max(1e-15) {
        return Err(TensorError::Decomposition(format!(
            "exponential lost unitarity: defect {defect:.3e} > {tol:.1e}"
        )));
    }
    Ok(u)
}

/// General dense matrix exponential (scaling and squaring, Taylor core).
pub(crate) fn expm(g: &DenseTensor) -> DenseTensor {
    let n = g.shape[0];
    // 1-norm bound
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| g.data[i * n + j].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    let mut s = 1.0;
    while norm1 * s > 0.25 {
        s *= 0.5;
        squarings += 1;
    }
    let a = g.clone().scale(C64::new(s, 0.0));
    let mut result = DenseTensor::identity(n);
    let mut term = DenseTensor::identity(n);
    for k in 1..=30 {
        term = term.matmul(&a).expect("square").scale(C64::new(1.0 / k as f64, 0.0));
        let tn = term.norm();
        for (r, t) in result.data.iter_mut().zip(&term.data) {
            *r += t;
        }
        if tn < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result).expect("square");
    }
    result
}

/// Pauli matrices and ladder operators in the basis `(|up>, |down>)`.
pub mod pauli {
    use super::*;

    pub fn x() -> DenseTensor {
        DenseTensor::from_rows(&[&[ZERO, ONE], &[ONE, ZERO]]).unwrap()
    }

    pub fn y() -> DenseTensor {
        DenseTensor::from_rows(&[&[ZERO, -I], &[I, ZERO]]).unwrap()
    }

    pub fn z() -> DenseTensor {
        DenseTensor::from_rows(&[&[ONE, ZERO], &[ZERO, -ONE]]).unwrap()
    }

    /// `|up><down|`
    pub fn raising() -> DenseTensor {
        DenseTensor::from_rows(&[&[ZERO, ONE], &[ZERO, ZERO]]).unwrap()
    }

    /// `|down><up|`
    pub fn lowering() -> DenseTensor {
        DenseTensor::from_rows(&[&[ZERO, ZERO], &[ONE, ZERO]]).unwrap()
    }
}
