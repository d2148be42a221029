//! Dense complex linear-algebra helpers shared by every module.
//!
//! Everything here works on small (≤ 64×64) dense matrices. Hermitian
//! decompositions go through `nalgebra::SymmetricEigen`, which handles the
//! complex case directly.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub const J: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Real Frobenius inner product `Re tr(a^H b)`.
pub fn inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// `tr(a b)` without forming the product.
pub fn trace_prod(a: &CMat, b: &CMat) -> Complex64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// `tr(p x^T)`, i.e. the sum of the elementwise product.
pub fn trace_prod_t(p: &CMat, x: &CMat) -> Complex64 {
    debug_assert_eq!(p.shape(), x.shape());
    p.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
}

pub fn real_trace(m: &CMat) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

pub fn fro_norm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn diag_mat(v: &CVec) -> CMat {
    CMat::from_diagonal(v)
}

/// `diag(d) * m`
pub fn scale_rows(d: &CVec, m: &CMat) -> CMat {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= d[i];
    }
    out
}

/// `m * diag(d)`
pub fn scale_cols(m: &CMat, d: &CVec) -> CMat {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= d[j];
    }
    out
}

/// Eigenvalues (ascending) and eigenvectors of the Hermitian part of `m`.
pub fn herm_eig(m: &CMat) -> (DVector<f64>, CMat) {
    let eig = SymmetricEigen::new(hermitian_part(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Rebuilds `U diag(f(λ)) U^H` from a Hermitian eigendecomposition.
pub fn herm_apply(vals: &DVector<f64>, vecs: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let d = CVec::from_iterator(vals.len(), vals.iter().map(|&l| cr(f(l))));
    scale_cols(vecs, &d) * vecs.adjoint()
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    let eig = SymmetricEigen::new(hermitian_part(m));
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Nearest PSD matrix in Frobenius norm (eigenvalue clipping).
pub fn psd_project(m: &CMat) -> CMat {
    let (vals, vecs) = herm_eig(m);
    if vals[0] >= 0.0 {
        return hermitian_part(m);
    }
    herm_apply(&vals, &vecs, |l| l.max(0.0))
}

/// Principal square root of the PSD part of `m`.
pub fn psd_sqrt(m: &CMat) -> CMat {
    let (vals, vecs) = herm_eig(m);
    herm_apply(&vals, &vecs, |l| l.max(0.0).sqrt())
}

/// Inverse of a Hermitian positive-definite matrix; `None` when the smallest
/// eigenvalue is not safely positive.
pub fn herm_inverse(m: &CMat) -> Option<CMat> {
    let (vals, vecs) = herm_eig(m);
    let top = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if !(vals[0] > top * 1e-14) {
        return None;
    }
    Some(herm_apply(&vals, &vecs, |l| 1.0 / l))
}

pub fn is_finite(m: &CMat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
