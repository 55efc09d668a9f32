//! Small dense helpers on column-major `DMatrix<f64>` storage.

use nalgebra::{DMatrix, DVector};

/// Column `j` of a column-major matrix as a contiguous slice.
#[inline]
pub fn column(x: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = x.nrows();
    &x.as_slice()[j * n..(j + 1) * n]
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `out = X^T v`, one column dot product per entry.
pub fn gemv_t(x: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), x.ncols());
    for (j, o) in out.iter_mut().enumerate() {
        *o = dot(column(x, j), v);
    }
}

/// `out = X b`, skipping zero coefficients.
pub fn gemv_sparse(x: &DMatrix<f64>, b: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (j, &bj) in b.iter().enumerate() {
        if bj != 0.0 {
            for (o, xij) in out.iter_mut().zip(column(x, j)) {
                *o += bj * xij;
            }
        }
    }
}

/// Keeps the listed columns, in order.
pub fn select_columns(x: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    let n = x.nrows();
    let mut data = Vec::with_capacity(n * keep.len());
    for &j in keep {
        data.extend_from_slice(column(x, j));
    }
    DMatrix::from_vec(n, keep.len(), data)
}

/// Estimate of the largest eigenvalue of `X^T X` by power iteration,
/// started from the all-ones vector.
pub fn spectral_norm_sq(x: &DMatrix<f64>, iters: usize) -> f64 {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(p, 1.0 / (p as f64).sqrt());
    let mut xv = vec![0.0; n];
    let mut w = vec![0.0; p];
    let mut estimate = 0.0;
    for _ in 0..iters {
        gemv_sparse(x, v.as_slice(), &mut xv);
        gemv_t(x, &xv, &mut w);
        let nw = norm2(&w);
        if nw == 0.0 {
            // v landed in the null space; fall back to the Frobenius bound
            return x.iter().map(|a| a * a).sum();
        }
        estimate = dot(v.as_slice(), &w);
        v.as_mut_slice()
            .iter_mut()
            .zip(&w)
            .for_each(|(vi, wi)| *vi = wi / nw);
    }
    estimate
}
