//! Small dense row-major matrix helpers. Dimensions here are the state size
//! of an ODE system, so nothing needs to be clever.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

pub fn identity<T: Scalar>(n: usize) -> Vec<T> {
    let mut m = vec![T::zero(); n * n];
    for i in 0..n {
        m[i * n + i] = T::one();
    }
    m
}

/// `out = a * x` for an `rows x cols` matrix.
pub fn matvec<T: Scalar>(a: &[T], rows: usize, cols: usize, x: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), rows * cols);
    for i in 0..rows {
        let row = &a[i * cols..(i + 1) * cols];
        out[i] = row.iter().zip(x).map(|(&r, &v)| r * v).sum();
    }
}

/// Product of `a (r x k)` and `b (k x c)`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], r: usize, k: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == T::zero() {
                continue;
            }
            for j in 0..c {
                out[i * c + j] += ail * b[l * c + j];
            }
        }
    }
    out
}

/// Solves `a X = b` for `X` (`n x m`), Gaussian elimination with partial pivoting.
pub fn solve<T: Scalar>(a: &[T], n: usize, b: &[T], m: usize) -> Result<Vec<T>> {
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| {
                a[i * n + col]
                    .abs()
                    .partial_cmp(&a[j * n + col].abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(col);
        if a[pivot * n + col] == T::zero() || !a[pivot * n + col].is_finite() {
            return Err(Error::Singular);
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            for j in 0..m {
                x.swap(col * m + j, pivot * m + j);
            }
        }
        let d = a[col * n + col];
        for i in col + 1..n {
            let f = a[i * n + col] / d;
            if f == T::zero() {
                continue;
            }
            for j in col..n {
                let v = a[col * n + j];
                a[i * n + j] -= f * v;
            }
            for j in 0..m {
                let v = x[col * m + j];
                x[i * m + j] -= f * v;
            }
        }
    }
    for col in (0..n).rev() {
        let d = a[col * n + col];
        for j in 0..m {
            let mut s = x[col * m + j];
            for k in col + 1..n {
                s -= a[col * n + k] * x[k * m + j];
            }
            x[col * m + j] = s / d;
        }
    }
    Ok(x)
}

/// Spectral norm (largest singular value) by power iteration on `aᵀa`.
pub fn spectral_norm<T: Scalar>(a: &[T], rows: usize, cols: usize) -> T {
    if rows == 0 || cols == 0 {
        return T::zero();
    }
    let mut v = vec![T::one(); cols];
    let mut av = vec![T::zero(); rows];
    let mut sigma = T::zero();
    for _ in 0..100 {
        matvec(a, rows, cols, &v, &mut av);
        let mut w = vec![T::zero(); cols];
        for j in 0..cols {
            w[j] = (0..rows).map(|i| a[i * cols + j] * av[i]).sum();
        }
        let norm = crate::scalar::euclidean(&w);
        if norm == T::zero() {
            return T::zero();
        }
        let next = norm.sqrt();
        v.iter_mut().zip(&w).for_each(|(vi, &wi)| *vi = wi / norm);
        if (next - sigma).abs() <= lit::<T>(1e-12) * next {
            return next;
        }
        sigma = next;
    }
    sigma
}
