//! Small strided GEMM kernels used by the embedding-bag chain.
//!
//! Matrices are row-major with an explicit leading dimension (row stride).
//! Shapes in the TT chain are tiny (ranks up to a few dozen), so plain loop
//! nests ordered for unit-stride inner loops beat anything heavier.

use crate::element::Element;

/// `C[m x n] (+)= A[m x k] * B[k x n]`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn gemm_nn<T: Element>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
    accumulate: bool,
) {
    for i in 0..m {
        let c_row = &mut c[i * ldc..i * ldc + n];
        if !accumulate {
            c_row.iter_mut().for_each(|x| *x = T::zero());
        }
        let a_row = &a[i * lda..i * lda + k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * ldb..p * ldb + n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ip * bv;
            }
        }
    }
}

/// `C[m x n] += A^T * B` with `A[k x m]`, `B[k x n]`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn gemm_tn_acc<T: Element>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
) {
    for p in 0..k {
        let a_row = &a[p * lda..p * lda + m];
        let b_row = &b[p * ldb..p * ldb + n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            let c_row = &mut c[i * ldc..i * ldc + n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_pi * bv;
            }
        }
    }
}

/// `C[m x n] = A[m x k] * B^T` with `B[n x k]`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn gemm_nt<T: Element>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
) {
    for i in 0..m {
        let a_row = &a[i * lda..i * lda + k];
        for j in 0..n {
            let b_row = &b[j * ldb..j * ldb + k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * ldc + j] = acc;
        }
    }
}
