//! Dense kernels shared by the tape ops and the no-grad forward paths.
//!
//! The matmul uses an ikj loop with the k-dimension unrolled four-wide so the
//! inner j loop stays a pure independent-lane FMA chain that the compiler can
//! vectorize. Lanes never reduce across each other, so results do not depend
//! on vector width.

use super::real::Real;

/// c += a * b with a: (m,k), b: (k,n), c: (m,n), all row-major.
pub fn gemm_acc<R: Real>(a: &[R], b: &[R], c: &mut [R], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        let mut kk = 0;
        while kk + 4 <= k {
            let a0 = arow[kk];
            let a1 = arow[kk + 1];
            let a2 = arow[kk + 2];
            let a3 = arow[kk + 3];
            let b0 = &b[kk * n..kk * n + n];
            let b1 = &b[(kk + 1) * n..(kk + 1) * n + n];
            let b2 = &b[(kk + 2) * n..(kk + 2) * n + n];
            let b3 = &b[(kk + 3) * n..(kk + 3) * n + n];
            for j in 0..n {
                let mut acc = crow[j];
                acc = a0.mul_add(b0[j], acc);
                acc = a1.mul_add(b1[j], acc);
                acc = a2.mul_add(b2[j], acc);
                acc = a3.mul_add(b3[j], acc);
                crow[j] = acc;
            }
            kk += 4;
        }
        while kk < k {
            let aik = arow[kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] = aik.mul_add(brow[j], crow[j]);
            }
            kk += 1;
        }
    }
}

/// c = a * b (c fully overwritten).
pub fn gemm<R: Real>(a: &[R], b: &[R], c: &mut [R], m: usize, k: usize, n: usize) {
    c.fill(R::zero());
    gemm_acc(a, b, c, m, k, n);
}

/// out = transpose of a with a: (m,n) row-major, out: (n,m).
pub fn transpose<R: Real>(a: &[R], m: usize, n: usize, out: &mut [R]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
}

/// y[r] += bias for every row r; x: (m,n), bias: (n).
pub fn add_bias_rows<R: Real>(x: &mut [R], bias: &[R], m: usize, n: usize) {
    debug_assert_eq!(x.len(), m * n);
    debug_assert_eq!(bias.len(), n);
    for i in 0..m {
        let row = &mut x[i * n..(i + 1) * n];
        for j in 0..n {
            row[j] += bias[j];
        }
    }
}
