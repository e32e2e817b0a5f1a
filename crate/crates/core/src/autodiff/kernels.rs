//! Dense f64 kernels used by the graph ops.
//!
//! All loops run in a fixed order so results are bit-deterministic. The
//! matmul variants are written so the innermost loop walks contiguous rows
//! of both operands, which the compiler vectorizes.

/// out = A (m x k) * B (k x n), row-major.
pub fn matmul(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    out.fill(0.0);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// out += A (m x n) * B^T (k x n) -> (m x k); inner loop is a dot of two rows.
pub fn matmul_nt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(out.len(), m * k);
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (kk, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// out += A^T (m x k) * B (m x n) -> (k x n); axpy over contiguous rows.
pub fn matmul_tn_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), k * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// Normalized coordinate in [-1, 1] to continuous pixel position.
/// Positions within 1e-9 px of a pixel center snap to it, so lookups at
/// exact grid coordinates are bit-exact despite the rounding in the
/// [-1, 1] <-> pixel round trip.
#[inline]
pub fn to_pixel_position(v: f64, extent: usize) -> f64 {
    if extent <= 1 {
        return 0.0;
    }
    let p = ((v + 1.0) * (extent as f64 - 1.0) / 2.0).clamp(0.0, (extent - 1) as f64);
    let nearest = p.round();
    if (p - nearest).abs() < 1e-9 {
        nearest
    } else {
        p
    }
}

pub fn transpose(out: &mut [f64], a: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(out.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
}
