use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

const SMALL_M: usize = 4;

/// Dot product with eight independent accumulators.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let (ac, ar) = a.as_chunks::<8>();
    let (bc, br) = b.as_chunks::<8>();
    let mut acc = [T::zero(); 8];
    for (x, y) in ac.iter().zip(bc) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = acc.iter().fold(T::zero(), |s, &v| s + v);
    for (&x, &y) in ar.iter().zip(br) {
        s += x * y;
    }
    s
}

/// Floating-point element type of the dense kernel.
pub trait Scalar: Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;

    /// Raw strided GEMM, `C = alpha·A·B + beta·C`.
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m×k`, `k×n` and `m×n`
    /// matrices for the duration of the call.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    /// `C(m×n) = A(m×k)·B(n×k)ᵀ + beta·C`, all row-major.
    fn gemm_nt(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
        // Packing a strided B dominates for a handful of rows; contiguous
        // dot products are far faster there (single-frame decoding).
        if m <= SMALL_M {
            for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)).take(m) {
                for (c, b_row) in c_row.iter_mut().zip(b.chunks_exact(k)) {
                    *c = beta * *c + dot(a_row, b_row);
                }
            }
            return;
        }
        // SAFETY: lengths checked above; strides describe row-major layouts.
        unsafe {
            Self::gemm_raw(
                m, k, n, Self::one(),
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), 1, k as isize,
                beta, c.as_mut_ptr(), n as isize, 1,
            )
        }
    }

    /// `C(m×n) = A(k×m)ᵀ·B(k×n) + beta·C`, all row-major.
    fn gemm_tn(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: lengths checked above; strides describe row-major layouts.
        unsafe {
            Self::gemm_raw(
                m, k, n, Self::one(),
                a.as_ptr(), 1, m as isize,
                b.as_ptr(), n as isize, 1,
                beta, c.as_mut_ptr(), n as isize, 1,
            )
        }
    }

    /// `C(m×n) = A(m×k)·B(k×n) + beta·C`, all row-major.
    fn gemm_nn(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        // SAFETY: lengths checked above; strides describe row-major layouts.
        unsafe {
            Self::gemm_raw(
                m, k, n, Self::one(),
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1,
                beta, c.as_mut_ptr(), n as isize, 1,
            )
        }
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f32,
        a: *const f32, rsa: isize, csa: isize,
        b: *const f32, rsb: isize, csb: isize,
        beta: f32, c: *mut f32, rsc: isize, csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f64,
        a: *const f64, rsa: isize, csa: isize,
        b: *const f64, rsb: isize, csb: isize,
        beta: f64, c: *mut f64, rsc: isize, csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
