//! Thin safe wrapper over `matrixmultiply`'s strided GEMM kernels.

use crate::Real;

/// `c = a·b + beta·c` for a logical `[m,k]` × `[k,n]` product.
///
/// `a_t` means `a` is stored row-major as `[k,m]`; `b_t` means `b` is stored
/// as `[n,k]`. `c` is always row-major `[m,n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    a_t: bool,
    b: &[Real],
    b_t: bool,
    c: &mut [Real],
    beta: Real,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b` (it is `&mut`).
    unsafe {
        kernel(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(not(feature = "single-precision"))]
use matrixmultiply::dgemm as kernel;
#[cfg(feature = "single-precision")]
use matrixmultiply::sgemm as kernel;
