//! Matrix products over row-major buffers.

use zsim_core::Real;

/// A [`Real`] with a blocked matrix-multiply kernel.
pub trait Scalar: Real {
    /// `c = alpha * a * b + beta * c` over strided views.
    ///
    /// # Safety
    /// The pointers and strides must describe in-bounds `m x k`, `k x n` and `m x n` views.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
    );
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, 1);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, 1);
    }
}

/// `c (m x n) = op(a) * op(b)`, or `+=` when `accumulate`. With `ta` the buffer
/// `a` holds the `k x m` transpose; with `tb`, `b` holds the `n x k` transpose.
#[allow(clippy::too_many_arguments)]
pub fn gemm<R: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[R],
    ta: bool,
    b: &[R],
    tb: bool,
    c: &mut [R],
    accumulate: bool,
) {
    assert!(
        a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
        "gemm operand too short"
    );
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(R::zero());
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m) } else { (k, 1) };
    let (rsb, csb) = if tb { (1, k) } else { (n, 1) };
    let beta = if accumulate { R::one() } else { R::zero() };
    // SAFETY: lengths checked above; strides describe row-major or transposed dense views.
    unsafe {
        R::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
        );
    }
}
