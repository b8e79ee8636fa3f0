//! Row-major matrix products. With `std` the `gemm` crate picks the widest
//! SIMD kernel at runtime; without it `matrixmultiply` is used.

/// `C ← α·op(A)·op(B) + β·C` with all matrices row-major.
///
/// `op(A)` is m×k and `op(B)` is k×n; `a_t`/`b_t` select the transpose of
/// the stored matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the assertion above guarantees every index reached through the
    // strides is in bounds, and `c` does not alias `a` or `b`.
    unsafe {
        #[cfg(feature = "std")]
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            n as isize,
            beta != 0.0,
            a.as_ptr(),
            csa,
            rsa,
            b.as_ptr(),
            csb,
            rsb,
            beta,
            alpha,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
        #[cfg(not(feature = "std"))]
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
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


#[cfg(test)]
mod bench {
    #[test]
    #[ignore]
    fn gemm_rate() {
        extern crate std;
        let (m, k, n) = (64, 900, 1600);
        let a = alloc::vec![0.5; m * k];
        let b = alloc::vec![0.25; k * n];
        let mut c = alloc::vec![0.0; m * n];
        let t = std::time::Instant::now();
        for _ in 0..32 {
            super::gemm(m, k, n, 1.0, &a, false, &b, false, 0.0, &mut c);
        }
        let s = t.elapsed().as_secs_f64();
        std::println!(
            "gemm {s:.3}s, {:.1} GFLOPS",
            32.0 * 2.0 * (m * k * n) as f64 / s / 1e9
        );
    }
}
