//! Strided single-precision matrix multiply.

/// Row/column strides of a matrix operand, in elements.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub rows: isize,
    pub cols: isize,
}

impl Layout {
    /// Row-major with `ld` elements per row.
    pub const fn row_major(ld: usize) -> Self {
        Self {
            rows: ld as isize,
            cols: 1,
        }
    }

    /// Transposed view of a row-major matrix with `ld` elements per row.
    pub const fn transposed(ld: usize) -> Self {
        Self {
            rows: 1,
            cols: ld as isize,
        }
    }

    fn max_offset(self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.rows as usize + (cols - 1) * self.cols as usize
    }
}

/// `c = a · b + beta · c` where `a` is `m × k`, `b` is `k × n` and `c` is
/// `m × n` (row-major, `n` per row).
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    la: Layout,
    b: &[f32],
    lb: Layout,
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(la.max_offset(m, k) < a.len(), "gemm: lhs out of range");
    assert!(lb.max_offset(k, n) < b.len(), "gemm: rhs out of range");
    assert!(m * n <= c.len(), "gemm: output out of range");
    // SAFETY: the asserts above bound every offset the kernel reads or writes.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rows,
            la.cols,
            b.as_ptr(),
            lb.rows,
            lb.cols,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: alloc::vec::Vec<f32> = (0..m * k).map(|i| i as f32 * 0.5 - 2.0).collect();
        let bt: alloc::vec::Vec<f32> = (0..n * k).map(|i| (i % 7) as f32 - 3.0).collect();
        let mut c = alloc::vec![1.0f32; m * n];
        // b is stored transposed (n × k).
        sgemm(m, k, n, &a, Layout::row_major(k), &bt, Layout::transposed(k), 2.0, &mut c);
        for i in 0..m {
            for j in 0..n {
                let expect: f32 = (0..k).map(|p| a[i * k + p] * bt[j * k + p]).sum::<f32>() + 2.0;
                assert!((c[i * n + j] - expect).abs() < 1e-4);
            }
        }
    }
}
