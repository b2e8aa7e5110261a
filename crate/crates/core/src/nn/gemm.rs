//! Strided matrix views and a bounds-checked GEMM.
//!
//! The packed micro-kernels come from `matrixmultiply`. Large products are
//! split into disjoint row (or column) blocks of the output and fanned out
//! through [`crate::par`]; each output element still accumulates over `k` in
//! the same order, so the split never changes the result.

use super::real::Real;

/// Read-only strided view of a matrix stored in a slice.
#[derive(Clone, Copy)]
pub struct MatRef<'a, R> {
    data: &'a [R],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, R: Real> MatRef<'a, R> {
    pub fn row_major(data: &'a [R], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a [R], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * rs + (cols - 1) * cs;
            assert!(
                last < data.len(),
                "matrix view {rows}x{cols} (strides {rs},{cs}) exceeds {} elements",
                data.len()
            );
        }
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn sub_rows(self, start: usize, count: usize) -> Self {
        if count == 0 {
            return Self { rows: 0, ..self };
        }
        Self {
            data: &self.data[start * self.rs..],
            rows: count,
            ..self
        }
    }

    fn sub_cols(self, start: usize, count: usize) -> Self {
        if count == 0 {
            return Self { cols: 0, ..self };
        }
        Self {
            data: &self.data[start * self.cs..],
            cols: count,
            ..self
        }
    }
}

const PARALLEL_MIN_FLOPS: usize = 1 << 20;

/// `c ← alpha · a · b + beta · c`, with `c` row-major `a.rows × b.cols`.
///
/// When `beta` is zero `c` is overwritten without being read.
pub fn gemm<R: Real>(alpha: R, a: MatRef<'_, R>, b: MatRef<'_, R>, beta: R, c: &mut [R]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "inner dimensions differ: {m}x{k} · {}x{n}", b.rows);
    assert_eq!(c.len(), m * n, "output holds {} elements, need {m}x{n}", c.len());
    if m == 0 || n == 0 {
        return;
    }
    let workers = crate::par::workers();
    if workers <= 1 || m * n * k < PARALLEL_MIN_FLOPS {
        gemm_block(alpha, a, b, beta, c, n);
        return;
    }
    if m >= n || m >= 4 * workers {
        let rows_per = m.div_ceil(workers * 2).max(1);
        crate::par::for_each_chunk_mut(c, rows_per * n, |i, block| {
            let r0 = i * rows_per;
            let rows = block.len() / n;
            gemm_block(alpha, a.sub_rows(r0, rows), b, beta, block, n);
        });
    } else {
        // Column blocks of a row-major output are not contiguous: compute each
        // into scratch and copy back.
        let cols_per = n.div_ceil(workers * 2).max(1);
        let blocks = n.div_ceil(cols_per);
        let parts = crate::par::map_indexed(blocks, |i| {
            let c0 = i * cols_per;
            let w = cols_per.min(n - c0);
            let mut scratch = vec![R::zero(); m * w];
            if beta != R::zero() {
                for r in 0..m {
                    scratch[r * w..(r + 1) * w].copy_from_slice(&c[r * n + c0..r * n + c0 + w]);
                }
            }
            gemm_block(alpha, a, b.sub_cols(c0, w), beta, &mut scratch, w);
            scratch
        });
        for (i, scratch) in parts.into_iter().enumerate() {
            let c0 = i * cols_per;
            let w = scratch.len() / m;
            for r in 0..m {
                c[r * n + c0..r * n + c0 + w].copy_from_slice(&scratch[r * w..(r + 1) * w]);
            }
        }
    }
}

fn gemm_block<R: Real>(alpha: R, a: MatRef<'_, R>, b: MatRef<'_, R>, beta: R, c: &mut [R], ldc: usize) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    debug_assert!(m == 0 || (m - 1) * ldc + n <= c.len());
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for r in 0..m {
            for v in &mut c[r * ldc..r * ldc + n] {
                *v = if beta == R::zero() { R::zero() } else { *v * beta };
            }
        }
        return;
    }
    // SAFETY: MatRef construction checked that every addressed element of `a`
    // and `b` is inside its slice; `c` is an exclusive borrow of at least
    // (m-1)*ldc + n elements and cannot alias the shared inputs.
    unsafe {
        R::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn matches_naive_product() {
        let (m, k, n) = (7, 5, 9);
        let a: Vec<f64> = (0..m * k).map(|v| (v as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm(1.0, MatRef::row_major(&a, m, k), MatRef::row_major(&b, k, n), 0.0, &mut c);
        for (x, y) in c.iter().zip(naive(&a, &b, m, k, n)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_views() {
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f64> = (0..m * k).map(|v| v as f64).collect();
        let b: Vec<f64> = (0..k * n).map(|v| 1.0 + v as f64).collect();
        // store aᵀ (k×m) and read it back transposed
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c = vec![1.0; m * n];
        gemm(2.0, MatRef::row_major(&at, k, m).t(), MatRef::row_major(&b, k, n), 1.0, &mut c);
        let expect = naive(&a, &b, m, k, n);
        for (x, y) in c.iter().zip(expect) {
            assert!((x - (2.0 * y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn large_split_is_bit_identical_to_single_block() {
        for &(m, k, n) in &[(300, 64, 200), (8, 300, 1200)] {
            let a: Vec<f32> = (0..m * k).map(|v| ((v * 7919) % 1000) as f32 / 997.0 - 0.5).collect();
            let b: Vec<f32> = (0..k * n).map(|v| ((v * 104729) % 1000) as f32 / 991.0 - 0.5).collect();
            let mut c1 = vec![0.0f32; m * n];
            let mut c2 = vec![0.0f32; m * n];
            gemm(1.0, MatRef::row_major(&a, m, k), MatRef::row_major(&b, k, n), 0.0, &mut c1);
            gemm_block(1.0, MatRef::row_major(&a, m, k), MatRef::row_major(&b, k, n), 0.0, &mut c2, n);
            assert_eq!(c1, c2);
        }
    }

    #[test]
    #[should_panic]
    fn out_of_bounds_view_panics() {
        let data = [0.0f64; 5];
        let _ = MatRef::row_major(&data, 2, 3);
    }
}
