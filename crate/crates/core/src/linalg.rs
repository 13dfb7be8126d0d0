//! Thin safe wrapper over `matrixmultiply::dgemm` for strided row/column views.

#[derive(Clone, Copy, Debug)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major `rows × cols` view.
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
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

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `C ← α A B + β C` with `C` row-major `a.rows × b.cols` and row stride `ldc`.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64], ldc: usize) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(ldc >= n);
    assert!(c.len() >= (m - 1) * ldc + n, "output buffer too small");
    if k > 0 {
        assert!(a.last_index() < a.data.len(), "lhs view out of bounds");
        assert!(b.last_index() < b.data.len(), "rhs view out of bounds");
    }
    // SAFETY: all views were bounds-checked above and `c` does not alias `a` or `b`
    // (it is borrowed mutably while they are borrowed shared).
    unsafe {
        matrixmultiply::dgemm(
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

    #[test]
    fn transposed_product() {
        // A = [[1,2],[3,4],[5,6]] (3×2), B = [[1,0,2],[0,1,1]] (2×3)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 2.0, 0.0, 1.0, 1.0];
        let mut c = [0.0; 9];
        gemm(1.0, MatRef::row_major(&a, 3, 2), MatRef::row_major(&b, 2, 3), 0.0, &mut c, 3);
        assert_eq!(c, [1.0, 2.0, 4.0, 3.0, 4.0, 10.0, 5.0, 6.0, 16.0]);
        // Aᵀ A
        let mut c = [1.0; 4];
        gemm(1.0, MatRef::row_major(&a, 3, 2).t(), MatRef::row_major(&a, 3, 2), 1.0, &mut c, 2);
        assert_eq!(c, [36.0, 45.0, 45.0, 57.0]);
    }
}
