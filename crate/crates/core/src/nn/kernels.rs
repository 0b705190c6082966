//! Raw numeric kernels: GEMM and the im2col/col2im pair behind every convolution.

/// `c = a · b (+ c)` for logically `m×k` `a` and `k×n` `b`, all row-major.
///
/// `ta`/`tb` select whether the stored buffer is the transpose of the logical
/// operand. Single-threaded, so results are bit-reproducible.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover exactly the strided extents described above.
    unsafe {
        matrixmultiply::dgemm(
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

/// Geometry of a 2-D cross-correlation from an `c×h×w` map to `oh×ow`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input row/col touched by output position `o` and kernel tap `a`.
    #[inline]
    fn src(o: usize, s: usize, a: usize, p: usize, limit: usize) -> Option<usize> {
        let pos = (o * s + a) as isize - p as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    pub fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        debug_assert_eq!(x.len(), self.c * self.h * self.w);
        debug_assert_eq!(cols.len(), self.col_rows() * self.col_cols());
        let ncol = self.col_cols();
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let row = (ci * self.kh + a) * self.kw + b;
                    let dst = &mut cols[row * ncol..(row + 1) * ncol];
                    for oi in 0..self.oh {
                        let out_row = &mut dst[oi * self.ow..(oi + 1) * self.ow];
                        match Self::src(oi, self.sh, a, self.ph, self.h) {
                            None => out_row.iter_mut().for_each(|v| *v = 0.0),
                            Some(ii) => {
                                let src_row = &plane[ii * self.w..(ii + 1) * self.w];
                                for (oj, v) in out_row.iter_mut().enumerate() {
                                    *v = match Self::src(oj, self.sw, b, self.pw, self.w) {
                                        Some(jj) => src_row[jj],
                                        None => 0.0,
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back into `x` (adjoint of [`im2col`](Self::im2col)).
    pub fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.c * self.h * self.w);
        let ncol = self.col_cols();
        for ci in 0..self.c {
            let plane = &mut x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let row = (ci * self.kh + a) * self.kw + b;
                    let src = &cols[row * ncol..(row + 1) * ncol];
                    for oi in 0..self.oh {
                        let Some(ii) = Self::src(oi, self.sh, a, self.ph, self.h) else {
                            continue;
                        };
                        let in_row = &src[oi * self.ow..(oi + 1) * self.ow];
                        let dst_row = &mut plane[ii * self.w..(ii + 1) * self.w];
                        for (oj, v) in in_row.iter().enumerate() {
                            if let Some(jj) = Self::src(oj, self.sw, b, self.pw, self.w) {
                                dst_row[jj] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}
