//! Safe wrappers over the strided GEMM kernels and patch (un)folding.

use crate::tensor::Real;

/// `c (m×n) = op(a) · op(b) (+ c if accumulate)` where `op(a)` is m×k.
///
/// With `ta` set, `a` is stored k×m; with `tb` set, `b` is stored n×k.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    ta: bool,
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: extents checked above; strides describe dense row-major storage.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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

/// Geometry of a square-kernel, symmetric-padding sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate read by output `(oy, ox)` at kernel tap `(ky, kx)`.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    /// Output positions `lo..hi` whose tap `k` lands inside `0..extent`.
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        // o * stride + k - pad in [0, extent)
        let lo = self.pad.saturating_sub(k).div_ceil(self.stride).min(out);
        let hi = if extent + self.pad > k { ((extent + self.pad - k - 1) / self.stride + 1).min(out) } else { 0 };
        (lo, hi.max(lo))
    }
}

/// Unfolds one `[C, H, W]` image into a `[C·k·k, out_h·out_w]` patch matrix.
pub(crate) fn im2col<T: Real>(img: &[T], win: &Window, cols: &mut [T]) {
    let (k, s) = (win.kernel, win.stride);
    let ncols = win.col_cols();
    debug_assert_eq!(cols.len(), win.col_rows() * ncols);
    for c in 0..win.channels {
        let plane = &img[c * win.in_h * win.in_w..(c + 1) * win.in_h * win.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                let (lo, hi) = win.valid_range(kx, win.in_w, win.out_w);
                for oy in 0..win.out_h {
                    let line = &mut dst[oy * win.out_w..(oy + 1) * win.out_w];
                    let Some(iy) = win.source(oy, ky, win.in_h) else {
                        line.fill(T::zero());
                        continue;
                    };
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let src = &plane[iy * win.in_w..(iy + 1) * win.in_w];
                    let first = lo * s + kx - win.pad;
                    if s == 1 {
                        line[lo..hi].copy_from_slice(&src[first..first + (hi - lo)]);
                    } else {
                        for (v, &x) in line[lo..hi].iter_mut().zip(src[first..].iter().step_by(s)) {
                            *v = x;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch columns back, accumulating into `img`.
pub(crate) fn col2im<T: Real>(cols: &[T], win: &Window, img: &mut [T]) {
    let (k, s) = (win.kernel, win.stride);
    let ncols = win.col_cols();
    debug_assert_eq!(cols.len(), win.col_rows() * ncols);
    for c in 0..win.channels {
        let plane = &mut img[c * win.in_h * win.in_w..(c + 1) * win.in_h * win.in_w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                let (lo, hi) = win.valid_range(kx, win.in_w, win.out_w);
                if lo == hi {
                    continue;
                }
                let first = lo * s + kx - win.pad;
                for oy in 0..win.out_h {
                    let Some(iy) = win.source(oy, ky, win.in_h) else { continue };
                    let line = &src[oy * win.out_w + lo..oy * win.out_w + hi];
                    let dst = &mut plane[iy * win.in_w + first..(iy + 1) * win.in_w];
                    for (d, &v) in dst.iter_mut().step_by(s).zip(line) {
                        *d += v;
                    }
                }
            }
        }
    }
}
