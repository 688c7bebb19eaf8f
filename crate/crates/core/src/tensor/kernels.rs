//! GEMM and patch-unfolding kernels shared by the convolution ops.

use super::Element;

/// `c = a · b` (or `c += a · b` when `accumulate`), with `c` an `m×n` row-major
/// buffer. `a` is `m×k` row-major, or `k×m` row-major when `a_t`; likewise
/// `b` is `k×n`, or `n×k` when `b_t`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(T::zero());
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above pin every buffer to exactly the extent the
    // strides address, so all reads and writes stay in bounds.
    unsafe {
        T::gemm_raw(m, k, n, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize);
    }
}

/// Geometry of a strided 2-D window sweep over a `channels × height × width`
/// image producing an `out_h × out_w` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.height * self.width
    }
}

/// Unfolds a `[batch, C, H, W]` buffer into `[C·kh·kw, batch·out_h·out_w]`.
/// Out-of-image taps read as zero.
pub(crate) fn im2col<T: Element>(x: &[T], batch: usize, g: &ConvGeom) -> Vec<T> {
    let cols_n = batch * g.out_len();
    let mut cols = vec![T::zero(); g.rows() * cols_n];
    let pad = g.pad as isize;
    for c in 0..g.channels {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..batch {
                    let img = &x[(b * g.channels + c) * g.in_len()..][..g.in_len()];
                    let dst = &mut dst_row[b * g.out_len()..(b + 1) * g.out_len()];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + i) as isize - pad;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let src = &img[iy as usize * g.width..][..g.width];
                        let d = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        for (ox, v) in d.iter_mut().enumerate() {
                            let ix = (ox * g.stride + j) as isize - pad;
                            if ix >= 0 && ix < g.width as isize {
                                *v = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into a
/// `[batch, C, H, W]` buffer.
pub(crate) fn col2im<T: Element>(cols: &[T], batch: usize, g: &ConvGeom, out: &mut [T]) {
    let cols_n = batch * g.out_len();
    debug_assert_eq!(cols.len(), g.rows() * cols_n);
    debug_assert_eq!(out.len(), batch * g.channels * g.in_len());
    let pad = g.pad as isize;
    for c in 0..g.channels {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src_row = &cols[row * cols_n..(row + 1) * cols_n];
                for b in 0..batch {
                    let img = &mut out[(b * g.channels + c) * g.in_len()..][..g.in_len()];
                    let src = &src_row[b * g.out_len()..(b + 1) * g.out_len()];
                    for oy in 0..g.out_h {
                        let iy = (oy * g.stride + i) as isize - pad;
                        if iy < 0 || iy >= g.height as isize {
                            continue;
                        }
                        let dst = &mut img[iy as usize * g.width..][..g.width];
                        let s = &src[oy * g.out_w..(oy + 1) * g.out_w];
                        for (ox, v) in s.iter().enumerate() {
                            let ix = (ox * g.stride + j) as isize - pad;
                            if ix >= 0 && ix < g.width as isize {
                                dst[ix as usize] += *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[batch, C, L]` → `[C, batch·L]`.
pub(crate) fn batch_major_to_channel_major<T: Element>(x: &[T], batch: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            let src = &x[(b * c + ch) * l..][..l];
            out[ch * batch * l + b * l..][..l].copy_from_slice(src);
        }
    }
    out
}

/// `[C, batch·L]` → `[batch, C, L]`.
pub(crate) fn channel_major_to_batch_major<T: Element>(x: &[T], batch: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        for ch in 0..c {
            let src = &x[ch * batch * l + b * l..][..l];
            out[(b * c + ch) * l..][..l].copy_from_slice(src);
        }
    }
    out
}
