//! Dense row-major matrix kernels used by the tape ops.
//!
//! All routines accumulate into `c` (`c += ...`) so callers can fuse
//! gradient accumulation without temporaries.

use crate::scalar::Scalar;

/// Columns per cache block in the row-update kernels.
const COL_BLOCK: usize = 512;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for j0 in (0..n).step_by(COL_BLOCK) {
        let j1 = (j0 + COL_BLOCK).min(n);
        for i in 0..m {
            let c_row = &mut c[i * n + j0..i * n + j1];
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == T::zero() {
                    continue;
                }
                let b_row = &b[p * n + j0..p * n + j1];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += aip * bv;
                }
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for j0 in (0..n).step_by(COL_BLOCK) {
        let j1 = (j0 + COL_BLOCK).min(n);
        for p in 0..k {
            let b_row = &b[p * n + j0..p * n + j1];
            for i in 0..m {
                let api = a[p * m + i];
                if api == T::zero() {
                    continue;
                }
                let c_row = &mut c[i * n + j0..i * n + j1];
                for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                    *cv += api * bv;
                }
            }
        }
    }
}

/// Dot product with four interleaved partial sums (fixed order, so the
/// result is deterministic but not identical to a sequential sum).
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = T::zero();
    for (&x, &y) in ar.iter().zip(br) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Geometry of a 2-d convolution over a single `C×H×W` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Range of output columns `ox` whose input column `ox·stride + kx − pad`
/// falls inside `[0, len)`.
fn valid_range(out: usize, stride: usize, k_off: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = if pad > k_off { (pad - k_off).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k_off { ((len + pad - k_off - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds one image into a `(C·k·k) × (Ho·Wo)` patch matrix.
pub fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    im2col_strided(img, g, cols, g.out_len(), 0);
}

/// As [`im2col`], writing row `r` of the patch matrix to
/// `cols[r·ld + offset ..]`, so a batch can share one wide matrix.
pub fn im2col_strided<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T], ld: usize, offset: usize) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(ho, g.stride, ky, g.pad, g.height);
            for kx in 0..k {
                let (x_lo, x_hi) = valid_range(wo, g.stride, kx, g.pad, g.width);
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ld + offset..row * ld + offset + ho * wo];
                for oy in 0..ho {
                    let out = &mut dst[oy * wo..(oy + 1) * wo];
                    if oy < y_lo || oy >= y_hi || x_lo >= x_hi {
                        out.fill(T::zero());
                        continue;
                    }
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    out[..x_lo].fill(T::zero());
                    out[x_hi..].fill(T::zero());
                    let ix0 = x_lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        out[x_lo..x_hi].copy_from_slice(&src[ix0..ix0 + (x_hi - x_lo)]);
                    } else {
                        for (o, v) in out[x_lo..x_hi].iter_mut().zip(src[ix0..].iter().step_by(g.stride)) {
                            *o = *v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    col2im_strided(cols, g, img, g.out_len(), 0);
}

/// Adjoint of [`im2col_strided`].
pub fn col2im_strided<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T], ld: usize, offset: usize) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(ho, g.stride, ky, g.pad, g.height);
            for kx in 0..k {
                let (x_lo, x_hi) = valid_range(wo, g.stride, kx, g.pad, g.width);
                if x_lo >= x_hi {
                    continue;
                }
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ld + offset..row * ld + offset + ho * wo];
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let ix0 = x_lo * g.stride + kx - g.pad;
                    let part = &src[oy * wo + x_lo..oy * wo + x_hi];
                    for (d, &v) in dst[ix0..].iter_mut().step_by(g.stride).zip(part) {
                        *d += v;
                    }
                }
            }
        }
    }
}
