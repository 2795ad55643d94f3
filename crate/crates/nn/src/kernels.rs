//! Convolution kernels on NCHW buffers, expressed through im2col and GEMM.

use crate::real::matmul;
use crate::Real;

/// Geometry of a 2-D convolution from a `c_in x h_in x w_in` image to a
/// `h_out x w_out` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(
        c_in: usize,
        h_in: usize,
        w_in: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        assert!(stride >= 1);
        assert!(
            h_in + 2 * pad >= kh && w_in + 2 * pad >= kw,
            "kernel larger than padded input"
        );
        Self {
            c_in,
            h_in,
            w_in,
            kh,
            kw,
            stride,
            pad,
            h_out: (h_in + 2 * pad - kh) / stride + 1,
            w_out: (w_in + 2 * pad - kw) / stride + 1,
        }
    }

    /// Rows of the column matrix.
    pub fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    /// Columns of the column matrix.
    pub fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold one image into a `(c_in*kh*kw) x (h_out*w_out)` matrix.
pub fn im2col<S: Real>(x: &[S], g: &ConvGeom, col: &mut [S]) {
    let cols = g.col_cols();
    for c in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h_in as isize {
                        line.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let src = &x[(c * g.h_in + iy as usize) * g.w_in..][..g.w_in];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w_in as isize {
                            S::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back into an image.
pub fn col2im<S: Real>(col: &[S], g: &ConvGeom, x: &mut [S]) {
    let cols = g.col_cols();
    for c in 0..g.c_in {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h_in as isize {
                        continue;
                    }
                    let dst = &mut x[(c * g.h_in + iy as usize) * g.w_in..][..g.w_in];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w_in as isize {
                            dst[ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched convolution. `weight` is `c_out x c_in x kh x kw`; output is
/// `n x c_out x h_out x w_out`.
pub fn conv2d_forward<S: Real>(
    x: &[S],
    n: usize,
    g: &ConvGeom,
    weight: &[S],
    c_out: usize,
    bias: Option<&[S]>,
) -> Vec<S> {
    let in_len = g.c_in * g.h_in * g.w_in;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut out = vec![S::zero(); n * c_out * cols];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![S::zero(); rows * cols]
    };
    for s in 0..n {
        let xs = &x[s * in_len..(s + 1) * in_len];
        let src: &[S] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, &mut col);
            &col
        };
        let dst = &mut out[s * c_out * cols..(s + 1) * c_out * cols];
        matmul(c_out, rows, cols, weight, false, src, false, dst, false);
        if let Some(b) = bias {
            for (co, chunk) in dst.chunks_mut(cols).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[co]);
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`]. Returns `(dx, dweight, dbias)`; `dx` is
/// skipped when `need_dx` is false.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<S: Real>(
    x: &[S],
    n: usize,
    g: &ConvGeom,
    weight: &[S],
    c_out: usize,
    dout: &[S],
    need_dx: bool,
) -> (Option<Vec<S>>, Vec<S>, Vec<S>) {
    let in_len = g.c_in * g.h_in * g.w_in;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut dw = vec![S::zero(); c_out * rows];
    let mut db = vec![S::zero(); c_out];
    let mut dx = need_dx.then(|| vec![S::zero(); n * in_len]);
    let mut col = vec![S::zero(); rows * cols];
    for s in 0..n {
        let xs = &x[s * in_len..(s + 1) * in_len];
        let ds = &dout[s * c_out * cols..(s + 1) * c_out * cols];
        for (co, chunk) in ds.chunks(cols).enumerate() {
            db[co] += chunk.iter().copied().sum::<S>();
        }
        let src: &[S] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, &mut col);
            &col
        };
        // dW (c_out x rows) += dout (c_out x cols) * col^T
        matmul(c_out, cols, rows, ds, false, src, true, &mut dw, true);
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * in_len..(s + 1) * in_len];
            if g.is_pointwise() {
                matmul(rows, c_out, cols, weight, true, ds, false, dxs, true);
            } else {
                matmul(rows, c_out, cols, weight, true, ds, false, &mut col, false);
                col2im(&col, g, dxs);
            }
        }
    }
    (dx, dw, db)
}

/// Geometry of a transposed convolution, described by the forward convolution
/// it is the adjoint of: that convolution maps the (larger) transposed-conv
/// output to its input.
pub fn conv_transpose_geom(
    c_out: usize,
    h_in: usize,
    w_in: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> ConvGeom {
    let h_out = (h_in - 1) * stride + kh - 2 * pad;
    let w_out = (w_in - 1) * stride + kw - 2 * pad;
    let g = ConvGeom::new(c_out, h_out, w_out, kh, kw, stride, pad);
    debug_assert_eq!((g.h_out, g.w_out), (h_in, w_in));
    g
}

/// Batched transposed convolution. `weight` is `c_in x c_out x kh x kw`;
/// `g` comes from [`conv_transpose_geom`] (so `g.c_in` is the output channel count).
pub fn conv_transpose2d_forward<S: Real>(
    x: &[S],
    n: usize,
    c_in: usize,
    g: &ConvGeom,
    weight: &[S],
    bias: Option<&[S]>,
) -> Vec<S> {
    let c_out = g.c_in;
    let out_len = c_out * g.h_in * g.w_in;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut out = vec![S::zero(); n * out_len];
    let mut col = vec![S::zero(); rows * cols];
    for s in 0..n {
        let xs = &x[s * c_in * cols..(s + 1) * c_in * cols];
        // col (rows x cols) = W^T (rows x c_in) * x (c_in x cols)
        matmul(rows, c_in, cols, weight, true, xs, false, &mut col, false);
        let dst = &mut out[s * out_len..(s + 1) * out_len];
        col2im(&col, g, dst);
        if let Some(b) = bias {
            let plane = g.h_in * g.w_in;
            for (co, chunk) in dst.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[co]);
            }
        }
    }
    out
}

#[allow(clippy::type_complexity)]
pub fn conv_transpose2d_backward<S: Real>(
    x: &[S],
    n: usize,
    c_in: usize,
    g: &ConvGeom,
    weight: &[S],
    dout: &[S],
    need_dx: bool,
) -> (Option<Vec<S>>, Vec<S>, Vec<S>) {
    let c_out = g.c_in;
    let plane = g.h_in * g.w_in;
    let out_len = c_out * plane;
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut dw = vec![S::zero(); c_in * rows];
    let mut db = vec![S::zero(); c_out];
    let mut dx = need_dx.then(|| vec![S::zero(); n * c_in * cols]);
    let mut col = vec![S::zero(); rows * cols];
    for s in 0..n {
        let xs = &x[s * c_in * cols..(s + 1) * c_in * cols];
        let ds = &dout[s * out_len..(s + 1) * out_len];
        for (co, chunk) in ds.chunks(plane).enumerate() {
            db[co] += chunk.iter().copied().sum::<S>();
        }
        im2col(ds, g, &mut col);
        // dW (c_in x rows) += x (c_in x cols) * col^T
        matmul(c_in, cols, rows, xs, false, &col, true, &mut dw, true);
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * c_in * cols..(s + 1) * c_in * cols];
            matmul(c_in, rows, cols, weight, false, &col, false, dxs, true);
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], g: &ConvGeom, w: &[f64], c_out: usize) -> Vec<f64> {
        let mut out = vec![0.0; c_out * g.h_out * g.w_out];
        for co in 0..c_out {
            for oy in 0..g.h_out {
                for ox in 0..g.w_out {
                    let mut acc = 0.0;
                    for c in 0..g.c_in {
                        for i in 0..g.kh {
                            for j in 0..g.kw {
                                let iy = (oy * g.stride + i) as isize - g.pad as isize;
                                let ix = (ox * g.stride + j) as isize - g.pad as isize;
                                if iy >= 0
                                    && ix >= 0
                                    && (iy as usize) < g.h_in
                                    && (ix as usize) < g.w_in
                                {
                                    acc += x[(c * g.h_in + iy as usize) * g.w_in + ix as usize]
                                        * w[((co * g.c_in + c) * g.kh + i) * g.kw + j];
                                }
                            }
                        }
                    }
                    out[(co * g.h_out + oy) * g.w_out + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let g = ConvGeom::new(2, 5, 6, 3, 3, 2, 1);
        assert_eq!((g.h_out, g.w_out), (3, 3));
        let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..54).map(|i| (i as f64 * 0.11).cos()).collect();
        let fast = conv2d_forward(&x, 1, &g, &w, 3, None);
        let slow = naive_conv(&x, &g, &w, 3);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom::new(2, 4, 5, 3, 2, 2, 1);
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin()).collect();
        let c: Vec<f64> = (0..g.col_rows() * g.col_cols())
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let mut col = vec![0.0; c.len()];
        im2col(&x, &g, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn transposed_conv_doubles_resolution() {
        let g = conv_transpose_geom(3, 4, 5, 2, 2, 2, 0);
        assert_eq!((g.h_in, g.w_in), (8, 10));
        let g = conv_transpose_geom(3, 4, 5, 4, 4, 2, 1);
        assert_eq!((g.h_in, g.w_in), (8, 10));
    }
}
