//! Slice-level numeric kernels shared by the forward and backward rules.

use crate::scalar::Scalar;

/// Geometry of a 2-D convolution or pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Self {
            stride,
            dilation,
            padding,
        }
    }

    /// Stride 1 with "same" padding for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self::new(1, dilation, dilation * (kernel / 2))
    }

    /// Output extent along one axis, or `None` when it would be non-positive.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    fn is_pointwise(&self, kernel: usize) -> bool {
        kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub oh: usize,
    pub ow: usize,
    pub p: ConvParams,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one `[cin, h, w]` image into `[cin*k*k, oh*ow]` patch columns.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ncols = g.col_cols();
    let (s, d, pad) = (g.p.stride as isize, g.p.dilation as isize, g.p.padding as isize);
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oh in 0..g.oh {
                    let ih = oh as isize * s + ki as isize * d - pad;
                    let out_row = &mut dst[oh * g.ow..(oh + 1) * g.ow];
                    if ih < 0 || ih >= g.h as isize {
                        out_row.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, o) in out_row.iter_mut().enumerate() {
                        let iw = ow as isize * s + kj as isize * d - pad;
                        *o = if iw < 0 || iw >= g.w as isize {
                            T::ZERO
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-column gradients back onto the image.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let ncols = g.col_cols();
    let (s, d, pad) = (g.p.stride as isize, g.p.dilation as isize, g.p.padding as isize);
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oh in 0..g.oh {
                    let ih = oh as isize * s + ki as isize * d - pad;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.ow {
                        let iw = ow as isize * s + kj as isize * d - pad;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] += src[oh * g.ow + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution over a batch. `out` is `[b, cout, oh*ow]`.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    weight: &[T],
    cout: usize,
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let in_per = g.cin * g.h * g.w;
    let out_per = cout * g.col_cols();
    let pointwise = g.p.is_pointwise(g.k);
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![T::ZERO; g.col_rows() * g.col_cols()]
    };
    for b in 0..batch {
        let xb = &x[b * in_per..(b + 1) * in_per];
        let ob = &mut out[b * out_per..(b + 1) * out_per];
        let rhs: &[T] = if pointwise {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        T::gemm(
            false,
            false,
            cout,
            g.col_cols(),
            g.col_rows(),
            T::ONE,
            weight,
            rhs,
            T::ZERO,
            ob,
        );
        if let Some(bias) = bias {
            for (co, &bv) in bias.iter().enumerate() {
                for v in &mut ob[co * g.col_cols()..(co + 1) * g.col_cols()] {
                    *v += bv;
                }
            }
        }
    }
}

/// Backward convolution; each gradient buffer is accumulated into when present.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    weight: &[T],
    cout: usize,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let in_per = g.cin * g.h * g.w;
    let npix = g.col_cols();
    let out_per = cout * npix;
    let pointwise = g.p.is_pointwise(g.k);
    let mut cols = vec![T::ZERO; if pointwise { 0 } else { g.col_rows() * npix }];
    let mut dcols = vec![T::ZERO; if dx.is_some() && !pointwise { g.col_rows() * npix } else { 0 }];
    for b in 0..batch {
        let xb = &x[b * in_per..(b + 1) * in_per];
        let gb = &dout[b * out_per..(b + 1) * out_per];
        if let Some(db) = db.as_deref_mut() {
            for (co, acc) in db.iter_mut().enumerate() {
                *acc += gb[co * npix..(co + 1) * npix].iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            let rhs: &[T] = if pointwise {
                xb
            } else {
                im2col(xb, g, &mut cols);
                &cols
            };
            T::gemm(false, true, cout, g.col_rows(), npix, T::ONE, gb, rhs, T::ONE, dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * in_per..(b + 1) * in_per];
            if pointwise {
                T::gemm(true, false, g.cin, npix, cout, T::ONE, weight, gb, T::ONE, dxb);
            } else {
                T::gemm(true, false, g.col_rows(), npix, cout, T::ONE, weight, gb, T::ZERO, &mut dcols);
                col2im(&dcols, g, dxb);
            }
        }
    }
}

/// Average pooling with a square window and floor semantics.
pub(crate) fn avg_pool_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
    out: &mut [T],
) {
    let norm = T::from_f64(1.0 / (k * k) as f64);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = T::ZERO;
                for di in 0..k {
                    for dj in 0..k {
                        acc += src[(i * s + di) * w + j * s + dj];
                    }
                }
                dst[i * ow + j] = acc * norm;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn avg_pool_backward<T: Scalar>(
    dout: &[T],
    planes: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
    dx: &mut [T],
) {
    let norm = T::from_f64(1.0 / (k * k) as f64);
    for p in 0..planes {
        let src = &dout[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let gv = src[i * ow + j] * norm;
                for di in 0..k {
                    for dj in 0..k {
                        dst[(i * s + di) * w + j * s + dj] += gv;
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax of one contiguous or strided row.
pub(crate) fn softmax_strided<T: Scalar>(x: &[T], out: &mut [T], offset: usize, len: usize, stride: usize) {
    let mut mx = x[offset];
    for i in 1..len {
        mx = mx.max(x[offset + i * stride]);
    }
    let mut total = T::ZERO;
    for i in 0..len {
        let e = (x[offset + i * stride] - mx).exp();
        out[offset + i * stride] = e;
        total += e;
    }
    for i in 0..len {
        out[offset + i * stride] /= total;
    }
}

/// Softmax backward given the softmax output `y`: `dx = y * (dy - <dy, y>)`.
pub(crate) fn softmax_backward_strided<T: Scalar>(
    y: &[T],
    dy: &[T],
    dx: &mut [T],
    offset: usize,
    len: usize,
    stride: usize,
) {
    let mut dot = T::ZERO;
    for i in 0..len {
        let idx = offset + i * stride;
        dot += dy[idx] * y[idx];
    }
    for i in 0..len {
        let idx = offset + i * stride;
        dx[idx] += y[idx] * (dy[idx] - dot);
    }
}
