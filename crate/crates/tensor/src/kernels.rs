//! Raw forward/backward kernels. The graph calls these; they are also
//! exported for inference-only paths that do not need a tape.

use crate::{Real, Result, Shape, Tensor, TensorError};

fn conv_out_dims(h: usize, w: usize, k: usize, pad: usize) -> Result<(usize, usize)> {
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(TensorError::shape("conv2d", format!("kernel {k} larger than padded {h}x{w}")));
    }
    Ok((h + 2 * pad - k + 1, w + 2 * pad - k + 1))
}

pub(crate) fn check_conv(x: Shape, w: Shape, b: Option<Shape>, pad: usize) -> Result<Shape> {
    let [cout, cin, kh, kw] = w.0;
    if cin != x.channels() {
        return Err(TensorError::shape(
            "conv2d",
            format!("input has {} channels, kernel expects {cin}", x.channels()),
        ));
    }
    if kh != kw {
        return Err(TensorError::shape("conv2d", format!("non-square kernel {kh}x{kw}")));
    }
    if let Some(b) = b {
        if b.numel() != cout {
            return Err(TensorError::shape("conv2d", format!("bias has {} entries, want {cout}", b.numel())));
        }
    }
    let (ho, wo) = conv_out_dims(x.height(), x.width(), kh, pad)?;
    Ok(Shape::new(x.batch(), cout, ho, wo))
}

/// Unfolds one `(cin, h, w)` sample into a `(cin*k*k) x (ho*wo)` matrix.
fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, k: usize, pad: usize, ho: usize, wo: usize, cols: &mut [T]) {
    let plane_out = ho * wo;
    for ci in 0..cin {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane_out..(row + 1) * plane_out];
                // valid ox range: 0 <= ox + kx - pad < w
                let lo = pad.saturating_sub(kx).min(wo);
                let hi = (w + pad).saturating_sub(kx).min(wo).max(lo);
                for oy in 0..ho {
                    let seg = &mut dst[oy * wo..(oy + 1) * wo];
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= h {
                        seg.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &xc[(iy - pad) * w..(iy - pad + 1) * w];
                    seg[..lo].iter_mut().for_each(|v| *v = T::zero());
                    seg[hi..].iter_mut().for_each(|v| *v = T::zero());
                    if hi > lo {
                        let start = lo + kx - pad;
                        seg[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an input sample.
fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, k: usize, pad: usize, ho: usize, wo: usize, dx: &mut [T]) {
    let plane_out = ho * wo;
    for ci in 0..cin {
        let xc = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane_out..(row + 1) * plane_out];
                let lo = pad.saturating_sub(kx).min(wo);
                let hi = (w + pad).saturating_sub(kx).min(wo).max(lo);
                for oy in 0..ho {
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= h || hi <= lo {
                        continue;
                    }
                    let dst = &mut xc[(iy - pad) * w..(iy - pad + 1) * w];
                    let seg = &src[oy * wo + lo..oy * wo + hi];
                    let start = lo + kx - pad;
                    for (d, s) in dst[start..start + (hi - lo)].iter_mut().zip(seg) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding. Weight is `(cout, cin, k, k)`.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, pad: usize) -> Result<Tensor<T>> {
    let out_shape = check_conv(x.shape(), w.shape(), b.map(|b| b.shape()), pad)?;
    let [n, cin, h, wd] = x.shape().0;
    let [cout, _, k, _] = w.shape().0;
    let (ho, wo) = (out_shape.height(), out_shape.width());
    let kk = cin * k * k;
    let plane_out = ho * wo;
    let mut out = Tensor::zeros(out_shape);
    let mut cols = vec![T::zero(); kk * plane_out];
    for s in 0..n {
        let xs = &x.data()[s * cin * h * wd..(s + 1) * cin * h * wd];
        let ys = &mut out.data_mut()[s * cout * plane_out..(s + 1) * cout * plane_out];
        if let Some(b) = b {
            for (co, bv) in b.data().iter().enumerate() {
                ys[co * plane_out..(co + 1) * plane_out].iter_mut().for_each(|v| *v = *bv);
            }
        }
        let (cols_ref, k_rows): (&[T], usize) = if k == 1 && pad == 0 {
            (xs, cin)
        } else {
            im2col(xs, cin, h, wd, k, pad, ho, wo, &mut cols);
            (&cols, kk)
        };
        T::gemm(
            cout,
            k_rows,
            plane_out,
            T::one(),
            w.data(),
            k_rows as isize,
            1,
            cols_ref,
            plane_out as isize,
            1,
            if b.is_some() { T::one() } else { T::zero() },
            ys,
            plane_out as isize,
            1,
        );
    }
    Ok(out)
}

/// Accumulates input/weight/bias gradients of [`conv2d_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    pad: usize,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let [n, cin, h, wd] = x.shape().0;
    let [cout, _, k, _] = w.shape().0;
    let ho = h + 2 * pad - k + 1;
    let wo = wd + 2 * pad - k + 1;
    let plane_out = ho * wo;
    let kk = cin * k * k;
    let direct = k == 1 && pad == 0;
    let mut cols = if direct { Vec::new() } else { vec![T::zero(); kk * plane_out] };
    let mut dcols = vec![T::zero(); if dx.is_some() && !direct { kk * plane_out } else { 0 }];
    for s in 0..n {
        let xs = &x.data()[s * cin * h * wd..(s + 1) * cin * h * wd];
        let gs = &dout[s * cout * plane_out..(s + 1) * cout * plane_out];
        if let Some(db) = db.as_deref_mut() {
            for co in 0..cout {
                db[co] += gs[co * plane_out..(co + 1) * plane_out].iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            let cols_ref: &[T] = if direct {
                xs
            } else {
                im2col(xs, cin, h, wd, k, pad, ho, wo, &mut cols);
                &cols
            };
            // dW (cout x kk) += dY (cout x P) * cols^T (P x kk)
            T::gemm(cout, plane_out, kk, T::one(), gs, plane_out as isize, 1, cols_ref, 1, plane_out as isize, T::one(), dw, kk as isize, 1);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxs = &mut dx[s * cin * h * wd..(s + 1) * cin * h * wd];
            if direct {
                // dX (cin x P) += W^T (cin x cout) * dY (cout x P)
                T::gemm(cin, cout, plane_out, T::one(), w.data(), 1, cin as isize, gs, plane_out as isize, 1, T::one(), dxs, plane_out as isize, 1);
            } else {
                T::gemm(kk, cout, plane_out, T::one(), w.data(), 1, kk as isize, gs, plane_out as isize, 1, T::zero(), &mut dcols, plane_out as isize, 1);
                col2im(&dcols, cin, h, wd, k, pad, ho, wo, dxs);
            }
        }
    }
}

pub(crate) fn check_conv_transpose2(x: Shape, w: Shape, b: Option<Shape>) -> Result<Shape> {
    let [cin, cout, kh, kw] = w.0;
    if cin != x.channels() || kh != 2 || kw != 2 {
        return Err(TensorError::shape(
            "conv_transpose2",
            format!("input {:?} vs weight {:?} (want (cin, cout, 2, 2))", x.0, w.0),
        ));
    }
    if let Some(b) = b {
        if b.numel() != cout {
            return Err(TensorError::shape("conv_transpose2", format!("bias has {} entries, want {cout}", b.numel())));
        }
    }
    Ok(Shape::new(x.batch(), cout, x.height() * 2, x.width() * 2))
}

/// Stride-2 transposed convolution with a 2x2 kernel; doubles height and
/// width exactly. Weight is `(cin, cout, 2, 2)`.
pub fn conv_transpose2_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let out_shape = check_conv_transpose2(x.shape(), w.shape(), b.map(|b| b.shape()))?;
    let [n, cin, h, wd] = x.shape().0;
    let cout = out_shape.channels();
    let plane = h * wd;
    let c4 = cout * 4;
    let mut tmp = vec![T::zero(); c4 * plane];
    let mut out = Tensor::zeros(out_shape);
    let (ho, wo) = (2 * h, 2 * wd);
    for s in 0..n {
        let xs = &x.data()[s * cin * plane..(s + 1) * cin * plane];
        // tmp (c4 x P) = W^T (c4 x cin) * X (cin x P)
        T::gemm(c4, cin, plane, T::one(), w.data(), 1, c4 as isize, xs, plane as isize, 1, T::zero(), &mut tmp, plane as isize, 1);
        let ys = &mut out.data_mut()[s * cout * ho * wo..(s + 1) * cout * ho * wo];
        for co in 0..cout {
            let bias = b.map_or(T::zero(), |b| b.data()[co]);
            for a in 0..2 {
                for bb in 0..2 {
                    let src = &tmp[(co * 4 + a * 2 + bb) * plane..(co * 4 + a * 2 + bb + 1) * plane];
                    for i in 0..h {
                        let row = &mut ys[co * ho * wo + (2 * i + a) * wo..co * ho * wo + (2 * i + a + 1) * wo];
                        for j in 0..wd {
                            row[2 * j + bb] = src[i * wd + j] + bias;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn conv_transpose2_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let [n, cin, h, wd] = x.shape().0;
    let cout = w.shape().0[1];
    let plane = h * wd;
    let c4 = cout * 4;
    let (ho, wo) = (2 * h, 2 * wd);
    let mut dtmp = vec![T::zero(); c4 * plane];
    for s in 0..n {
        let gs = &dout[s * cout * ho * wo..(s + 1) * cout * ho * wo];
        for co in 0..cout {
            if let Some(db) = db.as_deref_mut() {
                db[co] += gs[co * ho * wo..(co + 1) * ho * wo].iter().copied().sum::<T>();
            }
            for a in 0..2 {
                for bb in 0..2 {
                    let dst = &mut dtmp[(co * 4 + a * 2 + bb) * plane..(co * 4 + a * 2 + bb + 1) * plane];
                    for i in 0..h {
                        let row = &gs[co * ho * wo + (2 * i + a) * wo..];
                        for j in 0..wd {
                            dst[i * wd + j] = row[2 * j + bb];
                        }
                    }
                }
            }
        }
        let xs = &x.data()[s * cin * plane..(s + 1) * cin * plane];
        if let Some(dw) = dw.as_deref_mut() {
            // dW (cin x c4) += X (cin x P) * dtmp^T (P x c4)
            T::gemm(cin, plane, c4, T::one(), xs, plane as isize, 1, &dtmp, 1, plane as isize, T::one(), dw, c4 as isize, 1);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxs = &mut dx[s * cin * plane..(s + 1) * cin * plane];
            // dX (cin x P) += W (cin x c4) * dtmp (c4 x P)
            T::gemm(cin, c4, plane, T::one(), w.data(), c4 as isize, 1, &dtmp, plane as isize, 1, T::one(), dxs, plane as isize, 1);
        }
    }
}

/// 2x2 max pooling with stride 2. Returns the pooled tensor and, for each
/// output element, the flat input index of the first maximum in scan order.
pub fn max_pool2_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.shape().0;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::OddDims { height: h, width: w });
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros(Shape::new(n, c, ho, wo));
    let mut arg = vec![0usize; n * c * ho * wo];
    let xd = x.data();
    let od = out.data_mut();
    for p in 0..n * c {
        let base = p * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + 2 * i * w + 2 * j;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + dy) * w + 2 * j + dx;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                let o = p * ho * wo + i * wo + j;
                od[o] = xd[best];
                arg[o] = best;
            }
        }
    }
    Ok((out, arg))
}
