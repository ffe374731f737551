//! Forward and backward kernels for the differentiable ops, as plain functions
//! over tensors. The tape in [`crate::tape`] only does the bookkeeping.

use crate::tensor::{gemm, MatRef};
use crate::{invalid, Element, Result, Tensor};

/// Resolved sizes of a SAME-padded 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(x_shape: &[usize], w_shape: &[usize], stride: usize) -> Result<Self> {
        let [batch, in_h, in_w, in_c] = match x_shape {
            &[n, h, w, c] => [n, h, w, c],
            _ => return invalid(format!("conv2d input must be NHWC, got {x_shape:?}")),
        };
        let [k_h, k_w, k_in, out_c] = match w_shape {
            &[a, b, c, d] => [a, b, c, d],
            _ => return invalid(format!("conv2d kernel must be kh×kw×cin×cout, got {w_shape:?}")),
        };
        if k_in != in_c {
            return invalid(format!("conv2d kernel expects {k_in} input channels, input has {in_c}"));
        }
        if stride == 0 || k_h == 0 || k_w == 0 {
            return invalid("conv2d stride and kernel size must be positive");
        }
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad_h = ((out_h.saturating_sub(1)) * stride + k_h).saturating_sub(in_h);
        let pad_w = ((out_w.saturating_sub(1)) * stride + k_w).saturating_sub(in_w);
        Ok(ConvGeometry {
            batch,
            in_h,
            in_w,
            in_c,
            k_h,
            k_w,
            out_c,
            stride,
            out_h,
            out_w,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        })
    }

    /// Rows of the patch matrix (output pixels per sample).
    fn patches(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Columns of the patch matrix (kernel taps × input channels).
    fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.in_c
    }

    fn is_pointwise(&self) -> bool {
        self.k_h == 1 && self.k_w == 1 && self.stride == 1
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.patch_len();
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = (oy * self.out_w + ox) * k;
                for ky in 0..self.k_h {
                    let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                    if iy < 0 || iy >= self.in_h as isize {
                        continue;
                    }
                    for kx in 0..self.k_w {
                        let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                        if ix < 0 || ix >= self.in_w as isize {
                            continue;
                        }
                        let src = (iy as usize * self.in_w + ix as usize) * self.in_c;
                        let dst = row + (ky * self.k_w + kx) * self.in_c;
                        f(src, dst, self.in_c);
                    }
                }
            }
        }
    }

    fn im2col<T: Element>(&self, x: &[T], col: &mut [T]) {
        col.fill(T::zero());
        self.for_each_tap(|src, dst, len| col[dst..dst + len].copy_from_slice(&x[src..src + len]));
    }

    fn col2im_add<T: Element>(&self, col: &[T], dx: &mut [T]) {
        self.for_each_tap(|src, dst, len| {
            for (d, &c) in dx[src..src + len].iter_mut().zip(&col[dst..dst + len]) {
                *d += c;
            }
        });
    }
}

fn check_bias<T: Element>(b: &Tensor<T>, out_c: usize) -> Result<()> {
    if b.shape() != [out_c] {
        return invalid(format!("conv2d bias must have shape [{out_c}], got {:?}", b.shape()));
    }
    Ok(())
}

/// SAME-padded cross-correlation plus bias.
pub fn conv2d<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), w.shape(), stride)?;
    check_bias(b, g.out_c)?;
    let (p, k) = (g.patches(), g.patch_len());
    let in_len = g.in_h * g.in_w * g.in_c;
    let mut out = Tensor::zeros(&[g.batch, g.out_h, g.out_w, g.out_c]);
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); p * k] };
    for n in 0..g.batch {
        let xs = &x.data()[n * in_len..(n + 1) * in_len];
        let os = &mut out.data_mut()[n * p * g.out_c..(n + 1) * p * g.out_c];
        for row in os.chunks_exact_mut(g.out_c) {
            row.copy_from_slice(b.data());
        }
        let patches = if g.is_pointwise() {
            xs
        } else {
            g.im2col(xs, &mut col);
            &col
        };
        gemm(MatRef::new(patches, p, k), MatRef::new(w.data(), k, g.out_c), T::one(), os);
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = ConvGeometry::new(x.shape(), w.shape(), stride)?;
    if dy.shape() != [g.batch, g.out_h, g.out_w, g.out_c] {
        return invalid(format!("conv2d output gradient has shape {:?}", dy.shape()));
    }
    let (p, k) = (g.patches(), g.patch_len());
    let in_len = g.in_h * g.in_w * g.in_c;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[g.out_c]);
    let mut col = vec![T::zero(); p * k];
    let mut dcol = vec![T::zero(); p * k];
    for n in 0..g.batch {
        let xs = &x.data()[n * in_len..(n + 1) * in_len];
        let dys = &dy.data()[n * p * g.out_c..(n + 1) * p * g.out_c];
        for row in dys.chunks_exact(g.out_c) {
            for (acc, &v) in db.data_mut().iter_mut().zip(row) {
                *acc += v;
            }
        }
        let patches: &[T] = if g.is_pointwise() {
            xs
        } else {
            g.im2col(xs, &mut col);
            &col
        };
        // dW += colᵀ · dY
        gemm(MatRef::t(patches, k, p), MatRef::new(dys, p, g.out_c), T::one(), dw.data_mut());
        let dxs = &mut dx.data_mut()[n * in_len..(n + 1) * in_len];
        if g.is_pointwise() {
            gemm(MatRef::new(dys, p, g.out_c), MatRef::t(w.data(), g.out_c, k), T::zero(), dxs);
        } else {
            // dcol = dY · Wᵀ, scattered back onto the input grid
            gemm(MatRef::new(dys, p, g.out_c), MatRef::t(w.data(), g.out_c, k), T::zero(), &mut dcol);
            g.col2im_add(&dcol, dxs);
        }
    }
    Ok((dx, dw, db))
}

/// Per-sample statistics saved by [`layer_norm`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

/// Normalizes each sample over all of `h × w × c`, then applies a per-channel
/// gain and bias.
pub fn layer_norm<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let [n, h, w, c] = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return invalid(format!(
            "layer_norm gain/bias must have shape [{c}], got {:?} and {:?}",
            gamma.shape(),
            beta.shape()
        ));
    }
    let len = h * w * c;
    let mut out = Tensor::zeros(x.shape());
    let mut cache = LayerNormCache { mean: Vec::with_capacity(n), rstd: Vec::with_capacity(n) };
    for s in 0..n {
        let xs = &x.data()[s * len..(s + 1) * len];
        let mean = xs.iter().map(|v| v.as_f64()).sum::<f64>() / len as f64;
        let var = xs.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / len as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        let (mean_t, rstd_t) = (T::from_f64(mean), T::from_f64(rstd));
        let os = &mut out.data_mut()[s * len..(s + 1) * len];
        for (px_out, px_in) in os.chunks_exact_mut(c).zip(xs.chunks_exact(c)) {
            for ch in 0..c {
                px_out[ch] = (px_in[ch] - mean_t) * rstd_t * gamma.data()[ch] + beta.data()[ch];
            }
        }
        cache.mean.push(mean_t);
        cache.rstd.push(rstd_t);
    }
    Ok((out, cache))
}

/// Gradients of [`layer_norm`] with respect to input, gain and bias.
pub fn layer_norm_backward<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &LayerNormCache<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [n, h, w, c] = x.dims4()?;
    let len = h * w * c;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let mut xhat = vec![T::zero(); len];
    let mut dxhat = vec![T::zero(); len];
    for s in 0..n {
        let (mean, rstd) = (cache.mean[s], cache.rstd[s]);
        let xs = &x.data()[s * len..(s + 1) * len];
        let dys = &dy.data()[s * len..(s + 1) * len];
        let mut sum_d = 0.0f64;
        let mut sum_dx = 0.0f64;
        for i in 0..len {
            let ch = i % c;
            xhat[i] = (xs[i] - mean) * rstd;
            dxhat[i] = dys[i] * gamma.data()[ch];
            dgamma.data_mut()[ch] += dys[i] * xhat[i];
            dbeta.data_mut()[ch] += dys[i];
            sum_d += dxhat[i].as_f64();
            sum_dx += (dxhat[i] * xhat[i]).as_f64();
        }
        let mean_d = T::from_f64(sum_d / len as f64);
        let mean_dx = T::from_f64(sum_dx / len as f64);
        for (i, d) in dx.data_mut()[s * len..(s + 1) * len].iter_mut().enumerate() {
            *d = rstd * (dxhat[i] - mean_d - xhat[i] * mean_dx);
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Moves `block × block` groups of channels into space:
/// `out(y, x, c) = in(y / b, x / b, c·b² + (y mod b)·b + (x mod b))`.
pub fn depth_to_space<T: Element>(x: &Tensor<T>, block: usize) -> Result<Tensor<T>> {
    let [n, h, w, c] = x.dims4()?;
    let bb = block * block;
    if block == 0 || c % bb != 0 {
        return invalid(format!("depth_to_space: {c} channels not divisible by block² = {bb}"));
    }
    let oc = c / bb;
    let (oh, ow) = (h * block, w * block);
    let mut out = Tensor::zeros(&[n, oh, ow, oc]);
    let (src, dst) = (x.data(), out.data_mut());
    let mut o = 0;
    for s in 0..n {
        for y in 0..oh {
            for xx in 0..ow {
                let base = ((s * h + y / block) * w + xx / block) * c + (y % block) * block + xx % block;
                for ch in 0..oc {
                    dst[o] = src[base + ch * bb];
                    o += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`depth_to_space`].
pub fn space_to_depth<T: Element>(x: &Tensor<T>, block: usize) -> Result<Tensor<T>> {
    let [n, h, w, c] = x.dims4()?;
    if block == 0 || h % block != 0 || w % block != 0 {
        return invalid(format!("space_to_depth: {h}×{w} not divisible by block {block}"));
    }
    let bb = block * block;
    let (ih, iw, ic) = (h / block, w / block, c * bb);
    let mut out = Tensor::zeros(&[n, ih, iw, ic]);
    let (src, dst) = (x.data(), out.data_mut());
    let mut i = 0;
    for s in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let base = ((s * ih + y / block) * iw + xx / block) * ic + (y % block) * block + xx % block;
                for ch in 0..c {
                    dst[base + ch * bb] = src[i];
                    i += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Concatenates two NHWC tensors along channels.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, h, w, ca] = a.dims4()?;
    let [nb, hb, wb, cb] = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return invalid(format!("concat: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for (pa, pb) in a.data().chunks_exact(ca.max(1)).zip(b.data().chunks_exact(cb.max(1))) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Tensor::from_vec(&[n, h, w, ca + cb], data)
}

/// Channels `start..start + len` of an NHWC tensor.
pub fn slice_channels<T: Element>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let [n, h, w, c] = x.dims4()?;
    if start + len > c {
        return invalid(format!("channel slice {start}..{} exceeds {c}", start + len));
    }
    let data = x.data().chunks_exact(c).flat_map(|px| px[start..start + len].iter().copied()).collect();
    Tensor::from_vec(&[n, h, w, len], data)
}
