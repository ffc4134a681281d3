//! Forward and backward kernels over plain tensors.
//!
//! Everything is row-major `N, C, H, W`. The graph layer in `graph.rs`
//! records which of these ran and calls the matching backward.

use rayon::prelude::*;

use super::error::{Result, TensorError};
use super::scalar::Scalar;
use super::tensor::Tensor;

fn expect_rank<T: Scalar>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(TensorError::Rank {
            op,
            expected: rank,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn expect_dim(op: &'static str, axis: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(TensorError::Dimension {
            op,
            axis,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Geometry of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        const OP: &str = "conv2d";
        if x.len() != 4 {
            return Err(TensorError::Rank { op: OP, expected: 4, shape: x.to_vec() });
        }
        if w.len() != 4 {
            return Err(TensorError::Rank { op: OP, expected: 4, shape: w.to_vec() });
        }
        if stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                reason: "stride must be at least 1".into(),
            });
        }
        expect_dim(OP, "channels", x[1], w[1])?;
        let (kh, kw) = (w[2], w[3]);
        if kh == 0 || kw == 0 {
            return Err(TensorError::InvalidArgument { op: OP, reason: "empty kernel".into() });
        }
        if kh > x[2] + 2 * pad {
            return Err(TensorError::Dimension {
                op: OP,
                axis: "height",
                expected: kh,
                actual: x[2] + 2 * pad,
            });
        }
        if kw > x[3] + 2 * pad {
            return Err(TensorError::Dimension {
                op: OP,
                axis: "width",
                expected: kw,
                actual: x[3] + 2 * pad,
            });
        }
        Ok(Self {
            batch: x[0],
            in_channels: x[1],
            height: x[2],
            width: x[3],
            out_channels: w[0],
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad,
            out_h: (x[2] + 2 * pad - kh) / stride + 1,
            out_w: (x[3] + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn image_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }
}

/// Unfold one image into a `(C*kh*kw) x (out_h*out_w)` patch matrix.
fn im2col<T: Scalar>(g: &ConvGeom, image: &[T], cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.in_channels {
        for i in 0..g.kernel_h {
            for j in 0..g.kernel_w {
                let row = ((c * g.kernel_h + i) * g.kernel_w + j) * p;
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    let dst = &mut cols[row + oy * g.out_w..row + (oy + 1) * g.out_w];
                    if y < 0 || y >= g.height as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &image[(c * g.height + y as usize) * g.width..][..g.width];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        *d = if x < 0 || x >= g.width as isize {
                            T::zero()
                        } else {
                            src[x as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold a patch-matrix gradient back onto the image, accumulating overlaps.
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], image: &mut [T]) {
    let p = g.positions();
    for c in 0..g.in_channels {
        for i in 0..g.kernel_h {
            for j in 0..g.kernel_w {
                let row = ((c * g.kernel_h + i) * g.kernel_w + j) * p;
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.height as isize {
                        continue;
                    }
                    let dst = &mut image[(c * g.height + y as usize) * g.width..][..g.width];
                    let src = &cols[row + oy * g.out_w..row + (oy + 1) * g.out_w];
                    for (ox, s) in src.iter().enumerate() {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        if x >= 0 && x < g.width as isize {
                            dst[x as usize] = dst[x as usize] + *s;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x.shape(), weight.shape(), stride, pad)?;
    expect_rank("conv2d", bias, 1)?;
    expect_dim("conv2d", "bias", g.out_channels, bias.shape()[0])?;
    x.ensure_finite("conv2d")?;
    let (p, kk, k) = (g.positions(), g.patch_len(), g.out_channels);
    let mut out = vec![T::zero(); g.batch * k * p];
    let xd = x.data();
    let (wd, bd) = (weight.data(), bias.data());
    out.par_chunks_mut(k * p)
        .zip(xd.par_chunks(g.image_len().max(1)))
        .for_each_init(
            || vec![T::zero(); kk * p],
            |cols, (o, img)| {
                im2col(&g, img, cols);
                for (row, &b) in o.chunks_mut(p).zip(bd) {
                    row.iter_mut().for_each(|v| *v = b);
                }
                T::gemm(k, kk, p, T::one(), wd, false, cols, false, T::one(), o);
            },
        );
    let out = Tensor::new(&g.out_shape(), out)?;
    out.ensure_finite("conv2d")?;
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (p, kk, k) = (g.positions(), g.patch_len(), g.out_channels);
    let (need_x, need_w, need_b) = need;
    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = grad_out
        .par_chunks(k * p)
        .zip(x.par_chunks(g.image_len().max(1)))
        .map(|(go, img)| {
            let gw = need_w.then(|| {
                let mut cols = vec![T::zero(); kk * p];
                im2col(g, img, &mut cols);
                let mut gw = vec![T::zero(); k * kk];
                T::gemm(k, p, kk, T::one(), go, false, &cols, true, T::zero(), &mut gw);
                gw
            });
            let gx = need_x.then(|| {
                let mut gcols = vec![T::zero(); kk * p];
                T::gemm(kk, k, p, T::one(), weight, true, go, false, T::zero(), &mut gcols);
                let mut gx = vec![T::zero(); g.image_len()];
                col2im(g, &gcols, &mut gx);
                gx
            });
            (gx, gw)
        })
        .collect();

    let bias = need_b.then(|| {
        let mut gb = vec![T::zero(); k];
        for go in grad_out.chunks(k * p) {
            for (b, row) in gb.iter_mut().zip(go.chunks(p)) {
                *b = *b + row.iter().copied().sum::<T>();
            }
        }
        gb
    });
    let mut gw_total = need_w.then(|| vec![T::zero(); k * kk]);
    let mut gx_total = need_x.then(|| Vec::with_capacity(x.len()));
    for (gx, gw) in per_sample {
        if let (Some(total), Some(gw)) = (gw_total.as_mut(), gw) {
            total.iter_mut().zip(gw).for_each(|(t, v)| *t = *t + v);
        }
        if let (Some(total), Some(gx)) = (gx_total.as_mut(), gx) {
            total.extend(gx);
        }
    }
    ConvGrads {
        input: gx_total,
        weight: gw_total,
        bias,
    }
}

/// Max pooling; returns the output and, per output element, the flat input
/// index it came from (lowest index wins ties).
pub fn maxpool2d<T: Scalar>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    const OP: &str = "maxpool2d";
    expect_rank(OP, x, 4)?;
    if kernel == 0 || stride == 0 {
        return Err(TensorError::InvalidArgument {
            op: OP,
            reason: "kernel and stride must be at least 1".into(),
        });
    }
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    if kernel > h {
        return Err(TensorError::Dimension { op: OP, axis: "height", expected: kernel, actual: h });
    }
    if kernel > w {
        return Err(TensorError::Dimension { op: OP, axis: "width", expected: kernel, actual: w });
    }
    x.ensure_finite(OP)?;
    let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for i in 0..kernel {
                    let row = base + (oy * stride + i) * w + ox * stride;
                    for j in 0..kernel {
                        if xd[row + j] > xd[best] {
                            best = row + j;
                        }
                    }
                }
                out.push(xd[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, idx))
}

pub fn maxpool2d_backward<T: Scalar>(input_len: usize, argmax: &[usize], grad_out: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); input_len];
    for (&i, &g) in argmax.iter().zip(grad_out) {
        gx[i] = gx[i] + g;
    }
    gx
}

/// Across-channel local response normalization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnParams {
    pub local_size: usize,
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self {
            local_size: 5,
            k: 2.0,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

impl LrnParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(TensorError::InvalidArgument {
                op: "lrn",
                reason: reason.to_string(),
            })
        };
        if self.local_size == 0 || self.local_size % 2 == 0 {
            return bad("local_size must be a positive odd integer");
        }
        if !(self.k >= 0.0) {
            return bad("k must be >= 0");
        }
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return bad("alpha and beta must be > 0");
        }
        Ok(())
    }

    /// Channel window `[lo, hi)` around `c`, clipped to `[0, channels)`.
    pub fn window(&self, c: usize, channels: usize) -> (usize, usize) {
        let half = self.local_size / 2;
        (c.saturating_sub(half), (c + half + 1).min(channels))
    }
}

/// Returns the output and the per-element denominator base
/// `k + alpha/n * sum(a^2)` used by the backward pass.
pub fn lrn<T: Scalar>(x: &Tensor<T>, params: &LrnParams) -> Result<(Tensor<T>, Vec<T>)> {
    expect_rank("lrn", x, 4)?;
    params.validate()?;
    x.ensure_finite("lrn")?;
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let hw = h * w;
    let xd = x.data();
    let k = T::from_f64(params.k);
    let coef = T::from_f64(params.alpha / params.local_size as f64);
    let neg_beta = T::from_f64(-params.beta);
    let mut scale = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for s in 0..n {
        let base = s * c * hw;
        for ch in 0..c {
            let (lo, hi) = params.window(ch, c);
            let dst = &mut scale[base + ch * hw..][..hw];
            dst.iter_mut().for_each(|v| *v = T::zero());
            for other in lo..hi {
                let src = &xd[base + other * hw..][..hw];
                for (d, &a) in dst.iter_mut().zip(src) {
                    *d = *d + a * a;
                }
            }
            for (i, d) in dst.iter_mut().enumerate() {
                *d = k + coef * *d;
                let at = base + ch * hw + i;
                out[at] = xd[at] * d.powf(neg_beta);
            }
        }
    }
    let out = Tensor::new(x.shape(), out)?;
    out.ensure_finite("lrn")?;
    Ok((out, scale))
}

pub fn lrn_backward<T: Scalar>(
    shape: &[usize],
    x: &[T],
    scale: &[T],
    params: &LrnParams,
    grad_out: &[T],
) -> Vec<T> {
    let [n, c, h, w] = [shape[0], shape[1], shape[2], shape[3]];
    let hw = h * w;
    let coef = T::from_f64(2.0 * params.alpha / params.local_size as f64 * params.beta);
    let neg_beta = T::from_f64(-params.beta);
    let neg_beta_m1 = T::from_f64(-params.beta - 1.0);
    // t[j] = g[j] * a[j] * scale[j]^(-beta-1)
    let t: Vec<T> = grad_out
        .iter()
        .zip(x)
        .zip(scale)
        .map(|((&g, &a), &s)| g * a * s.powf(neg_beta_m1))
        .collect();
    let mut gx = vec![T::zero(); x.len()];
    for s in 0..n {
        let base = s * c * hw;
        for ch in 0..c {
            let (lo, hi) = params.window(ch, c);
            for i in 0..hw {
                let at = base + ch * hw + i;
                let mut acc = T::zero();
                for other in lo..hi {
                    acc = acc + t[base + other * hw + i];
                }
                gx[at] = grad_out[at] * scale[at].powf(neg_beta) - coef * x[at] * acc;
            }
        }
    }
    gx
}

/// `x * weight^T + bias` for `x: [N, D]`, `weight: [M, D]`.
pub fn fully_connected<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    const OP: &str = "fully_connected";
    expect_rank(OP, x, 2)?;
    expect_rank(OP, weight, 2)?;
    expect_rank(OP, bias, 1)?;
    let (n, d, m) = (x.shape()[0], x.shape()[1], weight.shape()[0]);
    expect_dim(OP, "features", weight.shape()[1], d)?;
    expect_dim(OP, "bias", m, bias.shape()[0])?;
    x.ensure_finite(OP)?;
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    T::gemm(n, d, m, T::one(), x.data(), false, weight.data(), true, T::one(), &mut out);
    let out = Tensor::new(&[n, m], out)?;
    out.ensure_finite(OP)?;
    Ok(out)
}

pub fn fully_connected_backward<T: Scalar>(
    n: usize,
    d: usize,
    m: usize,
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let input = need.0.then(|| {
        let mut gx = vec![T::zero(); n * d];
        T::gemm(n, m, d, T::one(), grad_out, false, weight, false, T::zero(), &mut gx);
        gx
    });
    let weight = need.1.then(|| {
        let mut gw = vec![T::zero(); m * d];
        T::gemm(m, n, d, T::one(), grad_out, true, x, false, T::zero(), &mut gw);
        gw
    });
    let bias = need.2.then(|| {
        let mut gb = vec![T::zero(); m];
        for row in grad_out.chunks(m) {
            gb.iter_mut().zip(row).for_each(|(b, &g)| *b = *b + g);
        }
        gb
    });
    ConvGrads { input, weight, bias }
}

/// Row-wise softmax of an `[N, C]` tensor.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("softmax", x, 2)?;
    if x.shape()[1] == 0 {
        return Err(TensorError::Dimension { op: "softmax", axis: "classes", expected: 1, actual: 0 });
    }
    x.ensure_finite("softmax")?;
    let cols = x.shape()[1];
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let total: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / total);
    }
    Tensor::new(x.shape(), out)
}

/// Row-wise log-softmax, computed as `x - max - ln(sum(exp(x - max)))`.
pub fn log_softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("log_softmax", x, 2)?;
    x.ensure_finite("log_softmax")?;
    let cols = x.shape()[1];
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(cols.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    Tensor::new(x.shape(), out)
}

pub fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    expect_dim("cross_entropy", "batch", rows, labels.len())?;
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(TensorError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under `softmax(scores)`.
pub fn cross_entropy<T: Scalar>(scores: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let logp = log_softmax(scores)?;
    let (n, c) = (scores.shape()[0], scores.shape()[1]);
    check_labels(labels, n, c)?;
    let total: T = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -logp.data()[i * c + y])
        .sum();
    Ok(total / T::from_f64(n.max(1) as f64))
}
