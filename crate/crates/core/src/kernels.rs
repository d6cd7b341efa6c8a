//! Forward and backward numerical kernels on NCHW buffers.
//!
//! Every function here is pure: outputs depend only on the arguments, and
//! reductions run in a fixed order so results are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::{Real, Tensor};

/// Square convolution with "same" zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
            dilation: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.in_channels >= 1, "conv in_channels must be >= 1");
        ensure!(self.out_channels >= 1, "conv out_channels must be >= 1");
        ensure!(self.kernel_size >= 1, "conv kernel_size must be >= 1");
        ensure!(self.stride >= 1, "conv stride must be >= 1");
        ensure!(self.dilation >= 1, "conv dilation must be >= 1");
        Ok(())
    }

    pub fn effective_extent(&self) -> usize {
        self.dilation * (self.kernel_size - 1) + 1
    }

    /// Zero rows/columns added before and after each spatial axis.
    pub fn padding(&self) -> (usize, usize) {
        let total = self.effective_extent() - 1;
        (total / 2, total - total / 2)
    }

    pub fn out_size(&self, size: usize) -> usize {
        size.div_ceil(self.stride)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_size * self.kernel_size
            + self.out_channels
    }
}

/// Shape checks shared by both convolution kernels.
pub fn check_conv<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<[usize; 4]> {
    spec.validate()?;
    let [n, c, h, wd] = x.dims4()?;
    ensure!(
        c == spec.in_channels,
        "conv input channel dimension is {c}, spec expects {}",
        spec.in_channels
    );
    let ws = spec.weight_shape();
    ensure!(
        w.shape() == ws,
        "conv weight shape {:?} does not match expected {:?}",
        w.shape(),
        ws
    );
    if let Some(b) = b {
        ensure!(
            b.shape() == [spec.out_channels],
            "conv bias shape {:?} does not match out_channels {}",
            b.shape(),
            spec.out_channels
        );
    }
    Ok([n, c, h, wd])
}

/// Direct seven-loop cross-correlation; the reference the fast path is checked against.
pub fn conv2d_reference<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let [n, cin, h, wd] = check_conv(x, w, b, spec)?;
    let (ho, wo) = (spec.out_size(h), spec.out_size(wd));
    let (pad, _) = spec.padding();
    let k = spec.kernel_size;
    let cout = spec.out_channels;
    let mut out = vec![T::zero(); n * cout * ho * wo];
    for ni in 0..n {
        for co in 0..cout {
            let bias = b.map_or(T::zero(), |b| b.data()[co]);
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias;
                    for ci in 0..cin {
                        for ky in 0..k {
                            let iy = (oy * spec.stride + ky * spec.dilation) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * spec.stride + kx * spec.dilation) as isize
                                    - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((co * cin + ci) * k + ky) * k + kx]
                                    * x.at4(ni, ci, iy as usize, ix as usize);
                            }
                        }
                    }
                    out[((ni * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, cout, ho, wo], out))
}

fn is_pointwise(spec: &ConvSpec) -> bool {
    spec.kernel_size == 1 && spec.stride == 1
}

/// Unfold one image `[C,H,W]` into a `[C*k*k, Ho*Wo]` column matrix.
fn im2col<T: Real>(img: &[T], c: usize, h: usize, w: usize, spec: &ConvSpec, col: &mut [T]) {
    let k = spec.kernel_size;
    let (ho, wo) = (spec.out_size(h), spec.out_size(w));
    let (pad, _) = spec.padding();
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - pad as isize;
                        *slot = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold a column matrix back onto an image, accumulating overlaps.
fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, spec: &ConvSpec, img: &mut [T]) {
    let k = spec.kernel_size;
    let (ho, wo) = (spec.out_size(h), spec.out_size(w));
    let (pad, _) = spec.padding();
    for ci in 0..c {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * spec.stride + ky * spec.dilation) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * spec.stride + kx * spec.dilation) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c (m×n) = a (m×k) · b (k×n) + beta·c`, all row-major and contiguous.
fn matmul<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// im2col + GEMM convolution.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let [n, cin, h, wd] = check_conv(x, w, b, spec)?;
    let (ho, wo) = (spec.out_size(h), spec.out_size(wd));
    let cout = spec.out_channels;
    let kk = cin * spec.kernel_size * spec.kernel_size;
    let p = ho * wo;
    let mut out = vec![T::zero(); n * cout * p];
    let mut col = if is_pointwise(spec) {
        Vec::new()
    } else {
        vec![T::zero(); kk * p]
    };
    for ni in 0..n {
        let img = &x.data()[ni * cin * h * wd..(ni + 1) * cin * h * wd];
        let dst = &mut out[ni * cout * p..(ni + 1) * cout * p];
        if let Some(b) = b {
            for (co, chunk) in dst.chunks_exact_mut(p).enumerate() {
                chunk.fill(b.data()[co]);
            }
        }
        let cols: &[T] = if is_pointwise(spec) {
            img
        } else {
            im2col(img, cin, h, wd, spec, &mut col);
            &col
        };
        matmul(cout, kk, p, w.data(), cols, T::one(), dst);
    }
    Ok(Tensor::from_parts(vec![n, cout, ho, wo], out))
}

pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    let [n, cin, h, wd] = check_conv(x, w, None, spec)?;
    let (ho, wo) = (spec.out_size(h), spec.out_size(wd));
    let cout = spec.out_channels;
    ensure!(
        dy.shape() == [n, cout, ho, wo],
        "conv output gradient shape {:?} does not match [{n}, {cout}, {ho}, {wo}]",
        dy.shape()
    );
    let kk = cin * spec.kernel_size * spec.kernel_size;
    let p = ho * wo;
    let mut dx = vec![T::zero(); x.numel()];
    let mut dw = vec![T::zero(); w.numel()];
    let mut db = vec![T::zero(); cout];
    let mut col = vec![T::zero(); kk * p];
    let mut dcol = vec![T::zero(); kk * p];
    // W^T as a contiguous [kk, cout] matrix.
    let mut wt = vec![T::zero(); kk * cout];
    for co in 0..cout {
        for r in 0..kk {
            wt[r * cout + co] = w.data()[co * kk + r];
        }
    }
    for ni in 0..n {
        let img = &x.data()[ni * cin * h * wd..(ni + 1) * cin * h * wd];
        let g = &dy.data()[ni * cout * p..(ni + 1) * cout * p];
        for (co, chunk) in g.chunks_exact(p).enumerate() {
            db[co] += chunk.iter().copied().sum::<T>();
        }
        let cols: &[T] = if is_pointwise(spec) {
            img
        } else {
            im2col(img, cin, h, wd, spec, &mut col);
            &col
        };
        // dW += dY · cols^T
        unsafe {
            T::gemm(
                cout,
                p,
                kk,
                T::one(),
                g.as_ptr(),
                p as isize,
                1,
                cols.as_ptr(),
                1,
                p as isize,
                T::one(),
                dw.as_mut_ptr(),
                kk as isize,
                1,
            );
        }
        let dimg = &mut dx[ni * cin * h * wd..(ni + 1) * cin * h * wd];
        if is_pointwise(spec) {
            matmul(kk, cout, p, &wt, g, T::one(), dimg);
        } else {
            matmul(kk, cout, p, &wt, g, T::zero(), &mut dcol);
            col2im(&dcol, cin, h, wd, spec, dimg);
        }
    }
    Ok(ConvGrads {
        dx: Tensor::from_parts(x.shape().to_vec(), dx),
        dw: Tensor::from_parts(w.shape().to_vec(), dw),
        db: Tensor::from_parts(vec![cout], db),
    })
}

/// 2×2 window, stride 2. Returns the pooled tensor and the flat argmax of each window.
pub fn maxpool2d<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims4()?;
    ensure!(h % 2 == 0, "max-pool needs an even height, got {h}");
    ensure!(w % 2 == 0, "max-pool needs an even width, got {w}");
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let d = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                out.push(d[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, ho, wo], out), arg))
}

/// Scatter `dy` onto the recorded argmax positions.
pub fn scatter_argmax<T: Real>(input_shape: &[usize], argmax: &[usize], dy: &[T]) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(dy) {
        dx.data_mut()[i] += g;
    }
    dx
}

pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let area = T::of((h * w) as f64);
    let out = x
        .data()
        .chunks_exact(h * w)
        .map(|p| p.iter().copied().sum::<T>() / area)
        .collect();
    Ok(Tensor::from_parts(vec![n, c], out))
}

pub fn global_avg_pool_backward<T: Real>(input_shape: &[usize], dy: &[T]) -> Tensor<T> {
    let hw = input_shape[2] * input_shape[3];
    let area = T::of(hw as f64);
    let mut dx = Vec::with_capacity(dy.len() * hw);
    for &g in dy {
        dx.extend(std::iter::repeat(g / area).take(hw));
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

pub fn global_max_pool<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims4()?;
    let mut out = Vec::with_capacity(n * c);
    let mut arg = Vec::with_capacity(n * c);
    for (pi, p) in x.data().chunks_exact(h * w).enumerate() {
        let mut best = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = i;
            }
        }
        out.push(p[best]);
        arg.push(pi * h * w + best);
    }
    Ok((Tensor::from_parts(vec![n, c], out), arg))
}

/// Per-pixel mean over channels, `[N,C,H,W] -> [N,1,H,W]`.
pub fn channel_mean<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let hw = h * w;
    let inv = T::one() / T::of(c as f64);
    let mut out = vec![T::zero(); n * hw];
    for ni in 0..n {
        let dst = &mut out[ni * hw..(ni + 1) * hw];
        for ci in 0..c {
            let src = &x.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o += v;
            }
        }
        for o in dst.iter_mut() {
            *o *= inv;
        }
    }
    Ok(Tensor::from_parts(vec![n, 1, h, w], out))
}

pub fn channel_mean_backward<T: Real>(input_shape: &[usize], dy: &[T]) -> Tensor<T> {
    let (n, c, hw) = (input_shape[0], input_shape[1], input_shape[2] * input_shape[3]);
    let inv = T::one() / T::of(c as f64);
    let mut dx = Vec::with_capacity(n * c * hw);
    for ni in 0..n {
        for _ in 0..c {
            dx.extend(dy[ni * hw..(ni + 1) * hw].iter().map(|&g| g * inv));
        }
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

/// Per-pixel max over channels with first-channel tie-break.
pub fn channel_max<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims4()?;
    let hw = h * w;
    let d = x.data();
    let mut out = Vec::with_capacity(n * hw);
    let mut arg = Vec::with_capacity(n * hw);
    for ni in 0..n {
        for pix in 0..hw {
            let mut best = ni * c * hw + pix;
            for ci in 1..c {
                let idx = (ni * c + ci) * hw + pix;
                if d[idx] > d[best] {
                    best = idx;
                }
            }
            out.push(d[best]);
            arg.push(best);
        }
    }
    Ok((Tensor::from_parts(vec![n, 1, h, w], out), arg))
}

/// Source index pair and weight of the second sample for align-corners=false 2× upsampling.
fn bilinear_taps(dst: usize, src_len: usize) -> (usize, usize, f64) {
    let pos = ((dst as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (pos.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, pos - i0 as f64)
}

pub fn upsample_bilinear2x<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    let (ho, wo) = (2 * h, 2 * w);
    let ys: Vec<_> = (0..ho).map(|i| bilinear_taps(i, h)).collect();
    let xs: Vec<_> = (0..wo).map(|i| bilinear_taps(i, w)).collect();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for p in x.data().chunks_exact(h * w) {
        for &(y0, y1, ly) in &ys {
            let (ly, hy) = (T::of(ly), T::of(1.0 - ly));
            for &(x0, x1, lx) in &xs {
                let (lx, hx) = (T::of(lx), T::of(1.0 - lx));
                let top = hx * p[y0 * w + x0] + lx * p[y0 * w + x1];
                let bot = hx * p[y1 * w + x0] + lx * p[y1 * w + x1];
                out.push(hy * top + ly * bot);
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, ho, wo], out))
}

pub fn upsample_bilinear2x_backward<T: Real>(input_shape: &[usize], dy: &[T]) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (ho, wo) = (2 * h, 2 * w);
    let ys: Vec<_> = (0..ho).map(|i| bilinear_taps(i, h)).collect();
    let xs: Vec<_> = (0..wo).map(|i| bilinear_taps(i, w)).collect();
    let mut dx = Tensor::zeros(input_shape);
    for (p, g) in dx
        .data_mut()
        .chunks_exact_mut(h * w)
        .zip(dy.chunks_exact(ho * wo))
    {
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            let (ly, hy) = (T::of(ly), T::of(1.0 - ly));
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let (lx, hx) = (T::of(lx), T::of(1.0 - lx));
                let v = g[oy * wo + ox];
                p[y0 * w + x0] += hy * hx * v;
                p[y0 * w + x1] += hy * lx * v;
                p[y1 * w + x0] += ly * hx * v;
                p[y1 * w + x1] += ly * lx * v;
            }
        }
    }
    dx
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel statistics of a training-mode batch-norm pass.
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance, used for normalization.
    pub var: Vec<T>,
    /// Unbiased variance, used for the running estimate.
    pub var_unbiased: Vec<T>,
}

pub fn batch_stats<T: Real>(x: &Tensor<T>) -> Result<BatchStats<T>> {
    let [n, c, h, w] = x.dims4()?;
    let hw = h * w;
    let m = n * hw;
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ci in 0..c {
        let mut s = T::zero();
        for ni in 0..n {
            s += x.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw]
                .iter()
                .copied()
                .sum::<T>();
        }
        let mu = s / T::of(m as f64);
        let mut q = T::zero();
        for ni in 0..n {
            for &v in &x.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                q += (v - mu) * (v - mu);
            }
        }
        mean[ci] = mu;
        var[ci] = q / T::of(m as f64);
    }
    let corr = if m > 1 {
        T::of(m as f64 / (m - 1) as f64)
    } else {
        T::one()
    };
    let var_unbiased = var.iter().map(|&v| v * corr).collect();
    Ok(BatchStats {
        mean,
        var,
        var_unbiased,
    })
}

/// `y = gamma * (x - mean) * inv_std + beta`, returning `y` and the normalized `xhat`.
pub fn batch_norm_apply<T: Real>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    inv_std: &[T],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, h, w] = x.dims4()?;
    ensure!(
        gamma.len() == c && beta.len() == c,
        "batch-norm affine parameters have length {}/{}, expected channel count {c}",
        gamma.len(),
        beta.len()
    );
    let hw = h * w;
    let mut y = Vec::with_capacity(x.numel());
    let mut xhat = Vec::with_capacity(x.numel());
    for ni in 0..n {
        for ci in 0..c {
            for &v in &x.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                let z = (v - mean[ci]) * inv_std[ci];
                xhat.push(z);
                y.push(gamma[ci] * z + beta[ci]);
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), y),
        Tensor::from_parts(x.shape().to_vec(), xhat),
    ))
}

pub struct BatchNormGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

/// Backward of batch norm. With `batch_stats` the mean and variance are
/// functions of the batch; otherwise they are constants.
pub fn batch_norm_backward<T: Real>(
    xhat: &Tensor<T>,
    gamma: &[T],
    inv_std: &[T],
    dy: &Tensor<T>,
    batch_stats: bool,
) -> Result<BatchNormGrads<T>> {
    let [n, c, h, w] = xhat.dims4()?;
    let hw = h * w;
    let m = T::of((n * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ni in 0..n {
        for ci in 0..c {
            let r = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
            for (&g, &z) in dy.data()[r.clone()].iter().zip(&xhat.data()[r]) {
                dbeta[ci] += g;
                dgamma[ci] += g * z;
            }
        }
    }
    let mut dx = vec![T::zero(); xhat.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let r = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
            let scale = gamma[ci] * inv_std[ci];
            for ((d, &g), &z) in dx[r.clone()]
                .iter_mut()
                .zip(&dy.data()[r.clone()])
                .zip(&xhat.data()[r])
            {
                *d = if batch_stats {
                    scale * (g - dbeta[ci] / m - z * dgamma[ci] / m)
                } else {
                    scale * g
                };
            }
        }
    }
    Ok(BatchNormGrads {
        dx: Tensor::from_parts(xhat.shape().to_vec(), dx),
        dgamma: Tensor::from_parts(vec![c], dgamma),
        dbeta: Tensor::from_parts(vec![c], dbeta),
    })
}

/// Logistic function evaluated without overflow for large |v|.
pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
