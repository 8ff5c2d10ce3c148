//! Dense `N × C × H × W` tensors in `f64` and the kernels the network is built
//! from. Every differentiable kernel comes as a forward/backward pair; the
//! backward functions accumulate parameter gradients into caller-owned slices
//! and return the gradient with respect to the input.

use rand::Rng;

use crate::error::{Error, Result};

/// A batch of feature maps, row-major in `(n, c, h, w)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::shape("Tensor::from_vec", len, data.len()));
        }
        Ok(Tensor { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.shape[2]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    /// Elements in one sample (`c · h · w`).
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// The `h × w` plane of channel `c` in sample `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.plane_len();
        let off = (n * self.shape[1] + c) * p;
        &self.data[off..off + p]
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cc, h, w] = self.shape;
        self.data[((n * cc + c) * h + y) * w + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_shape(&self, context: &'static str, expected: [usize; 4]) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(context, expected, self.shape));
        }
        Ok(())
    }

    /// Stack the listed samples into a new batch.
    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor {
            shape: [indices.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
        }
    }

    /// Inverse of [`Tensor::gather`]: write sample `k` of `src` to sample
    /// `indices[k]` of `self`.
    pub fn scatter(&mut self, indices: &[usize], src: &Tensor) {
        debug_assert_eq!(src.n(), indices.len());
        for (k, &i) in indices.iter().enumerate() {
            self.sample_mut(i).copy_from_slice(src.sample(k));
        }
    }

    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.n() != b.n() || a.h() != b.h() || a.w() != b.w() {
            return Err(Error::shape("concat_channels", a.shape, b.shape));
        }
        let [n, ca, h, w] = a.shape;
        let cb = b.c();
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        for i in 0..n {
            data.extend_from_slice(a.sample(i));
            data.extend_from_slice(b.sample(i));
        }
        Ok(Tensor {
            shape: [n, ca + cb, h, w],
            data,
        })
    }

    /// Split along channels after the first `first` channels.
    pub fn split_channels(&self, first: usize) -> (Tensor, Tensor) {
        let [n, c, h, w] = self.shape;
        let p = h * w;
        let mut a = Tensor::zeros([n, first, h, w]);
        let mut b = Tensor::zeros([n, c - first, h, w]);
        for i in 0..n {
            let s = self.sample(i);
            a.sample_mut(i).copy_from_slice(&s[..first * p]);
            b.sample_mut(i).copy_from_slice(&s[first * p..]);
        }
        (a, b)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `C[m×n] = beta·C + op(A)·op(B)` where `op` optionally transposes. `A` is
/// stored `m×k` (or `k×m` when `a_t`), `B` is stored `k×n` (or `n×k`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above against the strided extents.
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

fn im2col(src: &[f64], c: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *o = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            srow[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, dst: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let srow = &src[y * w..(y + 1) * w];
                    for (x, &v) in srow.iter().enumerate() {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            drow[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 "same" convolution with an odd square kernel. `weight` is laid out
/// `[out, in, k, k]`.
pub fn conv2d(
    x: &Tensor,
    weight: &[f64],
    bias: Option<&[f64]>,
    out_channels: usize,
    kernel: usize,
) -> Tensor {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let kk = c * kernel * kernel;
    debug_assert_eq!(weight.len(), out_channels * kk);
    let mut y = Tensor::zeros([n, out_channels, h, w]);
    let mut cols = if kernel == 1 {
        Vec::new()
    } else {
        vec![0.0; kk * hw]
    };
    for i in 0..n {
        let src = x.sample(i);
        let cols_ref: &[f64] = if kernel == 1 {
            src
        } else {
            im2col(src, c, h, w, kernel, &mut cols);
            &cols
        };
        let out = y.sample_mut(i);
        if let Some(b) = bias {
            for (o, bv) in b.iter().enumerate() {
                out[o * hw..(o + 1) * hw].fill(*bv);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(out_channels, kk, hw, weight, false, cols_ref, false, out, beta);
    }
    y
}

/// Backward of [`conv2d`]; accumulates into `dweight`/`dbias`, returns `dx`.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &[f64],
    dy: &Tensor,
    kernel: usize,
    dweight: &mut [f64],
    dbias: Option<&mut [f64]>,
) -> Tensor {
    let [n, c, h, w] = x.shape();
    let out_channels = dy.c();
    let hw = h * w;
    let kk = c * kernel * kernel;
    let mut dx = Tensor::zeros(x.shape());
    let mut cols = vec![0.0; kk * hw];
    let mut dcols = vec![0.0; kk * hw];
    let mut dbias = dbias;
    for i in 0..n {
        let g = dy.sample(i);
        if let Some(db) = dbias.as_deref_mut() {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += g[o * hw..(o + 1) * hw].iter().sum::<f64>();
            }
        }
        let src = x.sample(i);
        let cols_ref: &[f64] = if kernel == 1 {
            src
        } else {
            im2col(src, c, h, w, kernel, &mut cols);
            &cols
        };
        // dW[o, kk] += dy[o, hw] · colsᵀ[hw, kk]
        gemm(out_channels, hw, kk, g, false, cols_ref, true, dweight, 1.0);
        if kernel == 1 {
            // dx[c, hw] = Wᵀ[c, o] · dy[o, hw]
            gemm(kk, out_channels, hw, weight, true, g, false, dx.sample_mut(i), 0.0);
        } else {
            gemm(kk, out_channels, hw, weight, true, g, false, &mut dcols, 0.0);
            col2im(&dcols, c, h, w, kernel, dx.sample_mut(i));
        }
    }
    dx
}

/// Per-channel batch statistics captured by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running-statistics updates.
    pub var_unbiased: Vec<f64>,
}

pub const BN_EPS: f64 = 1e-5;

pub fn batch_norm_train(x: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, BatchNormCache) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            mean[ch] += x.plane(i, ch).iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for i in 0..n {
        for ch in 0..c {
            let mu = mean[ch];
            var[ch] += x.plane(i, ch).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
    }
    let var_unbiased: Vec<f64> = var
        .iter()
        .map(|v| if m > 1.0 { v / (m - 1.0) } else { 0.0 })
        .collect();
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / m + BN_EPS).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * hw;
            for j in off..off + hw {
                let xh = (x.data[j] - mean[ch]) * inv_std[ch];
                xhat.data[j] = xh;
                y.data[j] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (
        y,
        BatchNormCache {
            xhat,
            inv_std,
            mean,
            var_unbiased,
        },
    )
}

pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Tensor {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut y = Tensor::zeros(x.shape());
    for ch in 0..c {
        let scale = gamma[ch] / (running_var[ch] + BN_EPS).sqrt();
        let shift = beta[ch] - running_mean[ch] * scale;
        for i in 0..n {
            let off = (i * c + ch) * hw;
            for j in off..off + hw {
                y.data[j] = x.data[j] * scale + shift;
            }
        }
    }
    y
}

pub fn batch_norm_backward(
    cache: &BatchNormCache,
    gamma: &[f64],
    dy: &Tensor,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Tensor {
    let [n, c, h, w] = dy.shape();
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut dx = Tensor::zeros(dy.shape());
    for ch in 0..c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for i in 0..n {
            let off = (i * c + ch) * hw;
            for j in off..off + hw {
                sum_dy += dy.data[j];
                sum_dy_xhat += dy.data[j] * cache.xhat.data[j];
            }
        }
        dgamma[ch] += sum_dy_xhat;
        dbeta[ch] += sum_dy;
        let k = gamma[ch] * cache.inv_std[ch] / m;
        for i in 0..n {
            let off = (i * c + ch) * hw;
            for j in off..off + hw {
                dx.data[j] = k * (m * dy.data[j] - sum_dy - cache.xhat.data[j] * sum_dy_xhat);
            }
        }
    }
    dx
}

pub fn relu(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &Tensor, dy: &mut Tensor) {
    for (g, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Channel-wise dropout mask: one scale per `(sample, channel)`, either 0 or
/// `1/(1-p)`.
pub fn dropout2d_mask<R: Rng + ?Sized>(n: usize, c: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n * c)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Scale every `h × w` plane by the matching mask entry (forward and backward
/// of channel dropout are the same operation).
pub fn scale_channels(x: &mut Tensor, mask: &[f64]) {
    let p = x.plane_len();
    debug_assert_eq!(mask.len() * p, x.data.len());
    for (plane, &s) in x.data.chunks_mut(p).zip(mask) {
        if s != 1.0 {
            plane.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// 2×2 max pooling with stride 2. Returns the output and, for each output
/// element, the flat index of the winning input element.
pub fn max_pool2(x: &Tensor) -> (Tensor, Vec<usize>) {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut arg = vec![0usize; n * c * oh * ow];
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for yy in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * yy * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * yy + dy) * w + 2 * xx + dx;
                    if x.data[j] > x.data[best] {
                        best = j;
                    }
                }
                y.data[o] = x.data[best];
                arg[o] = best;
                o += 1;
            }
        }
    }
    (y, arg)
}

pub fn max_pool2_backward(input_shape: [usize; 4], argmax: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    for (&j, &g) in argmax.iter().zip(&dy.data) {
        dx.data[j] += g;
    }
    dx
}

/// Source taps for one output coordinate of a bilinear resize.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    w1: f64,
}

/// Half-pixel-centre sampling (`align_corners = false`), edge-clamped.
fn bilinear_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            Tap {
                i0,
                i1,
                w1: s - i0 as f64,
            }
        })
        .collect()
}

/// Bilinearly resample one `h × w` plane to `oh × ow`.
pub fn resize_plane_bilinear(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![0.0; oh * ow];
    for (yo, a) in ty.iter().enumerate() {
        let r0 = &src[a.i0 * w..(a.i0 + 1) * w];
        let r1 = &src[a.i1 * w..(a.i1 + 1) * w];
        for (xo, b) in tx.iter().enumerate() {
            let top = r0[b.i0] * (1.0 - b.w1) + r0[b.i1] * b.w1;
            let bot = r1[b.i0] * (1.0 - b.w1) + r1[b.i1] * b.w1;
            out[yo * ow + xo] = top * (1.0 - a.w1) + bot * a.w1;
        }
    }
    out
}

pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    if (h, w) == (oh, ow) {
        return x.clone();
    }
    let mut data = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data.chunks(h * w) {
        data.extend(resize_plane_bilinear(plane, h, w, oh, ow));
    }
    Tensor {
        shape: [n, c, oh, ow],
        data,
    }
}

pub fn resize_bilinear_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let [n, c, oh, ow] = dy.shape();
    if (h, w) == (oh, ow) {
        return dy.clone();
    }
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut dx = Tensor::zeros([n, c, h, w]);
    for (dplane, gplane) in dx.data.chunks_mut(h * w).zip(dy.data.chunks(oh * ow)) {
        for (yo, a) in ty.iter().enumerate() {
            for (xo, b) in tx.iter().enumerate() {
                let g = gplane[yo * ow + xo];
                let gt = g * (1.0 - a.w1);
                let gb = g * a.w1;
                dplane[a.i0 * w + b.i0] += gt * (1.0 - b.w1);
                dplane[a.i0 * w + b.i1] += gt * b.w1;
                dplane[a.i1 * w + b.i0] += gb * (1.0 - b.w1);
                dplane[a.i1 * w + b.i1] += gb * b.w1;
            }
        }
    }
    dx
}

fn adaptive_bins(src: usize, dst: usize) -> Vec<(usize, usize)> {
    (0..dst)
        .map(|o| {
            let start = o * src / dst;
            let end = ((o + 1) * src).div_ceil(dst);
            (start, end)
        })
        .collect()
}

/// Adaptive average pooling onto an `oh × ow` grid.
pub fn adaptive_avg_pool(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    if (h, w) == (oh, ow) {
        return x.clone();
    }
    let by = adaptive_bins(h, oh);
    let bx = adaptive_bins(w, ow);
    let mut data = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data.chunks(h * w) {
        for &(y0, y1) in &by {
            for &(x0, x1) in &bx {
                let mut s = 0.0;
                for yy in y0..y1 {
                    s += plane[yy * w + x0..yy * w + x1].iter().sum::<f64>();
                }
                data.push(s / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    Tensor {
        shape: [n, c, oh, ow],
        data,
    }
}

pub fn adaptive_avg_pool_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    let [n, c, oh, ow] = dy.shape();
    if (h, w) == (oh, ow) {
        return dy.clone();
    }
    let by = adaptive_bins(h, oh);
    let bx = adaptive_bins(w, ow);
    let mut dx = Tensor::zeros([n, c, h, w]);
    for (dplane, gplane) in dx.data.chunks_mut(h * w).zip(dy.data.chunks(oh * ow)) {
        for (i, &(y0, y1)) in by.iter().enumerate() {
            for (j, &(x0, x1)) in bx.iter().enumerate() {
                let g = gplane[i * ow + j] / ((y1 - y0) * (x1 - x0)) as f64;
                for yy in y0..y1 {
                    dplane[yy * w + x0..yy * w + x1]
                        .iter_mut()
                        .for_each(|v| *v += g);
                }
            }
        }
    }
    dx
}

/// Dense layer over flattened samples: `y[n, out] = x[n, :] · Wᵀ + b`, with
/// `W` laid out `[out, features]`.
pub fn linear(x: &Tensor, weight: &[f64], bias: &[f64], out: usize) -> Tensor {
    let n = x.n();
    let f = x.sample_len();
    let mut y = Tensor::zeros([n, out, 1, 1]);
    for i in 0..n {
        y.sample_mut(i).copy_from_slice(bias);
    }
    gemm(n, f, out, &x.data, false, weight, true, &mut y.data, 1.0);
    y
}

pub fn linear_backward(
    x: &Tensor,
    weight: &[f64],
    dy: &Tensor,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Tensor {
    let n = x.n();
    let f = x.sample_len();
    let out = dy.sample_len();
    for i in 0..n {
        for (acc, g) in dbias.iter_mut().zip(dy.sample(i)) {
            *acc += g;
        }
    }
    // dW[out, f] += dyᵀ[out, n] · x[n, f]
    gemm(out, n, f, &dy.data, true, &x.data, false, dweight, 1.0);
    let mut dx = Tensor::zeros(x.shape());
    gemm(n, out, f, &dy.data, false, weight, false, &mut dx.data, 0.0);
    dx
}
