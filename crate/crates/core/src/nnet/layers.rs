//! Layer implementations with hand-written backward passes.
//!
//! Each layer keeps whatever forward activations its backward pass needs;
//! calling backward before forward is a usage error. Parameter gradients
//! accumulate into the tensors' grad slots so batches can be split.

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::init;
use super::scalar::Scalar;
use super::tensor::{matmul, Tensor};
use super::Mode;

fn need_cache<'a, T>(cache: &'a Option<T>, layer: &str) -> Result<&'a T> {
    cache.as_ref().ok_or_else(|| Error::Integrity(format!(
        "{layer}: backward called without a preceding forward"
    )))
}

// ---------------------------------------------------------------------------
// Conv2d, 3x3 or 1x1, square kernel, zero padding
// ---------------------------------------------------------------------------

pub struct Conv2d<S: Scalar> {
    pub weight: Tensor<S>, // [out_c, in_c, k, k]
    pub bias: Tensor<S>,   // [out_c]
    in_c: usize,
    out_c: usize,
    ksize: usize,
    stride: usize,
    pad: usize,
    cached_input: Option<Tensor<S>>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(in_c: usize, out_c: usize, ksize: usize, stride: usize, pad: usize, rng: &mut Rng) -> Self {
        let fan_in = in_c * ksize * ksize;
        let weight = init::he_uniform(&[out_c, in_c, ksize, ksize], fan_in, rng);
        let bias = Tensor::param(&[out_c], vec![S::ZERO; out_c]).unwrap();
        Conv2d {
            weight,
            bias,
            in_c,
            out_c,
            ksize,
            stride,
            pad,
            cached_input: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.ksize) / self.stride + 1,
            (w + 2 * self.pad - self.ksize) / self.stride + 1,
        )
    }

    fn im2col(&self, x: &[S], h: usize, w: usize, ho: usize, wo: usize, col: &mut [S]) {
        let k = self.ksize;
        let spatial = ho * wo;
        for ci in 0..self.in_c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k * k + ki * k + kj) * spatial;
                    for oh in 0..ho {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        let out_base = row + oh * wo;
                        if ih < 0 || ih >= h as isize {
                            col[out_base..out_base + wo].iter_mut().for_each(|v| *v = S::ZERO);
                            continue;
                        }
                        let in_base = ci * h * w + ih as usize * w;
                        for ow in 0..wo {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            col[out_base + ow] = if iw < 0 || iw >= w as isize {
                                S::ZERO
                            } else {
                                x[in_base + iw as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, col: &[S], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [S]) {
        let k = self.ksize;
        let spatial = ho * wo;
        for ci in 0..self.in_c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k * k + ki * k + kj) * spatial;
                    for oh in 0..ho {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let in_base = ci * h * w + ih as usize * w;
                        for ow in 0..wo {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            if iw >= 0 && iw < w as isize {
                                dx[in_base + iw as usize] += col[row + oh * wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.in_c {
            return Err(Error::shape(
                "conv2d",
                format!("[N, {}, H, W]", self.in_c),
                format!("{shape:?}"),
            ));
        }
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        let (ho, wo) = self.out_hw(h, w);
        if ho == 0 || wo == 0 {
            return Err(Error::shape(
                "conv2d",
                "spatial dims large enough for one output position",
                format!("{shape:?}"),
            ));
        }
        let spatial = ho * wo;
        let krows = self.in_c * self.ksize * self.ksize;
        let mut col = vec![S::ZERO; krows * spatial];
        let mut out = Tensor::zeros(&[n, self.out_c, ho, wo]);
        for i in 0..n {
            let xs = &x.data()[i * self.in_c * h * w..(i + 1) * self.in_c * h * w];
            self.im2col(xs, h, w, ho, wo, &mut col);
            let ys = &mut out.data_mut()[i * self.out_c * spatial..(i + 1) * self.out_c * spatial];
            matmul(self.out_c, krows, spatial, self.weight.data(), false, &col, false, false, ys);
            for c in 0..self.out_c {
                let b = self.bias.data()[c];
                ys[c * spatial..(c + 1) * spatial].iter_mut().for_each(|v| *v += b);
            }
        }
        out.check_finite("conv2d", None)?;
        self.cached_input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let x = need_cache(&self.cached_input, "conv2d")?.clone();
        let shape = x.shape();
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        let (ho, wo) = self.out_hw(h, w);
        let spatial = ho * wo;
        let krows = self.in_c * self.ksize * self.ksize;

        let mut col = vec![S::ZERO; krows * spatial];
        let mut dcol = vec![S::ZERO; krows * spatial];
        let mut dx = Tensor::zeros(shape);
        for i in 0..n {
            let xs = &x.data()[i * self.in_c * h * w..(i + 1) * self.in_c * h * w];
            let dys = &grad_out.data()[i * self.out_c * spatial..(i + 1) * self.out_c * spatial];
            // weight grad: dW += dY * col^T
            self.im2col(xs, h, w, ho, wo, &mut col);
            matmul(self.out_c, spatial, krows, dys, false, &col, true, true, self.weight.grad_mut());
            // bias grad
            for c in 0..self.out_c {
                let mut s = S::ZERO;
                for v in &dys[c * spatial..(c + 1) * spatial] {
                    s += *v;
                }
                self.bias.grad_mut()[c] += s;
            }
            // input grad: dcol = W^T * dY, then scatter
            matmul(krows, self.out_c, spatial, self.weight.data(), true, dys, false, false, &mut dcol);
            let dxs = &mut dx.data_mut()[i * self.in_c * h * w..(i + 1) * self.in_c * h * w];
            self.col2im_add(&dcol, h, w, ho, wo, dxs);
        }
        Ok(dx)
    }

    pub fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, bool, &mut Tensor<S>)) {
        f(format!("{prefix}.weight"), true, &mut self.weight);
        f(format!("{prefix}.bias"), true, &mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

pub struct BatchNorm2d<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    running_mean: Tensor<S>,
    running_var: Tensor<S>,
    channels: usize,
    momentum: f64,
    eps: f64,
    cache: Option<BnCache<S>>,
}

struct BnCache<S> {
    x_hat: Vec<S>,
    inv_std: Vec<S>,
    shape: Vec<usize>,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::param(&[channels], vec![S::ONE; channels]).unwrap(),
            beta: Tensor::param(&[channels], vec![S::ZERO; channels]).unwrap(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::from_vec(&[channels], vec![S::ONE; channels]).unwrap(),
            channels,
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let shape = x.shape().to_vec();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape(
                "batch_norm",
                format!("[N, {}, H, W]", self.channels),
                format!("{shape:?}"),
            ));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let plane = h * w;
        let m = n * plane;
        let mut out = Tensor::zeros(&shape);

        match mode {
            Mode::Train => {
                let mut x_hat = vec![S::ZERO; x.numel()];
                let mut inv_std = vec![S::ZERO; c];
                let eps = S::from_f64(self.eps);
                let inv_m = S::from_f64(1.0 / m as f64);
                for ch in 0..c {
                    let mut mean = S::ZERO;
                    for i in 0..n {
                        let base = (i * c + ch) * plane;
                        for v in &x.data()[base..base + plane] {
                            mean += *v;
                        }
                    }
                    mean *= inv_m;
                    let mut var = S::ZERO;
                    for i in 0..n {
                        let base = (i * c + ch) * plane;
                        for v in &x.data()[base..base + plane] {
                            let d = *v - mean;
                            var += d * d;
                        }
                    }
                    var *= inv_m;
                    let istd = S::ONE / (var + eps).sqrt();
                    inv_std[ch] = istd;
                    let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
                    for i in 0..n {
                        let base = (i * c + ch) * plane;
                        for j in 0..plane {
                            let xh = (x.data()[base + j] - mean) * istd;
                            x_hat[base + j] = xh;
                            out.data_mut()[base + j] = g * xh + b;
                        }
                    }
                    let mom = S::from_f64(self.momentum);
                    let keep = S::from_f64(1.0 - self.momentum);
                    self.running_mean.data_mut()[ch] = keep * self.running_mean.data()[ch] + mom * mean;
                    self.running_var.data_mut()[ch] = keep * self.running_var.data()[ch] + mom * var;
                }
                self.cache = Some(BnCache {
                    x_hat,
                    inv_std,
                    shape,
                });
            }
            Mode::Eval => {
                let eps = S::from_f64(self.eps);
                for ch in 0..c {
                    let mean = self.running_mean.data()[ch];
                    let istd = S::ONE / (self.running_var.data()[ch] + eps).sqrt();
                    let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
                    for i in 0..n {
                        let base = (i * c + ch) * plane;
                        for j in 0..plane {
                            out.data_mut()[base + j] = g * (x.data()[base + j] - mean) * istd + b;
                        }
                    }
                }
                self.cache = None;
            }
        }
        out.check_finite("batch_norm", None)?;
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let cache = need_cache(&self.cache, "batch_norm")?;
        let shape = &cache.shape;
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let plane = h * w;
        let m = n * plane;
        let m_s = S::from_f64(m as f64);
        let inv_m = S::from_f64(1.0 / m as f64);
        let mut dx = Tensor::zeros(shape);
        for ch in 0..c {
            let mut sum_dy = S::ZERO;
            let mut sum_dy_xhat = S::ZERO;
            for i in 0..n {
                let base = (i * c + ch) * plane;
                for j in 0..plane {
                    let dy = grad_out.data()[base + j];
                    sum_dy += dy;
                    sum_dy_xhat += dy * cache.x_hat[base + j];
                }
            }
            self.beta.grad_mut()[ch] += sum_dy;
            self.gamma.grad_mut()[ch] += sum_dy_xhat;
            let scale = self.gamma.data()[ch] * cache.inv_std[ch] * inv_m;
            for i in 0..n {
                let base = (i * c + ch) * plane;
                for j in 0..plane {
                    let dy = grad_out.data()[base + j];
                    dx.data_mut()[base + j] =
                        scale * (m_s * dy - sum_dy - cache.x_hat[base + j] * sum_dy_xhat);
                }
            }
        }
        Ok(dx)
    }

    pub fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, bool, &mut Tensor<S>)) {
        f(format!("{prefix}.gamma"), true, &mut self.gamma);
        f(format!("{prefix}.beta"), true, &mut self.beta);
        f(format!("{prefix}.running_mean"), false, &mut self.running_mean);
        f(format!("{prefix}.running_var"), false, &mut self.running_var);
    }
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

#[derive(Default)]
pub struct Relu<S: Scalar> {
    mask: Option<Vec<S>>,
}

impl<S: Scalar> Relu<S> {
    pub fn new() -> Self {
        Relu { mask: None }
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut out = x.clone();
        let mut mask = vec![S::ZERO; x.numel()];
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            if *v > S::ZERO {
                mask[i] = S::ONE;
            } else {
                *v = S::ZERO;
            }
        }
        self.mask = Some(mask);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let mask = need_cache(&self.mask, "relu")?;
        let mut dx = grad_out.clone();
        for (d, m) in dx.data_mut().iter_mut().zip(mask.iter()) {
            *d *= *m;
        }
        Ok(dx)
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

pub struct Linear<S: Scalar> {
    pub weight: Tensor<S>, // [out, in]
    pub bias: Tensor<S>,   // [out]
    in_dim: usize,
    out_dim: usize,
    cached_input: Option<Tensor<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: init::he_uniform(&[out_dim, in_dim], in_dim, rng),
            bias: Tensor::param(&[out_dim], vec![S::ZERO; out_dim]).unwrap(),
            in_dim,
            out_dim,
            cached_input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::shape(
                "linear",
                format!("[N, {}]", self.in_dim),
                format!("{shape:?}"),
            ));
        }
        let n = shape[0];
        let mut out = Tensor::zeros(&[n, self.out_dim]);
        matmul(n, self.in_dim, self.out_dim, x.data(), false, self.weight.data(), true, false, out.data_mut());
        for i in 0..n {
            for (j, b) in self.bias.data().iter().enumerate() {
                out.data_mut()[i * self.out_dim + j] += *b;
            }
        }
        out.check_finite("linear", None)?;
        self.cached_input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let x = need_cache(&self.cached_input, "linear")?.clone();
        let n = x.shape()[0];
        // dW += dY^T X
        matmul(self.out_dim, n, self.in_dim, grad_out.data(), true, x.data(), false, true, self.weight.grad_mut());
        // db += column sums of dY
        for i in 0..n {
            for j in 0..self.out_dim {
                self.bias.grad_mut()[j] += grad_out.data()[i * self.out_dim + j];
            }
        }
        // dX = dY W
        let mut dx = Tensor::zeros(x.shape());
        matmul(n, self.out_dim, self.in_dim, grad_out.data(), false, self.weight.data(), false, false, dx.data_mut());
        Ok(dx)
    }

    pub fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(String, bool, &mut Tensor<S>)) {
        f(format!("{prefix}.weight"), true, &mut self.weight);
        f(format!("{prefix}.bias"), true, &mut self.bias);
    }
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling; eval mode and rate 0 are exact pass-through)
// ---------------------------------------------------------------------------

pub struct Dropout<S: Scalar> {
    rate: f64,
    mask: Option<Vec<S>>,
}

impl<S: Scalar> Dropout<S> {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Dropout { rate, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor<S>, mode: Mode, rng: &mut Rng) -> Result<Tensor<S>> {
        match mode {
            Mode::Eval => {
                self.mask = None;
                Ok(x.clone())
            }
            Mode::Train => {
                let keep = 1.0 - self.rate;
                let scale = S::from_f64(1.0 / keep);
                let mut out = x.clone();
                let mut mask = vec![S::ZERO; x.numel()];
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    if self.rate == 0.0 || rng.uniform() < keep {
                        mask[i] = scale;
                        *v *= scale;
                    } else {
                        *v = S::ZERO;
                    }
                }
                self.mask = Some(mask);
                Ok(out)
            }
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        match &self.mask {
            None => Ok(grad_out.clone()), // eval-mode pass-through
            Some(mask) => {
                let mut dx = grad_out.clone();
                for (d, m) in dx.data_mut().iter_mut().zip(mask.iter()) {
                    *d *= *m;
                }
                Ok(dx)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Tanh
// ---------------------------------------------------------------------------

#[derive(Default)]
pub struct TanhLayer<S: Scalar> {
    cached_output: Option<Vec<S>>,
}

impl<S: Scalar> TanhLayer<S> {
    pub fn new() -> Self {
        TanhLayer { cached_output: None }
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut out = x.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        self.cached_output = Some(out.data().to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let y = need_cache(&self.cached_output, "tanh")?;
        let mut dx = grad_out.clone();
        for (d, yv) in dx.data_mut().iter_mut().zip(y.iter()) {
            *d *= S::ONE - *yv * *yv;
        }
        Ok(dx)
    }
}
