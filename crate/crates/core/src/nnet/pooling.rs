//! Global average and global standard-deviation pooling.
//!
//! Both reduce a [C, H, W] feature map to one value per channel; the model
//! concatenates them into a 2C vector. GSP uses the population standard
//! deviation (normalizer inside the square root), so a constant map pools
//! to exactly zero.

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Per-channel mean over the spatial axes of a [C, H, W] tensor.
pub fn gap<S: Scalar>(feature_map: &Tensor<S>) -> Result<Tensor<S>> {
    let shape = feature_map.shape();
    if shape.len() != 3 {
        return Err(Error::shape("gap", "[C, H, W]", format!("{shape:?}")));
    }
    let (c, plane) = (shape[0], shape[1] * shape[2]);
    let inv = S::from_f64(1.0 / plane as f64);
    let mut out = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mut sum = S::ZERO;
        for v in &feature_map.data()[ch * plane..(ch + 1) * plane] {
            sum += *v;
        }
        out.data_mut()[ch] = sum * inv;
    }
    Ok(out)
}

/// Per-channel population standard deviation over the spatial axes.
pub fn gsp<S: Scalar>(feature_map: &Tensor<S>) -> Result<Tensor<S>> {
    let shape = feature_map.shape();
    if shape.len() != 3 {
        return Err(Error::shape("gsp", "[C, H, W]", format!("{shape:?}")));
    }
    let (c, plane) = (shape[0], shape[1] * shape[2]);
    let inv = S::from_f64(1.0 / plane as f64);
    let means = gap(feature_map)?;
    let mut out = Tensor::zeros(&[c]);
    for ch in 0..c {
        let mean = means.data()[ch];
        let mut acc = S::ZERO;
        for v in &feature_map.data()[ch * plane..(ch + 1) * plane] {
            let d = *v - mean;
            acc += d * d;
        }
        out.data_mut()[ch] = (acc * inv).sqrt();
    }
    Ok(out)
}

/// Batched GAP || GSP with backward, used inside the embedding model.
/// Input [N, C, H, W], output [N, 2C] with means first.
pub struct GapGspPool<S: Scalar> {
    cache: Option<PoolCache<S>>,
}

struct PoolCache<S: Scalar> {
    input: Tensor<S>,
    means: Vec<S>, // [N, C]
    stds: Vec<S>,  // [N, C]
}

impl<S: Scalar> GapGspPool<S> {
    pub fn new() -> Self {
        GapGspPool { cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = x.shape();
        if shape.len() != 4 {
            return Err(Error::shape("gap_gsp", "[N, C, H, W]", format!("{shape:?}")));
        }
        let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
        let inv = S::from_f64(1.0 / plane as f64);
        let mut out = Tensor::zeros(&[n, 2 * c]);
        let mut means = vec![S::ZERO; n * c];
        let mut stds = vec![S::ZERO; n * c];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                let mut sum = S::ZERO;
                for v in &x.data()[base..base + plane] {
                    sum += *v;
                }
                let mean = sum * inv;
                let mut acc = S::ZERO;
                for v in &x.data()[base..base + plane] {
                    let d = *v - mean;
                    acc += d * d;
                }
                let std = (acc * inv).sqrt();
                means[i * c + ch] = mean;
                stds[i * c + ch] = std;
                out.data_mut()[i * 2 * c + ch] = mean;
                out.data_mut()[i * 2 * c + c + ch] = std;
            }
        }
        self.cache = Some(PoolCache {
            input: x.clone(),
            means,
            stds,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::Integrity("gap_gsp: backward called without a preceding forward".into())
        })?;
        let shape = cache.input.shape();
        let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
        let inv_plane = S::from_f64(1.0 / plane as f64);
        let tiny = S::from_f64(1e-30);
        let mut dx = Tensor::zeros(shape);
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                let d_mean = grad_out.data()[i * 2 * c + ch];
                let d_std = grad_out.data()[i * 2 * c + c + ch];
                let mean = cache.means[i * c + ch];
                let std = cache.stds[i * c + ch];
                // d std / d x_j = (x_j - mean) / (plane * std); zero at std = 0
                let std_scale = if std.to_f64() == 0.0 {
                    S::ZERO
                } else {
                    d_std * inv_plane / (std + tiny)
                };
                for j in 0..plane {
                    let centered = cache.input.data()[base + j] - mean;
                    dx.data_mut()[base + j] = d_mean * inv_plane + std_scale * centered;
                }
            }
        }
        Ok(dx)
    }
}

impl<S: Scalar> Default for GapGspPool<S> {
    fn default() -> Self {
        Self::new()
    }
}
