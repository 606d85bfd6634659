//! Weight initialization: He-uniform for conv/linear weights, orthogonal
//! blocks for recurrent matrices, zero biases (forget gates get 1.0 at the
//! call site). Draws always happen in f64 so the f32 and f64 instantiations
//! of a model start from the same numbers.

use crate::rng::Rng;

use super::scalar::Scalar;
use super::tensor::Tensor;

pub fn he_uniform<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<S> {
    let limit = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<S> = (0..n)
        .map(|_| S::from_f64(rng.range(-limit, limit)))
        .collect();
    Tensor::param(shape, data).unwrap()
}

/// Random orthogonal [n, n] matrix via modified Gram-Schmidt on a Gaussian
/// matrix, returned row-major.
pub fn orthogonal(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut m: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
    for i in 0..n {
        for j in 0..i {
            let mut dot = 0.0;
            for k in 0..n {
                dot += m[i * n + k] * m[j * n + k];
            }
            for k in 0..n {
                m[i * n + k] -= dot * m[j * n + k];
            }
        }
        let norm = (0..n).map(|k| m[i * n + k] * m[i * n + k]).sum::<f64>().sqrt();
        // a zero row after projection is vanishingly unlikely; re-draw if so
        if norm < 1e-12 {
            for k in 0..n {
                m[i * n + k] = rng.normal();
            }
            let norm2 = (0..n).map(|k| m[i * n + k] * m[i * n + k]).sum::<f64>().sqrt();
            for k in 0..n {
                m[i * n + k] /= norm2;
            }
            continue;
        }
        for k in 0..n {
            m[i * n + k] /= norm;
        }
    }
    m
}
