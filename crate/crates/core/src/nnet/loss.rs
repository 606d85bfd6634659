//! Loss functions. Each returns the scalar loss together with the gradient
//! with respect to the prediction, computed in one pass.

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Numerically stable softmax of one row.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits
        .iter()
        .copied()
        .fold(S::from_f64(f64::NEG_INFINITY), |a, b| a.maximum(b));
    let exps: Vec<S> = logits.iter().map(|&v| (v - max).exp()).collect();
    let mut sum = S::ZERO;
    for e in &exps {
        sum += *e;
    }
    exps.iter().map(|&e| e / sum).collect()
}

/// Mean categorical cross-entropy over a batch of logits [N, K] with one
/// label per row. The returned gradient is d(mean loss)/d(logits).
pub fn cross_entropy_loss<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<(S, Tensor<S>)> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::shape("cross_entropy", "[N, K]", format!("{shape:?}")));
    }
    let (n, k) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(Error::shape(
            "cross_entropy",
            format!("{n} labels"),
            format!("{}", labels.len()),
        ));
    }
    let mut grad = Tensor::zeros(shape);
    let mut total = S::ZERO;
    let inv_n = S::from_f64(1.0 / n as f64);
    for i in 0..n {
        let label = labels[i];
        if label >= k {
            return Err(Error::shape(
                "cross_entropy",
                format!("label < {k}"),
                format!("{label}"),
            ));
        }
        let row = &logits.data()[i * k..(i + 1) * k];
        let probs = softmax(row);
        let p = probs[label].maximum(S::from_f64(1e-300));
        total += -(p.ln());
        for j in 0..k {
            let indicator = if j == label { S::ONE } else { S::ZERO };
            grad.data_mut()[i * k + j] = (probs[j] - indicator) * inv_n;
        }
    }
    let loss = total * inv_n;
    if !loss.is_finite() {
        return Err(Error::NumericFault {
            context: "cross_entropy".into(),
            detail: "loss is not finite".into(),
        });
    }
    Ok((loss, grad))
}

/// Cosine distance 1 - <p, t> / (|p| |t| + eps), in [0, 2]. The target must
/// not be all-zero; an all-zero prediction is tolerated through the epsilon.
pub fn cosine_distance_loss<S: Scalar>(pred: &[S], target: &[S]) -> Result<(S, Vec<S>)> {
    if pred.len() != target.len() {
        return Err(Error::shape(
            "cosine_distance",
            format!("{} values", target.len()),
            format!("{}", pred.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("cosine distance of empty vectors".into()));
    }
    let mut dot = S::ZERO;
    let mut pp = S::ZERO;
    let mut tt = S::ZERO;
    for (p, t) in pred.iter().zip(target.iter()) {
        dot += *p * *t;
        pp += *p * *p;
        tt += *t * *t;
    }
    if tt.to_f64() == 0.0 {
        return Err(Error::degenerate("target", "cosine distance target is all zeros"));
    }
    let norm_p = pp.sqrt();
    let norm_t = tt.sqrt();
    let eps = S::from_f64(1e-12);
    let denom = norm_p * norm_t + eps;
    let loss = S::ONE - dot / denom;

    // dL/dp = -t/denom + dot * |t| * p / ((|p| + tiny) * denom^2)
    let tiny = S::from_f64(1e-30);
    let scale = dot * norm_t / ((norm_p + tiny) * denom * denom);
    let grad: Vec<S> = pred
        .iter()
        .zip(target.iter())
        .map(|(&p, &t)| -t / denom + scale * p)
        .collect();
    Ok((loss, grad))
}
