//! Sequential minimal optimization for the soft-margin dual problem with an
//! RBF kernel. Working pairs are chosen by maximal violation with a seeded
//! random tiebreak, so training is deterministic for a given seed.

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::{fit_platt, rbf_kernel, EmbeddingSet, SvmModel};

#[derive(Debug, Clone)]
pub struct SvmOptions {
    pub c: f64,
    /// None picks 1 / (dim * var(data)).
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            c: 1.0,
            gamma: None,
            tol: 1e-3,
            max_passes: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmoDiagnostics {
    pub converged: bool,
    pub final_violation: f64,
    pub iterations: usize,
    /// Dual objective after every pair update; must be non-decreasing.
    pub dual_objective: Vec<f64>,
    /// Final multiplier per training sample, in input order.
    pub alphas: Vec<f64>,
    pub training_accuracy: f64,
}

/// Pooled population variance over every feature entry.
fn pooled_variance(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Pick uniformly among all indices attaining the extreme value.
fn tiebreak(candidates: &[usize], rng: &mut Rng) -> usize {
    if candidates.len() == 1 {
        candidates[0]
    } else {
        candidates[rng.below(candidates.len())]
    }
}

pub fn smo_train(data: &EmbeddingSet, opts: &SvmOptions) -> Result<(SvmModel, SmoDiagnostics)> {
    let n = data.len();
    if n < 2 {
        return Err(Error::degenerate("data", "need at least two samples"));
    }
    let n_pos = data.labels.iter().filter(|&&l| l == 1).count();
    let n_neg = data.labels.iter().filter(|&&l| l == 0).count();
    if n_pos + n_neg != n {
        return Err(Error::Validation(
            "training embeddings must all carry a 0/1 label".into(),
        ));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::degenerate(
            "data",
            format!("both classes required, got {n_pos} positive / {n_neg} negative"),
        ));
    }
    if opts.c <= 0.0 || opts.tol <= 0.0 || opts.max_passes == 0 {
        return Err(Error::Config("C, tol and max_passes must be positive".into()));
    }

    let gamma = match opts.gamma {
        Some(g) if g > 0.0 => g,
        Some(g) => return Err(Error::Config(format!("gamma must be positive, got {g}"))),
        None => {
            let var = pooled_variance(&data.data);
            if var <= 0.0 {
                return Err(Error::degenerate("data", "zero variance embeddings"));
            }
            1.0 / (data.dim as f64 * var)
        }
    };

    let y: Vec<f64> = data.labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();

    // dense kernel matrix; training sets stay small enough
    let mut kernel = vec![0.0f64; n * n];
    for i in 0..n {
        kernel[i * n + i] = 1.0;
        for j in 0..i {
            let k = rbf_kernel(data.row(i), data.row(j), gamma)?;
            kernel[i * n + j] = k;
            kernel[j * n + i] = k;
        }
    }

    let c = opts.c;
    let mut alpha = vec![0.0f64; n];
    let mut grad = vec![-1.0f64; n]; // G = Q alpha - 1
    let mut rng = Rng::new(opts.seed);
    let mut dual_objective = Vec::new();
    let max_iter = opts.max_passes.saturating_mul(n).max(1);

    let mut iterations = 0usize;
    #[allow(unused_assignments)]
    let mut violation = f64::INFINITY;
    let mut converged = false;

    loop {
        // maximal violating pair
        let mut up_best = f64::NEG_INFINITY;
        let mut up_ties: Vec<usize> = Vec::new();
        let mut low_best = f64::INFINITY;
        let mut low_ties: Vec<usize> = Vec::new();
        for t in 0..n {
            let v = -y[t] * grad[t];
            let in_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let in_low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if in_up {
                if v > up_best {
                    up_best = v;
                    up_ties.clear();
                    up_ties.push(t);
                } else if v == up_best {
                    up_ties.push(t);
                }
            }
            if in_low {
                if v < low_best {
                    low_best = v;
                    low_ties.clear();
                    low_ties.push(t);
                } else if v == low_best {
                    low_ties.push(t);
                }
            }
        }
        violation = up_best - low_best;
        if violation <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        let i = tiebreak(&up_ties, &mut rng);
        let j = tiebreak(&low_ties, &mut rng);

        // two-variable analytic step along y_i alpha_i + y_j alpha_j = const
        let quad = (kernel[i * n + i] + kernel[j * n + j] - 2.0 * kernel[i * n + j]).max(1e-12);
        let mut t_step = violation / quad;
        let (lo_i, hi_i) = if y[i] > 0.0 {
            (-alpha[i], c - alpha[i])
        } else {
            (alpha[i] - c, alpha[i])
        };
        let (lo_j, hi_j) = if y[j] > 0.0 {
            (alpha[j] - c, alpha[j])
        } else {
            (-alpha[j], c - alpha[j])
        };
        t_step = t_step.min(hi_i).min(hi_j).max(lo_i).max(lo_j);

        alpha[i] += y[i] * t_step;
        alpha[j] -= y[j] * t_step;
        // numeric guard against box drift
        alpha[i] = alpha[i].clamp(0.0, c);
        alpha[j] = alpha[j].clamp(0.0, c);

        for s in 0..n {
            grad[s] += y[s] * t_step * (kernel[s * n + i] - kernel[s * n + j]);
        }
        iterations += 1;

        let dual: f64 = (0..n).map(|s| 0.5 * alpha[s] * (1.0 - grad[s])).sum();
        dual_objective.push(dual);
    }

    // bias from free support vectors, midpoint fallback otherwise
    let mut b_sum = 0.0;
    let mut b_count = 0usize;
    for i in 0..n {
        if alpha[i] > 1e-8 && alpha[i] < c - 1e-8 {
            // sum_j alpha_j y_j K_ij = y_i (G_i + 1)
            b_sum += y[i] - y[i] * (grad[i] + 1.0);
            b_count += 1;
        }
    }
    let bias = if b_count > 0 {
        b_sum / b_count as f64
    } else {
        let mut up_best = f64::NEG_INFINITY;
        let mut low_best = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0) {
                up_best = up_best.max(v);
            }
            if (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c) {
                low_best = low_best.min(v);
            }
        }
        (up_best + low_best) / 2.0
    };

    // keep only support vectors
    let mut support_vectors = Vec::new();
    let mut coeffs = Vec::new();
    for i in 0..n {
        if alpha[i] > 1e-12 {
            support_vectors.extend_from_slice(data.row(i));
            coeffs.push(alpha[i] * y[i]);
        }
    }
    if coeffs.is_empty() {
        return Err(Error::degenerate("data", "training produced no support vectors"));
    }

    let mut model = SvmModel {
        dim: data.dim,
        support_vectors,
        coeffs,
        bias,
        gamma,
        c,
        platt_a: -1.0,
        platt_b: 0.0,
    };

    // calibrate probabilities on the training decision scores
    let scores: Vec<f64> = (0..n)
        .map(|i| super::decision_score(&model, data.row(i)))
        .collect::<Result<_>>()?;
    let (a, b) = fit_platt(&scores, &data.labels)?;
    model.platt_a = a;
    model.platt_b = b;

    let mut correct = 0usize;
    for i in 0..n {
        let predicted = if scores[i] >= 0.0 { 1u8 } else { 0u8 };
        if predicted == data.labels[i] {
            correct += 1;
        }
    }

    Ok((
        model,
        SmoDiagnostics {
            converged,
            final_violation: violation,
            iterations,
            dual_objective,
            alphas: alpha,
            training_accuracy: correct as f64 / n as f64,
        },
    ))
}
