//! Platt scaling: fit sigmoid parameters (A, B) so that
//! P(y=1 | score) = 1 / (1 + exp(A * score + B)), by regularized
//! maximum likelihood with a fixed budget of 20 Newton iterations and
//! backtracking line search.

use crate::error::{Error, Result};

/// Numerically stable 1 / (1 + exp(a*s + b)).
pub fn sigmoid_ab(score: f64, a: f64, b: f64) -> f64 {
    let f = a * score + b;
    if f >= 0.0 {
        let e = (-f).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + f.exp())
    }
}

const NEWTON_ITERS: usize = 20;

pub fn fit_platt(scores: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "fit_platt",
            format!("{} labels", scores.len()),
            format!("{}", labels.len()),
        ));
    }
    let n = scores.len();
    if n == 0 {
        return Err(Error::EmptyInput("no scores to calibrate".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_neg = n as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::degenerate("data", "Platt fit needs both classes"));
    }

    // regularized targets
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l == 1 { hi } else { lo }).collect();

    let min_step = 1e-10;
    let sigma = 1e-12;

    let mut a = 0.0f64;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();

    let fval = |a: f64, b: f64| -> f64 {
        let mut v = 0.0;
        for (s, t) in scores.iter().zip(targets.iter()) {
            let f = a * s + b;
            if f >= 0.0 {
                v += t * f + (1.0 + (-f).exp()).ln();
            } else {
                v += (t - 1.0) * f + (1.0 + f.exp()).ln();
            }
        }
        v
    };
    let mut best = fval(a, b);

    for _ in 0..NEWTON_ITERS {
        let (mut h11, mut h22, mut h21) = (sigma, sigma, 0.0);
        let (mut g1, mut g2) = (0.0, 0.0);
        for (s, t) in scores.iter().zip(targets.iter()) {
            let f = a * s + b;
            let (p, q) = if f >= 0.0 {
                let e = (-f).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += s * s * d2;
            h22 += d2;
            h21 += s * d2;
            let d1 = t - p;
            g1 += s * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;

        let mut step = 1.0;
        while step >= min_step {
            let (na, nb) = (a + step * da, b + step * db);
            let nv = fval(na, nb);
            if nv < best + 1e-4 * step * gd {
                a = na;
                b = nb;
                best = nv;
                break;
            }
            step /= 2.0;
        }
        if step < min_step {
            break; // line search failed, keep current estimate
        }
    }
    Ok((a, b))
}
