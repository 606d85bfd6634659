//! RBF-kernel SVM back-end: SMO training, Platt-calibrated probabilities,
//! and multi-system probability fusion.

mod embed_io;
mod model_io;
mod platt;
mod smo;

pub use embed_io::{read_embeddings, write_embeddings};
pub use model_io::{read_svm_model, write_svm_model};
pub use platt::fit_platt;
pub use smo::{smo_train, SmoDiagnostics, SvmOptions};

use crate::error::{Error, Result};

/// Embedding rows with binary labels. Label 255 marks an unlabeled row
/// (scoring-only sets).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub source: String,
    pub dim: usize,
    pub data: Vec<f64>, // n x dim, row-major
    pub labels: Vec<u8>,
    pub ids: Vec<String>,
}

pub const UNLABELED: u8 = 255;

impl EmbeddingSet {
    pub fn new(source: impl Into<String>, dim: usize) -> Self {
        EmbeddingSet {
            source: source.into(),
            dim,
            data: Vec::new(),
            labels: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, label: u8, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::shape(
                "EmbeddingSet::push",
                format!("{}", self.dim),
                format!("{}", row.len()),
            ));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFault {
                context: "EmbeddingSet::push".into(),
                detail: "non-finite embedding value".into(),
            });
        }
        self.ids.push(id.into());
        self.labels.push(label);
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Trained binary classifier. `coeffs[i]` is `alpha_i * y_i` for support
/// vector `i`; Platt parameters map decision scores to probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub dim: usize,
    pub support_vectors: Vec<f64>, // n_sv x dim
    pub coeffs: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    pub platt_a: f64,
    pub platt_b: f64,
}

impl SvmModel {
    pub fn n_support(&self) -> usize {
        self.coeffs.len()
    }

    pub fn support_vector(&self, i: usize) -> &[f64] {
        &self.support_vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// exp(-gamma * |x - y|^2)
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(
            "rbf_kernel",
            format!("{}", x.len()),
            format!("{}", y.len()),
        ));
    }
    if gamma <= 0.0 {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    let mut d2 = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let d = a - b;
        d2 += d * d;
    }
    Ok((-gamma * d2).exp())
}

/// Raw decision value sum(alpha_i y_i k(s_i, x)) + b.
pub fn decision_score(model: &SvmModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim {
        return Err(Error::shape(
            "decision_score",
            format!("{}", model.dim),
            format!("{}", x.len()),
        ));
    }
    let mut score = model.bias;
    for i in 0..model.n_support() {
        score += model.coeffs[i] * rbf_kernel(model.support_vector(i), x, model.gamma)?;
    }
    Ok(score)
}

/// Calibrated probability of the positive class, strictly inside (0, 1).
pub fn predict_proba(model: &SvmModel, x: &[f64]) -> Result<f64> {
    let score = decision_score(model, x)?;
    Ok(platt::sigmoid_ab(score, model.platt_a, model.platt_b))
}

/// Element-wise arithmetic mean of per-system probability vectors.
pub fn fuse_probabilities(systems: &[Vec<f64>]) -> Result<Vec<f64>> {
    if systems.is_empty() {
        return Err(Error::EmptyInput("no systems to fuse".into()));
    }
    let n = systems[0].len();
    for (k, s) in systems.iter().enumerate() {
        if s.len() != n {
            return Err(Error::shape(
                "fuse_probabilities",
                format!("{n} probabilities"),
                format!("{} in system {k}", s.len()),
            ));
        }
        if let Some(bad) = s.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Validation(format!(
                "system {k} holds probability {bad} outside [0, 1]"
            )));
        }
    }
    let inv = 1.0 / systems.len() as f64;
    Ok((0..n)
        .map(|i| systems.iter().map(|s| s[i]).sum::<f64>() * inv)
        .collect())
}
