//! Evaluation measures: unweighted average recall for classification,
//! Pearson's correlation coefficient for sequence regression, confusion
//! matrices and report emission. Pure and stateless.

use crate::error::{Error, Result};

/// k x k contingency counts; rows are truth, columns predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<usize>, // k x k row-major
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[usize], pred: &[usize], class_names: &[String]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::shape(
                "confusion_matrix",
                format!("{} predictions", truth.len()),
                format!("{}", pred.len()),
            ));
        }
        let k = class_names.len();
        let mut counts = vec![0usize; k * k];
        for (&t, &p) in truth.iter().zip(pred.iter()) {
            if t >= k || p >= k {
                return Err(Error::Validation(format!(
                    "label {} outside the {k} configured classes",
                    t.max(p)
                )));
            }
            counts[t * k + p] += 1;
        }
        Ok(ConfusionMatrix {
            class_names: class_names.to_vec(),
            counts,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn recall(&self, class: usize) -> Option<f64> {
        let k = self.n_classes();
        let row: usize = self.counts[class * k..(class + 1) * k].iter().sum();
        if row == 0 {
            None
        } else {
            Some(self.counts[class * k + class] as f64 / row as f64)
        }
    }
}

/// Mean of the per-class recalls. Every class must occur in the truth.
pub fn uar(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<f64> {
    if n_classes < 2 {
        return Err(Error::Config("UAR needs at least two classes".into()));
    }
    let names: Vec<String> = (0..n_classes).map(|i| format!("class{i}")).collect();
    let cm = ConfusionMatrix::from_labels(truth, pred, &names)?;
    let mut sum = 0.0;
    for c in 0..n_classes {
        match cm.recall(c) {
            Some(r) => sum += r,
            None => {
                return Err(Error::degenerate(
                    "class",
                    format!("class {c} has no truth samples"),
                ))
            }
        }
    }
    Ok(sum / n_classes as f64)
}

/// Pearson's correlation coefficient, population convention, two-pass in
/// double precision.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(
            "pcc",
            format!("{} values", x.len()),
            format!("{}", y.len()),
        ));
    }
    if x.len() < 2 {
        return Err(Error::degenerate("variance", "PCC needs at least two samples"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y.iter()) {
        let da = a - mx;
        let db = b - my;
        cov += da * db;
        vx += da * da;
        vy += db * db;
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::degenerate("variance", "constant sequence has no correlation"));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BscAggregation {
    /// Arithmetic mean of per-speaker PCCs (default).
    MeanPerSpeaker,
    /// PCC of all sequences concatenated.
    Pooled,
}

/// Task score over per-speaker (prediction, reference) sequence pairs.
pub fn bsc_score(pairs: &[(Vec<f64>, Vec<f64>)], aggregation: BscAggregation) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no speakers to score".into()));
    }
    match aggregation {
        BscAggregation::MeanPerSpeaker => {
            let mut sum = 0.0;
            for (pred, truth) in pairs {
                sum += pcc(pred, truth)?;
            }
            Ok(sum / pairs.len() as f64)
        }
        BscAggregation::Pooled => {
            let mut all_pred = Vec::new();
            let mut all_truth = Vec::new();
            for (pred, truth) in pairs {
                all_pred.extend_from_slice(pred);
                all_truth.extend_from_slice(truth);
            }
            pcc(&all_pred, &all_truth)
        }
    }
}

/// One evaluation outcome, ready for CSV or human-readable emission.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub per_item: Vec<(String, f64)>,
    pub sample_count: usize,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("{},{:.6}\n", self.metric, self.value));
        for (name, v) in &self.per_item {
            out.push_str(&format!("{name},{v:.6}\n"));
        }
        out.push_str(&format!("samples,{}\n", self.sample_count));
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<24} {:>10.4}\n", self.metric, self.value));
        for (name, v) in &self.per_item {
            out.push_str(&format!("  {:<22} {:>10.4}\n", name, v));
        }
        out.push_str(&format!("  {:<22} {:>10}\n", "samples", self.sample_count));
        out
    }
}
