//! Orchestration: manifests, configuration, synthetic corpora, the
//! mask-classification and breath-regression training flows, embedding
//! extraction and experiment plans.

mod belt_io;
mod breath;
mod config;
mod experiment;
mod features;
mod manifest;
mod mask;
mod synth;

pub use belt_io::{read_belt, write_belt};
pub use breath::{predict_belts, train_breath, BreathTrainOutcome};
pub use config::{BscFrontend, PipelineConfig, SvmConfig};
pub use experiment::{run_experiment, ExperimentReport, Plan, PlanSystem};
pub use features::{feature_to_tensor, pad_or_truncate_frames, prepare_clip_features, AugmentAudit};
pub use manifest::{Gender, Manifest, ManifestRecord, MaskLabel, Split, Task};
pub use mask::{extract_embeddings, extract_embeddings_from_features, train_mask, MaskTrainOutcome};
pub use synth::{synth_breath_corpus, synth_mask_corpus, SynthSpec};

/// Checkpoint architecture descriptor: a `kind` line, the aux class count,
/// then the canonical configuration text.
pub(crate) fn make_descriptor(kind: &str, aux_classes: usize, cfg: &PipelineConfig) -> String {
    format!("kind = {kind}\naux_classes = {aux_classes}\n{}", cfg.to_text())
}

pub(crate) fn parse_descriptor(desc: &str) -> crate::error::Result<(String, usize, PipelineConfig)> {
    use crate::error::Error;
    let mut lines = desc.lines();
    let kind = lines
        .next()
        .and_then(|l| l.strip_prefix("kind = "))
        .ok_or_else(|| Error::Integrity("checkpoint descriptor misses the kind line".into()))?
        .to_string();
    let aux_classes: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("aux_classes = "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Integrity("checkpoint descriptor misses aux_classes".into()))?;
    let rest: String = lines.map(|l| format!("{l}\n")).collect();
    let cfg = PipelineConfig::from_text(&rest)
        .map_err(|e| Error::Integrity(format!("checkpoint descriptor is unreadable: {e}")))?;
    Ok((kind, aux_classes, cfg))
}

/// One line of a training log.
#[derive(Debug, Clone)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub devel_metric: f64,
}

/// Per-run training log plus the augmentation audit: counters of augmented
/// items per split, proving eval-mode feature paths stay untouched.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    /// Devel metric of the freshly initialized model, before any update.
    pub initial_devel_metric: f64,
    pub entries: Vec<TrainLogEntry>,
    pub audit: AugmentAudit,
    /// Optimizer updates executed over the whole run.
    pub optimizer_steps: usize,
    /// Largest item group consumed by one optimizer step.
    pub max_group_size: usize,
}

impl TrainLog {
    pub fn to_text(&self) -> String {
        let mut out = format!("initial_devel_metric,{:.6}\n", self.initial_devel_metric);
        out.push_str("epoch,lr,train_loss,devel_metric\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                e.epoch, e.lr, e.train_loss, e.devel_metric
            ));
        }
        out.push_str(&self.audit.to_text());
        out
    }
}
