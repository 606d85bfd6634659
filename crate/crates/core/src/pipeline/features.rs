//! Shared feature preparation: Fbank extraction with normalization, the
//! explicit pad-with-last-frame/truncate step that fixes sequence lengths,
//! feature-to-tensor conversion and the augmentation audit.

use std::collections::BTreeMap;

use crate::dsp::{log_fbank, mean_var_normalize, stack_frames, AudioClip, FbankConfig, FeatureMatrix};
use crate::error::Result;
use crate::nnet::{Scalar, Tensor};

use super::config::{BscFrontend, PipelineConfig};
use super::manifest::Split;

/// Counters of augmentation applications per split. Evaluation feature
/// paths must never augment, so the devel/test counters stay zero; the
/// training log embeds this audit.
#[derive(Debug, Clone, Default)]
pub struct AugmentAudit {
    counts: BTreeMap<(Split, &'static str), usize>,
}

impl AugmentAudit {
    pub fn record(&mut self, split: Split, scheme: &'static str) {
        *self.counts.entry((split, scheme)).or_insert(0) += 1;
    }

    pub fn count(&self, split: Split, scheme: &str) -> usize {
        self.counts
            .iter()
            .filter(|((s, sch), _)| *s == split && *sch == scheme)
            .map(|(_, &c)| c)
            .sum()
    }

    pub fn total_for_split(&self, split: Split) -> usize {
        self.counts
            .iter()
            .filter(|((s, _), _)| *s == split)
            .map(|(_, &c)| c)
            .sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("audit.augmented_items:\n");
        for split in [Split::Train, Split::Devel, Split::Test] {
            out.push_str(&format!(
                "  {} = {}\n",
                split.as_str(),
                self.total_for_split(split)
            ));
        }
        out
    }
}

/// Fix the frame count exactly: truncate long inputs, extend short ones by
/// repeating the final frame. This is the pipeline-level length fix (for
/// example 5999 raw frames to the 6000-frame regression grid); random
/// cropping and tiling live in the augment module instead.
pub fn pad_or_truncate_frames(feat: &FeatureMatrix, target: usize) -> Result<FeatureMatrix> {
    let (u, v) = (feat.n_frames(), feat.n_bins());
    if u == target {
        return Ok(feat.clone());
    }
    let mut data = Vec::with_capacity(target * v);
    if u > target {
        data.extend_from_slice(&feat.data()[..target * v]);
    } else {
        data.extend_from_slice(feat.data());
        for _ in u..target {
            data.extend_from_slice(feat.frame(u - 1));
        }
    }
    FeatureMatrix::new(data, target, v, feat.frame_shift_ms())
}

/// Normalized log-Fbank features for one clip under the mask-task config.
pub fn prepare_clip_features(clip: &AudioClip, dsp: &FbankConfig) -> Result<FeatureMatrix> {
    let feat = log_fbank(clip, dsp)?;
    mean_var_normalize(&feat)
}

/// Features for the breath task: either the configured long-window Fbank or
/// the stacked short-shift variant, normalized and fixed to the target
/// frame count.
pub fn prepare_breath_features(clip: &AudioClip, cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    let feat = match cfg.bsc_frontend {
        BscFrontend::Fbank => log_fbank(clip, &cfg.dsp)?,
        BscFrontend::Stacked => {
            let mut short = cfg.dsp.clone();
            short.window_ms = 25.0;
            short.shift_ms = 10.0;
            let win = (25.0 * clip.sample_rate_hz() as f64 / 1000.0).round() as usize;
            short.fft_size = win.next_power_of_two().max(256);
            let base = log_fbank(clip, &short)?;
            stack_frames(&base, 4, 4)?
        }
    };
    let feat = mean_var_normalize(&feat)?;
    pad_or_truncate_frames(&feat, cfg.bsc_target_frames)
}

/// [frames x bins] matrix to a [1, bins, frames] single-channel image.
pub fn feature_to_tensor<S: Scalar>(feat: &FeatureMatrix) -> Tensor<S> {
    let (u, v) = (feat.n_frames(), feat.n_bins());
    let mut data = vec![S::ZERO; u * v];
    for t in 0..u {
        for b in 0..v {
            data[b * u + t] = S::from_f64(feat.at(t, b));
        }
    }
    Tensor::from_vec(&[1, v, u], data).unwrap()
}

/// [frames x bins] matrix to a [frames, bins] sequence tensor.
pub fn feature_to_sequence<S: Scalar>(feat: &FeatureMatrix) -> Tensor<S> {
    let data: Vec<S> = feat.data().iter().map(|&v| S::from_f64(v)).collect();
    Tensor::from_vec(&[feat.n_frames(), feat.n_bins()], data).unwrap()
}
