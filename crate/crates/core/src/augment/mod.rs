//! Data augmentation over feature matrices and audio clips.
//!
//! All operations take an explicit [`Rng`] value, never global state, so a
//! given (input, config, seed) triple always produces the same bytes.
//! Entries outside the masked or erased regions are copied bit-identically.

use crate::dsp::{resample, AudioClip, FeatureMatrix};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Frequency/time masking. A frequency mask covers `f` consecutive bins with
/// `f` drawn uniformly from the integers [0, max_freq_mask]; a time mask
/// covers `t` consecutive frames with `t` from [0, max_time_mask].
#[derive(Debug, Clone, PartialEq)]
pub struct SpecAugmentConfig {
    pub max_freq_mask: usize,
    pub max_time_mask: usize,
    pub n_freq_masks: usize,
    pub n_time_masks: usize,
    pub mask_value: f64,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        // single mask per axis; masking with 0 after mean/variance
        // normalization substitutes the per-bin mean
        SpecAugmentConfig {
            max_freq_mask: 12,
            max_time_mask: 20,
            n_freq_masks: 1,
            n_time_masks: 1,
            mask_value: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomErasingConfig {
    pub apply_prob: f64,
    pub area_ratio_min: f64,
    pub area_ratio_max: f64,
    pub aspect_ratio_min: f64,
    pub aspect_ratio_max: f64,
}

impl Default for RandomErasingConfig {
    fn default() -> Self {
        RandomErasingConfig {
            apply_prob: 0.5,
            area_ratio_min: 0.02,
            area_ratio_max: 0.2,
            aspect_ratio_min: 0.3,
            aspect_ratio_max: 3.33,
        }
    }
}

impl RandomErasingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::Config("apply_prob must be in [0, 1]".into()));
        }
        if !(self.area_ratio_min > 0.0
            && self.area_ratio_min < self.area_ratio_max
            && self.area_ratio_max < 1.0)
        {
            return Err(Error::Config(format!(
                "area ratio range ({}, {}) must satisfy 0 < min < max < 1",
                self.area_ratio_min, self.area_ratio_max
            )));
        }
        if !(self.aspect_ratio_min > 0.0 && self.aspect_ratio_min <= self.aspect_ratio_max) {
            return Err(Error::Config(format!(
                "aspect ratio range ({}, {}) invalid",
                self.aspect_ratio_min, self.aspect_ratio_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedPerturbConfig {
    pub factors: Vec<f64>,
    pub target_frames: usize,
}

impl Default for SpeedPerturbConfig {
    fn default() -> Self {
        SpeedPerturbConfig {
            factors: vec![0.9, 1.0, 1.1],
            target_frames: 98,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Train,
    Eval,
}

/// Apply frequency and time masks. Masked columns span `[f0, f0 + f)` with
/// `f0` uniform on `[0, n_bins - f)`; masked rows span `[t0, t0 + t)` with
/// `t0` uniform on `[0, n_frames - t)`.
pub fn spec_augment(
    feat: &FeatureMatrix,
    cfg: &SpecAugmentConfig,
    rng: &mut Rng,
) -> Result<FeatureMatrix> {
    let (u, v) = (feat.n_frames(), feat.n_bins());
    if cfg.max_freq_mask >= v {
        return Err(Error::Config(format!(
            "max frequency mask {} must be below the bin count {v}",
            cfg.max_freq_mask
        )));
    }
    if cfg.max_time_mask >= u {
        return Err(Error::Config(format!(
            "max time mask {} must be below the frame count {u}",
            cfg.max_time_mask
        )));
    }
    if cfg.n_freq_masks == 0 || cfg.n_time_masks == 0 {
        return Err(Error::Config("mask counts must be positive".into()));
    }

    let mut out = feat.clone();
    for _ in 0..cfg.n_freq_masks {
        let f = rng.range_inclusive(0, cfg.max_freq_mask);
        let f0 = rng.below(v - f);
        if f > 0 {
            let data = out.data_mut();
            for t in 0..u {
                for b in f0..f0 + f {
                    data[t * v + b] = cfg.mask_value;
                }
            }
        }
    }
    for _ in 0..cfg.n_time_masks {
        let t_len = rng.range_inclusive(0, cfg.max_time_mask);
        let t0 = rng.below(u - t_len);
        if t_len > 0 {
            let data = out.data_mut();
            for t in t0..t0 + t_len {
                for b in 0..v {
                    data[t * v + b] = cfg.mask_value;
                }
            }
        }
    }
    Ok(out)
}

/// Zero one random rectangle. With probability `1 - apply_prob` the input is
/// returned unchanged. Rectangle height/width derive from a sampled area
/// ratio and aspect ratio, clamped to the matrix; degenerate draws are
/// retried up to 10 times before giving up.
pub fn random_erase(
    feat: &FeatureMatrix,
    cfg: &RandomErasingConfig,
    rng: &mut Rng,
) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let (u, v) = (feat.n_frames(), feat.n_bins());
    if u < 2 || v < 2 {
        return Err(Error::degenerate(
            "input",
            format!("random erasing needs at least a 2x2 matrix, got {u}x{v}"),
        ));
    }
    if rng.uniform() >= cfg.apply_prob {
        return Ok(feat.clone());
    }

    for _ in 0..10 {
        let area = rng.range(cfg.area_ratio_min, cfg.area_ratio_max) * (u * v) as f64;
        let aspect = rng.range(cfg.aspect_ratio_min, cfg.aspect_ratio_max);
        let h = (area * aspect).sqrt().round() as usize;
        let w = (area / aspect).sqrt().round() as usize;
        let h = h.min(u);
        let w = w.min(v);
        if h == 0 || w == 0 {
            continue;
        }
        let top = rng.below(u - h + 1);
        let left = rng.below(v - w + 1);
        let mut out = feat.clone();
        let data = out.data_mut();
        for t in top..top + h {
            for b in left..left + w {
                data[t * v + b] = 0.0;
            }
        }
        return Ok(out);
    }
    Ok(feat.clone())
}

/// One resampled copy per factor, in config order.
pub fn speed_perturb_set(clip: &AudioClip, cfg: &SpeedPerturbConfig) -> Result<Vec<AudioClip>> {
    if cfg.factors.is_empty() {
        return Err(Error::Config("speed perturbation needs at least one factor".into()));
    }
    cfg.factors.iter().map(|&f| resample(clip, f)).collect()
}

/// Fit the time axis to `target_frames`: longer inputs are cropped (random
/// start in train mode, centered in eval mode), shorter inputs are tiled
/// whole and truncated.
pub fn crop_or_pad(
    feat: &FeatureMatrix,
    target_frames: usize,
    rng: &mut Rng,
    mode: CropMode,
) -> Result<FeatureMatrix> {
    if target_frames == 0 {
        return Err(Error::Config("target_frames must be positive".into()));
    }
    let (u, v) = (feat.n_frames(), feat.n_bins());
    if u == target_frames {
        return Ok(feat.clone());
    }
    let mut data = Vec::with_capacity(target_frames * v);
    if u > target_frames {
        let start = match mode {
            CropMode::Train => rng.below(u - target_frames + 1),
            CropMode::Eval => (u - target_frames) / 2,
        };
        data.extend_from_slice(&feat.data()[start * v..(start + target_frames) * v]);
    } else {
        for i in 0..target_frames {
            data.extend_from_slice(feat.frame(i % u));
        }
    }
    FeatureMatrix::new(data, target_frames, v, feat.frame_shift_ms())
}
