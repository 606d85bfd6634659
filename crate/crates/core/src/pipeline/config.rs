//! Pipeline configuration. Flat UTF-8 `key = value` text with dotted
//! section prefixes; `#` starts a comment; unknown keys are errors. The
//! canonical serialization doubles as the checkpoint architecture
//! descriptor, so a checkpoint always carries the exact configuration it
//! was trained with.

use std::path::Path;

use crate::augment::{RandomErasingConfig, SpecAugmentConfig};
use crate::dsp::FbankConfig;
use crate::error::{Error, Result};
use crate::nnet::{AuxFusion, BiLstmConfig, OptimizerConfig, OptimizerKind, ResNetEmbedConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BscFrontend {
    /// Long-window Fbank straight from the dsp config.
    Fbank,
    /// Short-shift Fbank (25 ms window, 10 ms shift) with four frames
    /// stacked at hop four.
    Stacked,
}

impl BscFrontend {
    pub fn as_str(&self) -> &'static str {
        match self {
            BscFrontend::Fbank => "fbank",
            BscFrontend::Stacked => "stacked",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fbank" => Ok(BscFrontend::Fbank),
            "stacked" => Ok(BscFrontend::Stacked),
            other => Err(Error::Config(format!("unknown BSC frontend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    /// None = scale-adaptive 1 / (dim * var).
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_passes: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            gamma: None,
            tol: 1e-3,
            max_passes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    // feature extraction
    pub dsp: FbankConfig,
    // augmentation
    pub speed_enabled: bool,
    pub speed_factors: Vec<f64>,
    pub specaugment_enabled: bool,
    pub specaugment: SpecAugmentConfig,
    pub erasing_enabled: bool,
    pub erasing: RandomErasingConfig,
    pub target_frames: usize,
    // mask model
    pub resnet: ResNetEmbedConfig,
    // auxiliary (gender/speaker) extractor for fusion systems
    pub aux_kind: String, // "gender" or "speaker"
    pub aux_stage_channels: Vec<usize>,
    pub aux_blocks_per_stage: Vec<usize>,
    pub aux_epochs: usize,
    // breath model
    pub bilstm: BiLstmConfig,
    pub bsc_frontend: BscFrontend,
    pub bsc_target_frames: usize,
    // optimization
    pub optim: OptimizerConfig,
    // back-end
    pub svm: SvmConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            dsp: FbankConfig::msc_default(),
            speed_enabled: true,
            speed_factors: vec![0.9, 1.0, 1.1],
            specaugment_enabled: true,
            specaugment: SpecAugmentConfig::default(),
            erasing_enabled: false,
            erasing: RandomErasingConfig::default(),
            target_frames: 98,
            resnet: ResNetEmbedConfig::default(),
            aux_kind: "gender".into(),
            aux_stage_channels: vec![8, 16],
            aux_blocks_per_stage: vec![1, 1],
            aux_epochs: 2,
            bilstm: BiLstmConfig::default(),
            bsc_frontend: BscFrontend::Fbank,
            bsc_target_frames: 6000,
            optim: OptimizerConfig::sgd_default(),
            svm: SvmConfig::default(),
        }
    }
}

fn fmt_list<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_list_usize(v: &str, key: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{key}: `{p}` is not an integer")))
        })
        .collect()
}

fn parse_list_f64(v: &str, key: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{key}: `{p}` is not a number")))
        })
        .collect()
}

fn parse_f64(v: &str, key: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: `{v}` is not a number")))
}

fn parse_usize(v: &str, key: &str) -> Result<usize> {
    v.parse::<usize>()
        .map_err(|_| Error::Config(format!("{key}: `{v}` is not an integer")))
}

fn parse_bool(v: &str, key: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: `{v}` is not true/false"))),
    }
}

impl PipelineConfig {
    /// Canonical text form; also the checkpoint architecture descriptor.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("dsp.window_ms = {}\n", self.dsp.window_ms));
        s.push_str(&format!("dsp.shift_ms = {}\n", self.dsp.shift_ms));
        s.push_str(&format!("dsp.n_mels = {}\n", self.dsp.n_mels));
        s.push_str(&format!("dsp.fft_size = {}\n", self.dsp.fft_size));
        s.push_str(&format!("dsp.fmin_hz = {}\n", self.dsp.fmin_hz));
        s.push_str(&format!("dsp.fmax_hz = {}\n", self.dsp.fmax_hz));
        s.push_str(&format!("dsp.log_floor = {}\n", self.dsp.log_floor));
        s.push_str(&format!("dsp.preemphasis = {}\n", self.dsp.preemphasis));
        s.push_str(&format!("augment.speed.enabled = {}\n", self.speed_enabled));
        s.push_str(&format!(
            "augment.speed.factors = {}\n",
            fmt_list(&self.speed_factors)
        ));
        s.push_str(&format!(
            "augment.specaugment.enabled = {}\n",
            self.specaugment_enabled
        ));
        s.push_str(&format!(
            "augment.specaugment.max_freq_mask = {}\n",
            self.specaugment.max_freq_mask
        ));
        s.push_str(&format!(
            "augment.specaugment.max_time_mask = {}\n",
            self.specaugment.max_time_mask
        ));
        s.push_str(&format!(
            "augment.specaugment.n_freq_masks = {}\n",
            self.specaugment.n_freq_masks
        ));
        s.push_str(&format!(
            "augment.specaugment.n_time_masks = {}\n",
            self.specaugment.n_time_masks
        ));
        s.push_str(&format!(
            "augment.specaugment.mask_value = {}\n",
            self.specaugment.mask_value
        ));
        s.push_str(&format!("augment.erasing.enabled = {}\n", self.erasing_enabled));
        s.push_str(&format!(
            "augment.erasing.apply_prob = {}\n",
            self.erasing.apply_prob
        ));
        s.push_str(&format!(
            "augment.erasing.area_min = {}\n",
            self.erasing.area_ratio_min
        ));
        s.push_str(&format!(
            "augment.erasing.area_max = {}\n",
            self.erasing.area_ratio_max
        ));
        s.push_str(&format!(
            "augment.erasing.aspect_min = {}\n",
            self.erasing.aspect_ratio_min
        ));
        s.push_str(&format!(
            "augment.erasing.aspect_max = {}\n",
            self.erasing.aspect_ratio_max
        ));
        s.push_str(&format!("pipeline.target_frames = {}\n", self.target_frames));
        s.push_str(&format!(
            "model.resnet.stage_channels = {}\n",
            fmt_list(&self.resnet.stage_channels)
        ));
        s.push_str(&format!(
            "model.resnet.blocks_per_stage = {}\n",
            fmt_list(&self.resnet.blocks_per_stage)
        ));
        s.push_str(&format!("model.resnet.embed_dim = {}\n", self.resnet.embed_dim));
        s.push_str(&format!("model.resnet.n_classes = {}\n", self.resnet.n_classes));
        s.push_str(&format!(
            "model.resnet.aux_fusion = {}\n",
            self.resnet.aux_fusion.as_str()
        ));
        s.push_str(&format!("model.resnet.aux_dim = {}\n", self.resnet.aux_dim));
        s.push_str(&format!("aux.kind = {}\n", self.aux_kind));
        s.push_str(&format!(
            "aux.stage_channels = {}\n",
            fmt_list(&self.aux_stage_channels)
        ));
        s.push_str(&format!(
            "aux.blocks_per_stage = {}\n",
            fmt_list(&self.aux_blocks_per_stage)
        ));
        s.push_str(&format!("aux.epochs = {}\n", self.aux_epochs));
        s.push_str(&format!("model.bilstm.n_layers = {}\n", self.bilstm.n_layers));
        s.push_str(&format!(
            "model.bilstm.hidden = {}\n",
            self.bilstm.hidden_per_direction
        ));
        s.push_str(&format!("model.bilstm.dropout = {}\n", self.bilstm.dropout));
        s.push_str(&format!("model.bilstm.out_dim = {}\n", self.bilstm.out_dim));
        s.push_str(&format!("bsc.frontend = {}\n", self.bsc_frontend.as_str()));
        s.push_str(&format!("bsc.target_frames = {}\n", self.bsc_target_frames));
        s.push_str(&format!("optim.kind = {}\n", self.optim.kind.as_str()));
        s.push_str(&format!("optim.lr = {}\n", self.optim.lr));
        s.push_str(&format!("optim.momentum = {}\n", self.optim.momentum));
        s.push_str(&format!("optim.beta1 = {}\n", self.optim.beta1));
        s.push_str(&format!("optim.beta2 = {}\n", self.optim.beta2));
        s.push_str(&format!("optim.eps = {}\n", self.optim.eps));
        s.push_str(&format!(
            "optim.plateau_patience = {}\n",
            self.optim.plateau_patience
        ));
        s.push_str(&format!(
            "optim.plateau_factor = {}\n",
            self.optim.plateau_factor
        ));
        s.push_str(&format!("optim.epochs = {}\n", self.optim.epochs));
        s.push_str(&format!("optim.batch_size = {}\n", self.optim.batch_size));
        s.push_str(&format!("svm.c = {}\n", self.svm.c));
        match self.svm.gamma {
            Some(g) => s.push_str(&format!("svm.gamma = {g}\n")),
            None => s.push_str("svm.gamma = scale\n"),
        }
        s.push_str(&format!("svm.tol = {}\n", self.svm.tol));
        s.push_str(&format!("svm.max_passes = {}\n", self.svm.max_passes));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", no + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("seed: `{value}` is not an integer")))?
            }
            "dsp.window_ms" => self.dsp.window_ms = parse_f64(value, key)?,
            "dsp.shift_ms" => self.dsp.shift_ms = parse_f64(value, key)?,
            "dsp.n_mels" => self.dsp.n_mels = parse_usize(value, key)?,
            "dsp.fft_size" => self.dsp.fft_size = parse_usize(value, key)?,
            "dsp.fmin_hz" => self.dsp.fmin_hz = parse_f64(value, key)?,
            "dsp.fmax_hz" => self.dsp.fmax_hz = parse_f64(value, key)?,
            "dsp.log_floor" => self.dsp.log_floor = parse_f64(value, key)?,
            "dsp.preemphasis" => self.dsp.preemphasis = parse_f64(value, key)?,
            "augment.speed.enabled" => self.speed_enabled = parse_bool(value, key)?,
            "augment.speed.factors" => self.speed_factors = parse_list_f64(value, key)?,
            "augment.specaugment.enabled" => self.specaugment_enabled = parse_bool(value, key)?,
            "augment.specaugment.max_freq_mask" => {
                self.specaugment.max_freq_mask = parse_usize(value, key)?
            }
            "augment.specaugment.max_time_mask" => {
                self.specaugment.max_time_mask = parse_usize(value, key)?
            }
            "augment.specaugment.n_freq_masks" => {
                self.specaugment.n_freq_masks = parse_usize(value, key)?
            }
            "augment.specaugment.n_time_masks" => {
                self.specaugment.n_time_masks = parse_usize(value, key)?
            }
            "augment.specaugment.mask_value" => {
                self.specaugment.mask_value = parse_f64(value, key)?
            }
            "augment.erasing.enabled" => self.erasing_enabled = parse_bool(value, key)?,
            "augment.erasing.apply_prob" => self.erasing.apply_prob = parse_f64(value, key)?,
            "augment.erasing.area_min" => self.erasing.area_ratio_min = parse_f64(value, key)?,
            "augment.erasing.area_max" => self.erasing.area_ratio_max = parse_f64(value, key)?,
            "augment.erasing.aspect_min" => self.erasing.aspect_ratio_min = parse_f64(value, key)?,
            "augment.erasing.aspect_max" => self.erasing.aspect_ratio_max = parse_f64(value, key)?,
            "pipeline.target_frames" => self.target_frames = parse_usize(value, key)?,
            "model.resnet.stage_channels" => {
                self.resnet.stage_channels = parse_list_usize(value, key)?
            }
            "model.resnet.blocks_per_stage" => {
                self.resnet.blocks_per_stage = parse_list_usize(value, key)?
            }
            "model.resnet.embed_dim" => self.resnet.embed_dim = parse_usize(value, key)?,
            "model.resnet.n_classes" => self.resnet.n_classes = parse_usize(value, key)?,
            "model.resnet.aux_fusion" => self.resnet.aux_fusion = AuxFusion::parse(value)?,
            "model.resnet.aux_dim" => self.resnet.aux_dim = parse_usize(value, key)?,
            "aux.kind" => {
                if value != "gender" && value != "speaker" {
                    return Err(Error::Config(format!(
                        "aux.kind must be gender or speaker, got `{value}`"
                    )));
                }
                self.aux_kind = value.to_string();
            }
            "aux.stage_channels" => self.aux_stage_channels = parse_list_usize(value, key)?,
            "aux.blocks_per_stage" => self.aux_blocks_per_stage = parse_list_usize(value, key)?,
            "aux.epochs" => self.aux_epochs = parse_usize(value, key)?,
            "model.bilstm.n_layers" => self.bilstm.n_layers = parse_usize(value, key)?,
            "model.bilstm.hidden" => self.bilstm.hidden_per_direction = parse_usize(value, key)?,
            "model.bilstm.dropout" => self.bilstm.dropout = parse_f64(value, key)?,
            "model.bilstm.out_dim" => self.bilstm.out_dim = parse_usize(value, key)?,
            "bsc.frontend" => self.bsc_frontend = BscFrontend::parse(value)?,
            "bsc.target_frames" => self.bsc_target_frames = parse_usize(value, key)?,
            "optim.kind" => self.optim.kind = OptimizerKind::parse(value)?,
            "optim.lr" => self.optim.lr = parse_f64(value, key)?,
            "optim.momentum" => self.optim.momentum = parse_f64(value, key)?,
            "optim.beta1" => self.optim.beta1 = parse_f64(value, key)?,
            "optim.beta2" => self.optim.beta2 = parse_f64(value, key)?,
            "optim.eps" => self.optim.eps = parse_f64(value, key)?,
            "optim.plateau_patience" => self.optim.plateau_patience = parse_usize(value, key)?,
            "optim.plateau_factor" => self.optim.plateau_factor = parse_f64(value, key)?,
            "optim.epochs" => self.optim.epochs = parse_usize(value, key)?,
            "optim.batch_size" => self.optim.batch_size = parse_usize(value, key)?,
            "svm.c" => self.svm.c = parse_f64(value, key)?,
            "svm.gamma" => {
                self.svm.gamma = if value == "scale" {
                    None
                } else {
                    Some(parse_f64(value, key)?)
                }
            }
            "svm.tol" => self.svm.tol = parse_f64(value, key)?,
            "svm.max_passes" => self.svm.max_passes = parse_usize(value, key)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Cross-field consistency. Feature-level checks that need the sample
    /// rate run when clips are actually loaded.
    pub fn validate(&self) -> Result<()> {
        self.resnet.validate()?;
        self.bilstm.validate()?;
        self.optim.validate()?;
        self.erasing.validate()?;
        if self.speed_factors.is_empty() {
            return Err(Error::Config("augment.speed.factors must not be empty".into()));
        }
        if self.speed_enabled && !self.speed_factors.contains(&1.0) {
            return Err(Error::Config(
                "speed factors must include 1.0 when pooling for training".into(),
            ));
        }
        if self.target_frames == 0 || self.bsc_target_frames == 0 {
            return Err(Error::Config("target frame counts must be positive".into()));
        }
        if self.resnet.aux_fusion != AuxFusion::None {
            if self.aux_stage_channels.len() != self.aux_blocks_per_stage.len()
                || self.aux_stage_channels.is_empty()
            {
                return Err(Error::Config(
                    "aux stage lists must be non-empty and the same length".into(),
                ));
            }
            if self.aux_epochs == 0 {
                return Err(Error::Config("aux.epochs must be positive".into()));
            }
        }
        if self.svm.c <= 0.0 || self.svm.tol <= 0.0 || self.svm.max_passes == 0 {
            return Err(Error::Config("svm.c, svm.tol and svm.max_passes must be positive".into()));
        }
        if let Some(g) = self.svm.gamma {
            if g <= 0.0 {
                return Err(Error::Config("svm.gamma must be positive".into()));
            }
        }
        Ok(())
    }

    /// Configuration of the auxiliary gender/speaker classifier. Its
    /// embedding width equals the fusion width `aux_dim`; `n_classes` is
    /// decided by the caller from the manifest.
    pub fn aux_model_config(&self, n_classes: usize) -> ResNetEmbedConfig {
        ResNetEmbedConfig {
            stage_channels: self.aux_stage_channels.clone(),
            blocks_per_stage: self.aux_blocks_per_stage.clone(),
            embed_dim: self.resnet.aux_dim,
            n_classes,
            aux_fusion: AuxFusion::None,
            aux_dim: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_identity() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_text();
        let parsed = PipelineConfig::from_text(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = PipelineConfig::from_text("dsp.bogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("dsp.bogus"));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = PipelineConfig::from_text("# a comment\n\nseed = 7 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn scale_gamma_parses_to_none() {
        let cfg = PipelineConfig::from_text("svm.gamma = scale\n").unwrap();
        assert_eq!(cfg.svm.gamma, None);
        let cfg = PipelineConfig::from_text("svm.gamma = 0.25\n").unwrap();
        assert_eq!(cfg.svm.gamma, Some(0.25));
    }

    #[test]
    fn cross_field_checks_fire() {
        let mut cfg = PipelineConfig::default();
        cfg.speed_factors = vec![0.9, 1.1];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
