//! Audio ingestion and log mel-filterbank feature extraction.
//!
//! Everything in this module is a pure function over immutable inputs: no
//! RNG, no global state, safe to call from any number of threads.

mod fbank;
mod feature_io;
mod resample;
mod wav;

pub use fbank::{log_fbank, mel_filterbank, MelFilter};
pub use resample::resample;
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Widest feature row the toolkit will produce (guards frame stacking).
pub const MAX_FEATURE_WIDTH: usize = 16384;

/// Mono PCM audio, amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("audio clip has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        for (i, &s) in samples.iter().enumerate() {
            if !s.is_finite() || s.abs() > 1.0 {
                return Err(Error::Data(format!(
                    "sample {i} out of range or non-finite: {s}"
                )));
            }
        }
        Ok(AudioClip {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Log-Fbank extraction parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FbankConfig {
    pub window_ms: f64,
    pub shift_ms: f64,
    pub n_mels: usize,
    pub fft_size: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
    /// Pre-emphasis coefficient; 0.0 disables the filter.
    pub preemphasis: f64,
}

impl FbankConfig {
    /// Short-window configuration for one-second chunk classification.
    pub fn msc_default() -> Self {
        FbankConfig {
            window_ms: 25.0,
            shift_ms: 10.0,
            n_mels: 64,
            fft_size: 512,
            fmin_hz: 20.0,
            fmax_hz: 7600.0,
            log_floor: 1e-10,
            preemphasis: 0.97,
        }
    }

    /// Long-window configuration for breath regression (60 ms window,
    /// 40 ms shift, so four minutes of speech give 5999 raw frames).
    pub fn bsc_default() -> Self {
        FbankConfig {
            window_ms: 60.0,
            shift_ms: 40.0,
            n_mels: 64,
            fft_size: 1024,
            fmin_hz: 20.0,
            fmax_hz: 7600.0,
            log_floor: 1e-10,
            preemphasis: 0.97,
        }
    }

    pub fn window_samples(&self, sample_rate_hz: u32) -> usize {
        (self.window_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn shift_samples(&self, sample_rate_hz: u32) -> usize {
        (self.shift_ms * sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        if self.window_ms <= 0.0 || self.shift_ms <= 0.0 {
            return Err(Error::Config("window and shift must be positive".into()));
        }
        if self.window_ms < self.shift_ms {
            return Err(Error::Config(format!(
                "window ({} ms) must be at least the shift ({} ms)",
                self.window_ms, self.shift_ms
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be positive".into()));
        }
        if self.fft_size == 0 || !self.fft_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "fft_size must be a power of two, got {}",
                self.fft_size
            )));
        }
        let win = self.window_samples(sample_rate_hz);
        if self.fft_size < win {
            return Err(Error::Config(format!(
                "fft_size {} smaller than window length {} samples",
                self.fft_size, win
            )));
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        if !(0.0 <= self.fmin_hz && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return Err(Error::Config(format!(
                "mel band [{}, {}] Hz invalid for Nyquist {} Hz",
                self.fmin_hz, self.fmax_hz, nyquist
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Time x mel-bin grid of log filterbank energies, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_frames: usize,
    n_bins: usize,
    frame_shift_ms: f64,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, n_frames: usize, n_bins: usize, frame_shift_ms: f64) -> Result<Self> {
        if n_frames == 0 || n_bins == 0 {
            return Err(Error::EmptyInput(format!(
                "feature matrix must be at least 1x1, got {n_frames}x{n_bins}"
            )));
        }
        if data.len() != n_frames * n_bins {
            return Err(Error::shape(
                "FeatureMatrix::new",
                format!("{} values", n_frames * n_bins),
                format!("{}", data.len()),
            ));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericFault {
                context: "FeatureMatrix::new".into(),
                detail: format!("non-finite value at flat index {bad}"),
            });
        }
        Ok(FeatureMatrix {
            data,
            n_frames,
            n_bins,
            frame_shift_ms,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn frame_shift_ms(&self) -> f64 {
        self.frame_shift_ms
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, frame: usize, bin: usize) -> f64 {
        self.data[frame * self.n_bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.n_bins..(frame + 1) * self.n_bins]
    }
}

/// Normalize each bin to zero mean and unit variance over the time axis
/// (population convention). Bins whose values are constant become all zeros.
pub fn mean_var_normalize(feat: &FeatureMatrix) -> Result<FeatureMatrix> {
    let (u, v) = (feat.n_frames, feat.n_bins);
    if u < 2 {
        return Err(Error::degenerate(
            "input",
            "mean/variance normalization needs at least 2 frames",
        ));
    }
    let mut out = vec![0.0f64; u * v];
    for b in 0..v {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for t in 0..u {
            let x = feat.data[t * v + b];
            sum += x;
            lo = lo.min(x);
            hi = hi.max(x);
        }
        if lo == hi {
            continue; // constant bin stays zero
        }
        let mean = sum / u as f64;
        let mut var = 0.0;
        for t in 0..u {
            let d = feat.data[t * v + b] - mean;
            var += d * d;
        }
        var /= u as f64;
        let inv_std = 1.0 / var.sqrt();
        for t in 0..u {
            out[t * v + b] = (feat.data[t * v + b] - mean) * inv_std;
        }
    }
    FeatureMatrix::new(out, u, v, feat.frame_shift_ms)
}

/// Concatenate groups of `k` consecutive frames with stride `hop`;
/// trailing partial groups are dropped.
pub fn stack_frames(feat: &FeatureMatrix, k: usize, hop: usize) -> Result<FeatureMatrix> {
    if k == 0 || hop == 0 {
        return Err(Error::Config("stack_frames needs k >= 1 and hop >= 1".into()));
    }
    let out_bins = k * feat.n_bins;
    if out_bins > MAX_FEATURE_WIDTH {
        return Err(Error::Config(format!(
            "stacked width {out_bins} exceeds maximum feature width {MAX_FEATURE_WIDTH}"
        )));
    }
    if feat.n_frames < k {
        return Err(Error::EmptyInput(format!(
            "cannot stack {k} frames out of {}",
            feat.n_frames
        )));
    }
    let out_frames = (feat.n_frames - k) / hop + 1;
    let mut data = Vec::with_capacity(out_frames * out_bins);
    for i in 0..out_frames {
        for j in 0..k {
            data.extend_from_slice(feat.frame(i * hop + j));
        }
    }
    FeatureMatrix::new(data, out_frames, out_bins, feat.frame_shift_ms * hop as f64)
}

pub use feature_io::{read_features, write_features};
