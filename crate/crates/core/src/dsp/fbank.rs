//! Log mel-filterbank energies.
//!
//! Per frame: pre-emphasis, Hamming window, magnitude-squared FFT,
//! triangular mel filterbank on the HTK mel scale (2595 log10(1 + f/700)),
//! natural log with a configurable floor.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

use super::{AudioClip, FbankConfig, FeatureMatrix};

/// One triangular filter: contiguous support starting at FFT bin `start`.
#[derive(Debug, Clone)]
pub struct MelFilter {
    pub start: usize,
    pub weights: Vec<f64>,
    pub center_hz: f64,
}

impl MelFilter {
    pub fn weight_at_bin(&self, bin: usize) -> f64 {
        if bin >= self.start && bin < self.start + self.weights.len() {
            self.weights[bin - self.start]
        } else {
            0.0
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Build the triangular filterbank. Filter `m` rises from mel point `m` to
/// `m+1` and falls to `m+2`; weights are evaluated at the continuous
/// frequency of each FFT bin, so supports are contiguous index ranges.
pub fn mel_filterbank(cfg: &FbankConfig, sample_rate_hz: u32) -> Result<Vec<MelFilter>> {
    cfg.validate(sample_rate_hz)?;
    let n_bins = cfg.fft_size / 2 + 1;
    let hz_per_bin = sample_rate_hz as f64 / cfg.fft_size as f64;

    let mel_lo = hz_to_mel(cfg.fmin_hz);
    let mel_hi = hz_to_mel(cfg.fmax_hz);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();

    let mut filters = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut start = None;
        let mut weights = Vec::new();
        for k in 0..n_bins {
            let f = k as f64 * hz_per_bin;
            let w = if f > left && f < center {
                (f - left) / (center - left)
            } else if (f - center).abs() < f64::EPSILON * center.max(1.0) {
                1.0
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            if w > 0.0 {
                if start.is_none() {
                    start = Some(k);
                }
                weights.push(w);
            } else if start.is_some() {
                break;
            }
        }
        let start = start.ok_or_else(|| {
            Error::Config(format!(
                "mel filter {m} has empty support; increase fft_size or widen the band"
            ))
        })?;
        filters.push(MelFilter {
            start,
            weights,
            center_hz: center,
        });
    }
    Ok(filters)
}

/// Extract log-Fbank features. Frame count is
/// floor((len - window) / shift) + 1; clips shorter than one window are an
/// error.
pub fn log_fbank(clip: &AudioClip, cfg: &FbankConfig) -> Result<FeatureMatrix> {
    cfg.validate(clip.sample_rate_hz())?;
    let win = cfg.window_samples(clip.sample_rate_hz());
    let shift = cfg.shift_samples(clip.sample_rate_hz());
    if clip.len() < win {
        return Err(Error::EmptyInput(format!(
            "clip of {} samples is shorter than one {} sample window",
            clip.len(),
            win
        )));
    }
    let n_frames = (clip.len() - win) / shift + 1;

    // pre-emphasis over the whole signal; first sample passes through
    let mut signal: Vec<f64> = Vec::with_capacity(clip.len());
    signal.push(clip.samples()[0] as f64);
    for i in 1..clip.len() {
        signal.push(clip.samples()[i] as f64 - cfg.preemphasis * clip.samples()[i - 1] as f64);
    }

    let hamming: Vec<f64> = (0..win)
        .map(|n| 0.54 - 0.46 * (std::f64::consts::TAU * n as f64 / (win - 1) as f64).cos())
        .collect();

    let filters = mel_filterbank(cfg, clip.sample_rate_hz())?;
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);

    let n_spec = cfg.fft_size / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut power = vec![0.0f64; n_spec];
    let mut data = Vec::with_capacity(n_frames * cfg.n_mels);

    for t in 0..n_frames {
        let offset = t * shift;
        for i in 0..win {
            buf[i] = Complex::new(signal[offset + i] * hamming[i], 0.0);
        }
        for b in buf.iter_mut().skip(win) {
            *b = Complex::new(0.0, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for filter in &filters {
            let mut energy = 0.0;
            for (i, &w) in filter.weights.iter().enumerate() {
                energy += w * power[filter.start + i];
            }
            data.push(energy.max(cfg.log_floor).ln());
        }
    }

    FeatureMatrix::new(data, n_frames, cfg.n_mels, cfg.shift_ms)
}
