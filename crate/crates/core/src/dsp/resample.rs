//! Windowed-sinc resampling for speed perturbation.

use crate::error::{Error, Result};

use super::AudioClip;

/// Half-width of the interpolation kernel in input samples.
const HALF_TAPS: usize = 32;

/// Resample by evaluating the signal at positions `i * factor` with a
/// Hann-windowed sinc kernel. Output length is `round(len / factor)`.
/// Factor 1.0 returns the input unchanged. Interpolation overshoot is
/// clamped back into [-1, 1].
pub fn resample(clip: &AudioClip, factor: f64) -> Result<AudioClip> {
    if !(0.5..=2.0).contains(&factor) {
        return Err(Error::Config(format!(
            "resample factor {factor} outside [0.5, 2.0]"
        )));
    }
    if factor == 1.0 {
        return Ok(clip.clone());
    }

    let input = clip.samples();
    let out_len = (input.len() as f64 / factor).round() as usize;
    if out_len == 0 {
        return Err(Error::EmptyInput("resampled clip would be empty".into()));
    }

    // cutoff below Nyquist when compressing time (factor > 1)
    let cutoff = if factor > 1.0 { 1.0 / factor } else { 1.0 };
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * factor;
        let center = pos.floor() as isize;
        let mut acc = 0.0f64;
        for k in (center - HALF_TAPS as isize + 1)..=(center + HALF_TAPS as isize) {
            if k < 0 || k as usize >= input.len() {
                continue;
            }
            let d = pos - k as f64;
            let sinc = if d == 0.0 {
                1.0
            } else {
                let x = std::f64::consts::PI * cutoff * d;
                x.sin() / x
            };
            let window = 0.5 * (1.0 + (std::f64::consts::PI * d / HALF_TAPS as f64).cos());
            acc += input[k as usize] as f64 * cutoff * sinc * window;
        }
        out.push(acc.clamp(-1.0, 1.0) as f32);
    }
    AudioClip::new(out, clip.sample_rate_hz())
}
