//! Synthetic corpora. The restricted challenge recordings cannot ship, so
//! the toolkit generates stand-in data with the same shape: one-second
//! labeled chunks for mask detection and four-minute clips with aligned
//! respiratory-belt traces for breath monitoring. Generation is a pure
//! function of the synthesis parameters (including the seed), independent of the output
//! location, so regeneration is byte-identical.

use std::f64::consts::TAU;
use std::path::Path;

use crate::dsp::{write_wav, AudioClip};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::belt_io::write_belt;
use super::manifest::{Gender, Manifest, ManifestRecord, MaskLabel, Split};

/// Belt traces are sampled at the 40 ms feature shift.
pub const BELT_FRAME_RATE_HZ: f64 = 25.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub clips_per_speaker: usize,
    pub sample_rate_hz: u32,
    /// Low-pass shelf depth applied to the masked class.
    pub mask_attenuation_db: f64,
    pub mask_cutoff_hz: f64,
    /// Breathing oscillation band in Hz.
    pub breath_band_hz: (f64, f64),
    /// Additive white-noise amplitude.
    pub noise_floor: f64,
    pub mask_clip_secs: f64,
    pub breath_clip_secs: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_speakers: 8,
            clips_per_speaker: 50,
            sample_rate_hz: 16000,
            mask_attenuation_db: 12.0,
            mask_cutoff_hz: 2000.0,
            breath_band_hz: (0.2, 0.4),
            noise_floor: 0.002,
            mask_clip_secs: 1.0,
            breath_clip_secs: 240.0,
            seed: 42,
        }
    }
}

impl SynthSpec {
    /// Parse `key = value` text with `synth.` keys; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = SynthSpec::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", no + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad_num = || Error::Config(format!("{key}: `{value}` is not a number"));
            match key {
                "synth.n_speakers" => spec.n_speakers = value.parse().map_err(|_| bad_num())?,
                "synth.clips_per_speaker" => {
                    spec.clips_per_speaker = value.parse().map_err(|_| bad_num())?
                }
                "synth.sample_rate" => spec.sample_rate_hz = value.parse().map_err(|_| bad_num())?,
                "synth.mask_attenuation_db" => {
                    spec.mask_attenuation_db = value.parse().map_err(|_| bad_num())?
                }
                "synth.mask_cutoff_hz" => {
                    spec.mask_cutoff_hz = value.parse().map_err(|_| bad_num())?
                }
                "synth.breath_band_lo" => {
                    spec.breath_band_hz.0 = value.parse().map_err(|_| bad_num())?
                }
                "synth.breath_band_hi" => {
                    spec.breath_band_hz.1 = value.parse().map_err(|_| bad_num())?
                }
                "synth.noise_floor" => spec.noise_floor = value.parse().map_err(|_| bad_num())?,
                "synth.mask_clip_secs" => {
                    spec.mask_clip_secs = value.parse().map_err(|_| bad_num())?
                }
                "synth.breath_clip_secs" => {
                    spec.breath_clip_secs = value.parse().map_err(|_| bad_num())?
                }
                "synth.seed" => spec.seed = value.parse().map_err(|_| bad_num())?,
                other => return Err(Error::Config(format!("unknown synth key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers < 3 {
            return Err(Error::Config(
                "need at least 3 speakers for non-empty train/devel/test splits".into(),
            ));
        }
        if self.clips_per_speaker == 0 {
            return Err(Error::Config("clips_per_speaker must be positive".into()));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if self.mask_attenuation_db <= 0.0 {
            return Err(Error::Config("mask attenuation must be positive dB".into()));
        }
        if self.mask_cutoff_hz <= 0.0 || self.mask_cutoff_hz >= self.sample_rate_hz as f64 / 2.0 {
            return Err(Error::Config("mask cutoff must lie below Nyquist".into()));
        }
        let (lo, hi) = self.breath_band_hz;
        if !(0.1 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "breath band ({lo}, {hi}) must lie within (0.1, 1.0) Hz"
            )));
        }
        if !(0.0..0.5).contains(&self.noise_floor) {
            return Err(Error::Config("noise floor must be in [0, 0.5)".into()));
        }
        if self.mask_clip_secs <= 0.0 || self.breath_clip_secs <= 0.0 {
            return Err(Error::Config("clip durations must be positive".into()));
        }
        Ok(())
    }

    fn split_for(&self, speaker: usize) -> Split {
        let n_devel = (self.n_speakers / 4).max(1);
        let n_test = (self.n_speakers / 4).max(1);
        let n_train = self.n_speakers - n_devel - n_test;
        if speaker < n_train {
            Split::Train
        } else if speaker < n_train + n_devel {
            Split::Devel
        } else {
            Split::Test
        }
    }
}

struct SpeakerVoice {
    f0: f64,
    gender: Gender,
    resonances: Vec<(f64, f64, f64)>, // center, width, gain
}

fn speaker_voice(spec: &SynthSpec, idx: usize, rng: &mut Rng) -> SpeakerVoice {
    let gender = if idx % 2 == 0 { Gender::F } else { Gender::M };
    let f0 = match gender {
        Gender::F => rng.range(180.0, 240.0),
        _ => rng.range(100.0, 150.0),
    };
    let bands: [(f64, f64); 4] = [(300.0, 800.0), (900.0, 1800.0), (2200.0, 3000.0), (3500.0, 6500.0)];
    let resonances = bands
        .iter()
        .map(|&(lo, hi)| {
            (
                rng.range(lo, hi.min(spec.sample_rate_hz as f64 / 2.0 - 200.0)),
                rng.range(120.0, 280.0),
                rng.range(0.5, 1.0),
            )
        })
        .collect();
    SpeakerVoice { f0, gender, resonances }
}

fn resonance_gain(voice: &SpeakerVoice, f: f64) -> f64 {
    let mut g = 0.15;
    for &(c, w, a) in &voice.resonances {
        let d = (f - c) / w;
        g += a * (-0.5 * d * d).exp();
    }
    g
}

/// Additively synthesize one harmonic clip via rotating phasors.
/// `shelf_gain[h]` scales each harmonic after peak normalization.
struct HarmonicClip {
    freqs: Vec<f64>,
    amps: Vec<f64>,
    phases: Vec<f64>,
    am_freq: f64,
    am_phase: f64,
    am_depth: f64,
}

impl HarmonicClip {
    fn draw(voice: &SpeakerVoice, max_hz: f64, rng: &mut Rng) -> Self {
        let f0 = voice.f0 * (1.0 + 0.04 * (rng.uniform() - 0.5));
        let n_harm = (max_hz / f0).floor() as usize;
        let mut freqs = Vec::with_capacity(n_harm);
        let mut amps = Vec::with_capacity(n_harm);
        let mut phases = Vec::with_capacity(n_harm);
        for h in 1..=n_harm {
            let f = f0 * h as f64;
            freqs.push(f);
            amps.push(resonance_gain(voice, f) / (h as f64).sqrt());
            phases.push(rng.range(0.0, TAU));
        }
        HarmonicClip {
            freqs,
            amps,
            phases,
            am_freq: rng.range(2.5, 5.0),
            am_phase: rng.range(0.0, TAU),
            am_depth: 0.35,
        }
    }

    fn render(&self, n: usize, sr: f64, gains: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0f64; n];
        for (h, (&f, (&a, &p))) in self
            .freqs
            .iter()
            .zip(self.amps.iter().zip(self.phases.iter()))
            .enumerate()
        {
            let amp = a * gains[h];
            if amp == 0.0 {
                continue;
            }
            let step = TAU * f / sr;
            let (rot_re, rot_im) = (step.cos(), step.sin());
            let (mut re, mut im) = (p.cos(), p.sin());
            for o in out.iter_mut() {
                *o += amp * im;
                let nre = re * rot_re - im * rot_im;
                im = re * rot_im + im * rot_re;
                re = nre;
            }
        }
        // syllable-like amplitude modulation
        for (i, o) in out.iter_mut().enumerate() {
            let t = i as f64 / sr;
            *o *= 1.0 + self.am_depth * (TAU * self.am_freq * t + self.am_phase).sin();
        }
        out
    }
}

fn finalize_samples(raw: &[f64], scale: f64, noise_floor: f64, rng: &mut Rng) -> Vec<f32> {
    raw.iter()
        .map(|&v| {
            let noisy = v * scale + noise_floor * (2.0 * rng.uniform() - 1.0);
            noisy.clamp(-1.0, 1.0) as f32
        })
        .collect()
}

/// Generate the mask-detection corpus: per speaker, balanced clear/masked
/// one-second clips from a speaker-specific harmonic voice; the masked
/// class gets a low-pass shelf above the cutoff emulating transmission
/// loss. Splits are speaker-disjoint. Returns the saved manifest.
pub fn synth_mask_corpus(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    if spec.clips_per_speaker < 2 || spec.clips_per_speaker % 2 != 0 {
        return Err(Error::Config(
            "mask corpus needs an even clips_per_speaker of at least 2 for balanced labels".into(),
        ));
    }
    let out_dir = out_dir.as_ref();
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|source| Error::Io {
        path: audio_dir.clone(),
        source,
    })?;

    let sr = spec.sample_rate_hz as f64;
    let n = (spec.mask_clip_secs * sr).round() as usize;
    let max_hz = (sr / 2.0 - 200.0).min(7600.0);
    let shelf = 10f64.powf(-spec.mask_attenuation_db / 20.0);
    let master = Rng::new(spec.seed);

    let mut records = Vec::new();
    for s in 0..spec.n_speakers {
        let mut rng = master.split(s as u64);
        let voice = speaker_voice(spec, s, &mut rng);
        for k in 0..spec.clips_per_speaker {
            let label = if k % 2 == 0 { MaskLabel::Clear } else { MaskLabel::Mask };
            let clip_spec = HarmonicClip::draw(&voice, max_hz, &mut rng);
            let unity = vec![1.0f64; clip_spec.freqs.len()];
            let plain = clip_spec.render(n, sr, &unity);
            let peak = plain.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
            let scale = 0.45 / peak;
            let raw = if label == MaskLabel::Mask {
                let gains: Vec<f64> = clip_spec
                    .freqs
                    .iter()
                    .map(|&f| if f > spec.mask_cutoff_hz { shelf } else { 1.0 })
                    .collect();
                clip_spec.render(n, sr, &gains)
            } else {
                plain
            };
            let samples = finalize_samples(&raw, scale, spec.noise_floor, &mut rng);
            let rel = format!("audio/spk{s:02}_{k:03}_{}.wav", label.as_str());
            let clip = AudioClip::new(samples, spec.sample_rate_hz)?;
            write_wav(out_dir.join(&rel), &clip)?;
            records.push(ManifestRecord {
                path: rel,
                split: spec.split_for(s),
                label: Some(label),
                speaker: format!("spk{s:02}"),
                gender: voice.gender,
                belt_path: None,
            });
        }
    }
    let manifest = Manifest::new(records, out_dir);
    manifest.save(out_dir.join("manifest.csv"))?;
    manifest.validate_for_task(super::manifest::Task::Mask)?;
    Ok(manifest)
}

/// Band-limited breathing trace at the belt frame rate, in [-1, 1].
fn render_belt(spec: &SynthSpec, n_frames: usize, rng: &mut Rng) -> Vec<f64> {
    let (lo, hi) = spec.breath_band_hz;
    let comps: Vec<(f64, f64, f64)> = (0..3)
        .map(|k| {
            (
                rng.range(lo, hi),
                rng.range(0.0, TAU),
                1.0 / (k + 1) as f64 * rng.range(0.6, 1.0),
            )
        })
        .collect();
    let drift_freq = rng.range(0.005, 0.02);
    let drift_phase = rng.range(0.0, TAU);
    let mut belt: Vec<f64> = (0..n_frames)
        .map(|k| {
            let t = k as f64 / BELT_FRAME_RATE_HZ;
            let drift = 1.0 + 0.25 * (TAU * drift_freq * t + drift_phase).sin();
            drift
                * comps
                    .iter()
                    .map(|&(f, p, a)| a * (TAU * f * t + p).sin())
                    .sum::<f64>()
        })
        .collect();
    let peak = belt.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    belt.iter_mut().for_each(|v| *v *= 0.95 / peak);
    belt
}

/// Centered differences, one-sided at the ends.
fn derivative(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            if k == 0 {
                x[1] - x[0]
            } else if k == n - 1 {
                x[n - 1] - x[n - 2]
            } else {
                (x[k + 1] - x[k - 1]) / 2.0
            }
        })
        .collect()
}

/// Generate the breath-monitoring corpus: per clip, a band-limited belt
/// trace sampled at 25 Hz and speech-like audio whose loudness follows the
/// belt derivative (voicing swells while the belt moves through
/// exhalation). Returns the saved manifest.
pub fn synth_breath_corpus(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    for sub in ["audio", "belts"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|source| Error::Io { path: d.clone(), source })?;
    }

    let sr = spec.sample_rate_hz as f64;
    let n_samples = (spec.breath_clip_secs * sr).round() as usize;
    let n_frames = (spec.breath_clip_secs * BELT_FRAME_RATE_HZ).round() as usize;
    let samples_per_frame = sr / BELT_FRAME_RATE_HZ;
    let master = Rng::new(spec.seed ^ 0x42524541_54480000); // distinct stream from the mask corpus

    let mut records = Vec::new();
    for s in 0..spec.n_speakers {
        let mut rng = master.split(s as u64);
        let voice = speaker_voice(spec, s, &mut rng);
        for k in 0..spec.clips_per_speaker {
            let belt = render_belt(spec, n_frames, &mut rng);
            let deriv = derivative(&belt);
            let (dmin, dmax) = deriv
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            let span = (dmax - dmin).max(1e-9);
            let env: Vec<f64> = deriv.iter().map(|&d| 0.15 + 0.85 * (d - dmin) / span).collect();

            // voiced carrier with a noise component, loudness driven by env
            let clip_spec = HarmonicClip::draw(&voice, 4000.0f64.min(sr / 2.0 - 200.0), &mut rng);
            let unity = vec![1.0f64; clip_spec.freqs.len()];
            let carrier = clip_spec.render(n_samples, sr, &unity);
            let peak = carrier.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
            let cscale = 0.45 / peak;

            let mut raw = Vec::with_capacity(n_samples);
            for (i, &c) in carrier.iter().enumerate() {
                let pos = i as f64 / samples_per_frame;
                let f = pos.floor() as usize;
                let frac = pos - f as f64;
                let e = if f + 1 < env.len() {
                    env[f] * (1.0 - frac) + env[f + 1] * frac
                } else {
                    env[env.len() - 1]
                };
                let noise = 0.25 * (2.0 * rng.uniform() - 1.0);
                raw.push(e * (0.85 * c * cscale + 0.15 * noise));
            }
            let samples = finalize_samples(&raw, 1.0, spec.noise_floor, &mut rng);

            let audio_rel = format!("audio/spk{s:02}_{k:03}.wav");
            let belt_rel = format!("belts/spk{s:02}_{k:03}.pblt");
            write_wav(out_dir.join(&audio_rel), &AudioClip::new(samples, spec.sample_rate_hz)?)?;
            write_belt(out_dir.join(&belt_rel), &belt)?;
            records.push(ManifestRecord {
                path: audio_rel,
                split: spec.split_for(s),
                label: None,
                speaker: format!("spk{s:02}"),
                gender: voice.gender,
                belt_path: Some(belt_rel),
            });
        }
    }
    let manifest = Manifest::new(records, out_dir);
    manifest.save(out_dir.join("manifest.csv"))?;
    manifest.validate_for_task(super::manifest::Task::Breath)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::read_wav;
    use crate::metrics::pcc;
    use crate::pipeline::belt_io::read_belt;

    fn small_mask_spec() -> SynthSpec {
        SynthSpec {
            n_speakers: 4,
            clips_per_speaker: 4,
            mask_clip_secs: 0.5,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn mask_corpus_is_balanced_and_split_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_mask_corpus(&small_mask_spec(), dir.path()).unwrap();
        assert_eq!(manifest.records().len(), 16);
        let masked = manifest
            .records()
            .iter()
            .filter(|r| r.label == Some(MaskLabel::Mask))
            .count();
        assert_eq!(masked, 8);
        manifest.validate_for_task(super::super::manifest::Task::Mask).unwrap();
    }

    #[test]
    fn same_seed_regenerates_identical_bytes() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let spec = small_mask_spec();
        synth_mask_corpus(&spec, d1.path()).unwrap();
        synth_mask_corpus(&spec, d2.path()).unwrap();
        let m1 = std::fs::read(d1.path().join("manifest.csv")).unwrap();
        let m2 = std::fs::read(d2.path().join("manifest.csv")).unwrap();
        assert_eq!(m1, m2);
        let a1 = std::fs::read(d1.path().join("audio/spk00_001_mask.wav")).unwrap();
        let a2 = std::fs::read(d2.path().join("audio/spk00_001_mask.wav")).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn breath_clip_yields_expected_belt_length_and_range() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_speakers: 3,
            clips_per_speaker: 1,
            breath_clip_secs: 20.0,
            seed: 9,
            ..Default::default()
        };
        let manifest = synth_breath_corpus(&spec, dir.path()).unwrap();
        assert_eq!(manifest.records().len(), 3);
        let belt = read_belt(dir.path().join("belts/spk00_000.pblt")).unwrap();
        assert_eq!(belt.len(), 500); // 20 s at 25 Hz
        assert!(belt.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn audio_envelope_tracks_belt_derivative() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_speakers: 3,
            clips_per_speaker: 1,
            breath_clip_secs: 40.0,
            seed: 11,
            ..Default::default()
        };
        synth_breath_corpus(&spec, dir.path()).unwrap();
        let clip = read_wav(dir.path().join("audio/spk00_000.wav")).unwrap();
        let belt = read_belt(dir.path().join("belts/spk00_000.pblt")).unwrap();
        let deriv = derivative(&belt);
        // frame RMS at the belt frame rate
        let spf = (clip.sample_rate_hz() as f64 / BELT_FRAME_RATE_HZ) as usize;
        let rms: Vec<f64> = (0..belt.len())
            .map(|k| {
                let lo = k * spf;
                let hi = ((k + 1) * spf).min(clip.len());
                if lo >= hi {
                    return 0.0;
                }
                let sum: f64 = clip.samples()[lo..hi].iter().map(|&s| (s as f64).powi(2)).sum();
                (sum / (hi - lo) as f64).sqrt()
            })
            .collect();
        let r = pcc(&rms, &deriv).unwrap();
        assert!(r > 0.5, "envelope/derivative correlation {r}");
    }
}
