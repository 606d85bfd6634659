//! RIFF/WAVE reader and writer for 16-bit mono PCM.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::AudioClip;

const SCALE: f32 = 32768.0;

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| format_err(path, format!("truncated while reading {what}")))
}

fn read_u16(r: &mut impl Read, path: &Path, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, path, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Read a RIFF/WAVE file containing 16-bit mono PCM. Samples are scaled by
/// 1/32768 into [-1, 1). Multi-channel and non-PCM content is rejected.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path, "RIFF magic")?;
    if &magic != b"RIFF" {
        return Err(format_err(path, "missing RIFF magic"));
    }
    let _riff_size = read_u32(&mut r, path, "RIFF size")?;
    read_exact(&mut r, &mut magic, path, "WAVE tag")?;
    if &magic != b"WAVE" {
        return Err(format_err(path, "missing WAVE tag"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    loop {
        let mut chunk_id = [0u8; 4];
        if r.read_exact(&mut chunk_id).is_err() {
            return Err(format_err(path, "no data chunk found"));
        }
        let chunk_size = read_u32(&mut r, path, "chunk size")? as usize;
        match &chunk_id {
            b"fmt " => {
                if chunk_size < 16 {
                    return Err(format_err(path, "fmt chunk too small"));
                }
                let audio_format = read_u16(&mut r, path, "audio format")?;
                let channels = read_u16(&mut r, path, "channel count")?;
                let sample_rate = read_u32(&mut r, path, "sample rate")?;
                let _byte_rate = read_u32(&mut r, path, "byte rate")?;
                let _block_align = read_u16(&mut r, path, "block align")?;
                let bits = read_u16(&mut r, path, "bits per sample")?;
                // skip any fmt extension
                let mut rest = vec![0u8; chunk_size - 16];
                read_exact(&mut r, &mut rest, path, "fmt extension")?;
                fmt = Some((audio_format, channels, sample_rate, bits));
            }
            b"data" => {
                let (audio_format, channels, sample_rate, bits) =
                    fmt.ok_or_else(|| format_err(path, "data chunk before fmt chunk"))?;
                if audio_format != 1 {
                    return Err(Error::UnsupportedFormat {
                        path: path.to_path_buf(),
                        field: "audio_format".into(),
                        value: format!("{audio_format} (only PCM = 1 supported)"),
                    });
                }
                if channels != 1 {
                    return Err(Error::UnsupportedFormat {
                        path: path.to_path_buf(),
                        field: "channels".into(),
                        value: format!("{channels} (only mono supported)"),
                    });
                }
                if bits != 16 {
                    return Err(Error::UnsupportedFormat {
                        path: path.to_path_buf(),
                        field: "bits_per_sample".into(),
                        value: format!("{bits} (only 16-bit supported)"),
                    });
                }
                if chunk_size % 2 != 0 {
                    return Err(format_err(path, "data chunk size not a multiple of 2"));
                }
                let mut raw = vec![0u8; chunk_size];
                read_exact(&mut r, &mut raw, path, "sample data")?;
                let samples: Vec<f32> = raw
                    .chunks_exact(2)
                    .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / SCALE)
                    .collect();
                if samples.is_empty() {
                    return Err(format_err(path, "data chunk holds no samples"));
                }
                return AudioClip::new(samples, sample_rate);
            }
            _ => {
                // unknown chunk: skip payload plus pad byte on odd sizes
                let skip = chunk_size + (chunk_size & 1);
                let mut sink = vec![0u8; skip];
                read_exact(&mut r, &mut sink, path, "chunk payload")?;
            }
        }
    }
}

/// Write a clip as 16-bit mono PCM. Amplitudes are mapped back with the same
/// 1/32768 scale used by [`read_wav`], so read -> write round-trips are
/// bit-identical.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    let data_len = clip.len() * 2;
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };

    w.write_all(b"RIFF").map_err(io_err)?;
    w.write_all(&(36 + data_len as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(b"WAVE").map_err(io_err)?;
    w.write_all(b"fmt ").map_err(io_err)?;
    w.write_all(&16u32.to_le_bytes()).map_err(io_err)?;
    w.write_all(&1u16.to_le_bytes()).map_err(io_err)?; // PCM
    w.write_all(&1u16.to_le_bytes()).map_err(io_err)?; // mono
    w.write_all(&clip.sample_rate_hz().to_le_bytes()).map_err(io_err)?;
    w.write_all(&(clip.sample_rate_hz() * 2).to_le_bytes()).map_err(io_err)?;
    w.write_all(&2u16.to_le_bytes()).map_err(io_err)?; // block align
    w.write_all(&16u16.to_le_bytes()).map_err(io_err)?;
    w.write_all(b"data").map_err(io_err)?;
    w.write_all(&(data_len as u32).to_le_bytes()).map_err(io_err)?;
    for &s in clip.samples() {
        let v = (s * SCALE).round().clamp(-32768.0, 32767.0) as i16;
        w.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}
