//! Flat binary feature files: magic "PFEA", version u16, n_frames u32,
//! n_bins u32, frame_shift_ms f32, then row-major little-endian f32 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::FeatureMatrix;

const MAGIC: &[u8; 4] = b"PFEA";
const VERSION: u16 = 1;

pub fn write_features(path: impl AsRef<Path>, feat: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(feat.n_frames() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(feat.n_bins() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(feat.frame_shift_ms() as f32).to_le_bytes()).map_err(io_err)?;
    for &v in feat.data() {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?);
    let fail = |detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fail("truncated magic"))?;
    if &magic != MAGIC {
        return Err(fail("bad magic, not a feature file"));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2).map_err(|_| fail("truncated version"))?;
    let version = u16::from_le_bytes(b2);
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|_| fail("truncated frame count"))?;
    let n_frames = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4).map_err(|_| fail("truncated bin count"))?;
    let n_bins = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4).map_err(|_| fail("truncated frame shift"))?;
    let shift = f32::from_le_bytes(b4) as f64;

    let n = n_frames
        .checked_mul(n_bins)
        .ok_or_else(|| fail("dimension overflow"))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b4).map_err(|_| fail("truncated data payload"))?;
        data.push(f32::from_le_bytes(b4) as f64);
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail).map_err(|_| fail("read error"))? != 0 {
        return Err(fail("trailing bytes after data payload"));
    }
    FeatureMatrix::new(data, n_frames, n_bins, shift)
}
