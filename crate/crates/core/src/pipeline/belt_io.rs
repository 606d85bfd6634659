//! Belt-signal files: magic "PBLT", version u16, sample count u32, then one
//! little-endian f32 per feature frame.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PBLT";
const VERSION: u16 = 1;

pub fn write_belt(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(values.len() as u32).to_le_bytes())?;
        for &v in values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.flush()
    })()
    .map_err(io_err)
}

pub fn read_belt(path: impl AsRef<Path>) -> Result<Vec<f64>> {
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
        return Err(fail("bad magic, not a belt file"));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2).map_err(|_| fail("truncated version"))?;
    if u16::from_le_bytes(b2) != VERSION {
        return Err(fail("unsupported version"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|_| fail("truncated count"))?;
    let n = u32::from_le_bytes(b4) as usize;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b4).map_err(|_| fail("truncated payload"))?;
        values.push(f32::from_le_bytes(b4) as f64);
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail).unwrap_or(0) != 0 {
        return Err(fail("trailing bytes"));
    }
    Ok(values)
}
