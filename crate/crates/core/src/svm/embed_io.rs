//! Embedding set files: magic "PEMB", version u16, source string, row and
//! dim counts, then per row an id string, a label byte (0/1, 255 for
//! unlabeled) and the f32 vector.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::EmbeddingSet;

const MAGIC: &[u8; 4] = b"PEMB";
const VERSION: u16 = 1;

pub fn write_embeddings(path: impl AsRef<Path>, set: &EmbeddingSet) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let src = set.source.as_bytes();
        w.write_all(&(src.len() as u32).to_le_bytes())?;
        w.write_all(src)?;
        w.write_all(&(set.len() as u32).to_le_bytes())?;
        w.write_all(&(set.dim as u32).to_le_bytes())?;
        for i in 0..set.len() {
            let id = set.ids[i].as_bytes();
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id)?;
            w.write_all(&[set.labels[i]])?;
            for &v in set.row(i) {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()
    })()
    .map_err(io_err)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
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
        return Err(fail("bad magic, not an embedding file"));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2).map_err(|_| fail("truncated version"))?;
    if u16::from_le_bytes(b2) != VERSION {
        return Err(fail("unsupported version"));
    }
    let mut b4 = [0u8; 4];
    let read_string = |r: &mut BufReader<File>, what: &str| -> Result<String> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)
            .map_err(|_| fail(&format!("truncated {what} length")))?;
        let len = u32::from_le_bytes(b4) as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)
            .map_err(|_| fail(&format!("truncated {what}")))?;
        String::from_utf8(buf).map_err(|_| fail(&format!("{what} is not UTF-8")))
    };
    let source = read_string(&mut r, "source id")?;
    r.read_exact(&mut b4).map_err(|_| fail("truncated row count"))?;
    let n = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4).map_err(|_| fail("truncated dim"))?;
    let dim = u32::from_le_bytes(b4) as usize;
    if dim == 0 {
        return Err(fail("zero embedding width"));
    }

    let mut set = EmbeddingSet::new(source, dim);
    let mut row = vec![0.0f64; dim];
    for _ in 0..n {
        let id = read_string(&mut r, "row id")?;
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1).map_err(|_| fail("truncated label"))?;
        for v in row.iter_mut() {
            r.read_exact(&mut b4).map_err(|_| fail("truncated row payload"))?;
            *v = f32::from_le_bytes(b4) as f64;
        }
        set.push(id, b1[0], &row)?;
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail).unwrap_or(0) != 0 {
        return Err(fail("trailing bytes"));
    }
    Ok(set)
}
