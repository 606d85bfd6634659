//! Model checkpoints: magic "PCKP", version u16, length-prefixed UTF-8
//! architecture descriptor, epoch u32, rng seed u64, then a parameter table
//! and an optimizer-state table of (name, shape, little-endian f32 payload)
//! entries.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PCKP";
const VERSION: u16 = 1;

pub type StateEntry = (String, Vec<usize>, Vec<f32>);

#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub descriptor: String,
    pub epoch: u32,
    pub seed: u64,
    pub params: Vec<StateEntry>,
    pub opt_state: Vec<StateEntry>,
}

fn write_table(w: &mut impl Write, entries: &[StateEntry]) -> std::io::Result<()> {
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, shape, data) in entries {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_table(r: &mut impl Read) -> std::io::Result<Vec<StateEntry>> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b4)?;
        let name_len = u32::from_le_bytes(b4) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, "bad utf8"))?;
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1)?;
        let ndims = b1[0] as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            r.read_exact(&mut b4)?;
            shape.push(u32::from_le_bytes(b4) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            r.read_exact(&mut b4)?;
            data.push(f32::from_le_bytes(b4));
        }
        out.push((name, shape, data));
    }
    Ok(out)
}

impl ModelCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        let inner = (|| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            let desc = self.descriptor.as_bytes();
            w.write_all(&(desc.len() as u32).to_le_bytes())?;
            w.write_all(desc)?;
            w.write_all(&self.epoch.to_le_bytes())?;
            w.write_all(&self.seed.to_le_bytes())?;
            write_table(&mut w, &self.params)?;
            write_table(&mut w, &self.opt_state)?;
            w.flush()
        })();
        inner.map_err(io_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Integrity(format!("{}: truncated before magic", path.display())))?;
        if &magic != MAGIC {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: "bad magic, not a checkpoint file".into(),
            });
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)
            .map_err(|_| Error::Integrity(format!("{}: truncated version", path.display())))?;
        let version = u16::from_le_bytes(b2);
        if version != VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("unsupported checkpoint version {version}"),
            });
        }
        let trunc = |what: &str| Error::Integrity(format!("{}: truncated {what}", path.display()));
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| trunc("descriptor length"))?;
        let desc_len = u32::from_le_bytes(b4) as usize;
        let mut desc = vec![0u8; desc_len];
        r.read_exact(&mut desc).map_err(|_| trunc("descriptor"))?;
        let descriptor = String::from_utf8(desc)
            .map_err(|_| Error::Integrity(format!("{}: descriptor is not UTF-8", path.display())))?;
        r.read_exact(&mut b4).map_err(|_| trunc("epoch"))?;
        let epoch = u32::from_le_bytes(b4);
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|_| trunc("seed"))?;
        let seed = u64::from_le_bytes(b8);
        let params = read_table(&mut r).map_err(|_| trunc("parameter table"))?;
        let opt_state = read_table(&mut r).map_err(|_| trunc("optimizer table"))?;
        let mut tail = [0u8; 1];
        if r.read(&mut tail).unwrap_or(0) != 0 {
            return Err(Error::Integrity(format!(
                "{}: trailing bytes after optimizer table",
                path.display()
            )));
        }
        Ok(ModelCheckpoint {
            descriptor,
            epoch,
            seed,
            params,
            opt_state,
        })
    }
}

/// Snapshot every state tensor (trainable or not) via a model's visitor.
pub fn collect_state<S, V>(mut visit: V) -> Vec<StateEntry>
where
    S: Scalar,
    V: FnMut(&mut dyn FnMut(String, bool, &mut Tensor<S>)),
{
    let mut entries = Vec::new();
    visit(&mut |name, _trainable, t| {
        entries.push((
            name,
            t.shape().to_vec(),
            t.data().iter().map(|v| v.to_f64() as f32).collect(),
        ));
    });
    entries
}

/// Restore state tensors by name. Every model tensor must be present with a
/// matching shape and every file entry must be consumed, otherwise the file
/// is rejected as inconsistent.
pub fn restore_state<S, V>(entries: &[StateEntry], mut visit: V) -> Result<()>
where
    S: Scalar,
    V: FnMut(&mut dyn FnMut(String, bool, &mut Tensor<S>)),
{
    use std::collections::BTreeMap;
    let table: BTreeMap<&str, &StateEntry> =
        entries.iter().map(|e| (e.0.as_str(), e)).collect();
    let mut used = 0usize;
    let mut problem: Option<Error> = None;
    visit(&mut |name, _trainable, t| {
        if problem.is_some() {
            return;
        }
        match table.get(name.as_str()) {
            None => {
                problem = Some(Error::Integrity(format!("missing parameter `{name}`")));
            }
            Some((_, shape, data)) => {
                if shape != t.shape() {
                    problem = Some(Error::Integrity(format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        shape,
                        t.shape()
                    )));
                    return;
                }
                let values: Vec<S> = data.iter().map(|&v| S::from_f64(v as f64)).collect();
                t.copy_from(&values).unwrap();
                used += 1;
            }
        }
    });
    if let Some(err) = problem {
        return Err(err);
    }
    if used != entries.len() {
        return Err(Error::Integrity(format!(
            "checkpoint holds {} parameters but the model consumed {used}",
            entries.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelCheckpoint {
        ModelCheckpoint {
            descriptor: "kind = test\nwidth = 3\n".into(),
            epoch: 7,
            seed: 42,
            params: vec![
                ("a.weight".into(), vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, 0.25, -0.125]),
                ("a.bias".into(), vec![2], vec![0.1, -0.1]),
            ],
            opt_state: vec![("a.weight#buf0".into(), vec![6], vec![0.0; 6])],
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pckp");
        let ckpt = sample();
        ckpt.save(&p).unwrap();
        let loaded = ModelCheckpoint::load(&p).unwrap();
        assert_eq!(loaded.descriptor, ckpt.descriptor);
        assert_eq!(loaded.epoch, 7);
        assert_eq!(loaded.seed, 42);
        assert_eq!(loaded.params, ckpt.params);
        assert_eq!(loaded.opt_state, ckpt.opt_state);
    }

    #[test]
    fn truncated_checkpoint_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pckp");
        sample().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        for cut in [bytes.len() - 1, bytes.len() / 2, 10] {
            std::fs::write(&p, &bytes[..cut]).unwrap();
            assert!(
                matches!(ModelCheckpoint::load(&p), Err(Error::Integrity(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn wrong_version_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pckp");
        sample().save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 2; // version little-endian low byte
        std::fs::write(&p, &bytes).unwrap();
        match ModelCheckpoint::load(&p) {
            Err(Error::Format { detail, .. }) => assert!(detail.contains("version")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pckp");
        std::fs::write(&p, b"NOPE rest of file").unwrap();
        assert!(matches!(ModelCheckpoint::load(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn restore_rejects_missing_and_mismatched() {
        let mut t = Tensor::<f32>::param(&[2], vec![0.0, 0.0]).unwrap();
        // missing entry
        let err = restore_state::<f32, _>(&[], |f| f("x".into(), true, &mut t)).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
        // shape mismatch
        let entries = vec![("x".to_string(), vec![3], vec![0.0f32; 3])];
        let err = restore_state::<f32, _>(&entries, |f| f("x".into(), true, &mut t)).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
        // leftover entries
        let entries = vec![
            ("x".to_string(), vec![2], vec![1.0f32, 2.0]),
            ("ghost".to_string(), vec![1], vec![0.0f32]),
        ];
        let err = restore_state::<f32, _>(&entries, |f| f("x".into(), true, &mut t)).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }
}
