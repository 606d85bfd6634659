//! SVM model files: magic "PSVM", version u16, gamma/C/A/B as f64, bias
//! f64, support-vector table (count u32, dim u32, f32 payload), then the
//! coefficient vector as f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::SvmModel;

const MAGIC: &[u8; 4] = b"PSVM";
const VERSION: u16 = 1;

pub fn write_svm_model(path: impl AsRef<Path>, model: &SvmModel) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&model.gamma.to_le_bytes())?;
        w.write_all(&model.c.to_le_bytes())?;
        w.write_all(&model.platt_a.to_le_bytes())?;
        w.write_all(&model.platt_b.to_le_bytes())?;
        w.write_all(&model.bias.to_le_bytes())?;
        w.write_all(&(model.n_support() as u32).to_le_bytes())?;
        w.write_all(&(model.dim as u32).to_le_bytes())?;
        for &v in &model.support_vectors {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        for &coeff in &model.coeffs {
            w.write_all(&coeff.to_le_bytes())?;
        }
        w.flush()
    })()
    .map_err(io_err)
}

pub fn read_svm_model(path: impl AsRef<Path>) -> Result<SvmModel> {
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
        return Err(fail("bad magic, not an SVM model file"));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2).map_err(|_| fail("truncated version"))?;
    if u16::from_le_bytes(b2) != VERSION {
        return Err(fail("unsupported version"));
    }
    let mut b8 = [0u8; 8];
    let mut read_f64 = |r: &mut BufReader<File>, what: &str| -> Result<f64> {
        r.read_exact(&mut b8)
            .map_err(|_| fail(&format!("truncated {what}")))?;
        Ok(f64::from_le_bytes(b8))
    };
    let gamma = read_f64(&mut r, "gamma")?;
    let c = read_f64(&mut r, "C")?;
    let platt_a = read_f64(&mut r, "A")?;
    let platt_b = read_f64(&mut r, "B")?;
    let bias = read_f64(&mut r, "bias")?;

    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|_| fail("truncated SV count"))?;
    let n_sv = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4).map_err(|_| fail("truncated dim"))?;
    let dim = u32::from_le_bytes(b4) as usize;
    if n_sv == 0 || dim == 0 {
        return Err(fail("empty support-vector table"));
    }

    let mut support_vectors = Vec::with_capacity(n_sv * dim);
    for _ in 0..n_sv * dim {
        r.read_exact(&mut b4).map_err(|_| fail("truncated SV payload"))?;
        support_vectors.push(f32::from_le_bytes(b4) as f64);
    }
    let mut coeffs = Vec::with_capacity(n_sv);
    let mut b8b = [0u8; 8];
    for _ in 0..n_sv {
        r.read_exact(&mut b8b).map_err(|_| fail("truncated coefficients"))?;
        coeffs.push(f64::from_le_bytes(b8b));
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail).unwrap_or(0) != 0 {
        return Err(fail("trailing bytes"));
    }
    Ok(SvmModel {
        dim,
        support_vectors,
        coeffs,
        bias,
        gamma,
        c,
        platt_a,
        platt_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let model = SvmModel {
            dim: 2,
            support_vectors: vec![0.5, -1.0, 2.0, 0.25],
            coeffs: vec![0.75, -0.75],
            bias: 0.125,
            gamma: 0.5,
            c: 10.0,
            platt_a: -1.5,
            platt_b: 0.0625,
        };
        let p = dir.path().join("m.psvm");
        write_svm_model(&p, &model).unwrap();
        let loaded = read_svm_model(&p).unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn truncation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = SvmModel {
            dim: 1,
            support_vectors: vec![1.0],
            coeffs: vec![1.0],
            bias: 0.0,
            gamma: 1.0,
            c: 1.0,
            platt_a: -1.0,
            platt_b: 0.0,
        };
        let p = dir.path().join("m.psvm");
        write_svm_model(&p, &model).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(read_svm_model(&p), Err(Error::Format { .. })));
    }
}
