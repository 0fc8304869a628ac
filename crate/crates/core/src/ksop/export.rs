//! Kernel matrix files.
//!
//! Binary layout: the 8 bytes `KSMAT1\0\0`, rows and columns as little-endian
//! `u64`, then the entries row-major as little-endian `f64`.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::assembly::{DiscreteKernel, Domain, KernelKind};
use super::CellProblem;
use crate::error::{Error, Result};
use crate::model::Profile;

const MAGIC: &[u8; 8] = b"KSMAT1\0\0";

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * m.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 24 || &buf[..8] != MAGIC {
        return Err(Error::InvalidInput("not a kernel matrix file".into()));
    }
    let word = |at: usize| u64::from_le_bytes(buf[at..at + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(8) as usize, word(16) as usize);
    if buf.len() != 24 + 8 * rows * cols {
        return Err(Error::InvalidInput("kernel matrix file has the wrong length".into()));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| {
        let at = 24 + 8 * (i * cols + j);
        f64::from_le_bytes(buf[at..at + 8].try_into().expect("8 bytes"))
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelManifest {
    pub kind: KernelKind,
    pub g: Profile,
    pub energy: f64,
    pub m: usize,
    pub n: u32,
    pub tol: f64,
    pub domain: Domain,
    pub binary: String,
    pub csv: String,
}

/// Writes `<stem>.bin`, `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_kernel(dir: impl AsRef<Path>, stem: &str, k: &DiscreteKernel, p: &CellProblem, kind: KernelKind) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let bin = format!("{stem}.bin");
    let csv = format!("{stem}.csv");
    write_matrix(dir.join(&bin), &k.matrix)?;
    let mut s = String::new();
    for i in 0..k.matrix.nrows() {
        let row: Vec<String> = (0..k.matrix.ncols()).map(|j| format!("{}", k.matrix[(i, j)])).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    std::fs::write(dir.join(&csv), s)?;
    let manifest = KernelManifest {
        kind,
        g: p.g.clone(),
        energy: p.e,
        m: k.size(),
        n: p.n,
        tol: p.opts.rtol,
        domain: k.domain,
        binary: bin,
        csv,
    };
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let dir = std::env::temp_dir().join(format!("ksmat-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let m = DMatrix::from_fn(3, 2, |i, j| i as f64 - 0.5 * j as f64);
        let path = dir.join("m.bin");
        write_matrix(&path, &m).unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
        std::fs::write(&path, b"nope").unwrap();
        assert!(read_matrix(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
