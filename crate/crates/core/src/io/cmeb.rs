//! `CMEB` dense matrix files: magic `CMEB`, u32 version (1), u32 rows,
//! u32 dim, then rows * dim little-endian f32 values.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CMEB";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode(m: ArrayView2<'_, f32>) -> Vec<u8> {
    let (rows, dim) = m.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * rows * dim);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for &v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes"))
}

/// Decodes a CMEB buffer; `origin` names the source in errors.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<Array2<f32>> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(origin, "missing CMEB header"));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::format(
            origin,
            format!("unsupported CMEB version {version}"),
        ));
    }
    let rows = u32_at(bytes, 8) as usize;
    let dim = u32_at(bytes, 12) as usize;
    let expected = HEADER_LEN + 4 * rows * dim;
    if bytes.len() != expected {
        return Err(Error::format(
            origin,
            format!(
                "expected {expected} bytes for {rows}x{dim}, found {}",
                bytes.len()
            ),
        ));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Array2::from_shape_vec((rows, dim), values).expect("length checked"))
}

pub fn write(path: &Path, m: ArrayView2<'_, f32>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode(m)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Array2<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Optional JSON sidecar describing CMEB rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Sidecar {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn write_with_sidecar(path: &Path, m: ArrayView2<'_, f32>, sidecar: &Sidecar) -> Result<()> {
    write(path, m)?;
    let sp = sidecar_path(path);
    let json = serde_json::to_vec_pretty(sidecar)?;
    fs::write(&sp, json).map_err(|e| Error::io(&sp, e))
}

pub fn read_with_sidecar(path: &Path) -> Result<(Array2<f32>, Sidecar)> {
    let m = read(path)?;
    let sp = sidecar_path(path);
    let bytes = fs::read(&sp).map_err(|e| Error::io(&sp, e))?;
    let sidecar: Sidecar = serde_json::from_slice(&bytes)?;
    if sidecar.ids.len() != m.nrows() || sidecar.labels.len() != m.nrows() {
        return Err(Error::format(
            &sp,
            "sidecar length does not match CMEB rows",
        ));
    }
    Ok((m, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = Array2::from_shape_fn((100, 64), |(i, j)| (i * 64 + j) as f32);
        let bytes = encode(m.view());
        assert_eq!(&bytes[..4], b"CMEB");
        assert_eq!(u32_at(&bytes, 4), 1);
        assert_eq!(u32_at(&bytes, 8), 100);
        assert_eq!(u32_at(&bytes, 12), 64);
        assert_eq!(bytes.len(), 16 + 100 * 64 * 4);
    }

    #[test]
    fn rejects_truncated() {
        let m = Array2::<f32>::zeros((2, 3));
        let bytes = encode(m.view());
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(decode(b"NOPE", Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(rows in 0usize..6, dim in 0usize..6, seed in any::<u32>()) {
            let m = Array2::from_shape_fn((rows, dim), |(i, j)| {
                f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add((i * 7 + j) as u32) & 0x7f7f_ffff)
            });
            let back = decode(&encode(m.view()), Path::new("mem")).unwrap();
            prop_assert_eq!(back.dim(), m.dim());
            for (a, b) in back.iter().zip(m.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
