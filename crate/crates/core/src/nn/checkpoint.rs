//! Tower checkpoints.
//!
//! Layout (all integers little endian):
//!   magic   b"FMTW"
//!   version u32 = 1
//!   layers  u32
//!   per layer: out u32, in u32, has_bias u8, activation u8
//!   per layer: weights f64 row-major (out*in), then bias f64 (out) if present

use std::fs;
use std::path::Path;

use super::{Activation, DenseLayer, Matrix, Tower};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FMTW";
const VERSION: u32 = 1;

pub fn tower_to_bytes(tower: &Tower) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tower.layers.len() as u32).to_le_bytes());
    for l in &tower.layers {
        out.extend_from_slice(&(l.weights.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(l.weights.cols() as u32).to_le_bytes());
        out.push(l.bias.is_some() as u8);
        out.push(l.activation.code());
    }
    for l in &tower.layers {
        for v in l.weights.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(b) = &l.bias {
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn tower_from_bytes(bytes: &[u8]) -> Result<Tower> {
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let read_u32 = |off: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(off, 4)?.try_into().unwrap()))
    };

    if take(&mut off, 4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut off)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n_layers = read_u32(&mut off)? as usize;
    if n_layers == 0 || n_layers > 1024 {
        return Err(Error::Checkpoint(format!("implausible layer count {n_layers}")));
    }
    let mut headers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = read_u32(&mut off)? as usize;
        let cols = read_u32(&mut off)? as usize;
        let has_bias = take(&mut off, 1)?[0] != 0;
        let act = Activation::from_code(take(&mut off, 1)?[0])?;
        if rows == 0 || cols == 0 {
            return Err(Error::Checkpoint("zero layer dimension".into()));
        }
        headers.push((rows, cols, has_bias, act));
    }
    // adjacent layers must chain
    for w in headers.windows(2) {
        if w[1].1 != w[0].0 {
            return Err(Error::Checkpoint(format!(
                "layer dims do not chain: out {} then in {}",
                w[0].0, w[1].1
            )));
        }
    }
    let mut layers = Vec::with_capacity(n_layers);
    for &(rows, cols, has_bias, act) in &headers {
        let mut weights = Matrix::zeros(rows, cols);
        for v in weights.as_mut_slice() {
            let raw = take(&mut off, 8)?;
            *v = f64::from_le_bytes(raw.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Checkpoint("non-finite weight".into()));
            }
        }
        let bias = if has_bias {
            let mut b = vec![0.0; rows];
            for v in &mut b {
                let raw = take(&mut off, 8)?;
                *v = f64::from_le_bytes(raw.try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::Checkpoint("non-finite bias".into()));
                }
            }
            Some(b)
        } else {
            None
        };
        layers.push(DenseLayer { weights, bias, activation: act });
    }
    if off != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - off)));
    }
    Ok(Tower { layers })
}

pub fn save_tower(tower: &Tower, path: &Path) -> Result<()> {
    fs::write(path, tower_to_bytes(tower)).map_err(|e| Error::io(path, e))
}

pub fn load_tower(path: &Path) -> Result<Tower> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    tower_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn roundtrip_exact() {
        let tower = Tower::new(&[23, 64, 32, 16], 7).unwrap();
        let bytes = tower_to_bytes(&tower);
        let back = tower_from_bytes(&bytes).unwrap();
        assert_eq!(tower, back);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tower");
        let tower = Tower::new(&[5, 4, 3], 1).unwrap();
        save_tower(&tower, &path).unwrap();
        assert_eq!(load_tower(&path).unwrap(), tower);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let tower = Tower::new(&[4, 3], 0).unwrap();
        let bytes = tower_to_bytes(&tower);
        assert!(tower_from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(tower_from_bytes(&bad_magic).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(tower_from_bytes(&trailing).is_err());
        let mut nan = bytes.clone();
        let nan_bytes = f64::NAN.to_le_bytes();
        let data_start = bytes.len() - 12 * 8;
        nan[data_start..data_start + 8].copy_from_slice(&nan_bytes);
        assert!(tower_from_bytes(&nan).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_random_shapes(a in 1usize..12, b in 1usize..12, c in 1usize..12, seed in 0u64..500) {
            let tower = Tower::new(&[a, b, c], seed).unwrap();
            prop_assert_eq!(tower_from_bytes(&tower_to_bytes(&tower)).unwrap(), tower);
        }
    }
}
