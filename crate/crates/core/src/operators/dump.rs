//! Binary dump of dense complex blocks.
//!
//! Layout: a 64-byte header (`b"PMCHWTBK"`, rows `u64`, cols `u64`, kind
//! `u32`, zero padding) followed by the entries in row-major order as
//! little-endian `f64` pairs (re, im).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{BemError, Result};

const MAGIC: &[u8; 8] = b"PMCHWTBK";
const HEADER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Dense = 0,
    S = 1,
    C = 2,
    Mass = 3,
}

impl BlockKind {
    fn from_u32(v: u32) -> Result<Self> {
        Ok(match v {
            0 => Self::Dense,
            1 => Self::S,
            2 => Self::C,
            3 => Self::Mass,
            _ => return Err(BemError::Parse(format!("unknown block kind {v}"))),
        })
    }
}

pub fn write_block(path: &Path, block: &DMatrix<Complex64>, kind: BlockKind) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER + 16 * block.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(block.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(block.ncols() as u64).to_le_bytes());
    buf.extend_from_slice(&(kind as u32).to_le_bytes());
    buf.resize(HEADER, 0);
    for i in 0..block.nrows() {
        for j in 0..block.ncols() {
            let z = block[(i, j)];
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_block(path: &Path) -> Result<(DMatrix<Complex64>, BlockKind)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < HEADER || &buf[..8] != MAGIC {
        return Err(BemError::Parse("not a block dump".into()));
    }
    let word = |at: usize| u64::from_le_bytes(buf[at..at + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(8) as usize, word(16) as usize);
    let kind = BlockKind::from_u32(u32::from_le_bytes(buf[24..28].try_into().expect("4 bytes")))?;
    if buf.len() != HEADER + 16 * rows * cols {
        return Err(BemError::Parse("block dump has the wrong length".into()));
    }
    let f = |at: usize| f64::from_le_bytes(buf[at..at + 8].try_into().expect("8 bytes"));
    let m = DMatrix::from_fn(rows, cols, |i, j| {
        let at = HEADER + 16 * (i * cols + j);
        Complex64::new(f(at), f(at + 8))
    });
    Ok((m, kind))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let m = DMatrix::from_fn(3, 2, |i, j| Complex64::new(i as f64 + 0.5, -(j as f64) * 1e-300));
        write_block(&p, &m, BlockKind::C).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 64 + 6 * 16);
        let (r, k) = read_block(&p).unwrap();
        assert_eq!(r, m);
        assert_eq!(k, BlockKind::C);
        std::fs::write(&p, b"nonsense").unwrap();
        assert!(read_block(&p).is_err());
    }
}
