//! Binary dataset files.
//!
//! Layout (little-endian): magic `CSID`, version `u32`, `N_t`, `N_c` and
//! sample count as `u32`, scale `f64`, seed `u64`, then each sample as
//! row-major interleaved `(re, im)` pairs of `f32`.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::channel::{ChannelMatrix, Dataset};

pub const MAGIC: &[u8; 4] = b"CSID";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 36;

#[derive(Debug, Error)]
pub enum DatasetFileError {
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    UnsupportedVersion(u32),
    #[error("dataset truncated: expected {expected} bytes, found {got}")]
    Truncated { expected: usize, got: usize },
    #[error("dataset has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid dataset header: {0}")]
    InvalidHeader(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Dataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let entries = self.num_antennas * self.num_subcarriers;
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * entries * 8);
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.num_antennas as u32, self.num_subcarriers as u32, self.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.s_norm.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for h in &self.samples {
            for (re, im) in h.re().iter().zip(h.im()) {
                out.extend_from_slice(&(*re as f32).to_le_bytes());
                out.extend_from_slice(&(*im as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parses a dataset file. Generation metadata is not stored, so
    /// `meta` is `None`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetFileError> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(DatasetFileError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(DatasetFileError::Truncated { expected: HEADER_LEN, got: bytes.len() });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            return Err(DatasetFileError::UnsupportedVersion(version));
        }
        let (nt, nc, count) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
        let s_norm = f64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));
        let seed = u64::from_le_bytes(bytes[28..36].try_into().expect("8 bytes"));
        if nt == 0 || nc == 0 {
            return Err(DatasetFileError::InvalidHeader("zero dimension"));
        }
        if !(s_norm.is_finite() && s_norm > 0.0) {
            return Err(DatasetFileError::InvalidHeader("scale must be finite and positive"));
        }
        let entries = nt * nc;
        let expected = entries
            .checked_mul(8)
            .and_then(|b| b.checked_mul(count))
            .and_then(|b| b.checked_add(HEADER_LEN))
            .ok_or(DatasetFileError::InvalidHeader("size overflow"))?;
        if bytes.len() < expected {
            return Err(DatasetFileError::Truncated { expected, got: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(DatasetFileError::TrailingBytes(bytes.len() - expected));
        }
        let values: Vec<f64> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let samples = values
            .chunks_exact(2 * entries)
            .map(|s| {
                let re = s.iter().step_by(2).copied().collect();
                let im = s.iter().skip(1).step_by(2).copied().collect();
                ChannelMatrix::from_planes(nt, nc, re, im)
            })
            .collect();
        Ok(Dataset { num_antennas: nt, num_subcarriers: nc, seed, s_norm, samples, meta: None })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetFileError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetFileError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
