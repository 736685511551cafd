//! Codec state shared by both ends of the link.
//!
//! Layout (little-endian): magic `CSIS`, version `u32`, codeword length and
//! bit width as `u32`, per-dimension `(lo, hi)` as `f64`, then `2^b` symbol
//! counts as `u16`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::entropy::{fit_frequency_table, FrequencyTable};
use super::quantizer::{fit_quantizer, QuantizerConfig, MAX_BIT_WIDTH};
use super::CodecError;
use crate::model::Codeword;

pub const MAGIC: &[u8; 4] = b"CSIS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Sidecar {
    pub quantizer: QuantizerConfig,
    pub table: FrequencyTable,
}

impl Sidecar {
    pub fn new(quantizer: QuantizerConfig, table: FrequencyTable) -> Result<Self, CodecError> {
        quantizer.validate()?;
        if table.bit_width() != quantizer.bit_width {
            return Err(CodecError::InvalidTable("table alphabet does not match the bit width"));
        }
        Ok(Self { quantizer, table })
    }

    pub fn bit_width(&self) -> u32 {
        self.quantizer.bit_width
    }

    pub fn dim(&self) -> usize {
        self.quantizer.dim()
    }

    /// First eight bytes of the SHA-256 of the serialized sidecar, read as a
    /// little-endian integer.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + 16 * n + 2 * self.table.len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, n as u32, self.bit_width()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for (lo, hi) in self.quantizer.lo.iter().zip(&self.quantizer.hi) {
            out.extend_from_slice(&lo.to_le_bytes());
            out.extend_from_slice(&hi.to_le_bytes());
        }
        for &c in self.table.counts() {
            out.extend_from_slice(&(c as u16).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(CodecError::BadMagic("sidecar"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated("sidecar"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            return Err(CodecError::UnsupportedVersion(version));
        }
        let (n, b) = (u32_at(8) as usize, u32_at(12));
        if !(1..=MAX_BIT_WIDTH).contains(&b) {
            return Err(CodecError::InvalidBitWidth(b));
        }
        let expected = n
            .checked_mul(16)
            .and_then(|x| x.checked_add(HEADER_LEN + 2 * (1usize << b)))
            .ok_or(CodecError::Truncated("sidecar"))?;
        if bytes.len() < expected {
            return Err(CodecError::Truncated("sidecar"));
        }
        if bytes.len() > expected {
            return Err(CodecError::TrailingBytes("sidecar"));
        }
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let lo = (0..n).map(|k| f64_at(HEADER_LEN + 16 * k)).collect();
        let hi = (0..n).map(|k| f64_at(HEADER_LEN + 16 * k + 8)).collect();
        let counts = bytes[HEADER_LEN + 16 * n..]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
            .collect();
        Self::new(QuantizerConfig::new(b, lo, hi)?, FrequencyTable::from_counts(counts)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Fits the quantizer on `codewords`, then the frequency table on their
/// quantized symbols.
pub fn fit_sidecar(codewords: &[Codeword], bit_width: u32) -> Result<Sidecar, CodecError> {
    let quantizer = fit_quantizer(codewords, bit_width)?;
    let symbols = codewords.iter().map(|c| quantizer.quantize(c)).collect::<Result<Vec<_>, _>>()?;
    let table = fit_frequency_table(symbols.iter().map(|s| s.as_slice()), bit_width)?;
    Sidecar::new(quantizer, table)
}
