//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `CSIN`, version `u32`, hidden width,
//! layer count and codeword length as `u32`, `ω₀`, `σ_b` and the dataset
//! scale as `f64`, then every parameter as `f32` in declaration order:
//! Fourier matrix; per layer `W`, `b`, `W_γ`, `b_γ`, `W_η`, `b_η`; readout
//! weight and bias.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{ArchConfig, ModelError, ModelParams};

pub const MAGIC: &[u8; 4] = b"CSIN";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 44;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated: expected {expected} bytes, found {got}")]
    Truncated { expected: usize, got: usize },
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid scale {0}")]
    InvalidScale(f64),
    #[error("checkpoint holds non-finite parameters")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Trained parameters together with the dataset scale they were fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub s_norm: f64,
}

impl Checkpoint {
    pub fn new(params: ModelParams<f32>, s_norm: f64) -> Self {
        Self { params, s_norm }
    }

    pub fn encoded_len(arch: &ArchConfig) -> usize {
        HEADER_LEN + 4 * arch.parameter_count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = &self.params.arch;
        let mut out = Vec::with_capacity(Self::encoded_len(arch));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [arch.hidden_dim, arch.num_layers, arch.codeword_dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in [arch.omega0, arch.fourier_scale, self.s_norm] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.params.fourier.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for block in self.params.weights.blocks() {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(CheckpointError::BadMagic);
            }
            return Err(CheckpointError::Truncated { expected: HEADER_LEN, got: bytes.len() });
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let arch = ArchConfig {
            hidden_dim: u32_at(8) as usize,
            num_layers: u32_at(12) as usize,
            codeword_dim: u32_at(16) as usize,
            omega0: f64_at(20),
            fourier_scale: f64_at(28),
        };
        let s_norm = f64_at(36);
        arch.validate()?;
        if !(s_norm.is_finite() && s_norm > 0.0) {
            return Err(CheckpointError::InvalidScale(s_norm));
        }
        let expected = Self::encoded_len(&arch);
        if bytes.len() < expected {
            return Err(CheckpointError::Truncated { expected, got: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(CheckpointError::TrailingBytes(bytes.len() - expected));
        }
        let mut values = bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut params = ModelParams::<f32>::zeros(arch);
        for v in params.fourier.iter_mut() {
            *v = values.next().expect("length checked");
        }
        for block in params.weights.blocks_mut() {
            for v in block {
                *v = values.next().expect("length checked");
            }
        }
        if !params.is_finite() {
            return Err(CheckpointError::NonFinite);
        }
        Ok(Self { params, s_norm })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
