//! Transmitter and receiver chains.
//!
//! The transmitter fits a codeword to the channel with the base network
//! frozen, then either sends it as raw floats or quantizes it and
//! range-codes the symbols against a shared frequency table. The receiver
//! inverts the coding and evaluates the network over the coordinate grid.

pub mod bitstream;
pub mod entropy;
pub mod quantizer;
pub mod sidecar;

use std::io;

use ndarray::Array2;
use thiserror::Error;

pub use bitstream::{Bitstream, PayloadKind};
pub use entropy::{entropy_decode, entropy_encode, fit_frequency_table, FrequencyTable};
pub use quantizer::{fit_quantizer, QuantizerConfig};
pub use sidecar::{fit_sidecar, Sidecar};

use crate::channel::ChannelMatrix;
use crate::checkpoint::Checkpoint;
use crate::engine::{EngineError, Evaluator};
use crate::model::{channel_targets, reconstruct_with, Codeword, CoordinateGrid};
use crate::train::{adapt_codeword, TrainError};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bit width {0} outside 1..=16")]
    InvalidBitWidth(u32),
    #[error("invalid quantizer: {0}")]
    InvalidQuantizer(&'static str),
    #[error("invalid frequency table: {0}")]
    InvalidTable(&'static str),
    #[error("nothing to fit")]
    EmptyFit,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("symbol {symbol} outside alphabet of {levels}")]
    SymbolOutOfRange { symbol: u32, levels: u32 },
    #[error("malformed payload: {0}")]
    MalformedPayload(&'static str),
    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),
    #[error("bad magic in {0}")]
    BadMagic(&'static str),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("{0} truncated")]
    Truncated(&'static str),
    #[error("trailing bytes after {0}")]
    TrailingBytes(&'static str),
    #[error("quantized stream needs a sidecar")]
    MissingSidecar,
    #[error("sidecar mismatch: {0}")]
    SidecarMismatch(&'static str),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Transmitter bound to one checkpoint, grid and (optional) sidecar.
pub struct Encoder<'a> {
    checkpoint: &'a Checkpoint,
    evaluator: Evaluator<'a, f32>,
    grid: CoordinateGrid,
    sidecar: Option<&'a Sidecar>,
    inner_steps: usize,
    inner_lr: f64,
    raw_only: bool,
}

impl<'a> Encoder<'a> {
    pub fn new(
        checkpoint: &'a Checkpoint,
        grid: CoordinateGrid,
        sidecar: Option<&'a Sidecar>,
        inner_steps: usize,
        inner_lr: f64,
    ) -> Result<Self, CodecError> {
        if let Some(s) = sidecar {
            check_sidecar_dim(checkpoint, s)?;
        }
        let coords = grid.coords::<f32>();
        let evaluator = Evaluator::new(&checkpoint.params, coords.view())?;
        Ok(Self { checkpoint, evaluator, grid, sidecar, inner_steps, inner_lr, raw_only: false })
    }

    /// Skips the range coder and always packs quantized symbols at `b` bits.
    pub fn raw_only(mut self) -> Self {
        self.raw_only = true;
        self
    }

    pub fn grid(&self) -> &CoordinateGrid {
        &self.grid
    }

    /// Inner-loop fit of a channel given in the original (unnormalized)
    /// domain.
    pub fn fit_codeword(&self, channel: &ChannelMatrix) -> Result<Codeword, CodecError> {
        let shape = (self.grid.num_antennas, self.grid.num_subcarriers);
        if channel.shape() != shape {
            return Err(EngineError::ShapeMismatch { what: "channel", expected: self.grid.len(), got: channel.len() }.into());
        }
        let targets: Array2<f32> = channel_targets(&channel.scaled(1.0 / self.checkpoint.s_norm));
        let code = adapt_codeword(&self.evaluator, &targets, self.inner_steps, self.inner_lr)?;
        Ok(Codeword::from_array(&code))
    }

    pub fn encode(&self, channel: &ChannelMatrix) -> Result<Bitstream, CodecError> {
        self.encode_codeword(&self.fit_codeword(channel)?)
    }

    /// Serializes an already fitted codeword.
    pub fn encode_codeword(&self, codeword: &Codeword) -> Result<Bitstream, CodecError> {
        let n = self.checkpoint.params.arch.codeword_dim;
        if codeword.len() != n {
            return Err(CodecError::LengthMismatch { expected: n, got: codeword.len() });
        }
        let Some(sidecar) = self.sidecar else {
            let payload: Vec<u8> = codeword.0.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
            return Ok(Bitstream {
                codeword_dim: n,
                bit_width: 32,
                kind: PayloadKind::Unquantized,
                sidecar_hash: 0,
                payload_bits: 32 * n as u64,
                payload,
            });
        };
        let symbols = sidecar.quantizer.quantize(codeword)?;
        let (kind, payload, payload_bits) = code_symbols(&symbols, &sidecar.table, self.raw_only)?;
        Ok(Bitstream {
            codeword_dim: n,
            bit_width: sidecar.bit_width(),
            kind,
            sidecar_hash: sidecar.hash(),
            payload_bits,
            payload,
        })
    }
}

/// Receiver bound to one checkpoint, grid and (optional) sidecar.
pub struct Decoder<'a> {
    checkpoint: &'a Checkpoint,
    evaluator: Evaluator<'a, f32>,
    grid: CoordinateGrid,
    sidecar: Option<&'a Sidecar>,
    sidecar_hash: u64,
}

impl<'a> Decoder<'a> {
    pub fn new(checkpoint: &'a Checkpoint, grid: CoordinateGrid, sidecar: Option<&'a Sidecar>) -> Result<Self, CodecError> {
        if let Some(s) = sidecar {
            check_sidecar_dim(checkpoint, s)?;
        }
        let coords = grid.coords::<f32>();
        let evaluator = Evaluator::new(&checkpoint.params, coords.view())?;
        let sidecar_hash = sidecar.map_or(0, Sidecar::hash);
        Ok(Self { checkpoint, evaluator, grid, sidecar, sidecar_hash })
    }

    pub fn decode_codeword(&self, stream: &Bitstream) -> Result<Codeword, CodecError> {
        let n = self.checkpoint.params.arch.codeword_dim;
        if stream.codeword_dim != n {
            return Err(CodecError::LengthMismatch { expected: n, got: stream.codeword_dim });
        }
        if stream.kind == PayloadKind::Unquantized {
            if stream.payload_bits != 32 * n as u64 {
                return Err(CodecError::MalformedPayload("unquantized payload must hold n f32 values"));
            }
            let values = stream.payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
            return Ok(Codeword(values.collect()));
        }
        let sidecar = self.sidecar.ok_or(CodecError::MissingSidecar)?;
        if stream.sidecar_hash != self.sidecar_hash {
            return Err(CodecError::SidecarMismatch("hash differs"));
        }
        if stream.bit_width != sidecar.bit_width() {
            return Err(CodecError::SidecarMismatch("bit width differs"));
        }
        let symbols = decode_symbols(stream.kind, &stream.payload, stream.payload_bits, &sidecar.table, n)?;
        sidecar.quantizer.dequantize(&symbols)
    }

    /// Reconstruction in the original (unnormalized) domain.
    pub fn decode(&self, stream: &Bitstream) -> Result<ChannelMatrix, CodecError> {
        let code = self.decode_codeword(stream)?;
        Ok(reconstruct_with(&self.evaluator, &code, &self.grid, self.checkpoint.s_norm)?)
    }
}

/// Range-codes `symbols`, falling back to fixed-width packing whenever the
/// coded payload would exceed `n · b` bits (or always, with `raw_only`).
pub fn code_symbols(
    symbols: &[u32],
    table: &FrequencyTable,
    raw_only: bool,
) -> Result<(PayloadKind, Vec<u8>, u64), CodecError> {
    let b = table.bit_width();
    let raw_bits = symbols.len() as u64 * b as u64;
    let coded = if raw_only { None } else { Some(entropy_encode(symbols, table)?) };
    Ok(match coded {
        Some((payload, bits)) if bits <= raw_bits => (PayloadKind::Entropy, payload, bits),
        _ => {
            let (payload, bits) = entropy::pack_raw(symbols, b)?;
            (PayloadKind::Raw, payload, bits)
        }
    })
}

/// Inverse of [`code_symbols`].
pub fn decode_symbols(
    kind: PayloadKind,
    payload: &[u8],
    bits: u64,
    table: &FrequencyTable,
    n: usize,
) -> Result<Vec<u32>, CodecError> {
    match kind {
        PayloadKind::Entropy => entropy_decode(payload, bits, table, n),
        PayloadKind::Raw => entropy::unpack_raw(payload, bits, table.bit_width(), n),
        PayloadKind::Unquantized => Err(CodecError::MalformedPayload("unquantized payload carries no symbols")),
    }
}

fn check_sidecar_dim(checkpoint: &Checkpoint, sidecar: &Sidecar) -> Result<(), CodecError> {
    if sidecar.dim() != checkpoint.params.arch.codeword_dim {
        return Err(CodecError::SidecarMismatch("codeword length differs from the checkpoint"));
    }
    Ok(())
}

/// One-shot transmitter: fit, then quantize and code when a sidecar is
/// given, otherwise send raw floats.
pub fn encode_sample(
    checkpoint: &Checkpoint,
    channel: &ChannelMatrix,
    inner_steps: usize,
    inner_lr: f64,
    sidecar: Option<&Sidecar>,
) -> Result<Bitstream, CodecError> {
    let grid = CoordinateGrid::new(channel.num_antennas(), channel.num_subcarriers());
    Encoder::new(checkpoint, grid, sidecar, inner_steps, inner_lr)?.encode(channel)
}

/// One-shot receiver.
pub fn decode_sample(
    checkpoint: &Checkpoint,
    stream: &Bitstream,
    grid: &CoordinateGrid,
    sidecar: Option<&Sidecar>,
) -> Result<ChannelMatrix, CodecError> {
    Decoder::new(checkpoint, *grid, sidecar)?.decode(stream)
}
