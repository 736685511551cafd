//! Feedback wire format.
//!
//! Header (little-endian, 22 bytes): magic `CSIF`, version `u16`, codeword
//! length `u16`, bit width `u8` (32 for raw floats), payload kind `u8`,
//! sidecar hash `u64` (zero when unquantized), payload length in bits
//! `u32`. The payload follows, zero-padded to whole bytes.

use super::CodecError;

pub const MAGIC: &[u8; 4] = b"CSIF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    /// The codeword as `f32` values.
    Unquantized,
    /// Quantized symbols packed at `b` bits each.
    Raw,
    /// Quantized symbols range-coded with the sidecar table.
    Entropy,
}

impl PayloadKind {
    fn code(self) -> u8 {
        match self {
            PayloadKind::Unquantized => 0,
            PayloadKind::Raw => 1,
            PayloadKind::Entropy => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self, CodecError> {
        match code {
            0 => Ok(PayloadKind::Unquantized),
            1 => Ok(PayloadKind::Raw),
            2 => Ok(PayloadKind::Entropy),
            _ => Err(CodecError::MalformedHeader("unknown payload kind")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub codeword_dim: usize,
    pub bit_width: u32,
    pub kind: PayloadKind,
    pub sidecar_hash: u64,
    pub payload_bits: u64,
    pub payload: Vec<u8>,
}

impl Bitstream {
    pub fn is_quantized(&self) -> bool {
        self.kind != PayloadKind::Unquantized
    }

    /// Header plus payload, in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CodecError> {
        let n = u16::try_from(self.codeword_dim).map_err(|_| CodecError::MalformedHeader("codeword too long"))?;
        let b = u8::try_from(self.bit_width).map_err(|_| CodecError::MalformedHeader("bit width too large"))?;
        let bits = u32::try_from(self.payload_bits).map_err(|_| CodecError::MalformedHeader("payload too long"))?;
        if self.payload.len() as u64 != self.payload_bits.div_ceil(8) {
            return Err(CodecError::MalformedPayload("payload byte count does not match its bit length"));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
        out.push(b);
        out.push(self.kind.code());
        out.extend_from_slice(&self.sidecar_hash.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(CodecError::BadMagic("bitstream"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated("bitstream"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(CodecError::UnsupportedVersion(version as u32));
        }
        let codeword_dim = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let bit_width = bytes[8] as u32;
        let kind = PayloadKind::from_code(bytes[9])?;
        let sidecar_hash = u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes"));
        let payload_bits = u32::from_le_bytes(bytes[18..22].try_into().expect("4 bytes")) as u64;
        let len = payload_bits.div_ceil(8) as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < len {
            return Err(CodecError::Truncated("bitstream"));
        }
        if payload.len() > len {
            return Err(CodecError::TrailingBytes("bitstream"));
        }
        if kind == PayloadKind::Unquantized && bit_width != 32 {
            return Err(CodecError::MalformedHeader("unquantized streams carry 32-bit values"));
        }
        Ok(Self { codeword_dim, bit_width, kind, sidecar_hash, payload_bits, payload: payload.to_vec() })
    }
}
