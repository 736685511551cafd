//! Static-model range coding of quantized symbols.
//!
//! The coder is the carry-propagating byte-oriented scheme with a 32-bit
//! range and a 33-bit low register. Two trims keep short messages short:
//! the always-zero leading byte is not transmitted, and the final value is
//! chosen with as many trailing zero bits as the last interval allows, which
//! are then dropped. The decoder reads zeros past the end of the payload.

use super::CodecError;

/// Upper limit on the cumulative frequency total.
pub const MAX_TOTAL: u32 = 1 << 16;
const TOP: u32 = 1 << 24;

/// Pooled symbol counts with cumulative totals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<u32>,
    cumulative: Vec<u32>,
}

impl FrequencyTable {
    /// Builds a table from final counts; each must be ≥ 1 and the sum at
    /// most [`MAX_TOTAL`].
    pub fn from_counts(counts: Vec<u32>) -> Result<Self, CodecError> {
        if counts.len() < 2 || !counts.len().is_power_of_two() {
            return Err(CodecError::InvalidTable("alphabet size must be a power of two ≥ 2"));
        }
        if counts.contains(&0) {
            return Err(CodecError::InvalidTable("every symbol needs a nonzero count"));
        }
        let mut cumulative = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u64;
        cumulative.push(0);
        for &c in &counts {
            acc += c as u64;
            if acc > MAX_TOTAL as u64 {
                return Err(CodecError::InvalidTable("total exceeds 2^16"));
            }
            cumulative.push(acc as u32);
        }
        Ok(Self { counts, cumulative })
    }

    /// Laplace-smoothed table with all symbols equally likely.
    pub fn uniform(bit_width: u32) -> Result<Self, CodecError> {
        Self::from_counts(vec![1; alphabet(bit_width)?])
    }

    pub fn bit_width(&self) -> u32 {
        self.counts.len().trailing_zeros()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    pub fn total(&self) -> u32 {
        *self.cumulative.last().expect("nonempty")
    }

    pub fn probability(&self, symbol: u32) -> f64 {
        self.counts[symbol as usize] as f64 / self.total() as f64
    }

    /// Ideal code length of `symbols` in bits.
    pub fn information_bits(&self, symbols: &[u32]) -> f64 {
        symbols.iter().map(|&s| -self.probability(s).log2()).sum()
    }

    fn symbol_for(&self, target: u32) -> u32 {
        // last index with cumulative[i] <= target
        (self.cumulative.partition_point(|&c| c <= target) - 1) as u32
    }
}

fn alphabet(bit_width: u32) -> Result<usize, CodecError> {
    if !(1..=super::quantizer::MAX_BIT_WIDTH).contains(&bit_width) {
        return Err(CodecError::InvalidBitWidth(bit_width));
    }
    Ok(1usize << bit_width)
}

/// Pooled counts over all dimensions plus one, rescaled if needed so the
/// total fits in 16 bits while no count drops below one.
pub fn fit_frequency_table<'a, I>(symbol_vectors: I, bit_width: u32) -> Result<FrequencyTable, CodecError>
where
    I: IntoIterator<Item = &'a [u32]>,
{
    let size = alphabet(bit_width)?;
    let mut raw = vec![1u64; size];
    let mut seen = 0usize;
    for v in symbol_vectors {
        seen += 1;
        for &s in v {
            let slot = raw
                .get_mut(s as usize)
                .ok_or(CodecError::SymbolOutOfRange { symbol: s, levels: size as u32 })?;
            *slot += 1;
        }
    }
    if seen == 0 {
        return Err(CodecError::EmptyFit);
    }
    let total: u64 = raw.iter().sum();
    let limit = MAX_TOTAL as u64;
    let counts = if total <= limit {
        raw.into_iter().map(|c| c as u32).collect()
    } else {
        // c' = 1 + floor((c − 1)·(L − K)/(T − K)) sums to at most L
        let k = size as u64;
        raw.into_iter().map(|c| (1 + (c - 1) as u128 * (limit - k) as u128 / (total - k) as u128) as u32).collect()
    };
    FrequencyTable::from_counts(counts)
}

struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, pending: 1, out: Vec::new() }
    }

    fn encode(&mut self, start: u32, size: u32, total: u32) {
        let r = self.range / total;
        self.low += r as u64 * start as u64;
        self.range = r * size;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.pending -= 1;
                if self.pending == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Returns the payload and its length in bits.
    fn finish(mut self) -> (Vec<u8>, u64) {
        // pick the value in [low, low + range) with the most trailing zeros
        let end = self.low + self.range as u64;
        for k in 0..=32u32 {
            let step = 1u64 << (32 - k);
            let v = (self.low + step - 1) & !(step - 1);
            if v < end {
                self.low = v;
                break;
            }
        }
        for _ in 0..5 {
            self.shift_low();
        }
        let mut out = self.out;
        debug_assert_eq!(out.first(), Some(&0));
        out.remove(0);
        while out.last() == Some(&0) {
            out.pop();
        }
        let bits = match out.last() {
            Some(&b) => out.len() as u64 * 8 - b.trailing_zeros() as u64,
            None => 0,
        };
        (out, bits)
    }
}

struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    fn new(data: &'a [u8]) -> Self {
        let mut d = Self { data, pos: 0, range: u32::MAX, code: 0 };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    fn decode(&mut self, table: &FrequencyTable) -> Result<u32, CodecError> {
        let total = table.total();
        let r = self.range / total;
        let target = self.code / r;
        if target >= total {
            return Err(CodecError::MalformedPayload("code value beyond the model total"));
        }
        let s = table.symbol_for(target);
        let cum = table.cumulative();
        self.code -= r * cum[s as usize];
        self.range = r * (cum[s as usize + 1] - cum[s as usize]);
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte() as u32;
        }
        Ok(s)
    }
}

/// Range-codes `symbols`; returns the payload bytes and the exact number of
/// significant bits (the last byte is zero-padded).
pub fn entropy_encode(symbols: &[u32], table: &FrequencyTable) -> Result<(Vec<u8>, u64), CodecError> {
    let levels = table.len() as u32;
    let cum = table.cumulative();
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        if s >= levels {
            return Err(CodecError::SymbolOutOfRange { symbol: s, levels });
        }
        let lo = cum[s as usize];
        enc.encode(lo, cum[s as usize + 1] - lo, table.total());
    }
    Ok(enc.finish())
}

/// Decodes `n` symbols from a payload produced by [`entropy_encode`].
pub fn entropy_decode(payload: &[u8], bits: u64, table: &FrequencyTable, n: usize) -> Result<Vec<u32>, CodecError> {
    check_payload_len(payload, bits)?;
    let mut dec = RangeDecoder::new(payload);
    let symbols = (0..n).map(|_| dec.decode(table)).collect::<Result<Vec<_>, _>>()?;
    if dec.pos < payload.len() {
        return Err(CodecError::MalformedPayload("trailing bytes after the last symbol"));
    }
    Ok(symbols)
}

/// Packs symbols MSB-first at `bit_width` bits each.
pub fn pack_raw(symbols: &[u32], bit_width: u32) -> Result<(Vec<u8>, u64), CodecError> {
    let levels = alphabet(bit_width)? as u32;
    let bits = symbols.len() as u64 * bit_width as u64;
    let mut out = vec![0u8; bits.div_ceil(8) as usize];
    let mut pos = 0u64;
    for &s in symbols {
        if s >= levels {
            return Err(CodecError::SymbolOutOfRange { symbol: s, levels });
        }
        for i in (0..bit_width).rev() {
            if (s >> i) & 1 == 1 {
                out[(pos / 8) as usize] |= 0x80 >> (pos % 8);
            }
            pos += 1;
        }
    }
    Ok((out, bits))
}

pub fn unpack_raw(payload: &[u8], bits: u64, bit_width: u32, n: usize) -> Result<Vec<u32>, CodecError> {
    alphabet(bit_width)?;
    check_payload_len(payload, bits)?;
    if bits != n as u64 * bit_width as u64 {
        return Err(CodecError::MalformedPayload("raw payload length does not match n·b"));
    }
    let mut pos = 0u64;
    let mut symbols = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s = 0u32;
        for _ in 0..bit_width {
            let bit = (payload[(pos / 8) as usize] >> (7 - pos % 8)) & 1;
            s = (s << 1) | bit as u32;
            pos += 1;
        }
        symbols.push(s);
    }
    Ok(symbols)
}

fn check_payload_len(payload: &[u8], bits: u64) -> Result<(), CodecError> {
    if payload.len() as u64 != bits.div_ceil(8) {
        return Err(CodecError::MalformedPayload("payload byte count does not match its bit length"));
    }
    Ok(())
}
