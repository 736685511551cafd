//! Per-dimension uniform scalar quantization of codewords.

use crate::model::Codeword;

use super::CodecError;

pub const MAX_BIT_WIDTH: u32 = 16;

/// Relative widening applied to each side of a fitted range.
const MARGIN: f64 = 0.01;
/// Half-width given to dimensions that never vary in the fitting set.
const DEGENERATE_HALF_WIDTH: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerConfig {
    pub bit_width: u32,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl QuantizerConfig {
    pub fn new(bit_width: u32, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, CodecError> {
        let q = Self { bit_width, lo, hi };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(1..=MAX_BIT_WIDTH).contains(&self.bit_width) {
            return Err(CodecError::InvalidBitWidth(self.bit_width));
        }
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(CodecError::InvalidQuantizer("bounds must be nonempty and of equal length"));
        }
        for (l, h) in self.lo.iter().zip(&self.hi) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(CodecError::InvalidQuantizer("every dimension needs finite lo < hi"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn levels(&self) -> u32 {
        1 << self.bit_width
    }

    /// Bin width of dimension `k`.
    pub fn step(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / self.levels() as f64
    }

    /// Index of the bin holding `x`; values outside `[lo, hi)` clamp to the
    /// end bins.
    pub fn quantize_value(&self, k: usize, x: f64) -> u32 {
        let t = ((x - self.lo[k]) / self.step(k)).floor();
        // NaN casts to 0
        (t.max(0.0) as u64).min(self.levels() as u64 - 1) as u32
    }

    pub fn dequantize_value(&self, k: usize, index: u32) -> f64 {
        self.lo[k] + (index as f64 + 0.5) * self.step(k)
    }

    pub fn quantize(&self, codeword: &Codeword) -> Result<Vec<u32>, CodecError> {
        self.check_len(codeword.len())?;
        Ok(codeword.0.iter().enumerate().map(|(k, &x)| self.quantize_value(k, x)).collect())
    }

    pub fn dequantize(&self, symbols: &[u32]) -> Result<Codeword, CodecError> {
        self.check_len(symbols.len())?;
        let levels = self.levels();
        symbols
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                if s >= levels {
                    Err(CodecError::SymbolOutOfRange { symbol: s, levels })
                } else {
                    Ok(self.dequantize_value(k, s))
                }
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Codeword)
    }

    fn check_len(&self, got: usize) -> Result<(), CodecError> {
        if got != self.dim() {
            return Err(CodecError::LengthMismatch { expected: self.dim(), got });
        }
        Ok(())
    }
}

/// Per-dimension min/max over `codewords`, each side widened by 1% of the
/// range.
pub fn fit_quantizer(codewords: &[Codeword], bit_width: u32) -> Result<QuantizerConfig, CodecError> {
    let first = codewords.first().ok_or(CodecError::EmptyFit)?;
    let n = first.len();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for c in codewords {
        if c.len() != n {
            return Err(CodecError::LengthMismatch { expected: n, got: c.len() });
        }
        if !c.is_finite() {
            return Err(CodecError::InvalidQuantizer("fitting codewords must be finite"));
        }
        for (k, &x) in c.0.iter().enumerate() {
            lo[k] = lo[k].min(x);
            hi[k] = hi[k].max(x);
        }
    }
    for k in 0..n {
        let range = hi[k] - lo[k];
        if range > 0.0 {
            lo[k] -= MARGIN * range;
            hi[k] += MARGIN * range;
        } else {
            lo[k] -= DEGENERATE_HALF_WIDTH;
            hi[k] += DEGENERATE_HALF_WIDTH;
        }
    }
    QuantizerConfig::new(bit_width, lo, hi)
}
