//! Reconstruction quality and rate accounting.

use thiserror::Error;

use crate::channel::ChannelMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("target channel has zero energy")]
    ZeroNormTarget,
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("no samples")]
    Empty,
}

/// Linear NMSE with its decibel value. A perfect reconstruction reports
/// `f64::NEG_INFINITY` dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nmse {
    pub linear: f64,
    pub db: f64,
}

impl Nmse {
    pub fn from_linear(linear: f64) -> Self {
        let db = if linear > 0.0 { 10.0 * linear.log10() } else { f64::NEG_INFINITY };
        Self { linear, db }
    }
}

pub fn to_db(linear: f64) -> f64 {
    Nmse::from_linear(linear).db
}

/// `‖H − Ĥ‖²_F / ‖H‖²_F` for one sample.
pub fn nmse(target: &ChannelMatrix, estimate: &ChannelMatrix) -> Result<Nmse, MetricError> {
    if target.shape() != estimate.shape() {
        return Err(MetricError::ShapeMismatch(target.shape(), estimate.shape()));
    }
    let energy = target.frobenius_sq();
    if energy <= 0.0 {
        return Err(MetricError::ZeroNormTarget);
    }
    Ok(Nmse::from_linear(target.distance_sq(estimate) / energy))
}

/// Dataset NMSE: the mean of per-sample ratios.
pub fn mean_nmse(per_sample: &[f64]) -> Result<Nmse, MetricError> {
    if per_sample.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(Nmse::from_linear(per_sample.iter().sum::<f64>() / per_sample.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    /// Codeword length over the number of real channel dimensions.
    pub compression_ratio: f64,
    /// Payload bits per real channel dimension.
    pub bit_rate: f64,
    /// Relative saving of the payload over `n * b` raw bits; `None` when the
    /// codeword is not quantized.
    pub coding_gain: Option<f64>,
}

/// Compression ratio `n / (2 N_t N_c)`, bit rate `bits / (2 N_t N_c)` and
/// coding gain `1 − bits / (n b)`.
pub fn rates(
    codeword_dim: usize,
    bit_width: Option<u32>,
    payload_bits: f64,
    num_antennas: usize,
    num_subcarriers: usize,
) -> Rates {
    let dims = (2 * num_antennas * num_subcarriers) as f64;
    Rates {
        compression_ratio: codeword_dim as f64 / dims,
        bit_rate: payload_bits / dims,
        coding_gain: bit_width.map(|b| 1.0 - payload_bits / (codeword_dim as f64 * b as f64)),
    }
}

/// Payload size implied by a coding gain, the inverse of [`rates`].
pub fn payload_bits_for_gain(codeword_dim: usize, bit_width: u32, coding_gain: f64) -> f64 {
    codeword_dim as f64 * bit_width as f64 * (1.0 - coding_gain)
}
