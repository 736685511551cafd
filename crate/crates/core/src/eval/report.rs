//! End-to-end evaluation of a checkpoint on a dataset.

use rayon::prelude::*;
use thiserror::Error;

use super::metrics::{mean_nmse, nmse, rates, MetricError, Nmse, Rates};
use crate::channel::{ChannelMatrix, Dataset};
use crate::checkpoint::Checkpoint;
use crate::codec::{Bitstream, CodecError, Decoder, Encoder, Sidecar};
use crate::model::{Codeword, CoordinateGrid};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Codec settings for one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalSettings<'a> {
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub sidecar: Option<&'a Sidecar>,
    /// Bypass the range coder (quantized streams only).
    pub raw_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_sample_nmse: Vec<f64>,
    pub nmse: Nmse,
    /// `n · b`, or `32 n` for unquantized codewords.
    pub raw_bits_per_sample: f64,
    /// Mean transmitted payload bits.
    pub coded_bits_per_sample: f64,
    pub rates: Rates,
    pub fingerprint: String,
}

/// One transmitted sample and what the receiver made of it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub codeword: Codeword,
    pub stream: Bitstream,
    pub reconstruction: ChannelMatrix,
    pub nmse: f64,
}

/// Channels of `data` in their original (unnormalized) domain.
pub fn original_domain(data: &Dataset) -> Vec<ChannelMatrix> {
    data.samples.iter().map(|h| h.scaled(data.s_norm)).collect()
}

/// Encodes and decodes every sample of `data`, in order.
pub fn run_samples(checkpoint: &Checkpoint, data: &Dataset, settings: &EvalSettings<'_>) -> Result<Vec<SampleOutcome>, EvalError> {
    let grid = CoordinateGrid::new(data.num_antennas, data.num_subcarriers);
    let mut encoder = Encoder::new(checkpoint, grid, settings.sidecar, settings.inner_steps, settings.inner_lr)?;
    if settings.raw_only {
        encoder = encoder.raw_only();
    }
    let decoder = Decoder::new(checkpoint, grid, settings.sidecar)?;
    data.samples
        .par_iter()
        .map(|h| {
            let original = h.scaled(data.s_norm);
            let codeword = encoder.fit_codeword(&original)?;
            let stream = encoder.encode_codeword(&codeword)?;
            let reconstruction = decoder.decode(&stream)?;
            let nmse = nmse(&original, &reconstruction)?.linear;
            Ok(SampleOutcome { codeword, stream, reconstruction, nmse })
        })
        .collect()
}

pub fn evaluate(
    checkpoint: &Checkpoint,
    data: &Dataset,
    settings: &EvalSettings<'_>,
    fingerprint: String,
) -> Result<MetricReport, EvalError> {
    let outcomes = run_samples(checkpoint, data, settings)?;
    Ok(summarize(checkpoint, data, settings, &outcomes, fingerprint)?)
}

pub fn summarize(
    checkpoint: &Checkpoint,
    data: &Dataset,
    settings: &EvalSettings<'_>,
    outcomes: &[SampleOutcome],
    fingerprint: String,
) -> Result<MetricReport, MetricError> {
    let n = checkpoint.params.arch.codeword_dim;
    let per_sample_nmse: Vec<f64> = outcomes.iter().map(|o| o.nmse).collect();
    let nmse = mean_nmse(&per_sample_nmse)?;
    let bit_width = settings.sidecar.map(Sidecar::bit_width);
    let raw_bits_per_sample = (n as u64 * bit_width.unwrap_or(32) as u64) as f64;
    let coded_bits_per_sample = outcomes.iter().map(|o| o.stream.payload_bits as f64).sum::<f64>() / outcomes.len() as f64;
    let rates = rates(n, bit_width, coded_bits_per_sample, data.num_antennas, data.num_subcarriers);
    Ok(MetricReport { per_sample_nmse, nmse, raw_bits_per_sample, coded_bits_per_sample, rates, fingerprint })
}
