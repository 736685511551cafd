//! Multipath MIMO-OFDM channel synthesis.
//!
//! A base station with a uniform linear array of `N_t` antennas serves a
//! single-antenna user over `N_c` subcarriers. Each channel matrix is the sum
//! of `P` propagation paths, each contributing a gain, a delay-induced phase
//! ramp across subcarriers, an initial phase and a steering vector across
//! antennas.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("invalid system config: {0}")]
    InvalidConfig(&'static str),
    #[error("invalid path set: {0}")]
    InvalidPaths(&'static str),
    #[error("invalid sampling spec: {0}")]
    InvalidSampling(&'static str),
    #[error("index ({antenna}, {subcarrier}) outside {num_antennas}x{num_subcarriers}")]
    IndexOutOfRange {
        antenna: usize,
        subcarrier: usize,
        num_antennas: usize,
        num_subcarriers: usize,
    },
    #[error("dataset must contain at least one sample")]
    EmptyDataset,
}

/// Physical parameters of the MIMO-OFDM link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConfig {
    pub num_antennas: usize,
    pub num_subcarriers: usize,
    /// Lowest subcarrier frequency in Hz.
    pub base_frequency: f64,
    pub subcarrier_spacing: f64,
    /// Antenna spacing in meters.
    pub antenna_spacing: f64,
    pub light_speed: f64,
    pub num_paths: usize,
    pub array_response: ArrayResponse,
}

/// Frequency at which the inter-antenna phase constant is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArrayResponse {
    /// Narrowband array: the steering vector is evaluated at the base
    /// frequency for every subcarrier, so every entry factors into a
    /// coordinate-independent path coefficient times a 2-D phase ramp.
    #[default]
    CarrierReferenced,
    /// Wideband array: each subcarrier steers with its own frequency.
    PerSubcarrier,
}

impl Default for SystemConfig {
    /// 32 antennas, 32 subcarriers splitting 100 MHz at 3.5 GHz, 10 paths,
    /// half-wavelength array.
    fn default() -> Self {
        let base_frequency = 3.5e9;
        Self {
            num_antennas: 32,
            num_subcarriers: 32,
            base_frequency,
            subcarrier_spacing: 100e6 / 32.0,
            antenna_spacing: SPEED_OF_LIGHT / (2.0 * base_frequency),
            light_speed: SPEED_OF_LIGHT,
            num_paths: 10,
            array_response: ArrayResponse::CarrierReferenced,
        }
    }
}

impl SystemConfig {
    /// Config with the default carrier and a half-wavelength array, with the
    /// 100 MHz band split uniformly across `num_subcarriers`.
    pub fn with_dims(num_antennas: usize, num_subcarriers: usize, num_paths: usize) -> Self {
        Self {
            num_antennas,
            num_subcarriers,
            num_paths,
            subcarrier_spacing: 100e6 / num_subcarriers.max(1) as f64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.num_antennas == 0 {
            return Err(ChannelError::InvalidConfig("num_antennas must be >= 1"));
        }
        if self.num_subcarriers == 0 {
            return Err(ChannelError::InvalidConfig("num_subcarriers must be >= 1"));
        }
        if self.num_paths == 0 {
            return Err(ChannelError::InvalidConfig("num_paths must be >= 1"));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.base_frequency) {
            return Err(ChannelError::InvalidConfig("base_frequency must be > 0"));
        }
        if !positive(self.subcarrier_spacing) {
            return Err(ChannelError::InvalidConfig("subcarrier_spacing must be > 0"));
        }
        if !positive(self.antenna_spacing) {
            return Err(ChannelError::InvalidConfig("antenna_spacing must be > 0"));
        }
        if !positive(self.light_speed) {
            return Err(ChannelError::InvalidConfig("light_speed must be > 0"));
        }
        Ok(())
    }

    /// Frequency of the `m`-th subcarrier (0-based).
    pub fn subcarrier_frequency(&self, m: usize) -> f64 {
        self.base_frequency + m as f64 * self.subcarrier_spacing
    }

    /// Frequency that drives the steering vector of a tone at `frequency`.
    pub fn steering_frequency(&self, frequency: f64) -> f64 {
        match self.array_response {
            ArrayResponse::CarrierReferenced => self.base_frequency,
            ArrayResponse::PerSubcarrier => frequency,
        }
    }

    /// Inter-antenna phase constant `2π d f / c`.
    pub fn phase_constant(&self, frequency: f64) -> f64 {
        2.0 * PI * self.antenna_spacing * frequency / self.light_speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: f64,
    /// Seconds.
    pub delay: f64,
    pub initial_phase: f64,
    /// Angle of departure in radians, within [-π/2, π/2].
    pub aod: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn new(paths: Vec<Path>) -> Self {
        Self { paths }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn total_gain(&self) -> f64 {
        self.paths.iter().map(|p| p.gain).sum()
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<(), ChannelError> {
        if self.paths.len() != cfg.num_paths {
            return Err(ChannelError::InvalidPaths("path count differs from num_paths"));
        }
        for p in &self.paths {
            if !(p.gain >= 0.0) || !p.gain.is_finite() {
                return Err(ChannelError::InvalidPaths("gain must be finite and >= 0"));
            }
            if !p.delay.is_finite() || !p.initial_phase.is_finite() {
                return Err(ChannelError::InvalidPaths("delay and phase must be finite"));
            }
            if !(-PI / 2.0..=PI / 2.0).contains(&p.aod) {
                return Err(ChannelError::InvalidPaths("aod outside [-pi/2, pi/2]"));
            }
        }
        Ok(())
    }
}

/// Complex `N_t x N_c` channel gains stored as two row-major real planes
/// (row = antenna, column = subcarrier).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    num_antennas: usize,
    num_subcarriers: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ChannelMatrix {
    pub fn zeros(num_antennas: usize, num_subcarriers: usize) -> Self {
        let len = num_antennas * num_subcarriers;
        Self { num_antennas, num_subcarriers, re: vec![0.0; len], im: vec![0.0; len] }
    }

    /// Panics if either plane length differs from `num_antennas * num_subcarriers`.
    pub fn from_planes(num_antennas: usize, num_subcarriers: usize, re: Vec<f64>, im: Vec<f64>) -> Self {
        assert_eq!(re.len(), num_antennas * num_subcarriers, "real plane size");
        assert_eq!(im.len(), num_antennas * num_subcarriers, "imaginary plane size");
        Self { num_antennas, num_subcarriers, re, im }
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    /// 0-based entry.
    pub fn get(&self, n: usize, m: usize) -> Complex64 {
        let k = n * self.num_subcarriers + m;
        Complex64::new(self.re[k], self.im[k])
    }

    pub fn set(&mut self, n: usize, m: usize, value: Complex64) {
        let k = n * self.num_subcarriers + m;
        self.re[k] = value.re;
        self.im[k] = value.im;
    }

    pub fn column(&self, m: usize) -> Vec<Complex64> {
        (0..self.num_antennas).map(|n| self.get(n, m)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            num_antennas: self.num_antennas,
            num_subcarriers: self.num_subcarriers,
            re: self.re.iter().map(|v| v * factor).collect(),
            im: self.im.iter().map(|v| v * factor).collect(),
        }
    }

    /// Largest real or imaginary magnitude.
    pub fn max_abs_component(&self) -> f64 {
        self.re.iter().chain(&self.im).fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn max_modulus(&self) -> f64 {
        self.re
            .iter()
            .zip(&self.im)
            .fold(0.0, |acc, (r, i)| acc.max(r.hypot(*i)))
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.re.iter().chain(&self.im).map(|v| v * v).sum()
    }

    /// Squared Frobenius distance; panics on shape mismatch.
    pub fn distance_sq(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "channel shape mismatch");
        self.re
            .iter()
            .zip(&other.re)
            .chain(self.im.iter().zip(&other.im))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.num_antennas, self.num_subcarriers)
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }
}

impl std::ops::Add for &ChannelMatrix {
    type Output = ChannelMatrix;

    fn add(self, rhs: Self) -> ChannelMatrix {
        assert_eq!(self.shape(), rhs.shape(), "channel shape mismatch");
        ChannelMatrix {
            num_antennas: self.num_antennas,
            num_subcarriers: self.num_subcarriers,
            re: self.re.iter().zip(&rhs.re).map(|(a, b)| a + b).collect(),
            im: self.im.iter().zip(&rhs.im).map(|(a, b)| a + b).collect(),
        }
    }
}

/// ULA steering vector at departure angle `theta` and frequency `frequency`.
pub fn steering_vector(theta: f64, frequency: f64, cfg: &SystemConfig) -> Vec<Complex64> {
    let chi = cfg.phase_constant(frequency);
    let step = chi * theta.sin();
    (0..cfg.num_antennas)
        .map(|k| Complex64::from_polar(1.0, -step * k as f64))
        .collect()
}

/// `2π · frac((base + offset) · delay)`.
///
/// Delay phases reach ~10⁴ rad, where one ulp is ~10⁻¹². The frequency sum
/// and the product are carried in double-double so the reduced phase is
/// accurate to ~10⁻¹⁶ rad however the frequency is split.
fn delay_phase(base: f64, offset: f64, delay: f64) -> f64 {
    let sum = base + offset;
    let t = sum - base;
    let sum_err = (base - (sum - t)) + (offset - t);
    let prod = sum * delay;
    let prod_err = sum.mul_add(delay, -prod);
    let cycles = (prod - prod.round()) + (prod_err + sum_err * delay);
    2.0 * PI * cycles
}

/// Channel gain vector across antennas at a single frequency.
pub fn channel_vector(frequency: f64, paths: &PathSet, cfg: &SystemConfig) -> Vec<Complex64> {
    vector_at(frequency, 0.0, paths, cfg)
}

fn vector_at(base: f64, offset: f64, paths: &PathSet, cfg: &SystemConfig) -> Vec<Complex64> {
    let steer_at = cfg.steering_frequency(base + offset);
    let mut h = vec![Complex64::new(0.0, 0.0); cfg.num_antennas];
    for p in &paths.paths {
        let coeff = Complex64::from_polar(p.gain, p.initial_phase - delay_phase(base, offset, p.delay));
        for (acc, a) in h.iter_mut().zip(steering_vector(p.aod, steer_at, cfg)) {
            *acc += coeff * a;
        }
    }
    h
}

/// Stacks per-subcarrier channel vectors column by column.
pub fn channel_matrix(paths: &PathSet, cfg: &SystemConfig) -> ChannelMatrix {
    let mut h = ChannelMatrix::zeros(cfg.num_antennas, cfg.num_subcarriers);
    for m in 0..cfg.num_subcarriers {
        let column = vector_at(cfg.base_frequency, m as f64 * cfg.subcarrier_spacing, paths, cfg);
        for (n, v) in column.into_iter().enumerate() {
            h.set(n, m, v);
        }
    }
    h
}

/// Closed-form entry `H[n, m]` (1-based indices) written as a function of its
/// coordinates: `Σ_p A_p exp(-j[2π(m-1) f_Δ τ_p + χ (n-1) sin θ_p])` with the
/// path coefficient `A_p = α_p exp(-j2π f_0 τ_p + jφ_p)`.
pub fn channel_element(
    n: usize,
    m: usize,
    paths: &PathSet,
    cfg: &SystemConfig,
) -> Result<Complex64, ChannelError> {
    if n == 0 || m == 0 || n > cfg.num_antennas || m > cfg.num_subcarriers {
        return Err(ChannelError::IndexOutOfRange {
            antenna: n,
            subcarrier: m,
            num_antennas: cfg.num_antennas,
            num_subcarriers: cfg.num_subcarriers,
        });
    }
    let chi = cfg.phase_constant(cfg.steering_frequency(cfg.subcarrier_frequency(m - 1)));
    let (nf, mf) = ((n - 1) as f64, (m - 1) as f64);
    let mut acc = Complex64::new(0.0, 0.0);
    for p in &paths.paths {
        let coeff = Complex64::from_polar(p.gain, p.initial_phase - delay_phase(cfg.base_frequency, 0.0, p.delay));
        let phase = delay_phase(mf * cfg.subcarrier_spacing, 0.0, p.delay) + chi * nf * p.aod.sin();
        acc += coeff * Complex64::from_polar(1.0, -phase);
    }
    Ok(acc)
}

/// Distributions used to draw a fresh path set per sample.
///
/// Gains follow an exponential power-decay profile `g_p = e^{-p/P} u_p` with
/// `u_p ~ U(gain_jitter_min, gain_jitter_max)`, normalized to unit energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSampling {
    pub gain_jitter_min: f64,
    pub gain_jitter_max: f64,
    /// Delays are uniform on `[0, max_delay)` seconds.
    pub max_delay: f64,
}

impl Default for PathSampling {
    fn default() -> Self {
        Self { gain_jitter_min: 0.5, gain_jitter_max: 1.0, max_delay: 1e-6 }
    }
}

impl PathSampling {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.gain_jitter_min > 0.0) || !self.gain_jitter_min.is_finite() {
            return Err(ChannelError::InvalidSampling("gain_jitter_min must be > 0"));
        }
        if !(self.gain_jitter_max > self.gain_jitter_min) || !self.gain_jitter_max.is_finite() {
            return Err(ChannelError::InvalidSampling("gain_jitter_max must exceed gain_jitter_min"));
        }
        if !(self.max_delay > 0.0) || !self.max_delay.is_finite() {
            return Err(ChannelError::InvalidSampling("max_delay must be > 0"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, num_paths: usize, rng: &mut R) -> PathSet {
        let mut raw = Vec::with_capacity(num_paths);
        for p in 1..=num_paths {
            let u = rng.random_range(self.gain_jitter_min..self.gain_jitter_max);
            let g = (-(p as f64) / num_paths as f64).exp() * u;
            let delay = rng.random_range(0.0..self.max_delay);
            let initial_phase = rng.random_range(0.0..2.0 * PI);
            let aod = rng.random_range(-PI / 2.0..=PI / 2.0);
            raw.push(Path { gain: g, delay, initial_phase, aod });
        }
        let norm = raw.iter().map(|p| p.gain * p.gain).sum::<f64>().sqrt();
        for p in &mut raw {
            p.gain /= norm;
        }
        PathSet::new(raw)
    }
}

/// Per-sample RNG: one ChaCha stream per sample index, so generation order
/// does not affect the draws.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationMeta {
    pub system: SystemConfig,
    pub sampling: PathSampling,
}

/// A collection of globally normalized channel matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_antennas: usize,
    pub num_subcarriers: usize,
    pub seed: u64,
    /// Scale that was divided out of every sample.
    pub s_norm: f64,
    pub samples: Vec<ChannelMatrix>,
    /// Absent for datasets read back from disk.
    pub meta: Option<GenerationMeta>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Contiguous disjoint split into (train, val, test) of the given sizes.
    pub fn split(&self, train: usize, val: usize, test: usize) -> Option<(Dataset, Dataset, Dataset)> {
        if train + val + test > self.samples.len() {
            return None;
        }
        let part = |lo: usize, hi: usize| Dataset { samples: self.samples[lo..hi].to_vec(), ..self.empty_like() };
        Some((part(0, train), part(train, train + val), part(train + val, train + val + test)))
    }

    /// Samples in `range`, sharing normalization and metadata.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset { samples: self.samples[range].to_vec(), ..self.empty_like() }
    }

    fn empty_like(&self) -> Dataset {
        Dataset {
            num_antennas: self.num_antennas,
            num_subcarriers: self.num_subcarriers,
            seed: self.seed,
            s_norm: self.s_norm,
            samples: Vec::new(),
            meta: self.meta.clone(),
        }
    }
}

/// Draws `count` independent channels and divides all of them by one global
/// scale so that the largest real or imaginary component equals 1.
pub fn generate_dataset(
    count: usize,
    seed: u64,
    cfg: &SystemConfig,
    sampling: &PathSampling,
) -> Result<Dataset, ChannelError> {
    if count == 0 {
        return Err(ChannelError::EmptyDataset);
    }
    cfg.validate()?;
    sampling.validate()?;
    let raw: Vec<ChannelMatrix> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            let paths = sampling.sample(cfg.num_paths, &mut rng);
            channel_matrix(&paths, cfg)
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |acc, h| acc.max(h.max_abs_component()));
    let s_norm = if peak > 0.0 { peak } else { 1.0 };
    let samples = raw.iter().map(|h| h.scaled(1.0 / s_norm)).collect();
    Ok(Dataset {
        num_antennas: cfg.num_antennas,
        num_subcarriers: cfg.num_subcarriers,
        seed,
        s_norm,
        samples,
        meta: Some(GenerationMeta { system: *cfg, sampling: *sampling }),
    })
}
