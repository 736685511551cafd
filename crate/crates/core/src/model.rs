//! Model parameterization of the modulated sinusoidal coordinate network.
//!
//! A fixed Gaussian Fourier lift maps a normalized `(antenna, subcarrier)`
//! coordinate to `2 d_h` features, followed by `L_t` sine layers whose
//! pre-activations are scaled and shifted per sample by an affine map of the
//! codeword, and a final linear readout producing `(Re, Im)`.

use std::fmt::{Debug, Display};

use ndarray::{Array1, Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::channel::ChannelMatrix;
use crate::engine::{EngineError, Evaluator};

/// Floating-point element type of the network.
pub trait Real:
    Float + FromPrimitive + NumAssign + LinalgScalar + ScalarOperand + Send + Sync + Debug + Display + Default + 'static
{
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArch(&'static str),
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub codeword_dim: usize,
    pub omega0: f64,
    /// Standard deviation of the Fourier frequency matrix entries.
    pub fourier_scale: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { hidden_dim: 512, num_layers: 10, codeword_dim: 32, omega0: 50.0, fourier_scale: 10.0 }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_dim == 0 {
            return Err(ModelError::InvalidArch("hidden_dim must be >= 1"));
        }
        if self.num_layers == 0 {
            return Err(ModelError::InvalidArch("num_layers must be >= 1"));
        }
        if self.codeword_dim == 0 {
            return Err(ModelError::InvalidArch("codeword_dim must be >= 1"));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(ModelError::InvalidArch("omega0 must be > 0"));
        }
        if !(self.fourier_scale > 0.0 && self.fourier_scale.is_finite()) {
            return Err(ModelError::InvalidArch("fourier_scale must be > 0"));
        }
        Ok(())
    }

    /// Number of scalars in every parameter block, Fourier matrix included.
    pub fn parameter_count(&self) -> usize {
        let (d, n) = (self.hidden_dim, self.codeword_dim);
        let fourier = 2 * d;
        let first = d * 2 * d;
        let deeper = (self.num_layers - 1) * d * d;
        let per_layer = d + 2 * (d * n + d);
        fourier + first + deeper + self.num_layers * per_layer + 2 * d + 2
    }
}

/// One modulated sine layer: `sin(ω₀(γ ⊙ (W x + b) + η))` with
/// `γ = W_γ M + b_γ` and `η = W_η M + b_η`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub scale_weight: Array2<T>,
    pub scale_bias: Array1<T>,
    pub shift_weight: Array2<T>,
    pub shift_bias: Array1<T>,
}

impl<T: Real> LayerParams<T> {
    fn zeros(hidden: usize, input: usize, codeword: usize) -> Self {
        Self {
            weight: Array2::zeros((hidden, input)),
            bias: Array1::zeros(hidden),
            scale_weight: Array2::zeros((hidden, codeword)),
            scale_bias: Array1::zeros(hidden),
            shift_weight: Array2::zeros((hidden, codeword)),
            shift_bias: Array1::zeros(hidden),
        }
    }
}

/// Every trainable block. Gradients share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub layers: Vec<LayerParams<T>>,
    pub out_weight: Array2<T>,
    pub out_bias: Array1<T>,
}

pub const LAYER_BLOCK_NAMES: [&str; 6] = ["weight", "bias", "scale_weight", "scale_bias", "shift_weight", "shift_bias"];

impl<T: Real> Weights<T> {
    pub fn zeros(arch: &ArchConfig) -> Self {
        let d = arch.hidden_dim;
        let layers = (0..arch.num_layers)
            .map(|i| LayerParams::zeros(d, if i == 0 { 2 * d } else { d }, arch.codeword_dim))
            .collect();
        Self { layers, out_weight: Array2::zeros((2, d)), out_bias: Array1::zeros(2) }
    }

    /// Blocks in declaration order: per layer (W, b, W_γ, b_γ, W_η, b_η), then
    /// the readout weight and bias.
    pub fn blocks(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 6 + 2);
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
            out.push(l.scale_weight.as_slice().expect("standard layout"));
            out.push(l.scale_bias.as_slice().expect("standard layout"));
            out.push(l.shift_weight.as_slice().expect("standard layout"));
            out.push(l.shift_bias.as_slice().expect("standard layout"));
        }
        out.push(self.out_weight.as_slice().expect("standard layout"));
        out.push(self.out_bias.as_slice().expect("standard layout"));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 6 + 2);
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
            out.push(l.scale_weight.as_slice_mut().expect("standard layout"));
            out.push(l.scale_bias.as_slice_mut().expect("standard layout"));
            out.push(l.shift_weight.as_slice_mut().expect("standard layout"));
            out.push(l.shift_bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.out_weight.as_slice_mut().expect("standard layout"));
        out.push(self.out_bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.layers.len() {
            names.extend(LAYER_BLOCK_NAMES.iter().map(|b| format!("layer{}.{b}", i + 1)));
        }
        names.push("out.weight".into());
        names.push("out.bias".into());
        names
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for block in self.blocks_mut() {
            for x in block {
                *x *= factor;
            }
        }
    }

    pub fn norm(&self) -> T {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .fold(T::zero(), |acc, v| acc + *v * *v)
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> Weights<U> {
        let c1 = |a: &Array1<T>| a.mapv(|v| U::of(v.to_f64().expect("finite")));
        let c2 = |a: &Array2<T>| a.mapv(|v| U::of(v.to_f64().expect("finite")));
        Weights {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: c2(&l.weight),
                    bias: c1(&l.bias),
                    scale_weight: c2(&l.scale_weight),
                    scale_bias: c1(&l.scale_bias),
                    shift_weight: c2(&l.shift_weight),
                    shift_bias: c1(&l.shift_bias),
                })
                .collect(),
            out_weight: c2(&self.out_weight),
            out_bias: c1(&self.out_bias),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub arch: ArchConfig,
    /// `d_h x 2` Fourier frequencies; never trained.
    pub fourier: Array2<T>,
    pub weights: Weights<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(arch: ArchConfig) -> Self {
        Self { fourier: Array2::zeros((arch.hidden_dim, 2)), weights: Weights::zeros(&arch), arch }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch,
            fourier: self.fourier.mapv(|v| U::of(v.to_f64().expect("finite"))),
            weights: self.weights.cast(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.fourier.len() + self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.fourier.iter().all(|v| v.is_finite()) && self.weights.is_finite()
    }

    /// Checks every block against the shapes implied by `arch`.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.arch.validate()?;
        let expected = Self::zeros(self.arch);
        let check = |what, a: &[usize], b: &[usize]| {
            if a == b {
                Ok(())
            } else {
                Err(ModelError::ShapeMismatch { what, expected: b.iter().product(), got: a.iter().product() })
            }
        };
        check("fourier", self.fourier.shape(), expected.fourier.shape())?;
        if self.weights.layers.len() != self.arch.num_layers {
            return Err(ModelError::ShapeMismatch {
                what: "layer count",
                expected: self.arch.num_layers,
                got: self.weights.layers.len(),
            });
        }
        for (l, e) in self.weights.layers.iter().zip(&expected.weights.layers) {
            check("weight", l.weight.shape(), e.weight.shape())?;
            check("bias", l.bias.shape(), e.bias.shape())?;
            check("scale_weight", l.scale_weight.shape(), e.scale_weight.shape())?;
            check("scale_bias", l.scale_bias.shape(), e.scale_bias.shape())?;
            check("shift_weight", l.shift_weight.shape(), e.shift_weight.shape())?;
            check("shift_bias", l.shift_bias.shape(), e.shift_bias.shape())?;
        }
        check("out_weight", self.weights.out_weight.shape(), expected.weights.out_weight.shape())?;
        check("out_bias", self.weights.out_bias.shape(), expected.weights.out_bias.shape())?;
        Ok(())
    }
}

fn fill_uniform<R: Rng>(rng: &mut R, block: &mut [f32], bound: f64) {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    for v in block {
        *v = dist.sample(rng) as f32;
    }
}

/// Seeded initialization.
///
/// Sine weights follow the usual sinusoidal-network scheme (first layer
/// `U(±1/fan_in)`, deeper layers and the readout `U(±√(6/fan_in)/ω₀)`), the
/// modulation biases are `b_γ = 1`, `b_η = 0` so that the zero codeword is the
/// identity modulation, and the modulation weights are `U(±1/√n)`.
pub fn init_params(seed: u64, arch: ArchConfig) -> Result<ModelParams<f32>, ModelError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::<f32>::zeros(arch);
    let normal = Normal::new(0.0, arch.fourier_scale).expect("positive scale");
    for v in params.fourier.iter_mut() {
        *v = normal.sample(&mut rng) as f32;
    }
    let d = arch.hidden_dim as f64;
    let mod_bound = 1.0 / (arch.codeword_dim as f64).sqrt();
    for (i, layer) in params.weights.layers.iter_mut().enumerate() {
        let fan_in = layer.weight.ncols() as f64;
        let bound = if i == 0 { 1.0 / fan_in } else { (6.0 / fan_in).sqrt() / arch.omega0 };
        fill_uniform(&mut rng, layer.weight.as_slice_mut().expect("standard layout"), bound);
        layer.scale_bias.fill(1.0);
        fill_uniform(&mut rng, layer.scale_weight.as_slice_mut().expect("standard layout"), mod_bound);
        fill_uniform(&mut rng, layer.shift_weight.as_slice_mut().expect("standard layout"), mod_bound);
    }
    let out_bound = (6.0 / d).sqrt() / arch.omega0;
    fill_uniform(&mut rng, params.weights.out_weight.as_slice_mut().expect("standard layout"), out_bound);
    Ok(params)
}

/// Length-`n` modulation codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword(pub Vec<f64>);

impl Codeword {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn to_array<T: Real>(&self) -> Array1<T> {
        self.0.iter().map(|v| T::of(*v)).collect()
    }

    pub fn from_array<T: Real>(a: &Array1<T>) -> Self {
        Self(a.iter().map(|v| v.to_f64().expect("finite")).collect())
    }
}

/// Normalized coordinates of an `N_t x N_c` matrix. Index `(i, j)` (0-based)
/// maps to `(2i/(N_t-1) - 1, 2j/(N_c-1) - 1)`; a length-1 axis maps to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoordinateGrid {
    pub num_antennas: usize,
    pub num_subcarriers: usize,
}

fn axis_value(i: usize, len: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (len - 1) as f64 - 1.0
    }
}

fn axis_index(x: f64, len: usize) -> Option<usize> {
    if len <= 1 {
        return (x == 0.0).then_some(0);
    }
    let i = ((x + 1.0) * (len - 1) as f64 / 2.0).round();
    (i >= 0.0 && i < len as f64).then_some(i as usize)
}

impl CoordinateGrid {
    pub fn new(num_antennas: usize, num_subcarriers: usize) -> Self {
        Self { num_antennas, num_subcarriers }
    }

    pub fn len(&self) -> usize {
        self.num_antennas * self.num_subcarriers
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (axis_value(i, self.num_antennas), axis_value(j, self.num_subcarriers))
    }

    /// Inverse of [`CoordinateGrid::point`].
    pub fn index_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        Some((axis_index(x, self.num_antennas)?, axis_index(y, self.num_subcarriers)?))
    }

    /// `2 x N` matrix; column `i * N_c + j` holds the coordinate of `(i, j)`,
    /// matching the row-major layout of [`crate::channel::ChannelMatrix`].
    pub fn coords<T: Real>(&self) -> Array2<T> {
        let mut out = Array2::zeros((2, self.len()));
        for i in 0..self.num_antennas {
            for j in 0..self.num_subcarriers {
                let (x, y) = self.point(i, j);
                let k = i * self.num_subcarriers + j;
                out[[0, k]] = T::of(x);
                out[[1, k]] = T::of(y);
            }
        }
        out
    }
}

/// `2 x N` target matrix (real plane, imaginary plane) of a channel.
pub fn channel_targets<T: Real>(h: &ChannelMatrix) -> Array2<T> {
    let n = h.len();
    let mut out = Array2::zeros((2, n));
    for (k, (r, i)) in h.re().iter().zip(h.im()).enumerate() {
        out[[0, k]] = T::of(*r);
        out[[1, k]] = T::of(*i);
    }
    out
}

/// Evaluates the network over the whole grid and rescales by `s_norm` to
/// return to the original channel domain.
pub fn reconstruct<T: Real>(
    params: &ModelParams<T>,
    codeword: &Codeword,
    grid: &CoordinateGrid,
    s_norm: f64,
) -> Result<ChannelMatrix, EngineError> {
    let coords = grid.coords::<T>();
    let ev = Evaluator::new(params, coords.view())?;
    reconstruct_with(&ev, codeword, grid, s_norm)
}

/// [`reconstruct`] reusing an evaluator built over `grid`.
pub fn reconstruct_with<T: Real>(
    ev: &Evaluator<'_, T>,
    codeword: &Codeword,
    grid: &CoordinateGrid,
    s_norm: f64,
) -> Result<ChannelMatrix, EngineError> {
    if ev.num_coords() != grid.len() {
        return Err(EngineError::ShapeMismatch { what: "grid", expected: ev.num_coords(), got: grid.len() });
    }
    let (out, _) = ev.forward(codeword.to_array::<T>().view())?;
    let plane = |row: usize| -> Vec<f64> {
        out.row(row).iter().map(|v| v.to_f64().expect("finite") * s_norm).collect()
    };
    Ok(ChannelMatrix::from_planes(grid.num_antennas, grid.num_subcarriers, plane(0), plane(1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> ArchConfig {
        ArchConfig { hidden_dim: 64, num_layers: 5, codeword_dim: 16, ..ArchConfig::default() }
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_params(7, desk()).unwrap(), init_params(7, desk()).unwrap());
        assert_ne!(init_params(7, desk()).unwrap(), init_params(8, desk()).unwrap());
    }

    #[test]
    fn init_shapes_validate() {
        let p = init_params(1, desk()).unwrap();
        p.validate().unwrap();
        assert_eq!(p.parameter_count(), desk().parameter_count());
        assert_eq!(p.weights.layers[0].weight.dim(), (64, 128));
        assert_eq!(p.weights.layers[3].weight.dim(), (64, 64));
        assert_eq!(p.weights.layers[2].scale_weight.dim(), (64, 16));
        assert!(p.weights.layers.iter().all(|l| l.scale_bias.iter().all(|v| *v == 1.0)));
        assert!(p.weights.layers.iter().all(|l| l.shift_bias.iter().all(|v| *v == 0.0)));
        assert!(p.weights.layers.iter().all(|l| l.bias.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn fourier_entries_have_requested_spread() {
        let arch = ArchConfig { hidden_dim: 512, num_layers: 1, codeword_dim: 1, ..ArchConfig::default() };
        let p = init_params(3, arch).unwrap();
        let n = p.fourier.len() as f64;
        let mean = p.fourier.iter().map(|v| *v as f64).sum::<f64>() / n;
        let var = p.fourier.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - 10.0).abs() < 1.0, "stddev {}", var.sqrt());
    }

    #[test]
    fn sine_weight_bounds() {
        let arch = desk();
        let p = init_params(5, arch).unwrap();
        let first = 1.0 / 128.0;
        assert!(p.weights.layers[0].weight.iter().all(|v| v.abs() as f64 <= first + 1e-9));
        let deeper = (6.0f64 / 64.0).sqrt() / 50.0;
        assert!(p.weights.layers[1].weight.iter().all(|v| v.abs() as f64 <= deeper + 1e-9));
        assert!(p.weights.out_weight.iter().all(|v| v.abs() as f64 <= deeper + 1e-9));
    }

    #[test]
    fn closed_form_parameter_count() {
        // B: 2d, W1: 2d², W2..: (L-1)d², per layer b + 2(dn + d), readout 2d + 2
        let (d, l, n) = (64usize, 5usize, 16usize);
        let expected = 2 * d + 2 * d * d + (l - 1) * d * d + l * (d + 2 * (d * n + d)) + 2 * d + 2;
        assert_eq!(desk().parameter_count(), expected);
        assert_eq!(ModelParams::<f32>::zeros(desk()).parameter_count(), expected);
    }

    #[test]
    fn invalid_arch_is_rejected() {
        let bad = ArchConfig { hidden_dim: 0, ..desk() };
        assert!(init_params(0, bad).is_err());
        let bad = ArchConfig { omega0: 0.0, ..desk() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn grid_round_trips_indices() {
        for (nt, nc) in [(1, 1), (1, 5), (4, 1), (16, 16), (32, 7)] {
            let g = CoordinateGrid::new(nt, nc);
            for i in 0..nt {
                for j in 0..nc {
                    let (x, y) = g.point(i, j);
                    assert!((-1.0..=1.0).contains(&x) && (-1.0..=1.0).contains(&y));
                    assert_eq!(g.index_of(x, y), Some((i, j)));
                }
            }
        }
        let g = CoordinateGrid::new(3, 3);
        assert_eq!(g.point(0, 2), (-1.0, 1.0));
        assert_eq!(g.point(1, 1), (0.0, 0.0));
        assert_eq!(g.index_of(1.5, 0.0), None);
    }

    #[test]
    fn grid_coords_follow_row_major_layout() {
        let g = CoordinateGrid::new(2, 3);
        let c = g.coords::<f64>();
        assert_eq!(c.dim(), (2, 6));
        assert_eq!((c[[0, 4]], c[[1, 4]]), g.point(1, 1));
    }

    #[test]
    fn reconstruct_shape_and_scale() {
        let a = ArchConfig { hidden_dim: 8, num_layers: 2, codeword_dim: 3, ..desk() };
        let p = init_params(4, a).unwrap();
        let grid = CoordinateGrid::new(5, 3);
        let code = Codeword(vec![0.1, -0.2, 0.3]);
        let unit = reconstruct(&p, &code, &grid, 1.0).unwrap();
        assert_eq!(unit.shape(), (5, 3));
        let (raw, _) = crate::engine::forward(&p, code.to_array::<f32>().view(), grid.coords::<f32>().view()).unwrap();
        for k in 0..15 {
            assert_eq!(unit.re()[k], raw[[0, k]] as f64);
            assert_eq!(unit.im()[k], raw[[1, k]] as f64);
        }
        let scaled = reconstruct(&p, &code, &grid, 3.7).unwrap();
        assert_eq!(scaled, unit.scaled(3.7));
    }

    #[test]
    fn targets_follow_channel_layout() {
        let h = ChannelMatrix::from_planes(1, 2, vec![1.0, 2.0], vec![3.0, 4.0]);
        let t = channel_targets::<f64>(&h);
        assert_eq!(t, ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0]]));
    }

    #[test]
    fn weights_arithmetic() {
        let p = init_params(2, ArchConfig { hidden_dim: 4, num_layers: 2, codeword_dim: 3, ..desk() }).unwrap();
        let mut w = p.weights.clone();
        w.add_assign(&p.weights);
        w.scale(0.5);
        assert_eq!(w, p.weights);
        assert_eq!(w.blocks().len(), w.block_names().len());
        let back: Weights<f32> = w.cast::<f64>().cast();
        assert_eq!(back, w);
    }
}
