//! Forward evaluation and exact reverse-mode gradients for the modulated
//! sinusoidal network.
//!
//! Everything here is specific to one fixed graph, evaluated coordinate-major
//! as dense `features x coordinates` matrices:
//!
//! ```text
//! F_0 = [cos(2πBx); sin(2πBx)]
//! E_i = W_i F_{i-1} + b_i
//! F_i = sin(ω₀ (γ_i ⊙ E_i + η_i)),   γ_i = W_γi M + b_γi,  η_i = W_ηi M + b_ηi
//! y   = W_out F_L + b_out
//! ```

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use thiserror::Error;

use crate::model::{Codeword, ModelParams, Real, Weights};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("tape does not belong to these inputs")]
    StaleTape,
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
}

fn expect_len(what: &'static str, expected: usize, got: usize) -> Result<(), EngineError> {
    if expected == got {
        Ok(())
    } else {
        Err(EngineError::ShapeMismatch { what, expected, got })
    }
}

/// Cached intermediates of one layer.
#[derive(Debug, Clone)]
pub struct LayerTape<T> {
    /// `E_i`, before modulation.
    pub pre: Array2<T>,
    /// `cos(ω₀ u_i)`, the activation derivative up to the `ω₀` factor.
    pub cos: Array2<T>,
    /// `F_i`.
    pub post: Array2<T>,
    pub scale: Array1<T>,
    pub shift: Array1<T>,
}

/// Intermediates of one forward pass; valid only for the parameters, codeword
/// and coordinates that produced it.
#[derive(Debug, Clone)]
pub struct ActivationTape<T> {
    pub fourier: Arc<Array2<T>>,
    pub layers: Vec<LayerTape<T>>,
    /// `2 x N` readout: row 0 real part, row 1 imaginary part.
    pub output: Array2<T>,
    pub codeword: Array1<T>,
}

impl<T> ActivationTape<T> {
    pub fn num_coords(&self) -> usize {
        self.output.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct GradientBundle<T> {
    pub loss: T,
    pub grad_codeword: Array1<T>,
    /// Absent when only the codeword gradient was requested. The Fourier
    /// matrix never receives a gradient.
    pub grad_params: Option<Weights<T>>,
}

/// Forward/backward evaluator bound to one parameter set and one coordinate
/// set. The Fourier features and the first layer's pre-activation do not
/// depend on the codeword, so they are computed once here and shared by every
/// pass.
pub struct Evaluator<'p, T: Real> {
    params: &'p ModelParams<T>,
    fourier: Arc<Array2<T>>,
    first_pre: Array2<T>,
}

/// `[cos(2πBx); sin(2πBx)]` for every column of `coords`.
pub fn fourier_features<T: Real>(fourier: &Array2<T>, coords: ArrayView2<'_, T>) -> Array2<T> {
    let d = fourier.nrows();
    let two_pi = T::of(2.0 * PI);
    let proj = fourier.dot(&coords);
    let mut out = Array2::zeros((2 * d, coords.ncols()));
    {
        let (mut c, mut s) = out.view_mut().split_at(Axis(0), d);
        Zip::from(&mut c).and(&mut s).and(&proj).for_each(|c, s, p| {
            let (sn, cs) = (two_pi * *p).sin_cos();
            *c = cs;
            *s = sn;
        });
    }
    out
}

fn affine<T: Real>(weight: &Array2<T>, input: &Array2<T>, bias: &Array1<T>) -> Array2<T> {
    let mut out = weight.dot(input);
    out += &bias.view().insert_axis(Axis(1));
    out
}

impl<'p, T: Real> Evaluator<'p, T> {
    pub fn new(params: &'p ModelParams<T>, coords: ArrayView2<'_, T>) -> Result<Self, EngineError> {
        expect_len("coordinate rows", 2, coords.nrows())?;
        expect_len("fourier rows", params.arch.hidden_dim, params.fourier.nrows())?;
        let fourier = fourier_features(&params.fourier, coords);
        let first = &params.weights.layers[0];
        expect_len("first layer inputs", fourier.nrows(), first.weight.ncols())?;
        let first_pre = affine(&first.weight, &fourier, &first.bias);
        Ok(Self { params, fourier: Arc::new(fourier), first_pre })
    }

    pub fn params(&self) -> &ModelParams<T> {
        self.params
    }

    pub fn num_coords(&self) -> usize {
        self.fourier.ncols()
    }

    pub fn forward(&self, codeword: ArrayView1<'_, T>) -> Result<(Array2<T>, ActivationTape<T>), EngineError> {
        let arch = &self.params.arch;
        expect_len("codeword", arch.codeword_dim, codeword.len())?;
        let omega = T::of(arch.omega0);
        let mut layers: Vec<LayerTape<T>> = Vec::with_capacity(arch.num_layers);
        for (i, lp) in self.params.weights.layers.iter().enumerate() {
            let pre = if i == 0 {
                self.first_pre.clone()
            } else {
                affine(&lp.weight, &layers[i - 1].post, &lp.bias)
            };
            let scale = lp.scale_weight.dot(&codeword) + &lp.scale_bias;
            let shift = lp.shift_weight.dot(&codeword) + &lp.shift_bias;
            let mut cos = Array2::zeros(pre.raw_dim());
            let mut post = Array2::zeros(pre.raw_dim());
            for (r, ((pre_row, mut cos_row), mut post_row)) in pre
                .outer_iter()
                .zip(cos.outer_iter_mut())
                .zip(post.outer_iter_mut())
                .enumerate()
            {
                let (g, h) = (scale[r], shift[r]);
                Zip::from(&pre_row).and(&mut cos_row).and(&mut post_row).for_each(|e, c, f| {
                    let (s, co) = (omega * (g * *e + h)).sin_cos();
                    *c = co;
                    *f = s;
                });
            }
            layers.push(LayerTape { pre, cos, post, scale, shift });
        }
        let last = &layers.last().expect("at least one layer").post;
        let output = affine(&self.params.weights.out_weight, last, &self.params.weights.out_bias);
        let tape = ActivationTape {
            fourier: Arc::clone(&self.fourier),
            layers,
            output: output.clone(),
            codeword: codeword.to_owned(),
        };
        Ok((output, tape))
    }

    fn check_tape(&self, tape: &ActivationTape<T>, targets: &Array2<T>) -> Result<(), EngineError> {
        let arch = &self.params.arch;
        if tape.layers.len() != arch.num_layers
            || tape.num_coords() != self.num_coords()
            || tape.codeword.len() != arch.codeword_dim
            || tape.layers.iter().any(|l| l.pre.nrows() != arch.hidden_dim)
        {
            return Err(EngineError::StaleTape);
        }
        expect_len("target rows", 2, targets.nrows())?;
        expect_len("target columns", self.num_coords(), targets.ncols())
    }

    /// Reverse pass. `with_params` selects whether weight gradients are
    /// accumulated; the codeword gradient is always produced.
    pub fn backward(
        &self,
        tape: &ActivationTape<T>,
        targets: &Array2<T>,
        with_params: bool,
    ) -> Result<GradientBundle<T>, EngineError> {
        self.check_tape(tape, targets)?;
        let weights = &self.params.weights;
        let n = T::of(self.num_coords() as f64);
        let omega = T::of(self.params.arch.omega0);

        let resid = &tape.output - targets;
        let loss = resid.iter().fold(T::zero(), |acc, r| acc + *r * *r) / n;
        let d_out = resid.mapv(|r| (r + r) / n);

        let mut grads = with_params.then(|| Weights::zeros(&self.params.arch));
        let mut grad_codeword = Array1::<T>::zeros(tape.codeword.len());
        if let Some(g) = grads.as_mut() {
            let last = &tape.layers.last().expect("at least one layer").post;
            g.out_weight = d_out.dot(&last.t());
            g.out_bias = d_out.sum_axis(Axis(1));
        }
        let mut d_post = weights.out_weight.t().dot(&d_out);

        for i in (0..weights.layers.len()).rev() {
            let lt = &tape.layers[i];
            let lp = &weights.layers[i];
            // du = dF ⊙ ω₀ cos(ω₀ u); reuse the buffer.
            let mut du = d_post;
            Zip::from(&mut du).and(&lt.cos).for_each(|d, c| *d = *d * omega * *c);
            let d_scale: Array1<T> = Zip::from(du.rows())
                .and(lt.pre.rows())
                .map_collect(|a, b| a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y));
            let d_shift = du.sum_axis(Axis(1));
            let mut d_pre = du;
            for (mut row, g) in d_pre.outer_iter_mut().zip(lt.scale.iter()) {
                row.mapv_inplace(|v| v * *g);
            }
            grad_codeword = grad_codeword + lp.scale_weight.t().dot(&d_scale) + lp.shift_weight.t().dot(&d_shift);
            if let Some(g) = grads.as_mut() {
                let gl = &mut g.layers[i];
                let input = if i == 0 { tape.fourier.as_ref() } else { &tape.layers[i - 1].post };
                gl.weight = d_pre.dot(&input.t());
                gl.bias = d_pre.sum_axis(Axis(1));
                gl.scale_weight = outer(&d_scale, &tape.codeword);
                gl.shift_weight = outer(&d_shift, &tape.codeword);
                gl.scale_bias = d_scale;
                gl.shift_bias = d_shift;
            }
            if i == 0 {
                break;
            }
            d_post = lp.weight.t().dot(&d_pre);
        }
        Ok(GradientBundle { loss, grad_codeword, grad_params: grads })
    }

    pub fn loss(&self, codeword: ArrayView1<'_, T>, targets: &Array2<T>) -> Result<T, EngineError> {
        let (pred, _) = self.forward(codeword)?;
        loss_mse(&pred, targets)
    }
}

fn outer<T: Real>(a: &Array1<T>, b: &Array1<T>) -> Array2<T> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (mut row, x) in out.outer_iter_mut().zip(a.iter()) {
        Zip::from(&mut row).and(b).for_each(|o, y| *o = *x * *y);
    }
    out
}

/// One forward pass over `coords` (`2 x N`).
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    codeword: ArrayView1<'_, T>,
    coords: ArrayView2<'_, T>,
) -> Result<(Array2<T>, ActivationTape<T>), EngineError> {
    Evaluator::new(params, coords)?.forward(codeword)
}

/// Mean complex squared error over coordinates; both inputs are `2 x N`.
pub fn loss_mse<T: Real>(predictions: &Array2<T>, targets: &Array2<T>) -> Result<T, EngineError> {
    expect_len("prediction rows", targets.nrows(), predictions.nrows())?;
    expect_len("prediction columns", targets.ncols(), predictions.ncols())?;
    let n = T::of(targets.ncols().max(1) as f64);
    let sum = Zip::from(predictions)
        .and(targets)
        .fold(T::zero(), |acc, p, t| acc + (*p - *t) * (*p - *t));
    Ok(sum / n)
}

/// Mean of per-sample losses, the batch form of the objective.
pub fn batch_loss_mse<T: Real>(pairs: &[(Array2<T>, Array2<T>)]) -> Result<T, EngineError> {
    let mut acc = T::zero();
    for (p, t) in pairs {
        acc += loss_mse(p, t)?;
    }
    Ok(acc / T::of(pairs.len().max(1) as f64))
}

pub fn backward_codeword<T: Real>(
    tape: &ActivationTape<T>,
    params: &ModelParams<T>,
    targets: &Array2<T>,
) -> Result<GradientBundle<T>, EngineError> {
    let ev = evaluator_for_tape(params, tape)?;
    ev.backward(tape, targets, false)
}

pub fn backward_params<T: Real>(
    tape: &ActivationTape<T>,
    params: &ModelParams<T>,
    targets: &Array2<T>,
) -> Result<GradientBundle<T>, EngineError> {
    let ev = evaluator_for_tape(params, tape)?;
    ev.backward(tape, targets, true)
}

fn evaluator_for_tape<'p, T: Real>(
    params: &'p ModelParams<T>,
    tape: &ActivationTape<T>,
) -> Result<Evaluator<'p, T>, EngineError> {
    if tape.fourier.nrows() != 2 * params.arch.hidden_dim || tape.layers.len() != params.arch.num_layers {
        return Err(EngineError::StaleTape);
    }
    // The tape already holds the Fourier features; only the first layer's
    // pre-activation is needed to build an evaluator, and it is on the tape.
    Ok(Evaluator { params, fourier: Arc::clone(&tape.fourier), first_pre: tape.layers[0].pre.clone() })
}

/// Sum of per-sample parameter gradients over `(codeword, targets)` pairs
/// sharing one coordinate set, reduced in input order.
pub fn batch_param_gradients<T: Real>(
    params: &ModelParams<T>,
    coords: ArrayView2<'_, T>,
    items: &[(Array1<T>, Array2<T>)],
) -> Result<(T, Weights<T>), EngineError> {
    let ev = Evaluator::new(params, coords)?;
    let mut total = Weights::zeros(&params.arch);
    let mut loss = T::zero();
    for (code, targets) in items {
        let (_, tape) = ev.forward(code.view())?;
        let g = ev.backward(&tape, targets, true)?;
        loss += g.loss;
        total.add_assign(g.grad_params.as_ref().expect("requested"));
    }
    Ok((loss, total))
}

/// Agreement of one gradient block with its finite-difference estimate.
///
/// `max_rel_error` is normwise, `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`. The
/// elementwise ratio is reported too but is dominated by entries whose
/// gradient is tiny next to their curvature, where the O(h²) truncation
/// error of the central difference is not small relative to the entry.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub len: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub max_elementwise_rel_error: f64,
}

#[derive(Default)]
struct BlockAccumulator {
    max_abs_error: f64,
    scale: f64,
    elementwise: f64,
}

impl BlockAccumulator {
    fn push(&mut self, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs();
        self.max_abs_error = self.max_abs_error.max(err);
        self.scale = self.scale.max(analytic.abs()).max(numeric.abs());
        self.elementwise = self.elementwise.max(err / analytic.abs().max(numeric.abs()).max(1e-300));
    }

    fn finish(self, name: String, len: usize) -> BlockError {
        let max_rel_error = if self.max_abs_error == 0.0 { 0.0 } else { self.max_abs_error / self.scale.max(1e-300) };
        BlockError {
            name,
            len,
            max_abs_error: self.max_abs_error,
            max_rel_error,
            max_elementwise_rel_error: if self.max_abs_error == 0.0 { 0.0 } else { self.elementwise },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    pub step: f64,
    pub blocks: Vec<BlockError>,
}

impl FiniteDiffReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().fold(0.0, |acc, b| acc.max(b.max_rel_error))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error.is_finite())
    }
}

/// Compares analytic gradients against central differences
/// `(f(x+h) - f(x-h)) / 2h` for every scalar of the codeword and every
/// trainable block.
pub fn finite_diff_check(
    params: &ModelParams<f64>,
    codeword: &Codeword,
    coords: ArrayView2<'_, f64>,
    targets: &Array2<f64>,
    step: f64,
) -> Result<FiniteDiffReport, EngineError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(EngineError::InvalidStep(step));
    }
    let code = codeword.to_array::<f64>();
    let ev = Evaluator::new(params, coords)?;
    let (_, tape) = ev.forward(code.view())?;
    let analytic = ev.backward(&tape, targets, true)?;
    let grad_params = analytic.grad_params.expect("requested");

    let mut blocks = Vec::new();
    let mut acc = BlockAccumulator::default();
    let mut probe = code.clone();
    for k in 0..code.len() {
        probe[k] = code[k] + step;
        let up = ev.loss(probe.view(), targets)?;
        probe[k] = code[k] - step;
        let down = ev.loss(probe.view(), targets)?;
        probe[k] = code[k];
        acc.push(analytic.grad_codeword[k], (up - down) / (2.0 * step));
    }
    blocks.push(acc.finish("codeword".into(), code.len()));

    let names = params.weights.block_names();
    let mut shifted = params.clone();
    for (b, (name, grad)) in names.iter().zip(grad_params.blocks()).enumerate() {
        let mut acc = BlockAccumulator::default();
        for (k, &g) in grad.iter().enumerate() {
            let orig = params.weights.blocks()[b][k];
            let mut eval_at = |v: f64| -> Result<f64, EngineError> {
                shifted.weights.blocks_mut()[b][k] = v;
                let r = Evaluator::new(&shifted, coords)?.loss(code.view(), targets);
                shifted.weights.blocks_mut()[b][k] = orig;
                r
            };
            let up = eval_at(orig + step)?;
            let down = eval_at(orig - step)?;
            acc.push(g, (up - down) / (2.0 * step));
        }
        blocks.push(acc.finish(name.clone(), grad.len()));
    }
    Ok(FiniteDiffReport { step, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ArchConfig, CoordinateGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch(d: usize, l: usize, n: usize) -> ArchConfig {
        ArchConfig { hidden_dim: d, num_layers: l, codeword_dim: n, omega0: 30.0, fourier_scale: 1.0 }
    }

    /// Random, non-identity state in double precision: fresh weights with
    /// jittered biases, a random codeword and random targets.
    fn random_state(seed: u64, a: ArchConfig, grid: CoordinateGrid) -> (ModelParams<f64>, Codeword, Array2<f64>) {
        let mut params = init_params(seed, a).unwrap().cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for l in &mut params.weights.layers {
            l.bias.mapv_inplace(|_| rng.random_range(-0.05..0.05));
            l.scale_bias.mapv_inplace(|v| v + rng.random_range(-0.2..0.2));
            l.shift_bias.mapv_inplace(|_| rng.random_range(-0.05..0.05));
        }
        params.weights.out_bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        let code = Codeword((0..a.codeword_dim).map(|_| rng.random_range(-0.5..0.5)).collect());
        let targets = Array2::from_shape_fn((2, grid.len()), |_| rng.random_range(-1.0..1.0));
        (params, code, targets)
    }

    /// Plain SIREN stack with no modulation, written independently.
    fn unmodulated(params: &ModelParams<f64>, x: f64, y: f64) -> (f64, f64) {
        let w = params.arch.omega0;
        let d = params.arch.hidden_dim;
        let mut feat = vec![0.0; 2 * d];
        for r in 0..d {
            let p = 2.0 * PI * (params.fourier[[r, 0]] * x + params.fourier[[r, 1]] * y);
            feat[r] = p.cos();
            feat[d + r] = p.sin();
        }
        for l in &params.weights.layers {
            feat = (0..d)
                .map(|r| {
                    let e: f64 = (0..feat.len()).map(|c| l.weight[[r, c]] * feat[c]).sum::<f64>() + l.bias[r];
                    (w * e).sin()
                })
                .collect();
        }
        let o = &params.weights;
        let re = (0..d).map(|c| o.out_weight[[0, c]] * feat[c]).sum::<f64>() + o.out_bias[0];
        let im = (0..d).map(|c| o.out_weight[[1, c]] * feat[c]).sum::<f64>() + o.out_bias[1];
        (re, im)
    }

    #[test]
    fn zero_codeword_is_identity_modulation() {
        let params = init_params(4, arch(8, 3, 4)).unwrap().cast::<f64>();
        let grid = CoordinateGrid::new(3, 5);
        let (out, tape) = forward(&params, Array1::zeros(4).view(), grid.coords::<f64>().view()).unwrap();
        for l in &tape.layers {
            assert!(l.scale.iter().all(|v| *v == 1.0));
            assert!(l.shift.iter().all(|v| *v == 0.0));
        }
        for i in 0..3 {
            for j in 0..5 {
                let (x, y) = grid.point(i, j);
                let (re, im) = unmodulated(&params, x, y);
                let k = i * 5 + j;
                assert!((out[[0, k]] - re).abs() < 1e-12);
                assert!((out[[1, k]] - im).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn origin_fourier_features() {
        let params = init_params(1, arch(6, 1, 2)).unwrap().cast::<f64>();
        let coords = Array2::zeros((2, 1));
        let f = fourier_features(&params.fourier, coords.view());
        let col: Vec<f64> = f.column(0).to_vec();
        assert_eq!(&col[..6], &[1.0; 6]);
        assert_eq!(&col[6..], &[0.0; 6]);
    }

    #[test]
    fn one_neuron_closed_form() {
        let a = ArchConfig { hidden_dim: 1, num_layers: 1, codeword_dim: 1, omega0: 2.0, fourier_scale: 1.0 };
        let mut p = ModelParams::<f64>::zeros(a);
        p.fourier[[0, 0]] = 0.3;
        p.fourier[[0, 1]] = -0.2;
        let l = &mut p.weights.layers[0];
        l.weight[[0, 0]] = 0.5;
        l.weight[[0, 1]] = -1.5;
        l.bias[0] = 0.1;
        l.scale_weight[[0, 0]] = 0.4;
        l.scale_bias[0] = 1.2;
        l.shift_weight[[0, 0]] = -0.7;
        l.shift_bias[0] = 0.05;
        p.weights.out_weight[[0, 0]] = 2.0;
        p.weights.out_weight[[1, 0]] = -3.0;
        p.weights.out_bias[0] = 0.25;
        p.weights.out_bias[1] = -0.5;
        let (x, y, m) = (0.6, -0.4, 0.8);
        // hand evaluation
        let phase = 2.0 * PI * (0.3 * x - 0.2 * y);
        let e = 0.5 * phase.cos() - 1.5 * phase.sin() + 0.1;
        let g = 0.4 * m + 1.2;
        let h = -0.7 * m + 0.05;
        let f = (2.0 * (g * e + h)).sin();
        let coords = Array2::from_shape_vec((2, 1), vec![x, y]).unwrap();
        let (out, _) = forward(&p, Array1::from_vec(vec![m]).view(), coords.view()).unwrap();
        assert!((out[[0, 0]] - (2.0 * f + 0.25)).abs() < 1e-14);
        assert!((out[[1, 0]] - (-3.0 * f - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn loss_examples() {
        let t = Array2::from_shape_vec((2, 1), vec![3.0, 4.0]).unwrap();
        assert_eq!(loss_mse(&Array2::zeros((2, 1)), &t).unwrap(), 25.0);
        assert_eq!(loss_mse(&t, &t).unwrap(), 0.0);
        assert!(loss_mse(&Array2::zeros((2, 2)), &t).is_err());
    }

    #[test]
    fn loss_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = Array2::from_shape_fn((2, 37), |_| rng.random_range(-2.0..2.0));
        let t = Array2::from_shape_fn((2, 37), |_| rng.random_range(-2.0..2.0));
        let mut naive = 0.0;
        for k in 0..37 {
            let dr: f64 = p[[0, k]] - t[[0, k]];
            let di: f64 = p[[1, k]] - t[[1, k]];
            naive += dr * dr + di * di;
        }
        assert!((loss_mse(&p, &t).unwrap() - naive / 37.0).abs() < 1e-12);
        let batch = batch_loss_mse(&[(p.clone(), t.clone()), (t.clone(), t.clone())]).unwrap();
        assert!((batch - naive / 74.0).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_gives_zero_gradients() {
        let grid = CoordinateGrid::new(3, 3);
        let (params, code, _) = random_state(2, arch(6, 2, 3), grid);
        let coords = grid.coords::<f64>();
        let (out, tape) = forward(&params, code.to_array().view(), coords.view()).unwrap();
        let g = backward_params(&tape, &params, &out).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.grad_codeword.iter().all(|v| *v == 0.0));
        assert!(g.grad_params.unwrap().blocks().iter().all(|b| b.iter().all(|v| *v == 0.0)));
        let g = backward_codeword(&tape, &params, &out).unwrap();
        assert!(g.grad_params.is_none());
        assert!(g.grad_codeword.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn codeword_gradient_matches_finite_differences() {
        let grid = CoordinateGrid::new(4, 4);
        let a = ArchConfig { hidden_dim: 32, num_layers: 3, codeword_dim: 8, ..ArchConfig::default() };
        let (params, code, targets) = random_state(9, a, grid);
        let coords = grid.coords::<f64>();
        let (_, tape) = forward(&params, code.to_array().view(), coords.view()).unwrap();
        let g = backward_codeword(&tape, &params, &targets).unwrap();
        let h = 1e-5;
        let ev = Evaluator::new(&params, coords.view()).unwrap();
        let base = code.to_array::<f64>();
        let scale = g.grad_codeword.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..8 {
            let mut up = base.clone();
            up[k] += h;
            let mut down = base.clone();
            down[k] -= h;
            let fd = (ev.loss(up.view(), &targets).unwrap() - ev.loss(down.view(), &targets).unwrap()) / (2.0 * h);
            assert!((g.grad_codeword[k] - fd).abs() < 1e-4 * scale, "k={k}: {} vs {fd}", g.grad_codeword[k]);
        }
    }

    #[test]
    fn full_finite_diff_report_passes() {
        let grid = CoordinateGrid::new(3, 4);
        let a = ArchConfig { hidden_dim: 32, num_layers: 3, codeword_dim: 8, ..ArchConfig::default() };
        let (params, code, targets) = random_state(21, a, grid);
        let coords = grid.coords::<f64>();
        let report = finite_diff_check(&params, &code, coords.view(), &targets, 1e-5).unwrap();
        assert_eq!(report.blocks.len(), 1 + 3 * 6 + 2);
        assert!(report.max_rel_error() < 1e-4, "{report:?}");
        for b in &report.blocks {
            assert!(b.max_rel_error <= b.max_elementwise_rel_error + 1e-15, "{b:?}");
        }
        let again = finite_diff_check(&params, &code, coords.view(), &targets, 1e-5).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn identity_state_self_check() {
        let grid = CoordinateGrid::new(3, 3);
        let a = ArchConfig { hidden_dim: 32, num_layers: 3, codeword_dim: 8, ..ArchConfig::default() };
        let params = init_params(5, a).unwrap().cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let targets = Array2::from_shape_fn((2, grid.len()), |_| rng.random_range(-1.0..1.0));
        let report = finite_diff_check(&params, &Codeword::zeros(8), grid.coords::<f64>().view(), &targets, 1e-5).unwrap();
        assert!(report.is_finite());
        assert!(report.max_rel_error() < 1e-4, "{report:?}");
    }

    #[test]
    fn zero_step_is_rejected() {
        let grid = CoordinateGrid::new(2, 2);
        let (params, code, targets) = random_state(1, arch(4, 1, 2), grid);
        let coords = grid.coords::<f64>();
        assert_eq!(
            finite_diff_check(&params, &code, coords.view(), &targets, 0.0),
            Err(EngineError::InvalidStep(0.0))
        );
    }

    #[test]
    fn batch_gradient_is_sum_of_samples() {
        let grid = CoordinateGrid::new(3, 3);
        let a = arch(8, 2, 3);
        let (params, _, _) = random_state(3, a, grid);
        let coords = grid.coords::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let items: Vec<(Array1<f64>, Array2<f64>)> = (0..4)
            .map(|_| {
                (
                    Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0)),
                    Array2::from_shape_fn((2, 9), |_| rng.random_range(-1.0..1.0)),
                )
            })
            .collect();
        let (loss, total) = batch_param_gradients(&params, coords.view(), &items).unwrap();
        let mut manual = Weights::<f64>::zeros(&a);
        let mut manual_loss = 0.0;
        for (c, t) in &items {
            let (_, tape) = forward(&params, c.view(), coords.view()).unwrap();
            let g = backward_params(&tape, &params, t).unwrap();
            manual_loss += g.loss;
            manual.add_assign(&g.grad_params.unwrap());
        }
        assert!((loss - manual_loss).abs() < 1e-10);
        for (x, y) in total.blocks().iter().zip(manual.blocks()) {
            for (a, b) in x.iter().zip(y) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let grid = CoordinateGrid::new(4, 3);
        let (params, code, _) = random_state(8, arch(8, 2, 3), grid);
        let coords = grid.coords::<f64>();
        let (a, _) = forward(&params, code.to_array().view(), coords.view()).unwrap();
        let (b, _) = forward(&params, code.to_array().view(), coords.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_errors() {
        let grid = CoordinateGrid::new(2, 2);
        let (params, _, targets) = random_state(1, arch(4, 2, 3), grid);
        let coords = grid.coords::<f64>();
        assert!(matches!(
            forward(&params, Array1::zeros(5).view(), coords.view()),
            Err(EngineError::ShapeMismatch { .. })
        ));
        let (_, tape) = forward(&params, Array1::zeros(3).view(), coords.view()).unwrap();
        let other = init_params(1, arch(4, 3, 3)).unwrap().cast::<f64>();
        assert_eq!(backward_params(&tape, &other, &targets).unwrap_err(), EngineError::StaleTape);
        let wrong_targets = Array2::zeros((2, 7));
        assert!(backward_codeword(&tape, &params, &wrong_targets).is_err());
    }
}
