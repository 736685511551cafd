//! Meta-learning of the shared base network.
//!
//! Each sample gets its own codeword by a few plain gradient-descent steps
//! from zero with the base network frozen (inner loop). The base network is
//! then updated once per batch with Adam on the summed loss of the adapted
//! codewords, which are held fixed (first-order outer loop).

use std::io;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelMatrix, Dataset};
use crate::engine::{EngineError, Evaluator};
use crate::eval::metrics::{mean_nmse, nmse, MetricError};
use crate::model::{
    channel_targets, init_params, reconstruct_with, ArchConfig, Codeword, CoordinateGrid, ModelError, ModelParams,
    Real, Weights,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("inner loop diverged at step {step}")]
    InnerDiverged { step: usize },
    #[error("training diverged at epoch {epoch}, step {step}: {what}")]
    Diverged { epoch: usize, step: u64, what: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("dataset shape {got:?} does not match {expected:?}")]
    DatasetShape { expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global-norm clip on the outer gradient; off by default.
    pub grad_clip: Option<f64>,
    /// Inner steps used for validation; defaults to `inner_steps`.
    pub val_inner_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            inner_steps: 3,
            inner_lr: 1e-2,
            outer_lr: 1e-6,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            grad_clip: None,
            val_inner_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.inner_lr > 0.0 && self.inner_lr.is_finite()) {
            return Err(TrainError::InvalidConfig("inner_lr must be > 0"));
        }
        if !(self.outer_lr >= 0.0 && self.outer_lr.is_finite()) {
            return Err(TrainError::InvalidConfig("outer_lr must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(TrainError::InvalidConfig("grad_clip must be > 0"));
            }
        }
        Ok(())
    }
}

/// Plain gradient descent on the codeword from zero:
/// `M_j = M_{j-1} − α ∇_M L(θ, M_{j-1})`.
pub fn adapt_codeword<T: Real>(
    ev: &Evaluator<'_, T>,
    targets: &Array2<T>,
    steps: usize,
    lr: f64,
) -> Result<Array1<T>, TrainError> {
    let lr = T::of(lr);
    let mut code = Array1::zeros(ev.params().arch.codeword_dim);
    for step in 1..=steps {
        let (_, tape) = ev.forward(code.view())?;
        let g = ev.backward(&tape, targets, false)?;
        if !g.loss.is_finite() || g.grad_codeword.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::InnerDiverged { step });
        }
        code.scaled_add(-lr, &g.grad_codeword);
    }
    Ok(code)
}

/// Inner-loop encoding of one channel against frozen parameters.
pub fn inner_adapt(
    params: &ModelParams<f32>,
    grid: &CoordinateGrid,
    target: &ChannelMatrix,
    steps: usize,
    lr: f64,
) -> Result<Codeword, TrainError> {
    let coords = grid.coords::<f32>();
    let ev = Evaluator::new(params, coords.view())?;
    let code = adapt_codeword(&ev, &channel_targets(target), steps, lr)?;
    Ok(Codeword::from_array(&code))
}

/// Adam moments for every trainable block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first: Weights<T>,
    pub second: Weights<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(arch: &ArchConfig) -> Self {
        Self { first: Weights::zeros(arch), second: Weights::zeros(arch), step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One bias-corrected Adam update of `weights` along `grad`.
    pub fn apply(&mut self, weights: &mut Weights<T>, grad: &Weights<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        let blocks = weights
            .blocks_mut()
            .into_iter()
            .zip(grad.blocks())
            .zip(self.first.blocks_mut())
            .zip(self.second.blocks_mut());
        for (((w, g), m), v) in blocks {
            for (((w, g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (T::one() - b1) * *g;
                *v = b2 * *v + (T::one() - b2) * *g * *g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Summed first-order gradient of the batch loss with every codeword held
/// fixed, followed by one Adam update. Returns the mean per-sample loss.
pub fn outer_step(
    params: &mut ModelParams<f32>,
    adam: &mut AdamState<f32>,
    coords: ArrayView2<'_, f32>,
    batch: &[(Array1<f32>, Array2<f32>)],
    lr: f64,
    grad_clip: Option<f64>,
) -> Result<f64, TrainError> {
    let (loss, mut grad) = crate::engine::batch_param_gradients(params, coords, batch)?;
    finish_outer_step(params, adam, &mut grad, lr, grad_clip)?;
    Ok(loss as f64 / batch.len().max(1) as f64)
}

fn finish_outer_step(
    params: &mut ModelParams<f32>,
    adam: &mut AdamState<f32>,
    grad: &mut Weights<f32>,
    lr: f64,
    grad_clip: Option<f64>,
) -> Result<(), TrainError> {
    if !grad.is_finite() {
        return Err(TrainError::Diverged { epoch: 0, step: adam.step + 1, what: "non-finite gradient".into() });
    }
    if let Some(clip) = grad_clip {
        let norm = grad.norm() as f64;
        if norm > clip {
            grad.scale((clip / norm) as f32);
        }
    }
    adam.apply(&mut params.weights, grad, lr);
    Ok(())
}

/// Inner adaptation and parameter gradient for every batch element, reduced
/// in batch order.
fn adapted_batch_gradient(
    ev: &Evaluator<'_, f32>,
    batch: &[&Array2<f32>],
    steps: usize,
    lr: f64,
) -> Result<(f64, Weights<f32>), TrainError> {
    let per_sample: Vec<Result<(f32, Weights<f32>), TrainError>> = batch
        .par_iter()
        .map(|targets| {
            let code = adapt_codeword(ev, targets, steps, lr)?;
            let (_, tape) = ev.forward(code.view())?;
            let g = ev.backward(&tape, targets, true)?;
            Ok((g.loss, g.grad_params.expect("requested")))
        })
        .collect();
    let mut total = Weights::zeros(&ev.params().arch);
    let mut loss = 0.0f64;
    for r in per_sample {
        let (l, g) = r?;
        loss += l as f64;
        total.add_assign(&g);
    }
    Ok((loss / batch.len() as f64, total))
}

/// Mean NMSE of a dataset encoded with `steps` inner steps and decoded
/// without quantization.
pub fn evaluate_nmse(
    params: &ModelParams<f32>,
    data: &Dataset,
    steps: usize,
    lr: f64,
) -> Result<Vec<f64>, TrainError> {
    let grid = CoordinateGrid::new(data.num_antennas, data.num_subcarriers);
    let coords = grid.coords::<f32>();
    let ev = Evaluator::new(params, coords.view())?;
    data.samples
        .par_iter()
        .map(|h| {
            let code = adapt_codeword(&ev, &channel_targets(h), steps, lr)?;
            let rec = reconstruct_with(&ev, &Codeword::from_array(&code), &grid, 1.0)?;
            Ok(nmse(h, &rec)?.linear)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub loss: Option<f64>,
    pub epoch: usize,
    pub val_nmse_db: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    /// One row per outer step (with `loss`) and one per epoch (with
    /// `val_nmse_db`); epoch 0 is the untrained network.
    pub rows: Vec<LogRow>,
    /// Seconds since training began, one entry per epoch row.
    pub wall_clock: Vec<f64>,
}

impl TrainLog {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `(epoch, val_nmse_db)` pairs in order.
    pub fn validation(&self) -> Vec<(usize, f64)> {
        self.rows.iter().filter_map(|r| r.val_nmse_db.map(|v| (r.epoch, v))).collect()
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn check_shape(data: &Dataset, expected: (usize, usize)) -> Result<(), TrainError> {
    let got = (data.num_antennas, data.num_subcarriers);
    if got != expected {
        return Err(TrainError::DatasetShape { expected, got });
    }
    Ok(())
}

/// Full meta-training run. Returns the parameters with the best validation
/// NMSE seen (the untrained network included) and the log.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    arch: ArchConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams<f32>, TrainLog), TrainError> {
    train_with_progress(train_set, val_set, arch, cfg, |_| {})
}

/// [`train`] calling `progress` after every logged row.
pub fn train_with_progress(
    train_set: &Dataset,
    val_set: &Dataset,
    arch: ArchConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&LogRow),
) -> Result<(ModelParams<f32>, TrainLog), TrainError> {
    cfg.validate()?;
    let shape = (train_set.num_antennas, train_set.num_subcarriers);
    check_shape(val_set, shape)?;
    let mut params = init_params(cfg.seed, arch)?;
    let mut log = TrainLog::default();
    if cfg.max_epochs == 0 {
        return Ok((params, log));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::InvalidConfig("train and validation sets must be nonempty"));
    }
    let started = Instant::now();
    let val_steps = cfg.val_inner_steps.unwrap_or(cfg.inner_steps);
    let grid = CoordinateGrid::new(shape.0, shape.1);
    let coords = grid.coords::<f32>();
    let targets: Vec<Array2<f32>> = train_set.samples.iter().map(channel_targets).collect();

    let validate = |p: &ModelParams<f32>| -> Result<f64, TrainError> {
        Ok(mean_nmse(&evaluate_nmse(p, val_set, val_steps, cfg.inner_lr)?)?.db)
    };
    let initial = validate(&params)?;
    let push_epoch = |log: &mut TrainLog, progress: &mut dyn FnMut(&LogRow), step: u64, epoch: usize, val: f64| {
        let row = LogRow { step, loss: None, epoch, val_nmse_db: Some(val) };
        progress(&row);
        log.rows.push(row);
        log.wall_clock.push(started.elapsed().as_secs_f64());
    };
    push_epoch(&mut log, &mut progress, 0, 0, initial);

    let mut best = (initial, params.clone());
    let mut since_best = 0usize;
    let mut adam = AdamState::<f32>::new(&arch);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x05ee_d0fb_a7c4);
    let mut order: Vec<usize> = (0..targets.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Array2<f32>> = chunk.iter().map(|&i| &targets[i]).collect();
            let (loss, mut grad) = {
                let ev = Evaluator::new(&params, coords.view())?;
                adapted_batch_gradient(&ev, &batch, cfg.inner_steps, cfg.inner_lr).map_err(|e| match e {
                    TrainError::InnerDiverged { step } => TrainError::Diverged {
                        epoch,
                        step: adam.step + 1,
                        what: format!("inner loop diverged at inner step {step}"),
                    },
                    other => other,
                })?
            };
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, step: adam.step + 1, what: "non-finite loss".into() });
            }
            finish_outer_step(&mut params, &mut adam, &mut grad, cfg.outer_lr, cfg.grad_clip).map_err(|e| match e {
                TrainError::Diverged { step, what, .. } => TrainError::Diverged { epoch, step, what },
                other => other,
            })?;
            let row = LogRow { step: adam.step, loss: Some(loss), epoch, val_nmse_db: None };
            progress(&row);
            log.rows.push(row);
        }
        let val = validate(&params)?;
        push_epoch(&mut log, &mut progress, adam.step, epoch, val);
        if val < best.0 {
            best = (val, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok((best.1, log))
}
