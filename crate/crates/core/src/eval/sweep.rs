//! Rate-distortion sweeps over codeword length, bit width and inner steps.

use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{fingerprint, ConfigError, KeyValues};
use super::report::{evaluate, run_samples, EvalError, EvalSettings};
use crate::channel::Dataset;
use crate::checkpoint::Checkpoint;
use crate::codec::{fit_sidecar, Sidecar};

/// CSV spelling of an infinite decibel value.
pub const NEG_INF_DB: &str = "-inf";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("sweep axis `{0}` is empty")]
    EmptyAxis(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Dataset the cells are measured on.
    pub dataset: PathBuf,
    /// Dataset whose codewords fit each sidecar; defaults to `dataset`.
    pub fit_dataset: Option<PathBuf>,
    /// One checkpoint per codeword length.
    pub checkpoints: Vec<PathBuf>,
    /// `None` is the unquantized path.
    pub bit_widths: Vec<Option<u32>>,
    pub inner_steps: Vec<usize>,
    /// Inner steps used when fitting sidecars.
    pub fit_inner_steps: usize,
    pub inner_lr: f64,
    /// Evaluate only the first `limit` samples.
    pub limit: Option<usize>,
    pub output: PathBuf,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.checkpoints.is_empty() {
            return Err(SweepError::EmptyAxis("checkpoints"));
        }
        if self.bit_widths.is_empty() {
            return Err(SweepError::EmptyAxis("bits"));
        }
        if self.inner_steps.is_empty() {
            return Err(SweepError::EmptyAxis("inner_steps"));
        }
        Ok(())
    }

    /// Reads `dataset`, `fit_dataset`, `checkpoints`, `bits` (numbers or
    /// `none`), `inner_steps`, `fit_inner_steps`, `inner_lr`, `limit` and
    /// `output`. Relative paths resolve against `base`.
    pub fn from_kv(kv: &KeyValues, base: &Path) -> Result<Self, SweepError> {
        let path = |s: &str| base.join(s);
        let bits: Vec<String> = kv.list_or("bits", vec!["none".to_string()])?;
        let bit_widths = bits
            .iter()
            .map(|b| match b.as_str() {
                "none" => Ok(None),
                s => s.parse().map(Some).map_err(|_| ConfigError::Parse { key: "bits".into(), value: s.into() }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let checkpoints: Vec<String> = kv.list_or("checkpoints", Vec::new())?;
        let spec = Self {
            dataset: path(kv.require("dataset")?),
            fit_dataset: kv.get("fit_dataset").map(path),
            checkpoints: checkpoints.iter().map(|c| path(c)).collect(),
            bit_widths,
            inner_steps: kv.list_or("inner_steps", vec![3])?,
            fit_inner_steps: kv.parse_or("fit_inner_steps", 3)?,
            inner_lr: kv.parse_or("inner_lr", 1e-2)?,
            limit: kv.get("limit").map(|v| v.parse()).transpose().map_err(|_| ConfigError::Parse {
                key: "limit".into(),
                value: kv.get("limit").unwrap_or_default().into(),
            })?,
            output: path(kv.require("output")?),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fingerprint: String,
    pub checkpoint: String,
    pub codeword_dim: Option<usize>,
    /// Bit width, or `none` for the unquantized path.
    pub bits: String,
    pub inner_steps: usize,
    pub samples: Option<usize>,
    pub nmse_linear: Option<f64>,
    /// Decibels, [`NEG_INF_DB`] for a perfect reconstruction.
    pub nmse_db: Option<String>,
    pub raw_bits: Option<f64>,
    pub coded_bits: Option<f64>,
    pub compression_ratio: Option<f64>,
    pub bit_rate: Option<f64>,
    pub coding_gain: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn nmse_db_value(&self) -> Option<f64> {
        self.nmse_db.as_deref().map(parse_db)
    }
}

pub fn format_db(db: f64) -> String {
    if db == f64::NEG_INFINITY {
        NEG_INF_DB.to_string()
    } else {
        format!("{db}")
    }
}

fn parse_db(s: &str) -> f64 {
    if s == NEG_INF_DB {
        f64::NEG_INFINITY
    } else {
        s.parse().unwrap_or(f64::NAN)
    }
}

fn bits_label(b: Option<u32>) -> String {
    b.map_or_else(|| "none".to_string(), |b| b.to_string())
}

/// Checkpoint under evaluation, or the reason it could not be loaded.
pub struct SweepModel<'a> {
    pub label: String,
    pub checkpoint: Result<&'a Checkpoint, String>,
}

/// Evaluates every `(checkpoint, b, s_in)` cell in that nesting order. One
/// sidecar is fitted per `(checkpoint, b)` from `fit` codewords at
/// `fit_inner_steps`. Failures are recorded in the row, not returned.
pub fn sweep_cells(
    models: &[SweepModel<'_>],
    data: &Dataset,
    fit: &Dataset,
    bit_widths: &[Option<u32>],
    inner_steps: &[usize],
    fit_inner_steps: usize,
    inner_lr: f64,
) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for model in models {
        for &b in bit_widths {
            let sidecar = match (model.checkpoint.as_ref(), b) {
                (Ok(ck), Some(b)) => Some(fit_sidecar_for(ck, fit, b, fit_inner_steps, inner_lr).map_err(|e| e.to_string())),
                (Ok(_), None) => None,
                (Err(e), _) => Some(Err(e.clone())),
            };
            for &s in inner_steps {
                rows.push(sweep_cell(model, data, b, s, inner_lr, sidecar.as_ref()));
            }
        }
    }
    rows
}

fn fit_sidecar_for(ck: &Checkpoint, fit: &Dataset, b: u32, steps: usize, lr: f64) -> Result<Sidecar, EvalError> {
    let settings = EvalSettings { inner_steps: steps, inner_lr: lr, sidecar: None, raw_only: false };
    let codes: Vec<_> = run_samples(ck, fit, &settings)?.into_iter().map(|o| o.codeword).collect();
    Ok(fit_sidecar(&codes, b)?)
}

fn sweep_cell(
    model: &SweepModel<'_>,
    data: &Dataset,
    b: Option<u32>,
    s: usize,
    inner_lr: f64,
    sidecar: Option<&Result<Sidecar, String>>,
) -> SweepRow {
    let fp = fingerprint([
        ("checkpoint", model.label.clone()),
        ("bits", bits_label(b)),
        ("inner_steps", s.to_string()),
        ("inner_lr", inner_lr.to_string()),
        ("dataset_seed", data.seed.to_string()),
        ("samples", data.len().to_string()),
    ]);
    let mut row = SweepRow {
        fingerprint: fp.clone(),
        checkpoint: model.label.clone(),
        codeword_dim: model.checkpoint.as_ref().ok().map(|c| c.params.arch.codeword_dim),
        bits: bits_label(b),
        inner_steps: s,
        samples: None,
        nmse_linear: None,
        nmse_db: None,
        raw_bits: None,
        coded_bits: None,
        compression_ratio: None,
        bit_rate: None,
        coding_gain: None,
        error: None,
    };
    let ck = match &model.checkpoint {
        Ok(ck) => *ck,
        Err(e) => {
            row.error = Some(e.clone());
            return row;
        }
    };
    let sidecar = match sidecar {
        None => None,
        Some(Ok(s)) => Some(s),
        Some(Err(e)) => {
            row.error = Some(e.clone());
            return row;
        }
    };
    let settings = EvalSettings { inner_steps: s, inner_lr, sidecar, raw_only: false };
    match evaluate(ck, data, &settings, fp) {
        Ok(r) => {
            row.samples = Some(r.per_sample_nmse.len());
            row.nmse_linear = Some(r.nmse.linear);
            row.nmse_db = Some(format_db(r.nmse.db));
            row.raw_bits = Some(r.raw_bits_per_sample);
            row.coded_bits = Some(r.coded_bits_per_sample);
            row.compression_ratio = Some(r.rates.compression_ratio);
            row.bit_rate = Some(r.rates.bit_rate);
            row.coding_gain = r.rates.coding_gain;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Loads the artifacts named by `spec`, evaluates every cell and writes the
/// CSV report to `spec.output`.
pub fn rd_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>, SweepError> {
    spec.validate()?;
    let load = |p: &Path| Dataset::load(p).map_err(|e| format!("{}: {e}", p.display()));
    let data = load(&spec.dataset);
    let fit = match &spec.fit_dataset {
        Some(p) => load(p),
        None => data.clone(),
    };
    let loaded: Vec<(String, Result<Checkpoint, String>)> = spec
        .checkpoints
        .iter()
        .map(|p| (p.display().to_string(), Checkpoint::load(p).map_err(|e| format!("{}: {e}", p.display()))))
        .collect();
    let rows = match (data, fit) {
        (Ok(mut data), Ok(fit)) => {
            if let Some(limit) = spec.limit {
                data = data.subset(0..limit.min(data.len()));
            }
            let models: Vec<SweepModel<'_>> = loaded
                .iter()
                .map(|(label, ck)| SweepModel { label: label.clone(), checkpoint: ck.as_ref().map_err(Clone::clone) })
                .collect();
            sweep_cells(&models, &data, &fit, &spec.bit_widths, &spec.inner_steps, spec.fit_inner_steps, spec.inner_lr)
        }
        (Err(e), _) | (_, Err(e)) => {
            let models: Vec<SweepModel<'_>> =
                loaded.iter().map(|(label, _)| SweepModel { label: label.clone(), checkpoint: Err(e.clone()) }).collect();
            let empty = Dataset { num_antennas: 1, num_subcarriers: 1, seed: 0, s_norm: 1.0, samples: Vec::new(), meta: None };
            sweep_cells(&models, &empty, &empty, &spec.bit_widths, &spec.inner_steps, spec.fit_inner_steps, spec.inner_lr)
        }
    };
    write_csv(&rows, File::create(&spec.output)?)?;
    Ok(rows)
}

pub fn write_csv<W: io::Write>(rows: &[SweepRow], writer: W) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(reader: R) -> Result<Vec<SweepRow>, SweepError> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<Result<Vec<SweepRow>, _>>()?)
}
