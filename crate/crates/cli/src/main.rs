use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use csi_inr::channel::{generate_dataset, ChannelMatrix, Dataset, PathSampling, SystemConfig};
use csi_inr::checkpoint::Checkpoint;
use csi_inr::codec::{fit_sidecar, Bitstream, Decoder, Encoder, Sidecar};
use csi_inr::engine::finite_diff_check;
use csi_inr::eval::baseline::svd_baseline;
use csi_inr::eval::config::{fingerprint, KeyValues};
use csi_inr::eval::metrics::nmse;
use csi_inr::eval::report::{evaluate, run_samples, EvalSettings};
use csi_inr::eval::sweep::{format_db, rd_sweep, SweepSpec};
use csi_inr::model::{channel_targets, init_params, ArchConfig, Codeword, CoordinateGrid};
use csi_inr::train::{train_with_progress, TrainConfig};

#[derive(Parser)]
#[command(name = "csi-inr", version, about = "Channel-state feedback with implicit neural representations")]
struct Cli {
    /// Seed for every random draw the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multipath channel dataset.
    GenData(GenData),
    /// Meta-train a base network.
    Train(Train),
    /// Fit the quantizer and frequency table for a checkpoint.
    FitCodec(FitCodec),
    /// Encode one dataset sample into a bitstream.
    Encode(Encode),
    /// Decode a bitstream into a channel matrix.
    Decode(Decode),
    /// Encode and decode a whole dataset and report NMSE and rates.
    Eval(Eval),
    /// Run a rate-distortion sweep described by a key-value spec file.
    Sweep(Sweep),
    /// Principal-component baseline at a given codeword length.
    BaselineSvd(BaselineSvd),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(Gradcheck),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 32)]
    antennas: usize,
    #[arg(long, default_value_t = 32)]
    subcarriers: usize,
    #[arg(long, default_value_t = 10)]
    paths: usize,
    /// Carrier frequency in Hz.
    #[arg(long, default_value_t = 3.5e9)]
    carrier: f64,
    /// Total bandwidth in Hz, split evenly over the subcarriers.
    #[arg(long, default_value_t = 100e6)]
    bandwidth: f64,
    /// Largest path delay in seconds.
    #[arg(long, default_value_t = 1e-6)]
    max_delay: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ArchArgs {
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    codeword_dim: Option<usize>,
    #[arg(long)]
    omega0: Option<f64>,
    #[arg(long)]
    fourier_scale: Option<f64>,
}

#[derive(Args)]
struct Train {
    /// Dataset holding the training samples followed by the validation samples.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    train_count: usize,
    #[arg(long)]
    val_count: usize,
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    inner_lr: Option<f64>,
    #[arg(long)]
    outer_lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Key-value file supplying any of the flags above (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Training log as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct FitCodec {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    bits: u32,
    #[arg(long, default_value_t = 3)]
    inner_steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    inner_lr: f64,
    /// Use only the first N samples.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Encode {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    index: usize,
    #[arg(long, default_value_t = 3)]
    inner_steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    inner_lr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Decode {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long)]
    stream: PathBuf,
    /// Reference dataset; gives the grid shape and, with --index, the NMSE.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    index: Option<usize>,
    #[arg(long)]
    antennas: Option<usize>,
    #[arg(long)]
    subcarriers: Option<usize>,
    /// Reconstruction as CSV (antenna, subcarrier, re, im).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    inner_steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    inner_lr: f64,
    #[arg(long)]
    limit: Option<usize>,
    /// Per-sample NMSE as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Sweep {
    #[arg(long)]
    spec: PathBuf,
}

#[derive(Args)]
struct BaselineSvd {
    #[arg(long)]
    dataset: PathBuf,
    /// Leading samples used to fit the basis; the rest are the test set.
    #[arg(long)]
    train_count: usize,
    #[arg(long)]
    n: usize,
}

#[derive(Args)]
struct Gradcheck {
    #[arg(long, default_value_t = 32)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 8)]
    codeword_dim: usize,
    #[arg(long, default_value_t = 50.0)]
    omega0: f64,
    #[arg(long, default_value_t = 10.0)]
    fourier_scale: f64,
    #[arg(long, default_value_t = 3)]
    antennas: usize,
    #[arg(long, default_value_t = 4)]
    subcarriers: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    match cli.command {
        Command::GenData(a) => gen_data(seed, a),
        Command::Train(a) => train(seed, a),
        Command::FitCodec(a) => fit_codec(seed, a),
        Command::Encode(a) => encode(seed, a),
        Command::Decode(a) => decode(seed, a),
        Command::Eval(a) => eval(seed, a),
        Command::Sweep(a) => sweep(seed, a),
        Command::BaselineSvd(a) => baseline(seed, a),
        Command::Gradcheck(a) => gradcheck(seed, a),
    }
}

fn announce(command: &str, pairs: Vec<(&str, String)>) {
    let mut all = pairs;
    all.push(("command", command.to_string()));
    println!("fingerprint {}", fingerprint(all));
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn load_sidecar(path: Option<&PathBuf>) -> Result<Option<Sidecar>> {
    path.map(|p| Sidecar::load(p).with_context(|| format!("reading sidecar {}", p.display()))).transpose()
}

fn limited(data: Dataset, limit: Option<usize>) -> Dataset {
    match limit {
        Some(l) if l < data.len() => data.subset(0..l),
        _ => data,
    }
}

fn gen_data(seed: u64, a: GenData) -> Result<ExitCode> {
    let cfg = SystemConfig {
        base_frequency: a.carrier,
        subcarrier_spacing: a.bandwidth / a.subcarriers.max(1) as f64,
        ..SystemConfig::with_dims(a.antennas, a.subcarriers, a.paths)
    };
    let cfg = SystemConfig { antenna_spacing: cfg.light_speed / (2.0 * cfg.base_frequency), ..cfg };
    let sampling = PathSampling { max_delay: a.max_delay, ..PathSampling::default() };
    announce(
        "gen-data",
        vec![
            ("seed", seed.to_string()),
            ("count", a.count.to_string()),
            ("antennas", a.antennas.to_string()),
            ("subcarriers", a.subcarriers.to_string()),
            ("paths", a.paths.to_string()),
            ("carrier", a.carrier.to_string()),
            ("bandwidth", a.bandwidth.to_string()),
            ("max_delay", a.max_delay.to_string()),
        ],
    );
    let ds = generate_dataset(a.count, seed, &cfg, &sampling)?;
    ds.save(&a.out)?;
    println!("wrote {} samples ({}x{}, scale {:.6e}) to {}", ds.len(), a.antennas, a.subcarriers, ds.s_norm, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn resolve<T: std::str::FromStr>(flag: Option<T>, kv: &KeyValues, key: &str, default: T) -> Result<T> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(kv.parse_or(key, default)?),
    }
}

fn train(seed: u64, a: Train) -> Result<ExitCode> {
    let kv = match &a.config {
        Some(p) => KeyValues::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => KeyValues::default(),
    };
    let d = ArchConfig::default();
    let arch = ArchConfig {
        hidden_dim: resolve(a.arch.hidden_dim, &kv, "hidden_dim", d.hidden_dim)?,
        num_layers: resolve(a.arch.layers, &kv, "layers", d.num_layers)?,
        codeword_dim: resolve(a.arch.codeword_dim, &kv, "codeword_dim", d.codeword_dim)?,
        omega0: resolve(a.arch.omega0, &kv, "omega0", d.omega0)?,
        fourier_scale: resolve(a.arch.fourier_scale, &kv, "fourier_scale", d.fourier_scale)?,
    };
    let t = TrainConfig::default();
    let clip = match a.grad_clip {
        Some(c) => Some(c),
        None => kv.get("grad_clip").map(str::parse).transpose().context("grad_clip")?,
    };
    let cfg = TrainConfig {
        inner_steps: resolve(a.inner_steps, &kv, "inner_steps", t.inner_steps)?,
        inner_lr: resolve(a.inner_lr, &kv, "inner_lr", t.inner_lr)?,
        outer_lr: resolve(a.outer_lr, &kv, "outer_lr", t.outer_lr)?,
        batch_size: resolve(a.batch, &kv, "batch", t.batch_size)?,
        max_epochs: resolve(a.epochs, &kv, "epochs", t.max_epochs)?,
        patience: resolve(a.patience, &kv, "patience", t.patience)?,
        seed,
        grad_clip: clip,
        val_inner_steps: None,
    };
    let ds = load_dataset(&a.dataset)?;
    let (tr, va, _) = ds
        .split(a.train_count, a.val_count, 0)
        .with_context(|| format!("dataset has {} samples, fewer than {} + {}", ds.len(), a.train_count, a.val_count))?;
    announce(
        "train",
        vec![
            ("seed", seed.to_string()),
            ("dataset_seed", ds.seed.to_string()),
            ("train_count", a.train_count.to_string()),
            ("val_count", a.val_count.to_string()),
            ("arch", format!("{arch:?}")),
            ("train", format!("{cfg:?}")),
        ],
    );
    let (params, log) = train_with_progress(&tr, &va, arch, &cfg, |row| {
        if let Some(v) = row.val_nmse_db {
            println!("epoch {:>4}  step {:>7}  val NMSE {} dB", row.epoch, row.step, format_db(v));
        }
    })?;
    Checkpoint::new(params, ds.s_norm).save(&a.out)?;
    if let Some(p) = &a.log {
        log.write_csv(fs::File::create(p)?)?;
    }
    let best = log.validation().iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    println!("best val NMSE {} dB; wrote {}", format_db(best), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn fit_codec(seed: u64, a: FitCodec) -> Result<ExitCode> {
    announce(
        "fit-codec",
        vec![
            ("seed", seed.to_string()),
            ("checkpoint", a.checkpoint.display().to_string()),
            ("dataset", a.dataset.display().to_string()),
            ("bits", a.bits.to_string()),
            ("inner_steps", a.inner_steps.to_string()),
            ("inner_lr", a.inner_lr.to_string()),
        ],
    );
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = limited(load_dataset(&a.dataset)?, a.limit);
    let settings = EvalSettings { inner_steps: a.inner_steps, inner_lr: a.inner_lr, sidecar: None, raw_only: false };
    let codes: Vec<Codeword> = run_samples(&ck, &ds, &settings)?.into_iter().map(|o| o.codeword).collect();
    let side = fit_sidecar(&codes, a.bits)?;
    side.save(&a.out)?;
    println!("sidecar hash {:016x}; wrote {}", side.hash(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn encode(seed: u64, a: Encode) -> Result<ExitCode> {
    announce(
        "encode",
        vec![
            ("seed", seed.to_string()),
            ("checkpoint", a.checkpoint.display().to_string()),
            ("sidecar", format!("{:?}", a.sidecar)),
            ("dataset", a.dataset.display().to_string()),
            ("index", a.index.to_string()),
            ("inner_steps", a.inner_steps.to_string()),
            ("inner_lr", a.inner_lr.to_string()),
        ],
    );
    let ck = load_checkpoint(&a.checkpoint)?;
    let side = load_sidecar(a.sidecar.as_ref())?;
    let ds = load_dataset(&a.dataset)?;
    let h = ds.samples.get(a.index).with_context(|| format!("index {} outside {} samples", a.index, ds.len()))?;
    let grid = CoordinateGrid::new(ds.num_antennas, ds.num_subcarriers);
    let enc = Encoder::new(&ck, grid, side.as_ref(), a.inner_steps, a.inner_lr)?;
    let stream = enc.encode(&h.scaled(ds.s_norm))?;
    fs::write(&a.out, stream.to_bytes()?)?;
    println!("{:?} payload, {} bits; wrote {}", stream.kind, stream.payload_bits, a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn decode(seed: u64, a: Decode) -> Result<ExitCode> {
    announce(
        "decode",
        vec![
            ("seed", seed.to_string()),
            ("checkpoint", a.checkpoint.display().to_string()),
            ("sidecar", format!("{:?}", a.sidecar)),
            ("stream", a.stream.display().to_string()),
        ],
    );
    let ck = load_checkpoint(&a.checkpoint)?;
    let side = load_sidecar(a.sidecar.as_ref())?;
    let stream = Bitstream::from_bytes(&fs::read(&a.stream)?)?;
    let reference = a.dataset.as_deref().map(load_dataset).transpose()?;
    let (nt, nc) = match (&reference, a.antennas, a.subcarriers) {
        (_, Some(nt), Some(nc)) => (nt, nc),
        (Some(ds), _, _) => (ds.num_antennas, ds.num_subcarriers),
        _ => bail!("give --antennas and --subcarriers, or a reference --dataset"),
    };
    let grid = CoordinateGrid::new(nt, nc);
    let rec = Decoder::new(&ck, grid, side.as_ref())?.decode(&stream)?;
    if let (Some(ds), Some(i)) = (&reference, a.index) {
        let h = ds.samples.get(i).with_context(|| format!("index {i} outside {} samples", ds.len()))?;
        println!("NMSE {} dB", format_db(nmse(&h.scaled(ds.s_norm), &rec)?.db));
    }
    if let Some(p) = &a.out {
        write_matrix(&rec, fs::File::create(p)?)?;
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn write_matrix(h: &ChannelMatrix, w: impl Write) -> Result<()> {
    let mut out = io::BufWriter::new(w);
    writeln!(out, "antenna,subcarrier,re,im")?;
    for n in 0..h.num_antennas() {
        for m in 0..h.num_subcarriers() {
            let v = h.get(n, m);
            writeln!(out, "{n},{m},{},{}", v.re, v.im)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn eval(seed: u64, a: Eval) -> Result<ExitCode> {
    let fp = fingerprint([
        ("command", "eval".to_string()),
        ("seed", seed.to_string()),
        ("checkpoint", a.checkpoint.display().to_string()),
        ("dataset", a.dataset.display().to_string()),
        ("sidecar", format!("{:?}", a.sidecar)),
        ("inner_steps", a.inner_steps.to_string()),
        ("inner_lr", a.inner_lr.to_string()),
        ("limit", format!("{:?}", a.limit)),
    ]);
    println!("fingerprint {fp}");
    let ck = load_checkpoint(&a.checkpoint)?;
    let side = load_sidecar(a.sidecar.as_ref())?;
    let ds = limited(load_dataset(&a.dataset)?, a.limit);
    let settings = EvalSettings { inner_steps: a.inner_steps, inner_lr: a.inner_lr, sidecar: side.as_ref(), raw_only: false };
    let r = evaluate(&ck, &ds, &settings, fp)?;
    println!("samples           {}", r.per_sample_nmse.len());
    println!("NMSE              {:.6e} ({} dB)", r.nmse.linear, format_db(r.nmse.db));
    println!("raw bits          {}", r.raw_bits_per_sample);
    println!("coded bits        {:.3}", r.coded_bits_per_sample);
    println!("compression ratio {:.6}", r.rates.compression_ratio);
    println!("bit rate          {:.6}", r.rates.bit_rate);
    if let Some(g) = r.rates.coding_gain {
        println!("coding gain       {:.2}%", 100.0 * g);
    }
    if let Some(p) = &a.out {
        let mut w = io::BufWriter::new(fs::File::create(p)?);
        writeln!(w, "index,nmse_linear,nmse_db")?;
        for (i, v) in r.per_sample_nmse.iter().enumerate() {
            writeln!(w, "{i},{v},{}", format_db(10.0 * v.log10()))?;
        }
        w.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(seed: u64, a: Sweep) -> Result<ExitCode> {
    let text = fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let kv = KeyValues::parse(&text)?;
    let mut pairs: Vec<(&str, String)> = kv.iter().map(|(k, v)| (k, v.to_string())).collect();
    pairs.push(("seed", seed.to_string()));
    announce("sweep", pairs);
    let base = a.spec.parent().unwrap_or(Path::new("."));
    let spec = SweepSpec::from_kv(&kv, base)?;
    let rows = rd_sweep(&spec)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} cells ({} failed); wrote {}", rows.len(), failed, spec.output.display());
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("{} b={} s={}: {}", r.checkpoint, r.bits, r.inner_steps, r.error.as_deref().unwrap_or_default());
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn baseline(seed: u64, a: BaselineSvd) -> Result<ExitCode> {
    announce(
        "baseline-svd",
        vec![
            ("seed", seed.to_string()),
            ("dataset", a.dataset.display().to_string()),
            ("train_count", a.train_count.to_string()),
            ("n", a.n.to_string()),
        ],
    );
    let ds = load_dataset(&a.dataset)?;
    if a.train_count >= ds.len() {
        bail!("train count {} leaves no test samples out of {}", a.train_count, ds.len());
    }
    let (tr, te) = (ds.subset(0..a.train_count), ds.subset(a.train_count..ds.len()));
    let r = svd_baseline(&tr, &te, a.n)?;
    println!("components {} of {}; NMSE {:.6e} ({} dB)", r.components_kept, a.n, r.nmse.linear, format_db(r.nmse.db));
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(seed: u64, a: Gradcheck) -> Result<ExitCode> {
    let arch = ArchConfig {
        hidden_dim: a.hidden_dim,
        num_layers: a.layers,
        codeword_dim: a.codeword_dim,
        omega0: a.omega0,
        fourier_scale: a.fourier_scale,
    };
    announce("gradcheck", vec![("seed", seed.to_string()), ("arch", format!("{arch:?}")), ("step", a.step.to_string())]);
    let params = init_params(seed, arch)?.cast::<f64>();
    let ds = generate_dataset(1, seed, &SystemConfig::with_dims(a.antennas, a.subcarriers, 3), &PathSampling::default())?;
    let grid = CoordinateGrid::new(a.antennas, a.subcarriers);
    let coords = grid.coords::<f64>();
    let code = Codeword((0..a.codeword_dim).map(|k| 0.3 * ((k as f64 + 1.0) * 0.7 + seed as f64).sin()).collect());
    let report = finite_diff_check(&params, &code, coords.view(), &channel_targets(&ds.samples[0]), a.step)?;
    println!("{:<20} {:>8}  {:>10}  {:>10}  {:>10}", "block", "len", "abs", "rel", "elementwise");
    for b in &report.blocks {
        println!(
            "{:<20} {:>8}  {:>10.3e}  {:>10.3e}  {:>10.3e}",
            b.name, b.len, b.max_abs_error, b.max_rel_error, b.max_elementwise_rel_error
        );
    }
    let worst = report.max_rel_error();
    println!("max relative error {worst:.3e}");
    Ok(if worst < 1e-4 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
