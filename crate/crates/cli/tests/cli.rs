use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use csi_inr::channel::Dataset;
use csi_inr::checkpoint::Checkpoint;
use csi_inr::codec::{Bitstream, Sidecar};
use csi_inr::eval::sweep::read_csv;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csi-inr")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "{args:?}\n{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.lines().any(|l| l.starts_with("fingerprint ")), "{args:?} printed no fingerprint:\n{stdout}");
    stdout
}

fn fingerprint_of(stdout: &str) -> &str {
    stdout.lines().find_map(|l| l.strip_prefix("fingerprint ")).expect("fingerprint line").trim()
}

const TRAIN: &[&str] = &[
    "train", "--dataset", "data.bin", "--train-count", "16", "--val-count", "4", "--hidden-dim", "12", "--layers", "2",
    "--codeword-dim", "4", "--omega0", "30", "--fourier-scale", "1", "--batch", "8", "--epochs", "2", "--outer-lr",
    "1e-4", "--out", "model.ckpt", "--log", "train.csv",
];

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let gen = ok(dir, &["--seed", "3", "gen-data", "--count", "24", "--antennas", "4", "--subcarriers", "5", "--paths", "2", "--out", "data.bin"]);
    let data = Dataset::load(dir.join("data.bin")).unwrap();
    assert_eq!((data.len(), data.num_antennas, data.num_subcarriers, data.seed), (24, 4, 5, 3));

    ok(dir, TRAIN);
    let ck = Checkpoint::load(dir.join("model.ckpt")).unwrap();
    assert_eq!(ck.params.arch.codeword_dim, 4);
    let log = fs::read_to_string(dir.join("train.csv")).unwrap();
    assert!(log.starts_with("step,loss,epoch,val_nmse_db\n"));

    ok(dir, &["fit-codec", "--checkpoint", "model.ckpt", "--dataset", "data.bin", "--bits", "3", "--limit", "16", "--out", "codec.side"]);
    let side = Sidecar::load(dir.join("codec.side")).unwrap();
    assert_eq!((side.bit_width(), side.dim()), (3, 4));

    ok(dir, &["encode", "--checkpoint", "model.ckpt", "--sidecar", "codec.side", "--dataset", "data.bin", "--index", "20", "--out", "s.bin"]);
    let stream = Bitstream::from_bytes(&fs::read(dir.join("s.bin")).unwrap()).unwrap();
    assert_eq!(stream.sidecar_hash, side.hash());
    assert!(stream.payload_bits <= 12);

    let dec = ok(dir, &[
        "decode", "--checkpoint", "model.ckpt", "--sidecar", "codec.side", "--stream", "s.bin", "--dataset", "data.bin",
        "--index", "20", "--out", "rec.csv",
    ]);
    assert!(dec.contains("NMSE"), "{dec}");
    assert_eq!(fs::read_to_string(dir.join("rec.csv")).unwrap().lines().count(), 1 + 20);

    // a quantized stream cannot be decoded without its sidecar
    let bare = run(dir, &["decode", "--checkpoint", "model.ckpt", "--stream", "s.bin", "--antennas", "4", "--subcarriers", "5"]);
    assert!(!bare.status.success());

    let ev = ok(dir, &["eval", "--checkpoint", "model.ckpt", "--dataset", "data.bin", "--sidecar", "codec.side", "--out", "per.csv"]);
    assert!(ev.contains("NMSE"), "{ev}");
    assert_eq!(fs::read_to_string(dir.join("per.csv")).unwrap().lines().count(), 1 + 24);

    fs::write(dir.join("spec.kv"), "dataset = data.bin\ncheckpoints = model.ckpt, absent.ckpt\nbits = none, 3\ninner_steps = 2, 3\noutput = rd.csv\n").unwrap();
    let sweep = run(dir, &["sweep", "--spec", "spec.kv"]);
    assert!(!sweep.status.success(), "missing checkpoint must fail the sweep");
    let rows = read_csv(fs::File::open(dir.join("rd.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows[..4].iter().all(|r| r.error.is_none() && r.nmse_linear.is_some()));
    assert!(rows[4..].iter().all(|r| r.error.is_some()));

    let base = ok(dir, &["baseline-svd", "--dataset", "data.bin", "--train-count", "16", "--n", "40"]);
    assert!(base.contains("components"), "{base}");
    assert_ne!(fingerprint_of(&gen), fingerprint_of(&base));
}

#[test]
fn training_is_reproducible_across_processes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["--seed", "8", "gen-data", "--count", "20", "--antennas", "3", "--subcarriers", "3", "--paths", "2", "--out", "data.bin"]);
    let first = ok(dir, TRAIN);
    let (ck, log) = (fs::read(dir.join("model.ckpt")).unwrap(), fs::read(dir.join("train.csv")).unwrap());
    let second = ok(dir, TRAIN);
    assert_eq!(fs::read(dir.join("model.ckpt")).unwrap(), ck);
    assert_eq!(fingerprint_of(&first), fingerprint_of(&second));
    // wall-clock time is not part of the log
    assert_eq!(fs::read(dir.join("train.csv")).unwrap(), log);
}

#[test]
fn gradcheck_passes_and_bad_input_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["gradcheck", "--hidden-dim", "8", "--layers", "2", "--codeword-dim", "3"]);
    assert!(out.contains("max relative error"));
    assert!(!run(tmp.path(), &["gradcheck", "--step", "0"]).status.success());
    assert!(!run(tmp.path(), &["encode", "--checkpoint", "nope", "--dataset", "nope", "--index", "0", "--out", "x"]).status.success());
}
