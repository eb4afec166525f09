use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kws_core::checkpoint::load_model;
use kws_core::dataset::load_manifest;
use kws_core::encoder::{init_params, ArchConfig, LstmConfig};
use kws_core::evalkit::{evaluate, EvalOptions};
use kws_cli::commands::eval_csvs;

fn kws(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kws"))
        .current_dir(dir)
        .args(args)
        .arg("-q")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = kws(dir, args);
    assert!(
        out.status.success(),
        "kws {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

const TINY: &[&str] = &[
    "--set", "hidden_dim=8", "--set", "embedding_dim=8", "--set", "layers=1",
    "--set", "phrases_per_batch=3", "--set", "utterances_per_phrase=4",
    "--set", "holdout_fraction=0.6", "--set", "eval_every=0",
];

fn synth(dir: &Path) {
    ok(dir, &["synth-data", "--run-dir", "data", "--set", "phrases=3", "--set", "utterances=20"]);
}

fn train_tiny(dir: &Path, run: &str, steps: &str) {
    let mut args = vec!["train", "--run-dir", run, "--set", "manifest=data/manifest.tsv", "--steps", steps];
    args.extend_from_slice(TINY);
    ok(dir, &args);
}

#[test]
fn zero_steps_writes_the_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    train_tiny(d, "t0", "0");
    let m = load_model(&d.join("t0/model.kwsm")).unwrap();
    let arch = ArchConfig::Lstm(LstmConfig {
        hidden_dim: 8,
        embedding_dim: 8,
        layers: 1,
        ..LstmConfig::default()
    });
    assert_eq!(m, init_params(&arch, 0).unwrap());
    assert_eq!(read(d.join("t0/train_log.csv")), "step,loss,grad_norm\n");
    let log = read(d.join("t0/run.log"));
    assert!(log.starts_with("# kws train\nseed = 0\n") && log.contains("steps = 0\n"));
    let artifacts = read(d.join("t0/artifacts.txt"));
    assert!(artifacts.lines().any(|l| l.ends_with("  model.kwsm")));
}

#[test]
fn training_and_eval_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    train_tiny(d, "a", "4");
    train_tiny(d, "b", "4");
    assert_eq!(read(d.join("a/train_log.csv")), read(d.join("b/train_log.csv")));
    assert_eq!(read(d.join("a/train_log.csv")).lines().count(), 5);
    assert_eq!(
        std::fs::read(d.join("a/model.kwsm")).unwrap(),
        std::fs::read(d.join("b/model.kwsm")).unwrap()
    );

    for run in ["e1", "e2"] {
        ok(d, &["eval", "--run-dir", run, "--set", "manifest=a/heldout.tsv", "--set", "checkpoint=a/model.kwsm", "--noisy"]);
    }
    ok(d, &["eval", "--run-dir", "clean", "--set", "manifest=a/heldout.tsv", "--set", "checkpoint=a/model.kwsm"]);

    // the CLI writes exactly what the library computes
    let model = load_model(&d.join("a/model.kwsm")).unwrap();
    let data = load_manifest(&d.join("a/heldout.tsv")).unwrap();
    let report = evaluate(&model, &data, &EvalOptions::default()).unwrap();
    for (name, text) in eval_csvs(&report) {
        assert_eq!(read(d.join("clean").join(name)), text, "{name}");
        assert_eq!(read(d.join("e1").join(name)), read(d.join("e2").join(name)), "{name}");
    }
    assert_eq!(read(d.join("clean/det.csv")).lines().count(), 1 + 4 * 101);
}

#[test]
fn pipeline_quantize_enroll_detect_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    train_tiny(d, "t", "3");
    ok(d, &["quantize", "--run-dir", "q", "--set", "checkpoint=t/model.kwsm"]);
    ok(d, &["eval", "--run-dir", "eq", "--set", "manifest=t/heldout.tsv", "--set", "checkpoint=q/model_q8.kwsm"]);
    assert_eq!(read(d.join("eq/metrics.csv")).lines().count(), 5);

    ok(d, &["enroll", "--run-dir", "en", "--set", "checkpoint=q/model_q8.kwsm", "--set", "manifest=t/heldout.tsv"]);
    assert_eq!(read(d.join("en/profiles/profiles.idx")).lines().count(), 4);
    let detect = [
        "detect", "--run-dir", "de", "--set", "checkpoint=q/model_q8.kwsm", "--set", "profiles=en/profiles",
        "--set", "input=data/features/p01_u003.kwsf", "--set", "window_frames=16", "--set", "hop_frames=8",
    ];
    ok(d, &detect);
    let events = read(d.join("de/events.csv"));
    assert!(events.starts_with("start_frame,end_frame,phrase,score\n"));
    ok(d, &[&detect[..], &["--set", "run_dir=de2"]].concat());
    assert_eq!(events, read(d.join("de2/events.csv")));

    // float checkpoint does not match profiles enrolled with the quantized one
    let out = kws(d, &[&detect[..3], &["--set", "checkpoint=t/model.kwsm"], &detect[5..]].concat());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("integrity"));

    ok(d, &["plot", "--run-dir", "pl", "--set", "eval_dir=eq"]);
    let mut svgs: Vec<String> = std::fs::read_dir(d.join("pl"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".svg"))
        .collect();
    svgs.sort();
    assert_eq!(svgs, ["det_aggregate.svg", "det_phrase00.svg", "det_phrase01.svg", "det_phrase02.svg"]);
}

#[test]
fn bad_inputs_fail_with_named_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    train_tiny(d, "t", "0");

    let out = kws(d, &["detect", "--set", "checkpoint=t/model.kwsm", "--set", "profiles=p", "--set", "input=x.kwsf", "--threshold", "1.01"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshold 1.01"));

    let out = kws(d, &["eval", "--set", "stepz=3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key 'stepz'"));

    std::fs::write(d.join("bad.cfg"), "steps = 1\nsteps = 2\n").unwrap();
    let out = kws(d, &["train", "--config", "bad.cfg"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg line 2"));

    let one: String = read(d.join("t/heldout.tsv"))
        .lines()
        .filter(|l| l.starts_with('#') || l.contains("\tphrase00\t"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(d.join("one.tsv"), one).unwrap();
    let out = kws(d, &["eval", "--set", "manifest=one.tsv", "--set", "checkpoint=t/model.kwsm"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least two phrases"));
}
