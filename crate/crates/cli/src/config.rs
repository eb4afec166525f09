//! Flat `key = value` run configuration.
//!
//! One setting per line; `#` starts a comment that runs to the end of the
//! line; blank lines are skipped. Keys are checked against the command's
//! schema, so a misspelt key is an error rather than a silent default.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::PathBuf;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Command {
    SynthData,
    Train,
    Eval,
    Quantize,
    Enroll,
    Detect,
    Plot,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::SynthData,
        Command::Train,
        Command::Eval,
        Command::Quantize,
        Command::Enroll,
        Command::Detect,
        Command::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Quantize => "quantize",
            Command::Enroll => "enroll",
            Command::Detect => "detect",
            Command::Plot => "plot",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

const fn k(key: &'static str, default: &'static str, doc: &'static str) -> KeySpec {
    KeySpec { key, default, doc }
}

const COMMON: &[KeySpec] = &[
    k("seed", "0", "global seed"),
    k("run_dir", "", "output directory (default runs/<command>)"),
];

const SYNTH: &[KeySpec] = &[
    k("phrases", "12", "number of phrases"),
    k("utterances", "40", "utterances per phrase"),
    k("frames", "32", "frames per utterance"),
    k("speakers", "4", "number of speakers"),
    k("noise_sigma", "1.0", "per-value Gaussian noise"),
    k("speaker_sigma", "1.5", "speaker offset scale"),
    k("phrase_sigma", "0.4", "phrase deviation scale"),
    k("gain_sigma", "2.0", "per-utterance loudness offset scale"),
    k("time_warp", "0.2", "relative time-warp half range"),
];

const TRAIN: &[KeySpec] = &[
    k("manifest", "", "training manifest (required)"),
    k("arch", "lstm", "lstm or conformer"),
    k("hidden_dim", "64", "LSTM hidden size"),
    k("layers", "3", "LSTM layers"),
    k("embedding_dim", "64", "embedding size"),
    k("blocks", "2", "conformer blocks"),
    k("model_dim", "64", "conformer width"),
    k("heads", "4", "conformer attention heads"),
    k("kernel_width", "7", "conformer depthwise kernel width"),
    k("ffn_mult", "2", "conformer feed-forward expansion"),
    k("positional_encoding", "true", "conformer sinusoidal positions"),
    k("loss", "ge2e", "ge2e or triplet"),
    k("steps", "2000", "optimizer steps"),
    k("phrases_per_batch", "8", "phrases per batch"),
    k("utterances_per_phrase", "10", "utterances per phrase per batch (even)"),
    k("triplet_margin", "0.5", "triplet hinge margin"),
    k("lr", "0.001", "Adam learning rate"),
    k("beta1", "0.9", "Adam beta1"),
    k("beta2", "0.999", "Adam beta2"),
    k("adam_eps", "1e-8", "Adam epsilon"),
    k("clip_norm", "5.0", "global gradient-norm clip"),
    k("train_frames", "0", "fixed utterance length; 0 = dataset length or 98"),
    k("holdout_fraction", "0.5", "fraction of each phrase held out for evaluation"),
    k("eval_every", "100", "evaluate held-out AUC every N steps; 0 = never"),
    k("target_auc", "none", "stop once held-out AUC reaches this"),
    k("enrollment_size", "10", "enrollment utterances per phrase during evaluation"),
];

const EVAL: &[KeySpec] = &[
    k("manifest", "", "evaluation manifest (required)"),
    k("checkpoint", "", "float or quantized checkpoint (required)"),
    k("enrollment_size", "10", "enrollment utterances per phrase"),
    k("split_seed", "0", "enrollment split seed"),
    k("exact", "false", "AUC/EER over every distinct score instead of the 0.01 grid"),
    k("noisy", "false", "add white noise to test utterances"),
    k("min_snr_db", "3", "lowest noise SNR"),
    k("max_snr_db", "15", "highest noise SNR"),
    k("noise_seed", "0", "noise seed"),
];

const QUANTIZE: &[KeySpec] = &[k("checkpoint", "", "float checkpoint (required)")];

const ENROLL: &[KeySpec] = &[
    k("checkpoint", "", "float or quantized checkpoint (required)"),
    k("manifest", "", "enrollment manifest (required)"),
    k("phrase", "", "enroll only this phrase; empty = every phrase"),
    k("enrollment_size", "10", "utterances per profile, in manifest order; 0 = all"),
];

const DETECT: &[KeySpec] = &[
    k("checkpoint", "", "checkpoint the profiles were enrolled with (required)"),
    k("profiles", "", "profile directory (required)"),
    k("input", "", ".wav audio or .kwsf features (required)"),
    k("threshold", "0.9", "acceptance threshold in [0, 1]"),
    k("window_frames", "98", "window length"),
    k("hop_frames", "10", "window hop"),
    k("refractory_hops", "0", "hops skipped after an acceptance"),
];

const PLOT: &[KeySpec] = &[k("eval_dir", "", "directory holding det.csv (required)")];

pub fn schema(cmd: Command) -> Vec<KeySpec> {
    let own = match cmd {
        Command::SynthData => SYNTH,
        Command::Train => TRAIN,
        Command::Eval => EVAL,
        Command::Quantize => QUANTIZE,
        Command::Enroll => ENROLL,
        Command::Detect => DETECT,
        Command::Plot => PLOT,
    };
    COMMON.iter().chain(own).copied().collect()
}

/// Help text listing every key with its default.
pub fn keys_help(cmd: Command) -> String {
    let mut out = String::from("Config keys (set in --config FILE or with --set key=value):\n");
    for s in schema(cmd) {
        let d = if s.default.is_empty() { "\"\"" } else { s.default };
        writeln!(out, "  {:<22} {:<8} {}", s.key, d, s.doc).unwrap();
    }
    out
}

/// `(line, key, value)` triples in file order.
pub fn parse_config(text: &str, source_name: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(CliError::config(format!("{source_name} line {line}: expected key = value")));
        };
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(CliError::config(format!("{source_name} line {line}: invalid key '{key}'")));
        }
        if out.iter().any(|(_, k, _)| k == key) {
            return Err(CliError::config(format!("{source_name} line {line}: duplicate key '{key}'")));
        }
        out.push((line, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Effective settings for one command: defaults, then file, then overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<&'static str, String>,
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        Self {
            command,
            values: schema(command).iter().map(|s| (s.key, s.default.to_string())).collect(),
        }
    }

    pub fn build(command: Command, file: Option<(&str, &str)>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::defaults(command);
        if let Some((text, name)) = file {
            for (line, key, value) in parse_config(text, name)? {
                cfg.set(&key, value)
                    .map_err(|e| CliError::config(format!("{name} line {line}: {e}")))?;
            }
        }
        for (key, value) in overrides {
            cfg.set(key, value.clone())
                .map_err(|e| CliError::config(format!("--set {key}: {e}")))?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: String) -> std::result::Result<(), String> {
        let spec = schema(self.command).into_iter().find(|s| s.key == key).ok_or_else(|| {
            format!("unknown key '{key}' for {}", self.command.name())
        })?;
        self.values.insert(spec.key, value);
        Ok(())
    }

    fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("'{key}' is not in the {} schema", self.command.name()))
    }

    pub fn str(&self, key: &str) -> &str {
        self.raw(key)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| CliError::config(format!("{key} = '{v}' is not {what}")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key, "a non-negative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parsed(key, "a non-negative integer")
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parsed(key, "a number")?;
        if !v.is_finite() {
            return Err(CliError::config(format!("{key} must be finite")));
        }
        Ok(v)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(CliError::config(format!("{key} = '{v}' is not true/false"))),
        }
    }

    /// `none` (or empty) maps to `None`.
    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            "" | "none" => Ok(None),
            _ => self.f64(key).map(Some),
        }
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf> {
        match self.raw(key) {
            "" => Err(CliError::config(format!("{key} is required for {}", self.command.name()))),
            v => Ok(PathBuf::from(v)),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        match self.raw("run_dir") {
            "" => PathBuf::from("runs").join(self.command.name()),
            v => PathBuf::from(v),
        }
    }

    /// `key = value` lines in schema order.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for s in schema(self.command) {
            writeln!(out, "{} = {}", s.key, self.values[s.key]).unwrap();
        }
        out
    }
}
