use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kws_core::checkpoint::{load_model, model_from_container, save_model, Container};
use kws_core::dataset::{format_manifest, holdout_split, Manifest, Utterance};
use kws_core::encoder::{init_params, ArchConfig, ConformerConfig, LstmConfig, Model};
use kws_core::evalkit::{
    det_csv, det_svg, evaluate, histogram_csv, metrics_csv, Embedder, EvalOptions, EvalReport, NoiseConfig,
    ThresholdSweep, AGGREGATE_LABEL,
};
use kws_core::frontend::{read_features, read_wav, synth_dataset, write_features, SynthSpec, NUM_MEL_BINS};
use kws_core::loss::TripletConfig;
use kws_core::quant::{quantize_model, QuantizedModel};
use kws_core::runtime::{
    enroll, events_csv, stream_detect, stream_detect_audio, DetectorConfig, ProfileStore, ServingEncoder,
};
use kws_core::train::{train, AdamConfig, LossKind, TrainConfig, TrainEvent};
use sha2::{Digest, Sha256};

use crate::config::{Command, RunConfig};
use crate::error::{CliError, Result};

pub const RUN_LOG: &str = "run.log";
pub const ARTIFACTS: &str = "artifacts.txt";

/// One command invocation's output directory: a log that starts with the
/// effective config, and a list of every file produced.
pub struct Run {
    dir: PathBuf,
    artifacts: Vec<PathBuf>,
    quiet: bool,
}

impl Run {
    pub fn start(cfg: &RunConfig, quiet: bool) -> Result<Self> {
        let dir = cfg.run_dir();
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let log = dir.join(RUN_LOG);
        let header = format!("# kws {}\n{}", cfg.command.name(), cfg.echo());
        fs::write(&log, header).map_err(|e| CliError::io(&log, e))?;
        Ok(Self {
            dir,
            artifacts: Vec::new(),
            quiet,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log(&self, line: &str) -> Result<()> {
        if !self.quiet {
            println!("{line}");
        }
        let path = self.dir.join(RUN_LOG);
        let mut f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| CliError::io(&path, e))
    }

    /// Notes a file written under the run directory.
    pub fn record(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.record(&path);
        Ok(path)
    }

    /// Writes `artifacts.txt`: `sha256  bytes  path` per produced file.
    pub fn finish(self) -> Result<PathBuf> {
        let mut out = String::new();
        for p in &self.artifacts {
            let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
            let rel = p.strip_prefix(&self.dir).unwrap_or(p);
            writeln!(out, "{}  {}  {}", hex::encode(Sha256::digest(&bytes)), bytes.len(), rel.display()).unwrap();
        }
        let path = self.dir.join(ARTIFACTS);
        fs::write(&path, out).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

pub fn run_command(cfg: &RunConfig, quiet: bool) -> Result<PathBuf> {
    let mut run = Run::start(cfg, quiet)?;
    match cfg.command {
        Command::SynthData => synth_data(cfg, &mut run)?,
        Command::Train => train_cmd(cfg, &mut run)?,
        Command::Eval => eval_cmd(cfg, &mut run)?,
        Command::Quantize => quantize_cmd(cfg, &mut run)?,
        Command::Enroll => enroll_cmd(cfg, &mut run)?,
        Command::Detect => detect_cmd(cfg, &mut run)?,
        Command::Plot => plot_cmd(cfg, &mut run)?,
    }
    let dir = run.dir().to_path_buf();
    run.finish()?;
    Ok(dir)
}

pub fn synth_spec(cfg: &RunConfig) -> Result<SynthSpec> {
    Ok(SynthSpec {
        num_phrases: cfg.usize("phrases")?,
        utterances_per_phrase: cfg.usize("utterances")?,
        frames_per_utterance: cfg.usize("frames")?,
        speaker_count: cfg.usize("speakers")?,
        noise_sigma: cfg.f64("noise_sigma")?,
        speaker_sigma: cfg.f64("speaker_sigma")?,
        phrase_sigma: cfg.f64("phrase_sigma")?,
        gain_sigma: cfg.f64("gain_sigma")?,
        time_warp: cfg.f64("time_warp")?,
        seed: cfg.u64("seed")?,
    })
}

fn synth_data(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let spec = synth_spec(cfg)?;
    let data = synth_dataset(&spec)?.to_utterances();
    let mut rows = Vec::with_capacity(data.len());
    for u in &data {
        let rel = format!("features/{}.kwsf", u.id);
        let path = run.dir().join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        write_features(&path, &u.features)?;
        run.record(&path);
        rows.push(rel);
    }
    let manifest = format_manifest(
        data.iter()
            .zip(&rows)
            .map(|(u, rel)| (u.id.as_str(), u.phrase.as_str(), u.speaker.as_str(), rel.as_str())),
    );
    run.write("manifest.tsv", manifest)?;
    run.log(&format!(
        "wrote {} utterances ({} phrases, {} speakers)",
        data.len(),
        spec.num_phrases,
        spec.speaker_count
    ))
}

pub fn arch_config(cfg: &RunConfig) -> Result<ArchConfig> {
    let arch = match cfg.str("arch") {
        "lstm" => ArchConfig::Lstm(LstmConfig {
            input_dim: NUM_MEL_BINS,
            hidden_dim: cfg.usize("hidden_dim")?,
            layers: cfg.usize("layers")?,
            embedding_dim: cfg.usize("embedding_dim")?,
        }),
        "conformer" => ArchConfig::Conformer(ConformerConfig {
            input_dim: NUM_MEL_BINS,
            blocks: cfg.usize("blocks")?,
            model_dim: cfg.usize("model_dim")?,
            heads: cfg.usize("heads")?,
            kernel_width: cfg.usize("kernel_width")?,
            ffn_mult: cfg.usize("ffn_mult")?,
            embedding_dim: cfg.usize("embedding_dim")?,
            positional_encoding: cfg.bool("positional_encoding")?,
        }),
        other => return Err(CliError::config(format!("arch = '{other}' is not lstm or conformer"))),
    };
    arch.validate()?;
    Ok(arch)
}

pub fn train_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let frames = cfg.usize("train_frames")?;
    Ok(TrainConfig {
        steps: cfg.usize("steps")?,
        phrases_per_batch: cfg.usize("phrases_per_batch")?,
        utterances_per_phrase: cfg.usize("utterances_per_phrase")?,
        loss: LossKind::from_str(cfg.str("loss"))?,
        triplet: TripletConfig {
            margin: cfg.f64("triplet_margin")?,
        },
        adam: AdamConfig {
            lr: cfg.f64("lr")?,
            beta1: cfg.f64("beta1")?,
            beta2: cfg.f64("beta2")?,
            eps: cfg.f64("adam_eps")?,
        },
        clip_norm: cfg.f64("clip_norm")?,
        seed: cfg.u64("seed")?,
        frames: (frames > 0).then_some(frames),
        eval_every: cfg.usize("eval_every")?,
        target_auc: cfg.opt_f64("target_auc")?,
        eval: EvalOptions {
            enrollment_size: cfg.usize("enrollment_size")?,
            split_seed: cfg.u64("seed")?,
            ..EvalOptions::default()
        },
    })
}

struct LoadedData {
    utterances: Vec<Utterance>,
    /// Resolved source path per utterance id.
    paths: BTreeMap<String, PathBuf>,
}

fn load_data(path: &Path) -> Result<LoadedData> {
    let manifest = Manifest::read(path)?;
    let mut paths = BTreeMap::new();
    for e in &manifest.entries {
        let resolved = manifest.resolve(e);
        let abs = fs::canonicalize(&resolved).map_err(|err| CliError::io(&resolved, err))?;
        if paths.insert(e.id.clone(), abs).is_some() {
            return Err(CliError::input(
                path.display().to_string(),
                format!("line {}: duplicate utterance id '{}'", e.line, e.id),
            ));
        }
    }
    Ok(LoadedData {
        utterances: manifest.load_all()?,
        paths,
    })
}

fn subset_manifest(data: &LoadedData, subset: &[Utterance]) -> String {
    let paths: Vec<String> = subset
        .iter()
        .map(|u| data.paths[&u.id].display().to_string())
        .collect();
    format_manifest(
        subset
            .iter()
            .zip(&paths)
            .map(|(u, p)| (u.id.as_str(), u.phrase.as_str(), u.speaker.as_str(), p.as_str())),
    )
}

fn train_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let data = load_data(&cfg.required_path("manifest")?)?;
    let tcfg = train_config(cfg)?;
    let arch = arch_config(cfg)?;
    let (train_set, held_out) = holdout_split(&data.utterances, cfg.f64("holdout_fraction")?, tcfg.seed)?;
    run.write("train.tsv", subset_manifest(&data, &train_set))?;
    run.write("heldout.tsv", subset_manifest(&data, &held_out))?;
    run.log(&format!(
        "{} training and {} held-out utterances",
        train_set.len(),
        held_out.len()
    ))?;

    let mut model = init_params(&arch, tcfg.seed)?;
    let mut step_csv = String::from("step,loss,grad_norm\n");
    let mut eval_csv = String::from("step,auc,eer\n");
    let mut lines = Vec::new();
    let log = train(&mut model, &train_set, Some(&held_out), &tcfg, &mut |e| match e {
        TrainEvent::Step(s) => {
            writeln!(step_csv, "{},{:.9},{:.9}", s.step, s.loss, s.grad_norm).unwrap();
            if s.step % 50 == 0 || s.step == tcfg.steps {
                lines.push(format!("step {} loss {:.6} grad_norm {:.4}", s.step, s.loss, s.grad_norm));
            }
        }
        TrainEvent::Eval(r) => {
            writeln!(eval_csv, "{},{:.6},{:.6}", r.step, r.auc, r.eer).unwrap();
            lines.push(format!("eval step {} auc {:.6} eer {:.6}", r.step, r.auc, r.eer));
        }
    });
    for l in &lines {
        run.log(l)?;
    }
    let log = log?;
    run.write("train_log.csv", step_csv)?;
    run.write("eval_log.csv", eval_csv)?;
    let path = run.dir().join("model.kwsm");
    save_model(&model, &path)?;
    run.record(&path);
    run.log(&format!(
        "{} steps at {} frames; checkpoint {} ({})",
        log.steps.len(),
        log.frames,
        path.display(),
        kws_core::checkpoint::model_checksum(&model)?
    ))
}

enum AnyModel {
    Float(Model),
    Quantized(QuantizedModel),
}

impl AnyModel {
    fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        Ok(match c.meta("kind") {
            Some("model-q8") => AnyModel::Quantized(QuantizedModel::from_container(&c)?),
            _ => AnyModel::Float(model_from_container(&c)?),
        })
    }

    fn embedder(&self) -> &dyn Embedder {
        match self {
            AnyModel::Float(m) => m,
            AnyModel::Quantized(q) => q,
        }
    }
}

pub fn eval_options(cfg: &RunConfig) -> Result<EvalOptions> {
    let noise = if cfg.bool("noisy")? {
        Some(NoiseConfig {
            min_snr_db: cfg.f64("min_snr_db")?,
            max_snr_db: cfg.f64("max_snr_db")?,
            seed: cfg.u64("noise_seed")?,
        })
    } else {
        None
    };
    Ok(EvalOptions {
        enrollment_size: cfg.usize("enrollment_size")?,
        split_seed: cfg.u64("split_seed")?,
        exact: cfg.bool("exact")?,
        noise,
    })
}

/// The three CSV files an evaluation produces, by file name.
pub fn eval_csvs(report: &EvalReport) -> [(&'static str, String); 3] {
    let hists: Vec<_> = report.phrases.iter().map(|p| &p.histogram).collect();
    [
        ("det.csv", det_csv(&report.phrases, &report.aggregate)),
        ("metrics.csv", metrics_csv(&report.phrases, &report.aggregate)),
        ("histograms.csv", histogram_csv(&hists)),
    ]
}

fn eval_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let data = Manifest::read(&cfg.required_path("manifest")?)?.load_all()?;
    let model = AnyModel::load(&cfg.required_path("checkpoint")?)?;
    let report = evaluate(model.embedder(), &data, &eval_options(cfg)?)?;
    for (name, text) in eval_csvs(&report) {
        run.write(name, text)?;
    }
    run.log(&format!(
        "{} phrases: aggregate auc {:.6} eer {:.6}",
        report.aggregate.num_phrases, report.aggregate.auc, report.aggregate.eer
    ))
}

fn quantize_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let model = load_model(&cfg.required_path("checkpoint")?)?;
    let q = quantize_model(&model)?;
    let path = run.dir().join("model_q8.kwsm");
    q.save(&path)?;
    run.record(&path);
    let float_bytes = kws_core::checkpoint::model_to_container(&model).payload_bytes();
    let q_bytes = q.to_container().payload_bytes();
    run.log(&format!(
        "weight payload {float_bytes} -> {q_bytes} bytes ({:.2}x smaller)",
        float_bytes as f64 / q_bytes as f64
    ))
}

fn enroll_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let encoder = ServingEncoder::load(&cfg.required_path("checkpoint")?)?;
    let data = Manifest::read(&cfg.required_path("manifest")?)?.load_all()?;
    let k = cfg.usize("enrollment_size")?;
    let only = cfg.str("phrase");
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
    for u in &data {
        if !only.is_empty() && u.phrase != only {
            continue;
        }
        if !groups.contains_key(u.phrase.as_str()) {
            order.push(&u.phrase);
        }
        groups.entry(u.phrase.as_str()).or_default().push(u);
    }
    if order.is_empty() {
        let what = if only.is_empty() { "any".to_string() } else { format!("'{only}'") };
        return Err(CliError::input("enroll", format!("manifest has no utterances of {what} phrase")));
    }
    let mut store = ProfileStore::open(&run.dir().join("profiles"))?;
    let seed = cfg.u64("seed")?;
    for phrase in order {
        let utts = &groups[phrase];
        if k > 0 && utts.len() < k {
            return Err(CliError::input(
                "enroll",
                format!("phrase '{phrase}' has {} utterances, fewer than enrollment_size {k}", utts.len()),
            ));
        }
        let take = if k == 0 { utts.len() } else { k };
        let feats: Vec<_> = utts[..take].iter().map(|u| &u.features).collect();
        let profile = enroll(&encoder, &feats, phrase, seed)?;
        let path = store.insert(&profile)?;
        run.record(&path);
        run.log(&format!("enrolled '{phrase}' from {take} utterances"))?;
    }
    run.record(&run.dir().join("profiles").join(kws_core::runtime::PROFILE_INDEX_FILE));
    Ok(())
}

fn detect_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let det = DetectorConfig {
        threshold: cfg.f64("threshold")?,
        window_frames: cfg.usize("window_frames")?,
        hop_frames: cfg.usize("hop_frames")?,
        refractory_hops: cfg.usize("refractory_hops")?,
    };
    det.validate()?;
    let encoder = ServingEncoder::load(&cfg.required_path("checkpoint")?)?;
    let profiles_dir = cfg.required_path("profiles")?;
    let profiles = ProfileStore::open(&profiles_dir)?.load_all()?;
    if profiles.is_empty() {
        return Err(CliError::input(
            profiles_dir.display().to_string(),
            "no profiles in the index",
        ));
    }
    let input = cfg.required_path("input")?;
    let ext = input.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let events = match ext.as_deref() {
        Some("wav") => stream_detect_audio(&encoder, &profiles, &read_wav(&input)?, &det)?,
        Some("kwsf") => stream_detect(&encoder, &profiles, &read_features(&input)?, &det)?,
        _ => {
            return Err(CliError::input(
                input.display().to_string(),
                "input must be a .wav or .kwsf file",
            ))
        }
    };
    run.write("events.csv", events_csv(&events))?;
    run.log(&format!("{} events from {} profiles", events.len(), profiles.len()))
}

/// Per-label DET sweeps from a `phrase,threshold,far,frr` file, in file order.
pub fn parse_det_csv(text: &str, source: &str) -> Result<Vec<(String, ThresholdSweep)>> {
    let bad = |line: usize, detail: &str| CliError::input(format!("{source} line {line}"), detail.to_string());
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "phrase,threshold,far,frr")) => {}
        _ => return Err(bad(1, "expected header phrase,threshold,far,frr")),
    }
    let mut order: Vec<String> = Vec::new();
    let mut cols: BTreeMap<String, [Vec<f64>; 3]> = BTreeMap::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.rsplitn(4, ',').collect();
        if parts.len() != 4 {
            return Err(bad(i + 1, "expected 4 columns"));
        }
        let label = parts[3].to_string();
        let mut nums = [0.0; 3];
        for (n, s) in nums.iter_mut().zip([parts[2], parts[1], parts[0]]) {
            *n = s.parse().map_err(|_| bad(i + 1, "non-numeric value"))?;
        }
        if !cols.contains_key(&label) {
            order.push(label.clone());
        }
        let c = cols.entry(label).or_default();
        for (v, n) in c.iter_mut().zip(nums) {
            v.push(n);
        }
    }
    if order.is_empty() {
        return Err(bad(1, "no curves"));
    }
    order
        .into_iter()
        .map(|label| {
            let [t, far, frr] = cols.remove(&label).unwrap();
            let sweep = ThresholdSweep::new(t, far, frr)
                .map_err(|e| CliError::input(source.to_string(), format!("curve '{label}': {e}")))?;
            Ok((label, sweep))
        })
        .collect()
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn plot_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let path = cfg.required_path("eval_dir")?.join("det.csv");
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let curves = parse_det_csv(&text, &path.display().to_string())?;
    let mut used = HashSet::new();
    for (label, sweep) in &curves {
        let mut stem = file_stem(label);
        while !used.insert(stem.clone()) {
            stem.push('_');
        }
        let title = if label == AGGREGATE_LABEL {
            "aggregate DET".to_string()
        } else {
            format!("DET {label}")
        };
        run.write(&format!("det_{stem}.svg"), det_svg(&title, &[(label, sweep)]))?;
    }
    run.log(&format!("wrote {} plots", curves.len()))
}
