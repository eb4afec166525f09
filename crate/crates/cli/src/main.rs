use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use kws_cli::config::keys_help;
use kws_cli::{run_command, CliError, Command, RunConfig};

/// Keyword-spotting embedding toolkit.
#[derive(Parser)]
#[command(name = "kws", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (same as `--set run_dir=DIR`).
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Global seed (same as `--set seed=N`).
    #[arg(long)]
    seed: Option<u64>,
    /// Only write to the run log, not stdout.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic feature dataset and its manifest.
    SynthData(#[command(flatten)] Common),
    /// Train an encoder from a manifest.
    Train {
        #[command(flatten)]
        common: Common,
        /// Number of optimizer steps; 0 writes the initial checkpoint only.
        #[arg(long)]
        steps: Option<usize>,
        /// `ge2e` or `triplet`.
        #[arg(long)]
        loss: Option<String>,
    },
    /// Enrollment/verification evaluation: DET, AUC and EER CSVs.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Add 3–15 dB white noise to test utterances.
        #[arg(long)]
        noisy: bool,
    },
    /// Write an 8-bit quantized copy of a checkpoint.
    Quantize(#[command(flatten)] Common),
    /// Build enrollment profiles from a manifest.
    Enroll(#[command(flatten)] Common),
    /// Run sliding-window detection over audio or features.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Acceptance threshold in [0, 1].
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Render DET curves from an eval run as SVG.
    Plot(#[command(flatten)] Common),
}

fn split_set(s: &str) -> Result<(String, String), CliError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| CliError::config(format!("--set '{s}' is not KEY=VALUE")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut extra: Vec<(String, String)> = Vec::new();
    let (command, common) = match cli.cmd {
        Cmd::SynthData(c) => (Command::SynthData, c),
        Cmd::Train { common, steps, loss } => {
            extra.extend(steps.map(|s| ("steps".to_string(), s.to_string())));
            extra.extend(loss.map(|l| ("loss".to_string(), l)));
            (Command::Train, common)
        }
        Cmd::Eval { common, noisy } => {
            if noisy {
                extra.push(("noisy".into(), "true".into()));
            }
            (Command::Eval, common)
        }
        Cmd::Quantize(c) => (Command::Quantize, c),
        Cmd::Enroll(c) => (Command::Enroll, c),
        Cmd::Detect { common, threshold } => {
            extra.extend(threshold.map(|t| ("threshold".to_string(), t.to_string())));
            (Command::Detect, common)
        }
        Cmd::Plot(c) => (Command::Plot, c),
    };
    let mut overrides = Vec::new();
    overrides.extend(common.seed.map(|s| ("seed".to_string(), s.to_string())));
    overrides.extend(common.run_dir.map(|d| ("run_dir".to_string(), d.display().to_string())));
    overrides.extend(extra);
    for s in &common.set {
        overrides.push(split_set(s)?);
    }
    let text = match &common.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
        None => None,
    };
    let name = common.config.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
    let cfg = RunConfig::build(command, text.as_deref().map(|t| (t, name.as_str())), &overrides)?;
    let dir = run_command(&cfg, common.quiet)?;
    if !common.quiet {
        println!("outputs in {}", dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let mut app = Cli::command();
    for c in Command::ALL {
        app = app.mut_subcommand(c.name(), |s| s.after_help(keys_help(c)));
    }
    let cli = match Cli::from_arg_matches(&app.get_matches()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
