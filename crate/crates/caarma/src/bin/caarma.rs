//! Command-line entry points: corpus generation, training, evaluation, and
//! the property self-test. Exit codes: 0 success, 1 runtime error, 2 usage.

use caarma::checks::selftest_properties;
use caarma::config::{load_config, ExperimentConfig};
use caarma::data::{Manifest, TrialList};
use caarma::error::Result;
use caarma::eval::{score_trials, summarize};
use caarma::trainer::{checkpoint_class_count, embed_manifest, load_checkpoint, train, Mode};
use clap::{Parser, Subcommand, ValueEnum};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "caarma", version, about = "Class-augmented speaker verification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum ModeArg {
    Baseline,
    Lsyn,
    At,
    #[value(name = "at+sd")]
    AtSd,
    Full,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Lsyn => Mode::Lsyn,
            ModeArg::At => Mode::At,
            ModeArg::AtSd => Mode::AtSd,
            ModeArg::Full => Mode::Full,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic speaker corpus with a manifest.
    Generate {
        /// Config file; the desk profile is used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        speakers: usize,
        #[arg(long, default_value_t = 6)]
        utts: usize,
    },
    /// Train a model in one of the ablation modes.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Checkpoint directory to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a trial list with a trained checkpoint.
    Evaluate {
        /// Checkpoint directory (its config.txt is used).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// Per-trial score file destination.
        #[arg(long)]
        scores_out: PathBuf,
    },
    /// Run the oracle, gradient, and invariant property suite.
    Selftest,
}

fn verbose() -> bool {
    matches!(
        std::env::var("CAARMA_LOG").as_deref(),
        Ok("debug") | Ok("verbose") | Ok("1")
    )
}

fn log_verbose(msg: &str) {
    if verbose() {
        eprintln!("[caarma] {msg}");
    }
}

fn load_cfg(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(ExperimentConfig::desk()),
    }
}

/// FNV-1a over the raw bytes of every corpus file, in manifest order.
fn corpus_hash(manifest: &Manifest) -> Result<u64> {
    let mut h: u64 = 0xcbf29ce484222325;
    for entry in &manifest.entries {
        for b in std::fs::read(&entry.source)? {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    Ok(h)
}

fn cmd_generate(
    config: &Option<PathBuf>,
    out: &PathBuf,
    speakers: usize,
    utts: usize,
) -> Result<()> {
    let cfg = load_cfg(config)?;
    log_verbose(&format!("generating {speakers} speakers x {utts} utterances"));
    let manifest = caarma::features::generate_corpus(speakers, utts, &cfg, cfg.seed, out)?;
    let hash = corpus_hash(&manifest)?;
    println!(
        "generate: speakers={} utterances={} manifest={} corpus_hash={:016x}",
        speakers,
        manifest.entries.len(),
        out.join("manifest.txt").display(),
        hash
    );
    Ok(())
}

fn cmd_train(
    config: &Option<PathBuf>,
    manifest: &PathBuf,
    out: &PathBuf,
    mode: Mode,
    resume: &Option<PathBuf>,
) -> Result<()> {
    let cfg = load_cfg(config)?;
    let manifest = Manifest::load(manifest)?;
    log_verbose(&format!("training mode={} epochs={}", mode.as_str(), cfg.epochs));
    let trainer = train(&cfg, &manifest, mode, out, resume.as_deref(), None)?;
    println!(
        "train: mode={} steps={} epochs={} metrics={}",
        mode.as_str(),
        trainer.state.step,
        trainer.state.epoch,
        out.join("metrics.log").display()
    );
    Ok(())
}

fn cmd_evaluate(
    checkpoint: &PathBuf,
    manifest: &PathBuf,
    trials: &PathBuf,
    scores_out: &PathBuf,
) -> Result<()> {
    let cfg = load_config(&checkpoint.join("config.txt"))?;
    let manifest = Manifest::load(manifest)?;
    let trials = TrialList::load(trials)?;

    let known: BTreeSet<&str> = manifest
        .entries
        .iter()
        .map(|e| e.utterance_id.as_str())
        .collect();
    let mut missing: BTreeSet<&str> = BTreeSet::new();
    for t in &trials.trials {
        for id in [t.enroll_id.as_str(), t.test_id.as_str()] {
            if !known.contains(id) {
                missing.insert(id);
            }
        }
    }
    if !missing.is_empty() {
        let list: Vec<&str> = missing.into_iter().collect();
        return Err(caarma::error::Error::MissingUtterance(list.join(", ")));
    }

    let n_classes = checkpoint_class_count(checkpoint)?;
    let trainer = load_checkpoint(checkpoint, &cfg, n_classes)?;
    log_verbose(&format!("embedding {} utterances", manifest.entries.len()));
    let embeddings = embed_manifest(&trainer.state.encoder, &manifest, &cfg)?;
    let scored = score_trials(&trials, &embeddings)?;
    let summary = summarize(
        &scored,
        cfg.mindcf_p_target,
        cfg.mindcf_c_miss,
        cfg.mindcf_c_fa,
    )?;

    let mut f = std::fs::File::create(scores_out)?;
    for (t, s) in trials.trials.iter().zip(&scored.scores) {
        writeln!(
            f,
            "{} {} {} {}",
            t.enroll_id,
            t.test_id,
            if t.is_target { "target" } else { "nontarget" },
            s
        )?;
    }
    println!(
        "evaluate: eer={} mindcf={} target_trials={} nontarget_trials={} scores={}",
        summary.eer,
        summary.min_dcf,
        summary.target_trials,
        summary.nontarget_trials,
        scores_out.display()
    );
    Ok(())
}

fn cmd_selftest() -> bool {
    let mut ok = true;
    for (name, f) in selftest_properties() {
        match f() {
            Ok(()) => println!("PASS {name}"),
            Err(e) => {
                ok = false;
                println!("FAIL {name}: {e}");
            }
        }
    }
    ok
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate {
            config,
            out,
            speakers,
            utts,
        } => cmd_generate(config, out, *speakers, *utts),
        Command::Train {
            config,
            manifest,
            out,
            mode,
            resume,
        } => cmd_train(config, manifest, out, Mode::from(*mode), resume),
        Command::Evaluate {
            checkpoint,
            manifest,
            trials,
            scores_out,
        } => cmd_evaluate(checkpoint, manifest, trials, scores_out),
        Command::Selftest => {
            return if cmd_selftest() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
