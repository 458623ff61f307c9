#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use semctl_core::corpus::{load_multiwoz_json, load_multiwoz_json_with_vocab, write_jsonl, Corpus};
use semctl_core::experiment::{gradient_integrity, run_sweep, write_csv, write_csv_file, Axis, SweepSpec};
use semctl_core::trainer::{load_checkpoint, save_checkpoint};
use semctl_core::{evaluate, generate_corpus, train, TrainConfig};

const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "semctl", version, about = "Structured semantic control for dialogue generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dialogue corpus as JSON lines.
    GenCorpus {
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint destination.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split of its corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus file; defaults to regenerating the synthetic corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        /// Seed of the regenerated corpus.
        #[arg(long)]
        corpus_seed: Option<u64>,
        /// Evaluation-time embedding noise.
        #[arg(long)]
        noise: Option<f64>,
        /// Report scores ×100.
        #[arg(long)]
        percent: bool,
    },
    /// Finite-difference check of the full objective on a small model.
    GradCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        d_s: usize,
    },
    /// Sensitivity sweep over one axis, written as CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: String,
        /// Comma-separated, strictly increasing values (default grid if absent).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Comma-separated run seeds (five from --seed if absent).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// CSV destination; standard output if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat JSON configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Corpus file; defaults to a generated corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Generated corpus size.
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    d_z: Option<usize>,
    #[arg(long)]
    d_s: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

impl Common {
    fn config(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_config(path)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.d_z {
            cfg.d_z = v;
        }
        if let Some(v) = self.d_s {
            cfg.d_s = v;
        }
        if let Some(v) = self.noise {
            cfg.noise_sigma_eval = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn corpus(&self, seed: u64) -> anyhow::Result<Corpus> {
        load_or_generate(self.corpus.as_deref(), self.episodes, seed)
    }
}

fn read_config(path: &Path) -> anyhow::Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let known = serde_json::to_value(TrainConfig::default())?;
    let (Some(obj), Some(known)) = (value.as_object(), known.as_object()) else {
        bail!("{}: expected a JSON object", path.display());
    };
    if let Some(k) = obj.keys().find(|k| !known.contains_key(*k)) {
        bail!("{}: unknown configuration key `{k}`", path.display());
    }
    Ok(serde_json::from_value(value)?)
}

fn load_or_generate(path: Option<&Path>, episodes: usize, seed: u64) -> anyhow::Result<Corpus> {
    Ok(match path {
        Some(p) => {
            let (corpus, report) = load_multiwoz_json(p)?;
            log::info!("loaded {report:?}");
            corpus
        }
        None => generate_corpus(episodes, seed)?,
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenCorpus { episodes, seed, out } => {
            let corpus = generate_corpus(episodes, seed)?;
            write_jsonl(&corpus, &out)?;
            println!(
                "wrote {} episodes ({} tokens in vocabulary) to {}",
                corpus.episodes.len(),
                corpus.vocab.len(),
                out.display()
            );
        }
        Command::Train { common, out } => {
            let cfg = common.config()?;
            let corpus = common.corpus(cfg.seed)?;
            let outcome = train(&corpus, &cfg)?;
            for r in &outcome.history {
                println!("{}", serde_json::to_string(r)?);
            }
            let metrics = evaluate(&outcome.params, &outcome.splits.dev, &corpus.vocab, &cfg)?;
            println!("{}", serde_json::to_string(&serde_json::json!({ "dev": metrics }))?);
            save_checkpoint(&out, &outcome.params, &cfg, &corpus.vocab)?;
            eprintln!("checkpoint written to {}", out.display());
        }
        Command::Eval {
            checkpoint,
            corpus,
            episodes,
            corpus_seed,
            noise,
            percent,
        } => {
            let (params, mut cfg, vocab) = load_checkpoint(&checkpoint)?;
            if let Some(n) = noise {
                cfg.noise_sigma_eval = n;
                cfg.validate()?;
            }
            let corpus = match corpus {
                Some(p) => load_multiwoz_json_with_vocab(&p, &vocab)?.0,
                None => generate_corpus(episodes, corpus_seed.unwrap_or(cfg.seed))?,
            };
            if corpus.vocab != vocab {
                bail!("corpus vocabulary differs from the checkpoint's");
            }
            let splits = semctl_core::corpus::split(&corpus.episodes, Default::default(), cfg.seed)?;
            let mut m = evaluate(&params, &splits.test, &vocab, &cfg)?;
            if percent {
                for x in [&mut m.bleu, &mut m.rouge_l, &mut m.meteor_s, &mut m.control_accuracy, &mut m.flip_rate] {
                    *x *= 100.0;
                }
            }
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::GradCheck { seed, d_s } => {
            let report = gradient_integrity(seed, d_s)?;
            println!(
                "max relative error {:.3e} over {} entries",
                report.max_rel_error, report.entries_checked
            );
            if !(report.max_rel_error < GRAD_TOLERANCE) {
                bail!("gradient check failed: {:.3e} >= {GRAD_TOLERANCE:e}", report.max_rel_error);
            }
        }
        Command::Sweep {
            common,
            axis,
            values,
            seeds,
            out,
        } => {
            let axis: Axis = axis.parse().map_err(UsageError)?;
            let base = common.config()?;
            let mut spec = SweepSpec::new(axis, base);
            spec.episodes = common.episodes;
            if let Some(v) = values {
                spec.values = v;
            }
            if let Some(s) = seeds {
                spec.seeds = s;
            }
            spec.validate().map_err(UsageError)?;
            if common.corpus.is_some() {
                bail!("sweeps run on the generated corpus; --corpus is not supported here");
            }
            let rows = run_sweep(&spec)?;
            match out {
                Some(p) => {
                    write_csv_file(&rows, &p)?;
                    eprintln!("wrote {} rows to {}", rows.len(), p.display());
                }
                None => write_csv(&rows, std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

#[derive(Debug)]
struct UsageError(semctl_core::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
