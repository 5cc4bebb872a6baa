//! The `respire` command line: one subcommand per pipeline stage.

pub mod commands;
pub mod config;
pub mod error;
pub mod serve;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use respire_core::models::ClassifierKind;
use respire_core::synth::{generate_corpus, SynthConfig};

use crate::config::{GroupBy, PipelineConfig, ProviderKind};
use crate::error::{CliError, ExitKind, Result};

#[derive(Debug, Parser)]
#[command(name = "respire", version, about = "Pediatric respiratory sound classification pipeline")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured work directory.
    #[arg(long, global = true)]
    pub work_dir: Option<PathBuf>,
    /// Overrides the configured corpus root.
    #[arg(long, global = true)]
    pub corpus_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan the corpus and write manifest.csv.
    Ingest,
    /// Cut annotated events into 2 s clips.
    Segment,
    /// Embed every clip and persist the dataset.
    Embed {
        #[arg(long, value_enum)]
        provider: Option<ProviderKind>,
    },
    /// Split the dataset and train classifiers.
    Train {
        /// Comma separated kinds, or `all`.
        #[arg(long, default_value = "all")]
        models: String,
        #[arg(long, value_enum)]
        group_by: Option<GroupBy>,
    },
    /// Score the held-out split and write results.
    Evaluate {
        #[arg(long)]
        models: Option<String>,
    },
    /// Clinician review of misclassified clips.
    Review {
        #[command(subcommand)]
        action: ReviewAction,
    },
    /// ingest, segment, embed, train and evaluate.
    RunAll {
        #[arg(long, default_value = "all")]
        models: String,
    },
    /// Write a synthetic annotated corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        recordings: usize,
        #[arg(long, default_value_t = 10.0)]
        snr_db: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReviewAction {
    /// Serve the review API and UI.
    Serve {
        /// Defaults to the most accurate evaluated model.
        #[arg(long)]
        model: Option<ClassifierKind>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Fold a verdict log into labels.npy.
    Apply {
        #[arg(long)]
        verdicts: Option<PathBuf>,
    },
}

/// Parses `all` or a comma separated list of kinds.
pub fn parse_models(spec: &str) -> Result<Vec<ClassifierKind>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(ClassifierKind::ALL.to_vec());
    }
    let mut kinds = Vec::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let k: ClassifierKind = part.parse().map_err(|e| CliError::msg(ExitKind::General, e))?;
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    if kinds.is_empty() {
        return Err(CliError::msg(ExitKind::General, "no models selected"));
    }
    Ok(kinds)
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| CliError::new(ExitKind::General, e))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.work_dir {
        cfg.work_dir = dir.clone();
    }
    if let Some(root) = &cli.corpus_root {
        cfg.corpus_root = root.clone();
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("summary serialises"));
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest => print_json(&commands::ingest(&cfg)?),
        Command::Segment => print_json(&commands::segment(&cfg)?),
        Command::Embed { provider } => {
            if let Some(p) = provider {
                cfg.embed.provider = p;
            }
            print_json(&commands::embed(&cfg)?)
        }
        Command::Train { models, group_by } => {
            if let Some(g) = group_by {
                cfg.split.group_by = g;
            }
            print_json(&commands::train(&cfg, &parse_models(&models)?)?)
        }
        Command::Evaluate { models } => {
            let kinds = models.as_deref().map(parse_models).transpose()?;
            print_json(&commands::evaluate(&cfg, kinds.as_deref())?)
        }
        Command::Review { action } => match action {
            ReviewAction::Serve { model, port, ui_dir } => {
                let ui = serve::ui_dir(&cfg, ui_dir);
                let server = serve::ReviewServer::bind(&cfg, model, port.unwrap_or(cfg.review.port), ui.as_deref())?;
                eprintln!("reviewing {} at {}", server.model, server.url());
                server.run();
            }
            ReviewAction::Apply { verdicts } => print_json(&commands::review_apply(&cfg, verdicts.as_deref())?),
        },
        Command::RunAll { models } => print_json(&commands::run_all(&cfg, &parse_models(&models)?)?),
        Command::Synth { out, recordings, snr_db } => {
            let synth = SynthConfig {
                recordings,
                seed: cfg.seed,
                snr_db,
                ..SynthConfig::default()
            };
            print_json(&generate_corpus(&out, &synth)?)
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// reporting failures on stderr.
pub fn run<I, T>(args: I) -> ExitKind
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitKind::General } else { ExitKind::Ok };
        }
    };
    match execute(cli) {
        Ok(()) => ExitKind::Ok,
        Err(e) => {
            eprintln!("error: {e}");
            e.kind
        }
    }
}
