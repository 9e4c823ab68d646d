use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use macoder::commands::CommandStatus;
use macoder::config::{load_config, RunConfigFile};

#[derive(Parser)]
#[command(
    name = "macoder",
    about = "Multi-agent ICD-9 coding: ingest, SOAP conversion, workflow runs, evaluation, ablations",
    version
)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a scalar config field, e.g. --set workflow.mode=mac2.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw note export into the canonical corpus format.
    Ingest {
        /// Raw export file.
        input: PathBuf,
        /// Export format: csv or mimic.
        #[arg(long)]
        format: String,
        /// Output corpus file (line-delimited records).
        #[arg(long)]
        output: PathBuf,
        /// Keep only the k most frequent train-split codes and project the
        /// corpus onto them; writes labels and subset manifest files.
        #[arg(long)]
        top_k: Option<usize>,
        /// Keep only codes with at most this many train-split occurrences.
        #[arg(long)]
        rare_threshold: Option<usize>,
    },
    /// Convert every corpus note into a SOAP sidecar via the configured provider.
    SoapConvert,
    /// Execute the configured workflow over the corpus (resumable).
    Run,
    /// Score results against the gold corpus (and evidence gold, if configured).
    Eval {
        /// Results file; defaults to <output_dir>/results.jsonl.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Run a grid of agent-set/strategy variants and emit a delta table.
    Ablate {
        /// Grid file (TOML with [[variant]] tables).
        grid: PathBuf,
    },
    /// Re-render saved metric reports as tables.
    Report {
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        evidence: Option<PathBuf>,
    },
}

fn require_config(cli: &Cli) -> Result<RunConfigFile> {
    let path = cli
        .config
        .as_ref()
        .context("this command needs --config <file>")?;
    load_config(path, &cli.overrides)
}

fn dispatch(cli: &Cli) -> Result<CommandStatus> {
    match &cli.command {
        Command::Ingest {
            input,
            format,
            output,
            top_k,
            rare_threshold,
        } => {
            macoder::cmd_ingest(input, format, output, *top_k, *rare_threshold)?;
            Ok(CommandStatus::AllComplete)
        }
        Command::SoapConvert => macoder::cmd_soap_convert(&require_config(cli)?),
        Command::Run => macoder::cmd_run(&require_config(cli)?),
        Command::Eval { results } => {
            macoder::cmd_eval(&require_config(cli)?, results.as_deref())?;
            Ok(CommandStatus::AllComplete)
        }
        Command::Ablate { grid } => macoder::cmd_ablate(&require_config(cli)?, grid),
        Command::Report { metrics, evidence } => {
            macoder::cmd_report(
                &require_config(cli)?,
                metrics.as_deref(),
                evidence.as_deref(),
            )?;
            Ok(CommandStatus::AllComplete)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(status) => ExitCode::from(status.exit_code()),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
