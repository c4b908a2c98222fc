use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pclc_cli::config::{keys_help, RunConfig};
use pclc_cli::{cmd_eval, cmd_export_protos, cmd_predict, cmd_sweep_lambda, cmd_train};

#[derive(Parser)]
#[command(
    name = "pclc",
    version,
    about = "Zero-shot cross-domain slot filling with prototypical contrastive learning and label confusion",
    after_long_help = keys_help()
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

/// Options shared by every subcommand. Flags override the config file;
/// `--set` overrides apply last.
#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus_dir: Option<String>,
    #[arg(long)]
    embeddings: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Target-domain training samples (0 = zero-shot).
    #[arg(long)]
    few_shot: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Any config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let flags: [(&str, Option<String>); 7] = [
            ("corpus_dir", self.corpus_dir.clone()),
            ("embeddings", self.embeddings.clone()),
            ("target", self.target.clone()),
            ("output_dir", self.output_dir.clone()),
            ("seed", self.seed.map(|v| v.to_string())),
            ("few_shot", self.few_shot.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        for o in &self.overrides {
            cfg.apply_override(o).with_context(|| format!("--set {o}"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on the source domains and save the best checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on the target test set.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to checkpoint.pclc in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split manifest to evaluate on instead of re-deriving the split.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Tag whitespace-tokenized utterances (one per line) and print CoNLL.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input file; standard input when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Domain whose slots are candidates; defaults to the target.
        #[arg(long)]
        domain: Option<String>,
    },
    /// Train and evaluate once per λ and write a λ vs F1 table.
    SweepLambda {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        /// Train all values concurrently as separate processes.
        #[arg(long)]
        parallel: bool,
    },
    /// Write the prototype matrix of a checkpoint as TSV.
    ExportProtos {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to prototypes.tsv in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_input(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => std::io::read_to_string(std::io::stdin()).context("reading standard input"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Train { common } => {
            let summary = cmd_train(&common.resolve()?)?;
            println!("{summary}");
        }
        Cmd::Eval {
            common,
            checkpoint,
            split,
        } => {
            let report = cmd_eval(&common.resolve()?, checkpoint.as_deref(), split.as_deref())?;
            print!("{}", report.to_text());
        }
        Cmd::Predict {
            common,
            checkpoint,
            input,
            domain,
        } => {
            let cfg = common.resolve()?;
            let text = read_input(input.as_deref())?;
            print!(
                "{}",
                cmd_predict(&cfg, checkpoint.as_deref(), &text, domain.as_deref())?
            );
        }
        Cmd::SweepLambda {
            common,
            lambdas,
            parallel,
        } => {
            let exe = if parallel {
                Some(std::env::current_exe().context("locating the pclc executable")?)
            } else {
                None
            };
            let rows = cmd_sweep_lambda(&common.resolve()?, &lambdas, exe.as_deref())?;
            print!("{}", pclc_cli::commands::sweep_tsv(&rows));
        }
        Cmd::ExportProtos {
            common,
            checkpoint,
            out,
        } => {
            let path = cmd_export_protos(&common.resolve()?, checkpoint.as_deref(), out.as_deref())?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
