use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use skmix::commands::{self, Overrides, Split};
use skmix::{CliError, RunConfig};
use skmix_core::Precision;

#[derive(Parser)]
#[command(name = "skmix", version, about = "Memory-recurrent Mixer scoring for long multimodal sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Arithmetic width: 32 or 64.
    #[arg(long, global = true, value_parser = parse_precision)]
    precision: Option<u32>,
}

fn parse_precision(s: &str) -> Result<u32, String> {
    match s {
        "32" => Ok(32),
        "64" => Ok(64),
        _ => Err(format!("expected 32 or 64, got `{s}`")),
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (containers and manifests).
    Synth,
    /// Train a model; writes a checkpoint and a per-epoch loss log.
    Train,
    /// Per-head MSE and Spearman on a split.
    Eval {
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Score one feature container.
    Score {
        #[arg(long)]
        features: PathBuf,
    },
    /// Per-clip score increments for one feature container.
    Trace {
        #[arg(long)]
        features: PathBuf,
    },
    /// Top-k ranking report against the manifest's scores.
    Rank {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        k: usize,
        /// Score head to rank by.
        #[arg(long, default_value_t = 0)]
        head: usize,
    },
    /// Finite-difference gradient check on a toy instance of the configured variant.
    Gradcheck,
    /// Train and evaluate every fusion variant and scoring-token mode.
    Ablate,
    /// Analytic MAC counts over the configured clip-count sweep.
    Flops,
}

fn emit<T: Serialize>(report: &T) {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    // A closed pipe (e.g. `| head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Config(format!("--{flag} is required")))
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(need(&cli.config, "config")?)?;
    Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        precision: cli.precision,
    }
    .apply(&mut cfg)?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let precision = cli.precision.and_then(Precision::from_bits);
    match &cli.command {
        Command::Synth => {
            let r = commands::synth(&load_config(cli)?)?;
            eprintln!("wrote {} train and {} test videos (sha256 {})", r.train_videos, r.test_videos, r.sha256);
            emit(&r);
        }
        Command::Train => {
            let r = commands::train(&load_config(cli)?)?;
            eprintln!("checkpoint {}", r.checkpoint);
            emit(&r);
        }
        Command::Eval { split } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let cfg = load_config(cli)?;
            let default_ckpt = cfg.output_dir.join(commands::CHECKPOINT_FILE);
            let ckpt = cli.checkpoint.clone().unwrap_or(default_ckpt);
            emit(&commands::eval(&cfg, &ckpt, split, precision)?);
        }
        Command::Score { features } => {
            emit(&commands::score(need(&cli.checkpoint, "checkpoint")?, features, precision)?);
        }
        Command::Trace { features } => {
            emit(&commands::trace(need(&cli.checkpoint, "checkpoint")?, features, precision)?);
        }
        Command::Rank { manifest, k, head } => {
            emit(&commands::rank(need(&cli.checkpoint, "checkpoint")?, manifest, *k, *head, precision)?);
        }
        Command::Gradcheck => {
            let r = commands::gradcheck(&load_config(cli)?)?;
            eprintln!("max relative error {:.3e} (tolerance {:.0e})", r.max_rel_error, r.tolerance);
            emit(&r);
            if !r.passed {
                let worst = r
                    .params
                    .iter()
                    .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
                    .map_or(String::new(), |p| p.name.clone());
                return Err(CliError::GradCheck(format!("max relative error {:.3e} in {worst}", r.max_rel_error)));
            }
        }
        Command::Ablate => {
            let r = commands::ablate(&load_config(cli)?)?;
            eprint!("{}", commands::ablation_table(&r));
            emit(&r);
        }
        Command::Flops => emit(&commands::flops(&load_config(cli)?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
