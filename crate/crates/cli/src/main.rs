mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{RunConfig, UsageError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Vessel destination estimation from AIS streams.
#[derive(Debug, Parser)]
#[command(name = "way", version)]
struct Cli {
    /// Key-value config file.
    #[arg(long, global = true, env = "WAY_CONFIG")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set refine.eps=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world: ais.csv, ports.json and truth.jsonl.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut AIS streams into port-to-port segments.
    Annotate {
        #[arg(long)]
        ais: PathBuf,
        #[arg(long)]
        ports: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove position outliers from segments.
    Refine {
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build nested grid sequences and the train/val/test split.
    Represent {
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the training split.
    Train {
        #[arg(long)]
        sequences: PathBuf,
        #[arg(long)]
        standardizer: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model on the test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sequences: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the most likely destinations at every step of one trajectory.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        sequences: PathBuf,
        /// Ports file, for printing names next to ids.
        #[arg(long)]
        ports: Option<PathBuf>,
        /// Sequence id; defaults to the first test sequence.
        #[arg(long)]
        id: Option<String>,
        /// Only the first N grid elements.
        #[arg(long)]
        prefix: Option<usize>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<way_core::Error>() {
            return match e {
                way_core::Error::Config(_) => EXIT_USAGE,
                way_core::Error::Numeric(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match &cli.command {
        Command::Synth { out } => stages::synth(&cfg, out),
        Command::Annotate { ais, ports, out } => stages::annotate(&cfg, ais, ports, out),
        Command::Refine { segments, out } => stages::refine(&cfg, segments, out),
        Command::Represent { segments, out } => stages::represent(&cfg, segments, out),
        Command::Train {
            sequences,
            standardizer,
            out,
        } => stages::train_model(&cfg, sequences, standardizer, out),
        Command::Eval { model, sequences, out } => stages::eval(&cfg, model, sequences, out),
        Command::Infer {
            model,
            sequences,
            ports,
            id,
            prefix,
        } => {
            let req = stages::InferRequest {
                model,
                sequences,
                ports: ports.as_deref(),
                id: id.as_deref(),
                prefix: *prefix,
            };
            stages::infer(&cfg, &req, &mut std::io::stdout().lock())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
