mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;

/// Simulate additive-noise SCM datasets, train the encoder/decoder pair,
/// and run evaluation or single-dataset inference.
#[derive(Debug, Parser)]
#[command(name = "condfip", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Base seed; overrides the seed in config files when given.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Model checkpoint to read (decoder-stage checkpoints carry the encoder too).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Use the EMA weights stored in the checkpoint.
    #[arg(long, global = true)]
    pub ema: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample one SCM from a preset and write a dataset file.
    Simulate {
        /// `in-lin`, `in-rff`, `in-both`, `out-lin`, `out-rff` or `out-both`.
        #[arg(long, default_value = "in-both")]
        preset: String,
        #[arg(long, default_value_t = 10)]
        d: usize,
        #[arg(long, default_value_t = 800)]
        n: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run one training stage from a key=value config file.
    Train {
        /// `encoder` or `decoder`.
        #[arg(long)]
        stage: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Encoder checkpoint, required for the decoder stage.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Loss log; printed to stdout when absent.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run the benchmark suite and write a report plus one plot per task.
    Eval {
        /// Suite config; defaults apply when absent.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// `learned` (needs --checkpoint), `oracle` or `zero`.
        #[arg(long, default_value = "learned")]
        predictor: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Abduct noise for every row of a dataset file.
    PredictNoise {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Generate observational rows from noise drawn from the abducted marginals.
    Generate {
        #[arg(long)]
        data: PathBuf,
        /// Rows to generate; defaults to the input row count.
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Generate rows under do(node = value), value in the data's units.
    Intervene {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        node: usize,
        #[arg(long)]
        value: f64,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// MMD report: generated, reconstructed and train rows against a test split.
    RealData {
        #[arg(long)]
        data: PathBuf,
        /// Fraction of rows used as the train split.
        #[arg(long, default_value_t = 0.5)]
        train_fraction: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match cli.command {
        Command::Simulate { preset, d, n, out } => commands::simulate(g, &preset, d, n, &out),
        Command::Train { stage, config, encoder, out, log } => {
            commands::train(g, &stage, config.as_deref(), encoder.as_deref(), &out, log.as_deref())
        }
        Command::Eval { suite, predictor, out_dir } => commands::eval(g, suite.as_deref(), &predictor, &out_dir),
        Command::PredictNoise { data, out } => commands::predict_noise(g, &data, &out),
        Command::Generate { data, rows, out } => commands::generate(g, &data, None, rows, &out),
        Command::Intervene { data, node, value, rows, out } => commands::generate(g, &data, Some((node, value)), rows, &out),
        Command::RealData { data, train_fraction } => commands::real_data(g, &data, train_fraction),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}
