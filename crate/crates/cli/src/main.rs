//! `dgf` — dataset synthesis, training, inference and evaluation for the
//! dense generative deblurring filter.
//!
//! Exit codes: 0 ok, 2 usage, 3 empty dataset, 4 training abort,
//! 5 checkpoint mismatch, 6 eval pairing failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "dgf", version, about = "Blind motion deblurring with a dense conditional GAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a blurred/sharp training dataset from sharp images.
    Synth {
        /// Directory of sharp source images (PNG).
        #[arg(long)]
        src: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of pairs to generate.
        #[arg(long)]
        count: usize,
        /// Patch edge length in pixels.
        #[arg(long)]
        size: Option<usize>,
        /// RNG seed; fixes every random choice.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON run config (blur settings come from its `synth` section).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the generator/discriminator pair on a synthesized dataset.
    Train {
        /// JSON run config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory (manifest.json + PNG pairs).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory for checkpoints and the NDJSON log.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the generator on one PNG or a directory of PNGs.
    Deblur {
        /// Trained checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Input PNG file or directory.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output PNG file (for a file input) or directory.
        #[arg(long)]
        out: PathBuf,
        /// Optional run config; its generator section must match the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare prediction and reference directories, paired by filename.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Directory for report.json / report.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Optional run config (its `metrics` section picks the columns).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Inspect or emit run configuration.
    Config {
        /// Print the full default config as JSON.
        #[arg(long)]
        emit_defaults: bool,
        /// Validate a config file (unknown keys are rejected).
        file: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { src, out, count, size, seed, config } => {
            commands::synth(&src, &out, count, size, seed, config.as_deref())
        }
        Command::Train { config, data, out, iterations, seed, resume } => {
            commands::train(config.as_deref(), data.as_deref(), &out, iterations, seed, resume.as_deref())
        }
        Command::Deblur { ckpt, input, out, config } => {
            commands::deblur(&ckpt, &input, &out, config.as_deref())
        }
        Command::Eval { pred, reference, out, config } => {
            commands::eval(&pred, &reference, &out, config.as_deref())
        }
        Command::Config { emit_defaults, file } => commands::config_cmd(emit_defaults, file.as_deref()),
    };

    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
