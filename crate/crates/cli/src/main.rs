use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ddrecon::commands;
use ddrecon::config::ExperimentConfig;
use ddrecon::training::HISTORY_FILE;
use ddrecon::{Error, Result};

const THREADS_ENV: &str = "DDRECON_THREADS";

/// Dual-domain squeeze-excitation reconstruction of undersampled multi-coil MRI.
#[derive(Parser, Debug)]
#[command(name = "ddrecon", version)]
struct Cli {
    /// Experiment config (`section.key=value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides dataset and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; relative paths in the config resolve against it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize the phantom dataset and its train/val/test split.
    Simulate,
    /// Train the cascade, writing checkpoints and history.
    Train {
        /// Continue from the latest checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Export R_out, zero-fill and ground-truth RSS images as 16-bit PGM.
    Reconstruct {
        /// Checkpoint to load (default: best validation checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Slice ids, comma separated (default: the test split).
        #[arg(long, value_delimiter = ',')]
        slices: Vec<String>,
    },
    /// Score the model and zero-filling on a split.
    Evaluate {
        /// Checkpoint to load (default: best validation checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.code());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.set_out_dir(out);
    }
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    config.validate()?;

    match cli.command {
        Command::Simulate => {
            let (dataset, split) = commands::simulate(&config)?;
            println!(
                "wrote {} slices to {} (train {}, val {}, test {})",
                dataset.len(),
                config.paths.dataset_path().display(),
                split.train.len(),
                split.val.len(),
                split.test.len()
            );
        }
        Command::Train { resume } => {
            commands::train(&config, resume, |r| {
                println!(
                    "epoch {}\ttrain_loss {:.6e}\tval_nmse {:.4}%",
                    r.epoch, r.train_loss, r.val_nmse
                )
            })?;
            println!(
                "history: {}",
                config.train.checkpoint_dir.join(HISTORY_FILE).display()
            );
        }
        Command::Reconstruct { checkpoint, slices } => {
            let written = commands::reconstruct(&config, checkpoint.as_deref(), &slices)?;
            println!(
                "wrote {} images to {}",
                written.len(),
                config.paths.images_dir().display()
            );
        }
        Command::Evaluate { checkpoint, split } => {
            let eval = commands::evaluate(&config, checkpoint.as_deref(), &split)?;
            for report in &eval.image {
                let (n, s, p) = (report.nmse(), report.ssim(), report.psnr());
                println!(
                    "{}\tNMSE {:.3}±{:.3}%\tSSIM {:.4}±{:.4}\tPSNR {:.2}±{:.2} dB",
                    report.method, n.mean, n.std, s.mean, s.std, p.mean, p.std
                );
            }
            println!("reports: {}", config.paths.reports_dir().display());
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{THREADS_ENV} must be a positive integer, got `{value}`"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {threads} worker threads: {e}")))
}
