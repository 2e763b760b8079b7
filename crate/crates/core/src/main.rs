use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wfdl::cli::{self, RunConfig};
use wfdl::data::{Background, Defect, SynthConfig};
use wfdl::loss::LossKind;
use wfdl::spectral::{FilterMode, FilterSpec, WeightMode};

/// Frequency-weighted autoencoder training and anomaly scoring.
#[derive(Parser)]
#[command(name = "wfdl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an autoencoder on the normal images of a category.
    Train(TrainArgs),
    /// Score the test images of a category and report AUROC.
    Eval(EvalArgs),
    /// Write the five reconstruction panels for one image.
    Reconstruct(ReconstructArgs),
    /// Low- or high-pass filter an image in the frequency domain.
    Filter(FilterArgs),
    /// Generate a synthetic defect dataset in the MVTec layout.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key = value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset_root: Option<PathBuf>,
    #[arg(long)]
    category: Option<String>,
    /// Checkpoint output path (metrics land next to it).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training loss: mse | wfdl.
    #[arg(long)]
    loss: Option<LossKind>,
    /// Frequency-weight indexing: centered | raw | none.
    #[arg(long)]
    weight_mode: Option<WeightMode>,
    #[arg(long)]
    image_size: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset_root: PathBuf,
    #[arg(long)]
    category: String,
    /// Report CSV output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input image (PNG).
    #[arg(long)]
    image: PathBuf,
    /// Output directory for the five panels.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    /// Input image (PNG).
    #[arg(long)]
    image: PathBuf,
    /// Radial cutoff in centered-frequency units.
    #[arg(long)]
    cutoff: f64,
    /// low | high.
    #[arg(long)]
    mode: FilterMode,
    /// Filtered image output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Dataset root to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "synthetic")]
    category: String,
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    train: usize,
    #[arg(long, default_value_t = 8)]
    test_normal: usize,
    #[arg(long, default_value_t = 8)]
    test_anomalous: usize,
    /// flat | gradient | stripes.
    #[arg(long, default_value = "stripes")]
    background: Background,
    /// scratch | blob | missing_patch.
    #[arg(long, default_value = "scratch")]
    defect: Defect,
}

fn build_run_config(args: &TrainArgs) -> wfdl::Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &args.config {
        config.apply_file(path)?;
    }
    if let Some(v) = &args.dataset_root {
        config.dataset_root = v.clone();
    }
    if let Some(v) = &args.category {
        config.category = v.clone();
    }
    if let Some(v) = &args.checkpoint {
        config.checkpoint_path = v.clone();
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.loss {
        config.loss.kind = v;
    }
    if let Some(v) = args.weight_mode {
        config.loss.weight_mode = v;
    }
    if let Some(v) = args.image_size {
        config.image_size = v;
    }
    Ok(config)
}

fn run() -> wfdl::Result<()> {
    match Cli::parse().command {
        Command::Train(args) => {
            let config = build_run_config(&args)?;
            let log = cli::cmd_train(&config)?;
            let last = log.records.last().expect("at least one epoch");
            println!(
                "trained {} epochs; final mean loss {:.6e}; checkpoint {}; metrics {}",
                log.records.len(),
                last.mean_loss,
                config.checkpoint_path.display(),
                config.metrics_path().display()
            );
        }
        Command::Eval(args) => {
            let report = cli::cmd_eval(&args.checkpoint, &args.dataset_root, &args.category, &args.out)?;
            println!(
                "scored {} samples ({} normal, {} anomalous); auroc {:.6}; report {}",
                report.samples.len(),
                report.counts.0,
                report.counts.1,
                report.auroc,
                args.out.display()
            );
        }
        Command::Reconstruct(args) => {
            let paths = cli::cmd_reconstruct(&args.checkpoint, &args.image, &args.out)?;
            for path in paths {
                println!("wrote {}", path.display());
            }
        }
        Command::Filter(args) => {
            let spec = FilterSpec::new(args.mode, args.cutoff)?;
            cli::cmd_filter(&args.image, &spec, &args.out)?;
            println!("wrote {}", args.out.display());
        }
        Command::Synth(args) => {
            let config = SynthConfig {
                image_size: args.image_size,
                train_count: args.train,
                test_normal_count: args.test_normal,
                test_anomalous_count: args.test_anomalous,
                background: args.background,
                defect: args.defect,
                seed: args.seed,
            };
            cli::cmd_synth(&config, &args.out, &args.category)?;
            println!(
                "wrote {} train + {} test images under {}",
                args.train,
                args.test_normal + args.test_anomalous,
                args.out.join(&args.category).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
