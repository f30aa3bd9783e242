mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mesorch_core::mesorch_net::Preset;
use mesorch_core::metrics::Aggregation;
use mesorch_core::pruning::PostPrune;
use mesorch_core::synthdata::{Split, SplitFractions};

use config::{parse_fractions, parse_size, Branches};

#[derive(Parser)]
#[command(name = "mesorch", version, about = "Tamper localization on synthetic forgeries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration layering shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct Layers {
    /// Built-in preset the configuration starts from.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// JSON file merged over the preset; unknown keys are errors.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    match s {
        "toy" => Ok(Preset::Toy),
        "paper" => Ok(Preset::Paper),
        _ => Err(format!("unknown preset `{s}` (toy, paper)")),
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse::<Split>().map_err(|e| e.to_string())
}

fn parse_weighting(s: &str) -> Result<PostPrune, String> {
    match s {
        "adaptive" => Ok(PostPrune::Adaptive),
        "frozen" => Ok(PostPrune::Frozen),
        _ => Err(format!("unknown weighting `{s}` (adaptive, frozen)")),
    }
}

fn parse_aggregation(s: &str) -> Result<Aggregation, String> {
    match s {
        "per-image" | "per_image" => Ok(Aggregation::PerImage),
        "micro" => Ok(Aggregation::Micro),
        _ => Err(format!("unknown aggregation `{s}` (per-image, micro)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tamper dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Total samples across all splits (at least 4).
        #[arg(long, value_parser = clap::value_parser!(u64).range(4..))]
        count: Option<u64>,
        /// `N` or `HxW`, multiples of 32.
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
        /// train,val,test,calibration
        #[arg(long, value_parser = parse_fractions)]
        split_fractions: Option<SplitFractions>,
        #[command(flatten)]
        layers: Layers,
    },
    /// Train a model on the train split of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from an epoch checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Encoder branches of a fresh model.
        #[arg(long, value_enum)]
        branches: Option<Branches>,
        #[command(flatten)]
        layers: Layers,
    },
    /// Prune low-weight branches, then fine-tune on the train split.
    Prune {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset whose calibration split sets the mean weights.
        #[arg(long)]
        calibration: PathBuf,
        /// Default: half the uniform weight.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        finetune_epochs: Option<usize>,
        /// adaptive or frozen
        #[arg(long, value_parser = parse_weighting)]
        weighting: Option<PostPrune>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        layers: Layers,
    },
    /// Pixel metrics of a checkpoint (or of prediction PNGs) on one split.
    Evaluate {
        #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Directory of `<id>.png` probability maps to score instead of a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
        #[arg(long)]
        threshold: Option<f64>,
        /// per-image or micro
        #[arg(long, value_parser = parse_aggregation)]
        aggregation: Option<Aggregation>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        layers: Layers,
    },
    /// F1 under noise, blur and JPEG at six levels each.
    Robustness {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        layers: Layers,
    },
    /// Parameter and FLOP counts of a checkpoint or preset.
    Flops {
        #[arg(long, conflicts_with = "preset")]
        checkpoint: Option<PathBuf>,
        /// `N` or `HxW`; default is the model's input size.
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        layers: Layers,
    },
    /// Probability map and binary mask for one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        layers: Layers,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::GenData {
            out,
            seed,
            count,
            size,
            split_fractions,
            layers,
        } => commands::gen_data(&layers, &out, seed, count.map(|c| c as usize), size, split_fractions),
        Command::Train {
            data,
            out,
            resume,
            epochs,
            lr,
            seed,
            branches,
            layers,
        } => commands::train(&layers, &data, &out, resume.as_deref(), epochs, lr, seed, branches),
        Command::Prune {
            checkpoint,
            calibration,
            epsilon,
            finetune_epochs,
            weighting,
            out,
            layers,
        } => commands::prune(&layers, &checkpoint, &calibration, epsilon, finetune_epochs, weighting, &out),
        Command::Evaluate {
            checkpoint,
            predictions,
            data,
            split,
            threshold,
            aggregation,
            out,
            layers,
        } => commands::evaluate(
            &layers,
            checkpoint.as_deref(),
            predictions.as_deref(),
            &data,
            split,
            threshold,
            aggregation,
            &out,
        ),
        Command::Robustness {
            checkpoint,
            data,
            split,
            seed,
            out,
            layers,
        } => commands::robustness(&layers, &checkpoint, &data, split, seed, &out),
        Command::Flops {
            checkpoint,
            size,
            out,
            layers,
        } => commands::flops(&layers, checkpoint.as_deref(), size, out.as_deref()),
        Command::Predict {
            checkpoint,
            image,
            out,
            threshold,
            layers,
        } => commands::predict(&layers, &checkpoint, &image, &out, threshold),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<commands::UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
