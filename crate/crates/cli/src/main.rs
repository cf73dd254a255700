use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use raregan::commands::{self, RunContext, Variant};
use raregan::config::PipelineConfig;

#[derive(Parser)]
#[command(name = "raregan", version, about = "Rare-disease detection pipeline: embeddings, LSTM features, semi-supervised GAN")]
struct Cli {
    /// TOML pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cohort and its train/test split.
    GenData,
    /// Build the code vocabulary.
    BuildVocab,
    /// Train skip-gram code embeddings.
    TrainEmbedding,
    /// Train the LSTM sequence encoder.
    TrainEncoder,
    /// Encode both splits into scaled feature vectors.
    EncodeFeatures,
    /// Train the semi-supervised GAN.
    TrainGan,
    /// Train a supervised baseline.
    TrainBaseline {
        #[arg(long, value_enum)]
        variant: VariantArg,
    },
    /// Score the test split with every model and write metrics.csv.
    Evaluate,
    /// Write per-model precision-recall curves.
    ExportPr,
    /// Run every stage in order, then evaluate and export curves.
    RunAll,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Lr,
    Dnn,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let ctx = RunContext::new(cfg)?;
    match cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::BuildVocab => commands::build_vocab(&ctx),
        Command::TrainEmbedding => commands::train_embedding(&ctx),
        Command::TrainEncoder => commands::train_encoder(&ctx),
        Command::EncodeFeatures => commands::encode_features(&ctx),
        Command::TrainGan => commands::train_gan(&ctx),
        Command::TrainBaseline { variant } => commands::train_baseline(
            &ctx,
            match variant {
                VariantArg::Lr => Variant::Lr,
                VariantArg::Dnn => Variant::Dnn,
            },
        ),
        Command::Evaluate => commands::evaluate(&ctx).map(|_| ()),
        Command::ExportPr => commands::export_pr(&ctx),
        Command::RunAll => commands::run_all(&ctx),
        Command::ShowConfig => unreachable!(),
    }
}
