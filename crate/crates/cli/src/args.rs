use std::path::PathBuf;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fi2p_core::data::{ShapeKind, Split};
use fi2p_core::Variant;

#[derive(Debug, Parser)]
#[command(name = "fi2p", version, about = "Single-image to point-cloud reconstruction toolkit")]
pub struct Cli {
    /// JSON file with `model`, `train`, `datagen` and `bench` sections.
    /// Command-line flags override its values.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of rendered shapes and their surface clouds.
    Datagen(DatagenArgs),
    /// Train a model on a dataset's train split.
    Train(TrainArgs),
    /// Print the mean Chamfer loss of a checkpoint on one split.
    Eval(EvalArgs),
    /// Predict a point cloud from one image.
    Infer(InferArgs),
    /// Compare stride and maxpool models per category.
    Bench(BenchArgs),
    /// Convert an XYZ cloud to another format.
    Export(ExportArgs),
}

fn variant_parser() -> impl TypedValueParser<Value = Variant> {
    PossibleValuesParser::new(Variant::ALL.map(|v| v.as_str())).map(|s| s.parse::<Variant>().expect("listed variant"))
}

fn split_parser() -> impl TypedValueParser<Value = Split> {
    PossibleValuesParser::new(Split::ALL.map(|s| s.as_str())).map(|s| s.parse::<Split>().expect("listed split"))
}

fn shape_parser() -> impl TypedValueParser<Value = ShapeKind> {
    PossibleValuesParser::new(ShapeKind::ALL.map(|k| k.as_str())).map(|s| s.parse::<ShapeKind>().expect("listed shape"))
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    /// Comma-separated shape categories [default: all].
    #[arg(long, value_delimiter = ',', value_parser = shape_parser())]
    pub categories: Option<Vec<ShapeKind>>,
    /// Samples per category [default: 100].
    #[arg(long)]
    pub count: Option<usize>,
    /// Rendered image side in pixels [default: 32].
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Points per ground-truth cloud [default: 256].
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; receives manifest.json, images/ and clouds/.
    #[arg(long)]
    pub out: PathBuf,
}

/// Model and optimizer flags shared by `train` and `bench`.
#[derive(Debug, Args)]
pub struct ModelFlags {
    #[arg(long, value_parser = variant_parser())]
    pub variant: Option<Variant>,
    /// Divide image size, encoder widths and hidden width by this factor.
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without a new best validation loss before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Stop when consecutive validation losses differ by less than this (0 disables).
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Train on one category only.
    #[arg(long)]
    pub category: Option<String>,
    /// Store 64-bit parameters instead of 32-bit.
    #[arg(long)]
    pub f64: bool,
    /// Where to write the best-validation checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Optional per-epoch history CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = split_parser(), default_value = "test")]
    pub split: Split,
    /// Evaluate one category only.
    #[arg(long)]
    pub category: Option<String>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Binary PPM image of the model's input size.
    #[arg(long)]
    pub image: PathBuf,
    /// Output XYZ file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of `{category}-{variant}.ckpt` files; missing ones are trained and saved here.
    #[arg(long)]
    pub checkpoints: PathBuf,
    /// Fail when a checkpoint is missing instead of training it.
    #[arg(long)]
    pub no_train: bool,
    /// Timed repetitions per row [default: 30].
    #[arg(long)]
    pub reps: Option<usize>,
    /// Untimed warmup runs per row [default: 5].
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Summary CSV; raw timings go to the sibling `.raw.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Xyz,
    Ply,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: ExportFormat,
    #[arg(long)]
    pub out: PathBuf,
}
