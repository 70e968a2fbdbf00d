use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fi2p_core::bench::{compare_variants_with, BenchOptions, MIN_REPORTED_REPS};
use fi2p_core::data::{make_dataset, read_ppm, read_xyz, write_ply, write_xyz, DatasetManifest, ShapeKind, MANIFEST_FILE};
use fi2p_core::model::{clouds_from_output, forward, load_checkpoint, peek_checkpoint_width, save_checkpoint};
use fi2p_core::train::{evaluate, train_samples, TrainConfig};
use fi2p_core::{Element, Error, ModelConfig, ModelParams};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{BenchArgs, Command, DatagenArgs, EvalArgs, ExportArgs, ExportFormat, InferArgs, ModelFlags, TrainArgs};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatagenDefaults {
    pub categories: Vec<ShapeKind>,
    pub count: usize,
    pub image_size: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for DatagenDefaults {
    fn default() -> Self {
        Self {
            categories: ShapeKind::ALL.to_vec(),
            count: 100,
            image_size: 32,
            points: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchDefaults {
    pub reps: usize,
    pub warmup: usize,
}

impl Default for BenchDefaults {
    fn default() -> Self {
        Self { reps: MIN_REPORTED_REPS, warmup: 5 }
    }
}

/// Contents of a `--config` file. Every section and field is optional.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub datagen: DatagenDefaults,
    pub bench: BenchDefaults,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| {
            Error::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            }
            .into()
        })
    }
}

fn echo(command: &str, config: serde_json::Value) {
    eprintln!("effective config: {}", json!({ "command": command, "config": config }));
}

pub fn run(command: Command, file: FileConfig) -> Result<()> {
    match command {
        Command::Datagen(a) => datagen(a, file),
        Command::Train(a) => train(a, file),
        Command::Eval(a) => eval(a),
        Command::Infer(a) => infer(a),
        Command::Bench(a) => bench(a, file),
        Command::Export(a) => export(a),
    }
}

fn datagen(a: DatagenArgs, file: FileConfig) -> Result<()> {
    let d = file.datagen;
    let eff = DatagenDefaults {
        categories: a.categories.unwrap_or(d.categories),
        count: a.count.unwrap_or(d.count),
        image_size: a.image_size.unwrap_or(d.image_size),
        points: a.points.unwrap_or(d.points),
        seed: a.seed.unwrap_or(d.seed),
    };
    echo("datagen", json!({ "datagen": eff, "out": a.out }));
    let m = make_dataset(&eff.categories, eff.count, eff.image_size, eff.points, eff.seed, &a.out)?;
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", a.out.join(MANIFEST_FILE).display());
    Ok(())
}

/// Applies flag overrides to the file's model and train sections.
fn resolve(flags: &ModelFlags, file: &FileConfig) -> (ModelConfig, TrainConfig) {
    let mut m = file.model.clone();
    if let Some(v) = flags.variant {
        m.variant = v;
    }
    if let Some(s) = flags.scale {
        m.scale = s;
    }
    let t = &file.train;
    let t = TrainConfig {
        learning_rate: flags.lr.unwrap_or(t.learning_rate),
        batch_size: flags.batch.unwrap_or(t.batch_size),
        weight_decay: flags.weight_decay.unwrap_or(t.weight_decay),
        max_epochs: flags.epochs.unwrap_or(t.max_epochs),
        convergence_epsilon: flags.epsilon.unwrap_or(t.convergence_epsilon),
        early_stop_patience: flags.patience.unwrap_or(t.early_stop_patience),
        seed: flags.seed.unwrap_or(t.seed),
    };
    (m, t)
}

/// Point count comes from the dataset; the image size must already agree.
fn fit_to_dataset(mut m: ModelConfig, manifest: &DatasetManifest) -> Result<ModelConfig> {
    m.point_count = manifest.points;
    m.validate()?;
    if m.input_size() != manifest.image_size {
        return Err(Error::Config(format!(
            "dataset images are {0}×{0} but the model expects {1}×{1} (image_size {2} at scale {3}); \
             adjust --scale or regenerate the dataset",
            manifest.image_size,
            m.input_size(),
            m.image_size,
            m.scale
        ))
        .into());
    }
    Ok(m)
}

fn load_manifest(path: &Path, category: Option<&str>) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(path)?;
    Ok(match category {
        Some(c) => m.only_category(c)?,
        None => m,
    })
}

fn train(a: TrainArgs, file: FileConfig) -> Result<()> {
    let manifest = load_manifest(&a.data, a.category.as_deref())?;
    let (m, t) = resolve(&a.model, &file);
    let m = fit_to_dataset(m, &manifest)?;
    t.validate()?;
    echo(
        "train",
        json!({
            "model": m, "train": t, "data": a.data, "category": a.category,
            "element_width": if a.f64 { 8 } else { 4 }, "checkpoint": a.checkpoint, "history": a.history,
        }),
    );
    if a.f64 {
        train_typed::<f64>(&a, &manifest, &m, &t)
    } else {
        train_typed::<f32>(&a, &manifest, &m, &t)
    }
}

fn train_typed<T: Element>(a: &TrainArgs, manifest: &DatasetManifest, m: &ModelConfig, t: &TrainConfig) -> Result<()> {
    use fi2p_core::data::Split;
    let train_set = manifest.load_split(Split::Train)?;
    let val_set = manifest.load_split(Split::Val)?;
    let (params, history) = train_samples::<T>(m, t, &train_set, &val_set, |r| {
        eprintln!(
            "epoch {:>4}  train {:.6}  val {:.6}  {:.0} ms",
            r.epoch, r.train_loss, r.val_loss, r.wall_time_ms
        );
    })?;
    save_checkpoint(&params, m, &a.checkpoint)?;
    if let Some(h) = &a.history {
        history.write_csv(h)?;
    }
    let reason = history.stop_reason.map(|r| r.to_string()).unwrap_or_default();
    match (history.best_epoch, history.best_val_loss()) {
        (Some(e), Some(v)) => println!("best epoch {e}, val loss {v}, stopped: {reason}"),
        _ => println!("no epochs run, initial parameters saved, stopped: {reason}"),
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    echo("eval", json!({ "checkpoint": a.checkpoint, "data": a.data, "split": a.split, "category": a.category }));
    let manifest = load_manifest(&a.data, a.category.as_deref())?;
    let samples = manifest.load_split(a.split)?;
    let loss = match peek_checkpoint_width(&a.checkpoint)? {
        4 => eval_typed::<f32>(&a.checkpoint, &samples)?,
        8 => eval_typed::<f64>(&a.checkpoint, &samples)?,
        w => bail!(Error::CorruptCheckpoint(format!("unsupported element width {w}"))),
    };
    println!("{loss}");
    Ok(())
}

fn eval_typed<T: Element>(path: &Path, samples: &[fi2p_core::data::Sample]) -> Result<f64> {
    let (params, config) = load_checkpoint::<T>(path)?;
    Ok(evaluate(&params, &config, samples)?)
}

fn infer(a: InferArgs) -> Result<()> {
    echo("infer", json!({ "checkpoint": a.checkpoint, "image": a.image, "out": a.out }));
    let image = read_ppm(&a.image)?;
    match peek_checkpoint_width(&a.checkpoint)? {
        4 => infer_typed::<f32>(&a, &image),
        8 => infer_typed::<f64>(&a, &image),
        w => bail!(Error::CorruptCheckpoint(format!("unsupported element width {w}"))),
    }
}

fn infer_typed<T: Element>(a: &InferArgs, image: &fi2p_core::Tensor<f32>) -> Result<()> {
    let (params, config): (ModelParams<T>, _) = load_checkpoint(&a.checkpoint)?;
    let s = config.input_size();
    if image.shape() != [config.in_channels, s, s] {
        return Err(Error::Dimension(format!(
            "{} is {:?}; the model expects [{}, {s}, {s}]",
            a.image.display(),
            image.shape(),
            config.in_channels
        ))
        .into());
    }
    let batch = image.cast::<T>().reshape(&[1, config.in_channels, s, s])?;
    let out = forward(&params, &config, &batch)?;
    let cloud = clouds_from_output(&out.cloud)?.swap_remove(0);
    write_xyz(&cloud, &a.out)?;
    println!("{} points written to {}", cloud.len(), a.out.display());
    Ok(())
}

fn bench(a: BenchArgs, file: FileConfig) -> Result<()> {
    if a.model.variant.is_some() {
        return Err(Error::Usage("bench always runs both variants; drop --variant".into()).into());
    }
    let manifest = load_manifest(&a.data, None)?;
    let (m, t) = resolve(&a.model, &file);
    let m = fit_to_dataset(m, &manifest)?;
    t.validate()?;
    let opts = BenchOptions {
        checkpoint_dir: a.checkpoints.clone(),
        no_train: a.no_train,
        reps: a.reps.unwrap_or(file.bench.reps),
        warmup: a.warmup.unwrap_or(file.bench.warmup),
    };
    echo(
        "bench",
        json!({
            "model": m, "train": t, "data": a.data, "checkpoints": a.checkpoints, "no_train": a.no_train,
            "bench": { "reps": opts.reps, "warmup": opts.warmup }, "out": a.out,
            "element_width": 4, "timing_threads": 1,
        }),
    );
    if opts.reps < MIN_REPORTED_REPS {
        eprintln!("warning: fewer than {MIN_REPORTED_REPS} repetitions; means are not reliable");
    }
    let report = compare_variants_with(&manifest, &m, &t, &opts, |r| {
        eprintln!(
            "{:<10} {:<8} mean {:.4} ms  median {:.4} ms  chamfer {:.6}",
            r.category, r.variant, r.latency.mean_ms, r.latency.median_ms, r.mean_chamfer
        );
    })?;
    let raw = report.write_csv(&a.out)?;
    for c in &report.comparisons {
        println!(
            "{}: stride {:.4} ms vs maxpool {:.4} ms (one-sided Mann-Whitney p = {:.3e})",
            c.category, c.stride_mean_ms, c.maxpool_mean_ms, c.test.p_value
        );
    }
    eprintln!("wrote {} and {}", a.out.display(), raw.display());
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    echo("export", json!({ "in": a.input, "format": format!("{:?}", a.format).to_lowercase(), "out": a.out }));
    let cloud = read_xyz(&a.input)?;
    match a.format {
        ExportFormat::Xyz => write_xyz(&cloud, &a.out)?,
        ExportFormat::Ply => write_ply(&cloud, &a.out)?,
    }
    println!("{} points written to {}", cloud.len(), a.out.display());
    Ok(())
}
