//! Inference-latency harness and the stride-versus-maxpool comparison.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::model::{checkpoint_bytes, forward, load_checkpoint, save_checkpoint, ModelConfig, ModelParams, Variant};
use crate::tensor::{Element, Tensor};
use crate::train::{evaluate, train_samples, TrainConfig};

/// Smallest repetition count for which a mean is reported as meaningful.
pub const MIN_REPORTED_REPS: usize = 30;

/// Summary of per-call wall-clock times in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    /// Nearest-rank 95th percentile.
    pub p95_ms: f64,
    /// Sample standard deviation; zero for a single measurement.
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub warmup: usize,
    /// Timed measurements, in the order taken. Warmup runs are not included.
    pub raw_ms: Vec<f64>,
}

impl LatencyStats {
    pub fn from_measurements(raw_ms: Vec<f64>, warmup: usize) -> Result<Self> {
        if raw_ms.is_empty() {
            return Err(Error::Usage("latency statistics need at least one measurement".into()));
        }
        let n = raw_ms.len();
        let mut sorted = raw_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let mean = raw_ms.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        let std = if n > 1 {
            (raw_ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean_ms: mean,
            median_ms: median,
            p95_ms: sorted[rank - 1],
            std_ms: std,
            min_ms: sorted[0],
            max_ms: sorted[n - 1],
            warmup,
            raw_ms,
        })
    }

    pub fn repetitions(&self) -> usize {
        self.raw_ms.len()
    }
}

/// Times single-image forward passes. `images` are `[C×S×S]` or
/// `[1×C×S×S]` and are used round-robin; the timed region is `forward` alone
/// and runs on one thread.
pub fn time_inference<T: Element>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    images: &[Tensor<T>],
    warmup: usize,
    reps: usize,
) -> Result<LatencyStats> {
    if reps == 0 {
        return Err(Error::Usage("at least one timed repetition is required".into()));
    }
    if images.is_empty() {
        return Err(Error::Usage("no images to time inference on".into()));
    }
    let batch: Vec<Tensor<T>> = images
        .iter()
        .map(|img| match img.shape() {
            &[c, h, w] => img.clone().reshape(&[1, c, h, w]),
            _ => Ok(img.clone()),
        })
        .collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Usage(format!("cannot build timing thread: {e}")))?;
    let raw = pool.install(|| -> Result<Vec<f64>> {
        let mut raw = Vec::with_capacity(reps);
        for i in 0..warmup + reps {
            let img = &batch[i % batch.len()];
            let start = Instant::now();
            let out = forward(params, config, img)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(&out.cloud);
            if i >= warmup {
                raw.push(ms);
            }
        }
        Ok(raw)
    })?;
    LatencyStats::from_measurements(raw, warmup)
}

/// One-sided Mann-Whitney U test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    /// P-value for "the first sample tends to be smaller than the second".
    pub p_value: f64,
}

/// Mann-Whitney test of `a < b` using the normal approximation with tie
/// correction and a continuity correction of one half.
pub fn mann_whitney_less(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Usage("Mann-Whitney test needs two nonempty samples".into()));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let mut all: Vec<(f64, bool)> = a.iter().map(|&x| (x, true)).chain(b.iter().map(|&x| (x, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && all[j].0 == all[i].0 {
            j += 1;
        }
        // Positions i..j share the mid-rank of 1-based ranks i+1..=j.
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum_a += mid * all[i..j].iter().filter(|e| e.1).count() as f64;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let mean = n1 * n2 / 2.0;
    let nn = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    if var <= 0.0 {
        return Ok(MannWhitney { u, z: 0.0, p_value: 1.0 });
    }
    let z = (u - mean + 0.5) / var.sqrt();
    let p_value = Normal::standard().cdf(z);
    Ok(MannWhitney { u, z, p_value })
}

/// Latency and accuracy of one trained variant on one category.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub category: String,
    pub variant: Variant,
    pub latency: LatencyStats,
    /// Mean Chamfer loss over the category's test split.
    pub mean_chamfer: f64,
    pub checkpoint_bytes: u64,
}

/// Stride against maxpool for one category.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantComparison {
    pub category: String,
    pub stride_mean_ms: f64,
    pub maxpool_mean_ms: f64,
    pub test: MannWhitney,
}

impl VariantComparison {
    pub fn stride_faster(&self, alpha: f64) -> bool {
        self.stride_mean_ms < self.maxpool_mean_ms && self.test.p_value < alpha
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub comparisons: Vec<VariantComparison>,
    /// Bytes per parameter in the timed models.
    pub element_width: u8,
    /// Threads used inside the timed region.
    pub timing_threads: usize,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "category,variant,mean_ms,median_ms,p95_ms,std_ms,repetitions,warmup,mean_chamfer,checkpoint_bytes\n",
        );
        for r in &self.rows {
            let l = &r.latency;
            writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{:?},{}",
                r.category,
                r.variant,
                l.mean_ms,
                l.median_ms,
                l.p95_ms,
                l.std_ms,
                l.repetitions(),
                l.warmup,
                r.mean_chamfer,
                r.checkpoint_bytes
            )
            .expect("string write");
        }
        s
    }

    /// Every timed measurement, one per line.
    pub fn raw_csv(&self) -> String {
        let mut s = String::from("category,variant,rep,ms\n");
        for r in &self.rows {
            for (i, ms) in r.latency.raw_ms.iter().enumerate() {
                writeln!(s, "{},{},{},{:?}", r.category, r.variant, i, ms).expect("string write");
            }
        }
        s
    }

    /// Writes the summary to `path` and the raw measurements next to it with
    /// a `.raw.csv` suffix. Returns the raw file's path.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<PathBuf> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        let raw = raw_path(path);
        fs::write(&raw, self.raw_csv()).map_err(|e| Error::io(&raw, e))?;
        Ok(raw)
    }
}

fn raw_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.raw.csv"))
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    /// Checkpoints are read from and written to `{dir}/{category}-{variant}.ckpt`.
    pub checkpoint_dir: PathBuf,
    /// Fail instead of training when a checkpoint is missing.
    pub no_train: bool,
    pub reps: usize,
    pub warmup: usize,
}

pub fn checkpoint_path(dir: &Path, category: &str, variant: Variant) -> PathBuf {
    dir.join(format!("{category}-{variant}.ckpt"))
}

/// Trains (or loads) both variants for every category in the manifest, then
/// reports test-split Chamfer loss, single-image latency and checkpoint size
/// side by side. Models are `f32`.
pub fn compare_variants(
    manifest: &DatasetManifest,
    base_config: &ModelConfig,
    train_config: &TrainConfig,
    options: &BenchOptions,
) -> Result<BenchReport> {
    compare_variants_with(manifest, base_config, train_config, options, |_| {})
}

/// [`compare_variants`] with a progress callback receiving each finished row.
pub fn compare_variants_with(
    manifest: &DatasetManifest,
    base_config: &ModelConfig,
    train_config: &TrainConfig,
    options: &BenchOptions,
    mut on_row: impl FnMut(&BenchRow),
) -> Result<BenchReport> {
    if options.reps == 0 {
        return Err(Error::Usage("--reps must be at least 1".into()));
    }
    if !options.no_train {
        fs::create_dir_all(&options.checkpoint_dir).map_err(|e| Error::io(&options.checkpoint_dir, e))?;
    }
    let mut rows = Vec::new();
    let mut comparisons = Vec::new();
    for category in &manifest.categories {
        let subset = manifest.only_category(category)?;
        let test = subset.load_split(Split::Test)?;
        let mut by_variant = Vec::new();
        for variant in Variant::ALL {
            let path = checkpoint_path(&options.checkpoint_dir, category, variant);
            let (params, config) = obtain_model(&subset, base_config, train_config, options, &path, variant)?;
            let images: Vec<Tensor<f32>> = test.iter().map(|s| s.image.clone()).collect();
            let latency = time_inference(&params, &config, &images, options.warmup, options.reps)?;
            let row = BenchRow {
                category: category.clone(),
                variant,
                mean_chamfer: evaluate(&params, &config, &test)?,
                checkpoint_bytes: checkpoint_bytes(&params, &config)?,
                latency,
            };
            on_row(&row);
            by_variant.push(rows.len());
            rows.push(row);
        }
        let (s, m): (&BenchRow, &BenchRow) = (&rows[by_variant[0]], &rows[by_variant[1]]);
        comparisons.push(VariantComparison {
            category: category.clone(),
            stride_mean_ms: s.latency.mean_ms,
            maxpool_mean_ms: m.latency.mean_ms,
            test: mann_whitney_less(&s.latency.raw_ms, &m.latency.raw_ms)?,
        });
    }
    Ok(BenchReport {
        rows,
        comparisons,
        element_width: f32::WIDTH,
        timing_threads: 1,
    })
}

fn obtain_model(
    subset: &DatasetManifest,
    base_config: &ModelConfig,
    train_config: &TrainConfig,
    options: &BenchOptions,
    path: &Path,
    variant: Variant,
) -> Result<(ModelParams<f32>, ModelConfig)> {
    if path.exists() {
        let (params, config) = load_checkpoint::<f32>(path)?;
        if config.variant != variant {
            return Err(Error::Usage(format!(
                "{} holds a {} model, expected {variant}",
                path.display(),
                config.variant
            )));
        }
        return Ok((params, config));
    }
    if options.no_train {
        return Err(Error::Usage(format!(
            "checkpoint {} is missing and training is disabled",
            path.display()
        )));
    }
    let config = base_config.clone().with_variant(variant);
    let train = subset.load_split(Split::Train)?;
    let val = subset.load_split(Split::Val)?;
    let (params, _) = train_samples::<f32>(&config, train_config, &train, &val, |_| {})?;
    save_checkpoint(&params, &config, path)?;
    Ok((params, config))
}
