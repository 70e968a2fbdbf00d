//! Persisted (image, cloud) pairs and the split manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{read_ppm, read_xyz, write_ppm, write_xyz};
use super::{normalization, normalize_cloud, render, sample_surface, ShapeKind, ShapeParams};
use crate::chamfer::PointCloud;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fractions of each category assigned to the training and validation splits.
/// The remainder goes to test.
pub const TRAIN_FRACTION: f64 = 0.85;
pub const VAL_FRACTION: f64 = 0.05;

/// Categories smaller than this cannot honor the split granularity.
pub const MIN_CATEGORY_COUNT: usize = 20;

pub const MANIFEST_FILE: &str = "manifest.json";

/// One training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub category: String,
    /// `[3×S×S]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub cloud: PointCloud,
    /// Set when a loaded cloud has a coordinate outside `[−1, 1]`.
    pub cloud_out_of_range: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Usage(format!("unknown split {s:?}; expected one of train, val, test")))
    }
}

/// Relative paths of a saved sample's files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplePaths {
    pub image: PathBuf,
    pub cloud: PathBuf,
}

/// Writes `images/{id}.ppm` and `clouds/{id}.xyz` under `dir` and returns
/// those paths relative to `dir`.
pub fn save_sample(sample: &Sample, dir: impl AsRef<Path>) -> Result<SamplePaths> {
    let dir = dir.as_ref();
    let paths = SamplePaths {
        image: Path::new("images").join(format!("{}.ppm", sample.id)),
        cloud: Path::new("clouds").join(format!("{}.xyz", sample.id)),
    };
    for sub in ["images", "clouds"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    write_ppm(&sample.image, dir.join(&paths.image))?;
    write_xyz(&sample.cloud, dir.join(&paths.cloud))?;
    Ok(paths)
}

/// Loads a sample from its image and cloud files. Clouds outside `[−1, 1]³`
/// load successfully with `cloud_out_of_range` set.
pub fn load_sample(
    id: &str,
    category: &str,
    image_path: impl AsRef<Path>,
    cloud_path: impl AsRef<Path>,
) -> Result<Sample> {
    let image = read_ppm(image_path.as_ref())?;
    let &[3, h, w] = image.shape() else { unreachable!("PPM images are [3, H, W]") };
    if h != w {
        return Err(Error::Dimension(format!(
            "{}: images must be square, got {w}×{h}",
            image_path.as_ref().display()
        )));
    }
    let cloud = read_xyz(cloud_path)?;
    Ok(Sample {
        id: id.to_string(),
        category: category.to_string(),
        image,
        cloud_out_of_range: !cloud.is_normalized(),
        cloud,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub category: String,
    pub image_path: PathBuf,
    pub cloud_path: PathBuf,
    pub split: Split,
}

/// Index of a dataset on disk. Entry paths are relative to the directory
/// holding the manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub categories: Vec<String>,
    pub image_size: usize,
    pub points: usize,
    pub per_category_count: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub samples: Vec<ManifestEntry>,
    #[serde(skip)]
    root: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    /// Writes the manifest as pretty JSON; entry paths stay relative to `root`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Directory the entry paths are resolved against.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }

    /// `[train, val, test]` counts for one category.
    pub fn split_counts(&self, category: &str) -> [usize; 3] {
        let mut counts = [0; 3];
        for e in self.samples.iter().filter(|e| e.category == category) {
            counts[e.split as usize] += 1;
        }
        counts
    }

    /// A copy restricted to one category.
    pub fn only_category(&self, category: &str) -> Result<Self> {
        if !self.categories.iter().any(|c| c == category) {
            return Err(Error::Usage(format!(
                "category {category:?} is not in the manifest ({})",
                self.categories.join(", ")
            )));
        }
        Ok(Self {
            categories: vec![category.to_string()],
            samples: self.samples.iter().filter(|e| e.category == category).cloned().collect(),
            ..self.clone()
        })
    }

    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<Sample> {
        load_sample(
            &entry.id,
            &entry.category,
            self.root.join(&entry.image_path),
            self.root.join(&entry.cloud_path),
        )
    }

    /// Loads every sample of a split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        let entries: Vec<_> = self.entries(split).collect();
        entries.par_iter().map(|e| self.load_entry(e)).collect()
    }
}

/// Sizes of the train and val splits for a category of `n` samples. Once a
/// category has three samples, val and test each keep at least one.
pub fn split_sizes(n: usize) -> [usize; 3] {
    let mut train = (TRAIN_FRACTION * n as f64).round() as usize;
    let mut val = (VAL_FRACTION * n as f64).round() as usize;
    if n >= 3 {
        if val == 0 {
            val = 1;
            train -= 1;
        }
        if train + val == n {
            train -= 1;
        }
    }
    [train, val, n - train - val]
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates one synthetic sample. The mesh is moved into the same frame as
/// the normalized cloud before rendering, so the image shows what the cloud
/// describes.
pub fn generate_sample(
    kind: ShapeKind,
    id: String,
    image_size: usize,
    points: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let mesh = ShapeParams::random(kind, rng).mesh();
    let raw = sample_surface(&mesh, points, rng)?;
    let (center, extent) = normalization(&raw);
    let cloud = normalize_cloud(&raw);
    let image = render(&mesh.transformed(center, 1.0 / extent), image_size);
    Ok(Sample {
        id,
        category: kind.to_string(),
        image,
        cloud,
        cloud_out_of_range: false,
    })
}

/// Generates, splits and writes a synthetic dataset under `out_dir`.
///
/// Sample `k` (counting across categories in order) draws from its own
/// ChaCha8 stream `k` of `seed`, so the output is a pure function of the
/// arguments regardless of thread count.
pub fn make_dataset(
    categories: &[ShapeKind],
    per_category_count: usize,
    image_size: usize,
    points: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if categories.is_empty() {
        return Err(Error::Config("at least one category is required".into()));
    }
    for (i, c) in categories.iter().enumerate() {
        if categories[..i].contains(c) {
            return Err(Error::Config(format!("category {c} is listed twice")));
        }
    }
    if per_category_count == 0 || image_size == 0 || points == 0 {
        return Err(Error::Config(
            "count, image size and point count must be positive".into(),
        ));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let jobs: Vec<(usize, ShapeKind, usize)> = categories
        .iter()
        .flat_map(|&k| (0..per_category_count).map(move |i| (k, i)))
        .enumerate()
        .map(|(g, (k, i))| (g, k, i))
        .collect();
    let written: Vec<(String, SamplePaths)> = jobs
        .par_iter()
        .map(|&(g, kind, i)| {
            let id = format!("{kind}-{i:05}");
            let sample = generate_sample(kind, id.clone(), image_size, points, &mut sample_rng(seed, g as u64))?;
            Ok((id, save_sample(&sample, out_dir)?))
        })
        .collect::<Result<_>>()?;

    let mut samples = Vec::with_capacity(written.len());
    let mut warnings = Vec::new();
    if per_category_count < MIN_CATEGORY_COUNT {
        warnings.push(format!(
            "{per_category_count} samples per category is below {MIN_CATEGORY_COUNT}; \
             split fractions are approximate"
        ));
    }
    let [n_train, n_val, _] = split_sizes(per_category_count);
    for (ci, chunk) in written.chunks(per_category_count).enumerate() {
        let mut order: Vec<usize> = (0..chunk.len()).collect();
        order.shuffle(&mut sample_rng(seed, u64::MAX - ci as u64));
        let mut split = vec![Split::Test; chunk.len()];
        for (rank, &i) in order.iter().enumerate() {
            split[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        for ((id, paths), s) in chunk.iter().zip(split) {
            samples.push(ManifestEntry {
                id: id.clone(),
                category: categories[ci].to_string(),
                image_path: paths.image.clone(),
                cloud_path: paths.cloud.clone(),
                split: s,
            });
        }
    }
    let manifest = DatasetManifest {
        seed,
        categories: categories.iter().map(ToString::to_string).collect(),
        image_size,
        points,
        per_category_count,
        warnings,
        samples,
        root: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
