//! Synthetic dataset pipeline: parametric meshes, surface sampling, a
//! fixed-camera renderer, file formats and the split manifest.

mod dataset;
pub mod io;
mod mesh;
mod render;
mod sampling;

pub use dataset::{
    generate_sample, load_sample, make_dataset, save_sample, split_sizes, DatasetManifest, ManifestEntry, Sample,
    SamplePaths, Split, MANIFEST_FILE, MIN_CATEGORY_COUNT, TRAIN_FRACTION, VAL_FRACTION,
};
pub use io::{read_ply, read_ppm, read_xyz, write_ply, write_ppm, write_xyz};
pub use mesh::{gen_shape, Mesh, ShapeKind, ShapeParams};
pub use render::{render, view_direction, VIEW_HALF_EXTENT};
pub use sampling::{normalization, normalize_cloud, sample_surface};
