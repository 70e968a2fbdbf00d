//! Seeded fixtures shared by the benchmarks.

use fi2p_core::model::build_model;
use fi2p_core::{ModelConfig, ModelParams, PointCloud, Tensor, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// `n` points uniform in `[−1, 1]³`.
pub fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n).map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0))).collect();
    PointCloud::new(points).expect("finite points")
}

/// Xavier-initialized model and a matching single-image batch.
pub fn model_fixture(config: &ModelConfig, seed: u64) -> (ModelParams<f32>, Tensor<f32>) {
    let params = build_model(config, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid config");
    let s = config.input_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let image = Tensor::from_fn(&[1, config.in_channels, s, s], |_| rng.gen_range(0.0..1.0));
    (params, image)
}

/// Desk-scale configuration at a given scale divisor.
pub fn scaled_config(variant: Variant, scale: usize) -> ModelConfig {
    ModelConfig { scale, ..ModelConfig::toy(variant) }
}
