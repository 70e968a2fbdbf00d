//! The image-to-point-cloud autoencoder.
//!
//! The encoder is a stack of 3×3 convolutions, each followed by ReLU, that
//! halves the spatial size per layer, either by striding (`Variant::Stride`)
//! or by a 2×2 max-pool after a stride-1 convolution (`Variant::Maxpool`).
//! The decoder runs stride-1 transposed convolutions with ReLU, flattens,
//! and applies two fully-connected layers with no activation between them,
//! followed by Tanh so every coordinate lands in (−1, 1).

mod checkpoint;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, peek_checkpoint_width, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chamfer::PointCloud;
use crate::error::{Error, Result};
use crate::nn::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, fc_backward, fc_forward,
    layer_cost, maxpool2d_backward, maxpool2d_forward, relu, relu_backward, tanh_backward, tanh_op,
    xavier_init, ConvCache, DeconvCache, FcCache, LayerKind, LayerSpec, PoolCache,
};
use crate::tensor::{Element, Tensor};

/// Smallest image side a scaled configuration may shrink to.
pub const MIN_IMAGE_SIZE: usize = 32;
/// Smallest channel or hidden width a scaled configuration may shrink to.
pub const MIN_WIDTH: usize = 4;

/// Encoder downsampling strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Stride,
    Maxpool,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Stride, Variant::Maxpool];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Stride => "stride",
            Variant::Maxpool => "maxpool",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stride" => Ok(Variant::Stride),
            "maxpool" => Ok(Variant::Maxpool),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (valid: stride, maxpool)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub image_size: usize,
    pub in_channels: usize,
    pub channel_plan: Vec<usize>,
    pub decoder_deconv_channels: Vec<usize>,
    pub fc_hidden: usize,
    pub point_count: usize,
    /// Divisor applied to `image_size`, `channel_plan` and `fc_hidden`.
    pub scale: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Stride,
            image_size: 256,
            in_channels: 3,
            channel_plan: vec![16, 32, 64, 128, 256],
            decoder_deconv_channels: vec![128, 64],
            fc_hidden: 2048,
            point_count: 1024,
            scale: 1,
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration: `scale = 8`, `P = 256`, 32×32 images.
    pub fn toy(variant: Variant) -> Self {
        Self {
            variant,
            scale: 8,
            point_count: 256,
            ..Self::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Input image side after scaling.
    pub fn input_size(&self) -> usize {
        (self.image_size / self.scale.max(1)).max(MIN_IMAGE_SIZE)
    }

    pub fn encoder_channels(&self) -> Vec<usize> {
        self.channel_plan
            .iter()
            .map(|&c| (c / self.scale.max(1)).max(MIN_WIDTH))
            .collect()
    }

    pub fn hidden_width(&self) -> usize {
        (self.fc_hidden / self.scale.max(1)).max(MIN_WIDTH)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::Config("scale must be positive".into()));
        }
        if self.in_channels == 0 || self.point_count == 0 || self.fc_hidden == 0 {
            return Err(Error::Config(
                "in_channels, point_count and fc_hidden must be positive".into(),
            ));
        }
        if self.channel_plan.is_empty() {
            return Err(Error::Config("channel_plan must list at least one layer".into()));
        }
        if self.channel_plan.iter().chain(&self.decoder_deconv_channels).any(|&c| c == 0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        let factor = 1usize
            .checked_shl(self.channel_plan.len() as u32)
            .ok_or_else(|| Error::Config("too many encoder layers".into()))?;
        let size = self.input_size();
        if !size.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "image size {size} is not divisible by 2^{} = {factor}",
                self.channel_plan.len()
            )));
        }
        Ok(())
    }

    /// Per-sample shape `[C, h, w]` of the encoder output.
    pub fn encoder_output_shape(&self) -> Result<[usize; 3]> {
        self.validate()?;
        let side = self.input_size() >> self.channel_plan.len();
        let c = *self.encoder_channels().last().expect("validated nonempty");
        Ok([c, side, side])
    }

    pub fn feature_size(&self) -> Result<usize> {
        Ok(self.encoder_output_shape()?.iter().product())
    }

    /// Every layer of the network, in execution order.
    pub fn layer_plan(&self) -> Result<Vec<LayerSpec>> {
        let [_, side, _] = self.encoder_output_shape()?;
        let mut plan = Vec::new();
        let mut cin = self.in_channels;
        for c in self.encoder_channels() {
            match self.variant {
                Variant::Stride => {
                    plan.push(LayerSpec::conv(cin, c, (3, 3), (2, 2), (1, 1)));
                    plan.push(LayerSpec::relu(c));
                }
                Variant::Maxpool => {
                    plan.push(LayerSpec::conv(cin, c, (3, 3), (1, 1), (1, 1)));
                    plan.push(LayerSpec::relu(c));
                    plan.push(LayerSpec::maxpool(c));
                }
            }
            cin = c;
        }
        for &c in &self.decoder_deconv_channels {
            plan.push(LayerSpec::deconv(cin, c, (3, 3), (1, 1), (1, 1)));
            plan.push(LayerSpec::relu(c));
            cin = c;
        }
        let hidden = self.hidden_width();
        let out = 3 * self.point_count;
        plan.push(LayerSpec::fc(cin * side * side, hidden));
        plan.push(LayerSpec::fc(hidden, out));
        plan.push(LayerSpec::tanh(out));
        Ok(plan)
    }
}

/// Weight and optional bias of one parameterized layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock<T> {
    pub id: String,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// All trainable parameters, in layer order. Also used as the container for
/// gradients, which share the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub blocks: Vec<ParamBlock<T>>,
}

impl<T: Element> ModelParams<T> {
    /// Zero-filled parameters shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let mut blocks = Vec::new();
        for (id, spec) in param_layers(config)? {
            blocks.push(ParamBlock {
                id,
                weight: Tensor::zeros(&spec.weight_shape().expect("parameterized")),
                bias: spec.bias_shape().map(|s| Tensor::zeros(&s)),
            });
        }
        Ok(Self { blocks })
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.blocks
            .iter()
            .flat_map(|b| std::iter::once(&b.weight).chain(b.bias.as_ref()))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.blocks
            .iter_mut()
            .flat_map(|b| std::iter::once(&mut b.weight).chain(b.bias.as_mut()))
    }

    /// `self += other · factor`, elementwise over matching layouts.
    pub fn add_scaled(&mut self, other: &Self, factor: T) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::Dimension("parameter sets have different layer counts".into()));
        }
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.expect_shape(b.shape())?;
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y * factor;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.data().iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock {
                    id: b.id.clone(),
                    weight: b.weight.cast(),
                    bias: b.bias.as_ref().map(Tensor::cast),
                })
                .collect(),
        }
    }

    fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let layers = param_layers(config)?;
        if layers.len() != self.blocks.len() {
            return Err(Error::Dimension(format!(
                "config expects {} parameterized layers, params hold {}",
                layers.len(),
                self.blocks.len()
            )));
        }
        for ((_, spec), block) in layers.iter().zip(&self.blocks) {
            block.weight.expect_shape(&spec.weight_shape().expect("parameterized"))?;
            match (spec.bias_shape(), &block.bias) {
                (Some(s), Some(b)) => b.expect_shape(&s)?,
                (None, None) => {}
                _ => {
                    return Err(Error::Dimension(format!(
                        "bias presence mismatch in layer {}",
                        block.id
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Encoder output `Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T>(pub Tensor<T>);

fn param_layers(config: &ModelConfig) -> Result<Vec<(String, LayerSpec)>> {
    let mut counts = [0usize; 3];
    Ok(config
        .layer_plan()?
        .into_iter()
        .filter(LayerSpec::has_params)
        .map(|spec| {
            let (slot, name) = match spec.kind {
                LayerKind::Conv => (0, "enc.conv"),
                LayerKind::Deconv => (1, "dec.deconv"),
                _ => (2, "dec.fc"),
            };
            let id = format!("{name}{}", counts[slot]);
            counts[slot] += 1;
            (id, spec)
        })
        .collect())
}

/// Xavier-initialized weights and zero biases for `config`.
pub fn build_model<T: Element, R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<ModelParams<T>> {
    let mut blocks = Vec::new();
    for (id, spec) in param_layers(config)? {
        let (fan_in, fan_out) = spec.fans().expect("parameterized");
        let weight = xavier_init(&spec.weight_shape().expect("parameterized"), fan_in, fan_out, rng);
        blocks.push(ParamBlock {
            id,
            weight,
            bias: spec.bias_shape().map(|s| Tensor::zeros(&s)),
        });
    }
    Ok(ModelParams { blocks })
}

pub fn total_params<T: Element>(params: &ModelParams<T>) -> usize {
    params.tensors().map(Tensor::len).sum()
}

/// Parameter and operation totals per sample, summed over `layer_cost`.
pub fn model_cost(config: &ModelConfig) -> Result<(u64, u64)> {
    let mut shape = vec![config.in_channels, config.input_size(), config.input_size()];
    let (mut params, mut ops) = (0, 0);
    for spec in config.layer_plan()? {
        if spec.kind == LayerKind::Fc && shape.len() != 1 {
            shape = vec![shape.iter().product()];
        }
        let c = layer_cost(&spec, &shape)?;
        params += c.params;
        ops += c.ops;
        shape = spec.output_shape(&shape)?;
    }
    Ok((params, ops))
}

#[derive(Clone, Debug)]
enum LayerCache<T> {
    Conv(ConvCache<T>),
    Deconv(DeconvCache<T>),
    Pool(PoolCache),
    Fc {
        cache: FcCache<T>,
        unflattened: Option<Vec<usize>>,
    },
    Relu(Tensor<T>),
    Tanh(Tensor<T>),
}

/// Everything a forward pass retains for [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    config: ModelConfig,
    batch: usize,
    layers: Vec<LayerCache<T>>,
}

/// Result of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    /// Predicted clouds, `[B×P×3]`.
    pub cloud: Tensor<T>,
    pub features: FeatureMap<T>,
    pub cache: ForwardCache<T>,
}

/// Runs the encoder then the decoder on a `[B×C×S×S]` batch.
pub fn forward<T: Element>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    image: &Tensor<T>,
) -> Result<ForwardPass<T>> {
    params.check_against(config)?;
    let size = config.input_size();
    image.expect_ndim(4, "image batch")?;
    let batch = image.shape()[0];
    if image.shape()[1..] != [config.in_channels, size, size] {
        return Err(Error::Dimension(format!(
            "model expects images of shape [B, {}, {size}, {size}], got {:?}",
            config.in_channels,
            image.shape()
        )));
    }
    let plan = config.layer_plan()?;
    let encoder_len = encoder_layer_count(config);
    let mut blocks = params.blocks.iter();
    let mut caches = Vec::with_capacity(plan.len());
    let mut x = image.clone();
    let mut features = None;
    for (i, spec) in plan.iter().enumerate() {
        if i == encoder_len {
            features = Some(FeatureMap(x.clone()));
        }
        let (y, cache) = match spec.kind {
            LayerKind::Conv => {
                let b = blocks.next().expect("block per conv");
                let (y, c) = conv2d_forward(&x, spec, &b.weight, b.bias.as_ref())?;
                (y, LayerCache::Conv(c))
            }
            LayerKind::Deconv => {
                let b = blocks.next().expect("block per deconv");
                let (y, c) = deconv2d_forward(&x, spec, &b.weight, b.bias.as_ref())?;
                (y, LayerCache::Deconv(c))
            }
            LayerKind::MaxPool => {
                let (y, c) = maxpool2d_forward(&x)?;
                (y, LayerCache::Pool(c))
            }
            LayerKind::Fc => {
                let b = blocks.next().expect("block per fc");
                let unflattened = (x.ndim() != 2).then(|| x.shape().to_vec());
                if unflattened.is_some() {
                    let n = x.len() / batch;
                    x = x.reshape(&[batch, n])?;
                }
                let (y, c) = fc_forward(&x, spec, &b.weight, b.bias.as_ref())?;
                (y, LayerCache::Fc { cache: c, unflattened })
            }
            LayerKind::Relu => {
                let y = relu(&x);
                (y.clone(), LayerCache::Relu(y))
            }
            LayerKind::Tanh => {
                let y = tanh_op(&x);
                (y.clone(), LayerCache::Tanh(y))
            }
        };
        caches.push(cache);
        x = y;
    }
    let cloud = x.reshape(&[batch, config.point_count, 3])?;
    Ok(ForwardPass {
        cloud,
        features: features.expect("decoder follows encoder"),
        cache: ForwardCache {
            config: config.clone(),
            batch,
            layers: caches,
        },
    })
}

fn encoder_layer_count(config: &ModelConfig) -> usize {
    let per_layer = match config.variant {
        Variant::Stride => 2,
        Variant::Maxpool => 3,
    };
    per_layer * config.channel_plan.len()
}

/// Chain-rule composition of every layer's backward pass. `grad_cloud` is
/// `∂L/∂cloud` shaped `[B×P×3]`; the result is laid out like `params`.
pub fn backward<T: Element>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    cache: &ForwardCache<T>,
    grad_cloud: &Tensor<T>,
) -> Result<ModelParams<T>> {
    if &cache.config != config {
        return Err(Error::Usage(
            "forward cache was produced under a different model config".into(),
        ));
    }
    let plan = config.layer_plan()?;
    if cache.layers.len() != plan.len() {
        return Err(Error::Usage("forward cache is incomplete".into()));
    }
    params.check_against(config)?;
    grad_cloud.expect_shape(&[cache.batch, config.point_count, 3])?;

    let mut grads = ModelParams::zeros(config)?;
    let mut block_idx = params.blocks.len();
    let mut g = grad_cloud.clone().reshape(&[cache.batch, 3 * config.point_count])?;
    for (spec, layer) in plan.iter().zip(&cache.layers).rev() {
        g = match (spec.kind, layer) {
            (LayerKind::Tanh, LayerCache::Tanh(y)) => tanh_backward(&g, y)?,
            (LayerKind::Relu, LayerCache::Relu(y)) => relu_backward(&g, y)?,
            (LayerKind::MaxPool, LayerCache::Pool(c)) => maxpool2d_backward(&g, c)?,
            (LayerKind::Fc, LayerCache::Fc { cache: c, unflattened }) => {
                block_idx -= 1;
                let pg = fc_backward(&g, c, spec, &params.blocks[block_idx].weight)?;
                store(&mut grads.blocks[block_idx], pg.weight, pg.bias);
                match unflattened {
                    Some(shape) => pg.input.reshape(shape)?,
                    None => pg.input,
                }
            }
            (LayerKind::Deconv, LayerCache::Deconv(c)) => {
                block_idx -= 1;
                let pg = deconv2d_backward(&g, c, spec, &params.blocks[block_idx].weight)?;
                store(&mut grads.blocks[block_idx], pg.weight, pg.bias);
                pg.input
            }
            (LayerKind::Conv, LayerCache::Conv(c)) => {
                block_idx -= 1;
                let pg = conv2d_backward(&g, c, spec, &params.blocks[block_idx].weight)?;
                store(&mut grads.blocks[block_idx], pg.weight, pg.bias);
                pg.input
            }
            _ => return Err(Error::Usage("forward cache does not match layer plan".into())),
        };
    }
    Ok(grads)
}

fn store<T>(block: &mut ParamBlock<T>, weight: Tensor<T>, bias: Option<Tensor<T>>) {
    block.weight = weight;
    block.bias = bias;
}

/// Splits a `[B×P×3]` prediction into per-sample clouds.
pub fn clouds_from_output<T: Element>(cloud: &Tensor<T>) -> Result<Vec<PointCloud>> {
    cloud.expect_ndim(3, "predicted cloud batch")?;
    let per = cloud.shape()[1] * 3;
    cloud
        .data()
        .chunks(per)
        .map(|c| {
            let flat: Vec<f64> = c.iter().map(|v| v.to_f64_lossless()).collect();
            PointCloud::from_flat(&flat)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            image_size: 32,
            channel_plan: vec![4, 4, 8, 8, 8],
            decoder_deconv_channels: vec![8, 4],
            fc_hidden: 16,
            point_count: 8,
            scale: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn default_feature_size() {
        let c = ModelConfig::default();
        assert_eq!(c.encoder_output_shape().unwrap(), [256, 8, 8]);
        assert_eq!(c.feature_size().unwrap(), 16384);
        let plan = c.layer_plan().unwrap();
        assert_eq!(plan.last().unwrap().out_channels, 3072);
        // Flatten width between the deconvs and the first FC.
        let fc = plan.iter().find(|s| s.kind == LayerKind::Fc).unwrap();
        assert_eq!(fc.in_channels, 64 * 8 * 8);
    }

    #[test]
    fn toy_scale_shapes() {
        let c = ModelConfig::toy(Variant::Stride);
        assert_eq!(c.input_size(), 32);
        assert_eq!(c.encoder_output_shape().unwrap(), [32, 1, 1]);
        assert_eq!(c.encoder_channels(), vec![4, 4, 8, 16, 32]);
        assert_eq!(c.hidden_width(), 256);
    }

    #[test]
    fn invalid_configs() {
        let c = ModelConfig {
            image_size: 100,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ModelConfig {
            scale: 0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(ModelConfig {
            channel_plan: vec![],
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let c = tiny(Variant::Stride);
        let a: ModelParams<f32> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b: ModelParams<f32> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let ids: Vec<_> = a.blocks.iter().map(|b| b.id.as_str()).collect();
        assert_eq!(
            ids,
            ["enc.conv0", "enc.conv1", "enc.conv2", "enc.conv3", "enc.conv4", "dec.deconv0", "dec.deconv1", "dec.fc0", "dec.fc1"]
        );
    }

    #[test]
    fn forward_shapes_and_range_for_both_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let image = Tensor::from_fn(&[2, 3, 32, 32], |i| ((i * 7919) % 255) as f64 / 255.0);
        let mut outputs = Vec::new();
        for v in Variant::ALL {
            let c = tiny(v);
            let p: ModelParams<f64> = build_model(&c, &mut rng).unwrap();
            let out = forward(&p, &c, &image).unwrap();
            assert_eq!(out.cloud.shape(), &[2, 8, 3]);
            assert_eq!(out.features.0.shape(), &[2, 8, 1, 1]);
            assert!(out.cloud.data().iter().all(|v| v.abs() < 1.0));
            outputs.push(out.cloud);
        }
        assert_ne!(outputs[0], outputs[1]);
    }

    #[test]
    fn zero_final_layer_puts_points_at_origin() {
        let c = tiny(Variant::Stride);
        let mut p: ModelParams<f64> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let last = p.blocks.last_mut().unwrap();
        last.weight.data_mut().fill(0.0);
        last.bias.as_mut().unwrap().data_mut().fill(0.0);
        let image = Tensor::filled(&[1, 3, 32, 32], 0.5);
        let out = forward(&p, &c, &image).unwrap();
        assert!(out.cloud.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_image_size_is_dimension_error() {
        let c = tiny(Variant::Stride);
        let p: ModelParams<f64> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let image = Tensor::zeros(&[1, 3, 64, 64]);
        assert!(matches!(forward(&p, &c, &image), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_upstream_gradient() {
        let c = tiny(Variant::Maxpool);
        let p: ModelParams<f64> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let image = Tensor::filled(&[1, 3, 32, 32], 0.25);
        let out = forward(&p, &c, &image).unwrap();
        let g = backward(&p, &c, &out.cache, &Tensor::zeros(out.cloud.shape())).unwrap();
        assert!(g.tensors().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert_eq!(g.blocks.len(), p.blocks.len());
    }

    #[test]
    fn stale_cache_is_usage_error() {
        let c = tiny(Variant::Stride);
        let p: ModelParams<f64> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let out = forward(&p, &c, &Tensor::zeros(&[1, 3, 32, 32])).unwrap();
        let other = c.clone().with_variant(Variant::Maxpool);
        let q: ModelParams<f64> = build_model(&other, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let g = Tensor::zeros(out.cloud.shape());
        assert!(matches!(backward(&q, &other, &out.cache, &g), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_is_deterministic() {
        let c = tiny(Variant::Stride);
        let p: ModelParams<f64> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let image = Tensor::from_fn(&[1, 3, 32, 32], |i| (i as f64 * 0.01).sin());
        let out = forward(&p, &c, &image).unwrap();
        let g = Tensor::from_fn(out.cloud.shape(), |i| (i as f64).cos());
        let a = backward(&p, &c, &out.cache, &g).unwrap();
        let b = backward(&p, &c, &out.cache, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parameter_count_matches_layer_costs() {
        for v in Variant::ALL {
            let c = ModelConfig::toy(v);
            let p: ModelParams<f32> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
            assert_eq!(total_params(&p) as u64, model_cost(&c).unwrap().0);
        }
    }

    #[test]
    fn doubling_channels_roughly_quadruples_conv_params() {
        let conv_params = |plan: Vec<usize>| {
            let c = ModelConfig {
                channel_plan: plan,
                ..ModelConfig::default()
            };
            c.layer_plan()
                .unwrap()
                .iter()
                .filter(|s| s.kind == LayerKind::Conv)
                .map(|s| layer_cost(s, &[s.in_channels, 8, 8]).unwrap().params)
                .sum::<u64>() as f64
        };
        let base = conv_params(vec![16, 32, 64, 128, 256]);
        let doubled = conv_params(vec![32, 64, 128, 256, 512]);
        let ratio = doubled / base;
        assert!((3.5..4.1).contains(&ratio), "ratio {ratio}");
    }
}
