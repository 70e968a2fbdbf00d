//! Supervised training: Xavier init, shuffled mini-batches, batch-mean
//! Chamfer gradients, Adam updates, and validation-driven stopping.

use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chamfer::{chamfer_kdtree, chamfer_with_grad, PointCloud, DEFAULT_LEAF_SIZE};
use crate::data::{DatasetManifest, Sample, Split};
use crate::error::{Error, Result};
use crate::model::{backward, build_model, clouds_from_output, forward, ModelConfig, ModelParams};
use crate::nn::{adam_step, AdamState};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Stop once consecutive validation losses differ by less than this.
    /// Zero disables the check.
    pub convergence_epsilon: f64,
    /// Stop after this many epochs without a new best validation loss.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 5,
            weight_decay: 1e-5,
            max_epochs: 100,
            convergence_epsilon: 1e-3,
            early_stop_patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive and finite");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative and finite");
        }
        if !(self.convergence_epsilon.is_finite() && self.convergence_epsilon >= 0.0) {
            return bad("convergence epsilon must be non-negative and finite");
        }
        if self.early_stop_patience == 0 {
            return bad("early-stop patience must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    EarlyStop,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "converged",
            StopReason::EarlyStop => "early_stop",
            StopReason::MaxEpochs => "max_epochs",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample loss over the epoch, measured before each update.
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub stop_reason: Option<StopReason>,
    /// Epoch whose parameters were returned; `None` means the initial ones.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.records[e - 1].val_loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,wall_time_ms\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:?},{:?},{:.3}\n",
                r.epoch, r.train_loss, r.val_loss, r.wall_time_ms
            ));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// A sample prepared for the model: `[1×C×S×S]` image and target cloud.
struct Prepared<'a, T> {
    image: Tensor<T>,
    cloud: &'a PointCloud,
}

fn prepare<'a, T: Element>(config: &ModelConfig, samples: &'a [Sample], what: &str) -> Result<Vec<Prepared<'a, T>>> {
    if samples.is_empty() {
        return Err(Error::Config(format!("the {what} split is empty")));
    }
    let s = config.input_size();
    samples
        .iter()
        .map(|smp| {
            if smp.image.shape() != [config.in_channels, s, s] {
                return Err(Error::Config(format!(
                    "sample {} has image shape {:?}, model expects [{}, {s}, {s}]",
                    smp.id,
                    smp.image.shape(),
                    config.in_channels
                )));
            }
            Ok(Prepared {
                image: smp.image.cast::<T>().reshape(&[1, config.in_channels, s, s])?,
                cloud: &smp.cloud,
            })
        })
        .collect()
}

/// Chamfer loss of one `[1×C×S×S]` image against `target`, and its gradient
/// with respect to every parameter.
pub fn sample_loss_and_grad<T: Element>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    image: &Tensor<T>,
    target: &PointCloud,
) -> Result<(f64, ModelParams<T>)> {
    let pass = forward(params, config, image)?;
    let Some(pred) = finite_prediction(&pass.cloud)? else {
        return Ok((f64::NAN, ModelParams::zeros(config)?));
    };
    let (loss, grad) = chamfer_with_grad(target, &pred)?;
    let grad_cloud = Tensor::new(
        vec![1, grad.len(), 3],
        grad.iter().flatten().map(|&g| T::of(g)).collect(),
    )?;
    let grads = backward(params, config, &pass.cache, &grad_cloud)?;
    Ok((loss, grads))
}

/// Chamfer loss of one `[1×C×S×S]` image against `target`.
pub fn sample_loss<T: Element>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    image: &Tensor<T>,
    target: &PointCloud,
) -> Result<f64> {
    let pass = forward(params, config, image)?;
    match finite_prediction(&pass.cloud)? {
        Some(pred) => Ok(chamfer_kdtree(target, &pred, DEFAULT_LEAF_SIZE)?.loss),
        None => Ok(f64::NAN),
    }
}

/// The single predicted cloud, or `None` when the network produced a
/// non-finite coordinate (the loss is then undefined).
fn finite_prediction<T: Element>(cloud: &Tensor<T>) -> Result<Option<PointCloud>> {
    if cloud.data().iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    Ok(Some(clouds_from_output(cloud)?.swap_remove(0)))
}

fn mean_loss<T: Element>(params: &ModelParams<T>, config: &ModelConfig, set: &[Prepared<'_, T>]) -> Result<f64> {
    let losses: Vec<f64> = set
        .par_iter()
        .map(|p| sample_loss(params, config, &p.image, p.cloud))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean per-sample Chamfer loss over `samples`. Each sample runs alone, so
/// the result does not depend on order or grouping.
pub fn evaluate<T: Element>(params: &ModelParams<T>, config: &ModelConfig, samples: &[Sample]) -> Result<f64> {
    let set = prepare::<T>(config, samples, "evaluation")?;
    mean_loss(params, config, &set)
}

/// Batch loss and `(1/B)·Σ ∂Loss_k/∂W`. Per-sample work runs in parallel; the
/// reduction always adds in batch order.
fn batch_gradient<T: Element>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    batch: &[&Prepared<'_, T>],
) -> Result<(Vec<f64>, ModelParams<T>)> {
    let parts: Vec<(f64, ModelParams<T>)> = batch
        .par_iter()
        .map(|p| sample_loss_and_grad(params, config, &p.image, p.cloud))
        .collect::<Result<_>>()?;
    let mut parts = parts.into_iter();
    let (first_loss, mut sum) = parts.next().expect("batches are nonempty");
    let mut losses = vec![first_loss];
    for (loss, g) in parts {
        losses.push(loss);
        sum.add_scaled(&g, T::one())?;
    }
    let inv = T::of(1.0 / batch.len() as f64);
    for t in sum.tensors_mut() {
        for v in t.data_mut() {
            *v = *v * inv;
        }
    }
    Ok((losses, sum))
}

/// Builds a model from `train_config.seed` and trains it on the manifest's
/// train split, validating on its val split.
pub fn train<T: Element>(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    manifest: &DatasetManifest,
) -> Result<(ModelParams<T>, TrainHistory)> {
    let train_set = manifest.load_split(Split::Train)?;
    let val_set = manifest.load_split(Split::Val)?;
    train_samples(model_config, train_config, &train_set, &val_set, |_| {})
}

/// [`train`] on in-memory samples; `on_epoch` sees every record as it is made.
pub fn train_samples<T: Element>(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams<T>, TrainHistory)> {
    model_config.validate()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let initial = build_model(model_config, &mut init_rng)?;
    train_from(initial, model_config, train_config, train_set, val_set, on_epoch)
}

/// Trains starting from `initial`. Returns the parameters with the lowest
/// validation loss seen, or `initial` when no epoch ran.
pub fn train_from<T: Element>(
    initial: ModelParams<T>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams<T>, TrainHistory)> {
    train_config.validate()?;
    model_config.validate()?;
    let train_data = prepare::<T>(model_config, train_set, "train")?;
    let val_data = prepare::<T>(model_config, val_set, "validation")?;

    let mut params = initial;
    let mut adam: Vec<AdamState<T>> = params.tensors().map(|t| AdamState::new(t.shape())).collect();
    let mut best = params.clone();
    let mut history = TrainHistory::default();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 1..=train_config.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(train_config.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| &train_data[i]).collect();
            let (losses, grad) = batch_gradient(&params, model_config, &batch)?;
            for &l in &losses {
                if !l.is_finite() {
                    return Err(Error::Divergence { epoch, loss: l });
                }
                loss_sum += l;
            }
            for ((p, g), st) in params.tensors_mut().zip(grad.tensors()).zip(&mut adam) {
                adam_step(p, g, st, train_config.learning_rate, train_config.weight_decay)?;
            }
        }
        let train_loss = loss_sum / train_data.len() as f64;
        if !params.is_finite() {
            return Err(Error::Divergence { epoch, loss: f64::NAN });
        }
        let val_loss = mean_loss(&params, model_config, &val_data)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: val_loss });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        on_epoch(&record);
        let last_val = history.records.last().map(|r| r.val_loss);
        history.records.push(record);

        if val_loss < best_val {
            best_val = val_loss;
            best = params.clone();
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if let Some(last) = last_val {
            if (val_loss - last).abs() < train_config.convergence_epsilon {
                history.stop_reason = Some(StopReason::Converged);
                return Ok((best, history));
            }
        }
        if since_best >= train_config.early_stop_patience {
            history.stop_reason = Some(StopReason::EarlyStop);
            return Ok((best, history));
        }
    }
    history.stop_reason = Some(StopReason::MaxEpochs);
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sample, ShapeKind};
    use crate::model::Variant;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            image_size: 32,
            channel_plan: vec![4, 4, 4, 4, 4],
            decoder_deconv_channels: vec![4],
            fc_hidden: 16,
            point_count: 16,
            ..ModelConfig::default()
        }
    }

    fn samples(n: usize, seed: u64) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let kind = ShapeKind::ALL[i % 2];
                generate_sample(kind, format!("s{i}"), 32, 16, &mut rng).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let c = tiny_config();
        let tc = TrainConfig { max_epochs: 0, seed: 4, ..TrainConfig::default() };
        let s = samples(2, 0);
        let (p, h) = train_samples::<f64>(&c, &tc, &s, &s, |_| {}).unwrap();
        let init: ModelParams<f64> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(p, init);
        assert!(h.records.is_empty());
        assert_eq!(h.stop_reason, Some(StopReason::MaxEpochs));
        assert_eq!(h.best_epoch, None);
    }

    #[test]
    fn empty_split_is_config_error() {
        let c = tiny_config();
        let s = samples(1, 0);
        let err = train_samples::<f64>(&c, &TrainConfig::default(), &s, &[], |_| {}).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(matches!(evaluate::<f64>(&build_model(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), &c, &[]), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: 0.0, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { weight_decay: -1.0, ..ok.clone() },
            TrainConfig { early_stop_patience: 0, ..ok.clone() },
            TrainConfig { convergence_epsilon: f64::NAN, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_per_sample_gradients() {
        let c = tiny_config();
        let p: ModelParams<f64> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let s = samples(3, 1);
        let prep = prepare::<f64>(&c, &s, "t").unwrap();
        let refs: Vec<_> = prep.iter().collect();
        let (_, mean) = batch_gradient(&p, &c, &refs).unwrap();
        let mut acc = ModelParams::<f64>::zeros(&c).unwrap();
        for q in &prep {
            let (_, g) = sample_loss_and_grad(&p, &c, &q.image, q.cloud).unwrap();
            acc.add_scaled(&g, 1.0 / 3.0).unwrap();
        }
        for (a, b) in mean.tensors().zip(acc.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn evaluate_is_order_invariant_and_matches_single_sample() {
        let c = tiny_config();
        let p: ModelParams<f64> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let s = samples(4, 2);
        let one = evaluate(&p, &c, &s[..1]).unwrap();
        let copies = vec![s[0].clone(); 5];
        assert_eq!(evaluate(&p, &c, &copies).unwrap(), one);
        let mut rev = s.clone();
        rev.reverse();
        let (a, b) = (evaluate(&p, &c, &s).unwrap(), evaluate(&p, &c, &rev).unwrap());
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn tiny_learning_rate_barely_moves_params() {
        let c = tiny_config();
        let s = samples(2, 3);
        let tc = TrainConfig { learning_rate: 1e-12, max_epochs: 1, weight_decay: 0.0, ..TrainConfig::default() };
        let init: ModelParams<f64> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(tc.seed)).unwrap();
        let (p, h) = train_samples::<f64>(&c, &tc, &s, &s, |_| {}).unwrap();
        assert_eq!(h.records.len(), 1);
        // Adam moves each weight by at most about lr per step.
        for (a, b) in p.tensors().zip(init.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 2.0 * 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn returns_best_validation_params_and_is_deterministic() {
        let c = tiny_config().with_variant(Variant::Maxpool);
        let s = samples(6, 4);
        let tc = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 2,
            max_epochs: 8,
            convergence_epsilon: 0.0,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut seen = 0;
        let (p, h) = train_samples::<f64>(&c, &tc, &s[..4], &s[4..], |_| seen += 1).unwrap();
        assert_eq!(seen, h.records.len());
        assert!(h.records.len() <= 8);
        let best = h.best_val_loss().unwrap();
        assert!(h.records.iter().all(|r| best <= r.val_loss));
        assert_eq!(evaluate(&p, &c, &s[4..]).unwrap(), best);
        let (q, h2) = train_samples::<f64>(&c, &tc, &s[..4], &s[4..], |_| {}).unwrap();
        assert_eq!(p, q);
        assert_eq!(
            h.records.iter().map(|r| r.val_loss).collect::<Vec<_>>(),
            h2.records.iter().map(|r| r.val_loss).collect::<Vec<_>>()
        );
        let csv = h.to_csv();
        assert!(csv.starts_with("epoch,train_loss,val_loss,wall_time_ms\n1,"));
        assert_eq!(csv.lines().count(), h.records.len() + 1);
    }

    #[test]
    fn huge_learning_rate_diverges_or_stops_cleanly() {
        let c = tiny_config();
        let s = samples(2, 5);
        let tc = TrainConfig { learning_rate: 1e300, max_epochs: 3, convergence_epsilon: 0.0, ..TrainConfig::default() };
        match train_samples::<f64>(&c, &tc, &s, &s, |_| {}) {
            Err(Error::Divergence { epoch, .. }) => assert!((1..=3).contains(&epoch)),
            Ok((p, _)) => assert!(p.is_finite()),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
