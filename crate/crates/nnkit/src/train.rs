//! SGD-with-momentum optimizer, learning-rate schedule and the epoch driver
//! for the three training variants.
//!
//! Randomness layout: with root seed s, model initialization draws from
//! `Rng::new(s).child(1)`, epoch e uses `Rng::new(s).child(2).child(e)`,
//! within an epoch the shuffle uses `.child(0)` and batch b uses
//! `.child(1 + b)`. Every run is therefore a pure function of (config, seed).

use std::time::Instant;

use crate::data::{augment, normalize, AugmentConfig, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::fdt::{compose_batch, gt_matrix, stack_images};
use crate::layers::{Mode, ParamKind};
use crate::loss::{multiclass_log_loss, multilabel_log_loss, ClassMatrix, SUPPORT_EPS};
use crate::model::{argmax_batch, Model};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

const TAG_MODEL: u64 = 1;
const TAG_EPOCHS: u64 = 2;
const TAG_DATA_TRAIN: u64 = 3;
const TAG_DATA_VAL: u64 = 4;

/// Training variant: plain labels, overlay images with single labels, or
/// overlay images with full label distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Overlay,
    Fdt,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "ov" | "overlay" => Ok(Variant::Overlay),
            "fdt" => Ok(Variant::Fdt),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected baseline, ov or fdt)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Overlay => "ov",
            Variant::Fdt => "fdt",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_drop_period: usize,
    pub lr_drop_factor: f64,
    pub seed: u64,
    pub variant: Variant,
    pub tn_enabled: bool,
    pub augment: AugmentConfig,
    /// Stop once clean accuracy reaches this value, if set.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 100,
            epochs: 10,
            lr_drop_period: 30,
            lr_drop_factor: 0.1,
            seed: 1,
            variant: Variant::Baseline,
            tn_enabled: false,
            augment: AugmentConfig::default(),
            stop_at_accuracy: None,
        }
    }
}

impl TrainConfig {
    /// One-line echo of every field that influences the run; two configs
    /// that differ only in the variant produce headers that differ only in
    /// the `variant=` token.
    pub fn header_line(&self) -> String {
        format!(
            "variant={} tn={} lr={} momentum={} weight_decay={} batch_size={} epochs={} \
             lr_drop_period={} lr_drop_factor={} seed={} shift={} flip_prob={}",
            self.variant.name(),
            self.tn_enabled,
            self.lr,
            self.momentum,
            self.weight_decay,
            self.batch_size,
            self.epochs,
            self.lr_drop_period,
            self.lr_drop_factor,
            self.seed,
            self.augment.max_shift,
            self.augment.flip_prob,
        )
    }
}

/// Per-parameter velocity buffers, aligned with the model's visit order.
#[derive(Debug, Clone)]
pub struct OptimizerState<S: Scalar> {
    velocities: Vec<Vec<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(model: &mut Model<S>) -> Self {
        let mut velocities = Vec::new();
        model.visit_params(&mut |_, values, _| velocities.push(vec![S::zero(); values.len()]));
        OptimizerState { velocities }
    }
}

/// One momentum-SGD update on a parameter slice:
/// `v = momentum * v + (g + wd * w); w = w - lr * v`.
pub fn sgd_update<S: Scalar>(
    values: &mut [S],
    grads: &[S],
    velocity: &mut [S],
    lr: S,
    momentum: S,
    weight_decay: S,
) {
    for ((w, &g), v) in values.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + (g + weight_decay * *w);
        *w = *w - lr * *v;
    }
}

/// Apply the update to every model parameter. Weight decay is applied to
/// convolution and dense weights only; biases and batch-norm scale/shift
/// are excluded.
pub fn sgd_step<S: Scalar>(
    model: &mut Model<S>,
    state: &mut OptimizerState<S>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let mut idx = 0;
    let mut error = None;
    let (lr, momentum, wd) = (
        S::from_f64(lr),
        S::from_f64(momentum),
        S::from_f64(weight_decay),
    );
    model.visit_params(&mut |kind, values, grads| {
        if error.is_some() {
            return;
        }
        match state.velocities.get_mut(idx) {
            Some(v) if v.len() == values.len() => {
                let decay = if kind == ParamKind::Weight { wd } else { S::zero() };
                sgd_update(values, grads, v, lr, momentum, decay);
            }
            _ => error = Some(idx),
        }
        idx += 1;
    });
    if let Some(idx) = error {
        return Err(Error::Usage(format!(
            "optimizer state does not match model parameters at tensor {idx}"
        )));
    }
    if idx != state.velocities.len() {
        return Err(Error::Usage(
            "optimizer state has more velocity buffers than the model has parameters".into(),
        ));
    }
    Ok(())
}

/// Step schedule: `base * factor^(epoch / period)`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr * config.lr_drop_factor.powi((epoch / config.lr_drop_period) as i32)
}

/// One per-epoch record. Wall time is reported in the run summary and on
/// stdout but kept out of the CSV so logs of identical runs are
/// byte-identical.
#[derive(Debug, Clone)]
pub struct MetricsEntry {
    pub epoch: usize,
    pub train_loss: f64,
    pub clean_accuracy: f64,
    pub wall_secs: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct MetricsLog {
    pub header: String,
    pub entries: Vec<MetricsEntry>,
}

impl MetricsLog {
    pub fn new(header: String) -> Self {
        MetricsLog {
            header,
            entries: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# config: {}\n", self.header);
        out.push_str("epoch,train_loss,clean_accuracy,lr\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.clean_accuracy, e.lr
            ));
        }
        out
    }

    pub fn total_wall_secs(&self) -> f64 {
        self.entries.iter().map(|e| e.wall_secs).sum()
    }
}

fn prep_train_image<S: Scalar>(
    img: Tensor<S>,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<Tensor<S>> {
    Ok(normalize(&augment(&img, cfg, rng), cfg))
}

fn stack_plain_batch<S: Scalar>(
    dataset: &LabeledDataset<S>,
    indices: &[usize],
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<(Tensor<S>, Vec<usize>)> {
    let (z, y, x) = dataset.image_dims();
    let shape = Shape::new(indices.len(), z, y, x)?;
    let mut values = Vec::with_capacity(shape.count());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let img = prep_train_image(dataset.image(i)?, cfg, rng)?;
        values.extend_from_slice(img.as_slice());
        labels.push(dataset.labels()[i]);
    }
    Ok((Tensor::from_vec(shape, values)?, labels))
}

/// Run one epoch of the configured variant and report the epoch metrics.
/// Clean accuracy is measured on `eval` when given, else on the training
/// set.
pub fn train_epoch<S: Scalar>(
    model: &mut Model<S>,
    dataset: &LabeledDataset<S>,
    eval: Option<&LabeledDataset<S>>,
    epoch: usize,
    config: &TrainConfig,
    state: &mut OptimizerState<S>,
) -> Result<MetricsEntry> {
    if dataset.class_count() != model.class_count() {
        return Err(Error::Usage(format!(
            "dataset has {} classes, model has {}",
            dataset.class_count(),
            model.class_count()
        )));
    }
    let start = Instant::now();
    let lr = lr_schedule(epoch, config);
    let epoch_rng = Rng::new(config.seed).child(TAG_EPOCHS).child(epoch as u64);

    let n = dataset.len();
    let batch_size = config.batch_size.min(n).max(1);
    let batches = n.div_ceil(batch_size);

    let mut order: Vec<usize> = (0..n).collect();
    epoch_rng.child(0).shuffle(&mut order);

    let mut loss_sum = 0.0;
    let mut example_count = 0usize;

    for b in 0..batches {
        let mut batch_rng = epoch_rng.child(1 + b as u64);
        let slice = &order[b * batch_size..((b + 1) * batch_size).min(n)];

        let (images, loss) = match config.variant {
            Variant::Baseline => {
                let (images, labels) =
                    stack_plain_batch(dataset, slice, &config.augment, &mut batch_rng)?;
                let logits = model.forward(&images, Mode::Train)?;
                let result = multiclass_log_loss(&labels, &ClassMatrix::from_logits(&logits)?)?;
                backprop(model, &result.error)?;
                (images, result.loss)
            }
            Variant::Overlay => {
                let mut prep = |img: Tensor<S>, rng: &mut Rng| {
                    prep_train_image(img, &config.augment, rng)
                };
                let examples =
                    compose_batch(dataset, slice.len(), &mut batch_rng, None, &mut prep)?;
                let images = stack_images(&examples)?;
                // Overlay trains on the single class carrying the largest factor.
                let labels: Vec<usize> = examples.iter().map(|e| e.classes[0]).collect();
                let logits = model.forward(&images, Mode::Train)?;
                let result = multiclass_log_loss(&labels, &ClassMatrix::from_logits(&logits)?)?;
                backprop(model, &result.error)?;
                (images, result.loss)
            }
            Variant::Fdt => {
                let mut prep = |img: Tensor<S>, rng: &mut Rng| {
                    prep_train_image(img, &config.augment, rng)
                };
                let examples =
                    compose_batch(dataset, slice.len(), &mut batch_rng, None, &mut prep)?;
                let images = stack_images(&examples)?;
                let targets = gt_matrix(&examples, dataset.class_count())?;
                let logits = model.forward(&images, Mode::Train)?;
                let result = multilabel_log_loss(
                    &targets,
                    &ClassMatrix::from_logits(&logits)?,
                    S::from_f64(SUPPORT_EPS),
                )?;
                backprop(model, &result.error)?;
                (images, result.loss)
            }
        };

        let batch_loss = loss.as_f64();
        if !batch_loss.is_finite() {
            return Err(Error::Numeric(epoch));
        }
        loss_sum += batch_loss * images.shape().n as f64;
        example_count += images.shape().n;

        sgd_step(model, state, lr, config.momentum, config.weight_decay)?;
    }

    let clean_accuracy = match eval {
        Some(ds) => evaluate(model, ds, &config.augment, batch_size)?,
        None => evaluate(model, dataset, &config.augment, batch_size)?,
    };

    Ok(MetricsEntry {
        epoch,
        train_loss: loss_sum / example_count as f64,
        clean_accuracy,
        wall_secs: start.elapsed().as_secs_f64(),
        lr,
    })
}

fn backprop<S: Scalar>(model: &mut Model<S>, error: &ClassMatrix<S>) -> Result<()> {
    model.backward(&error.to_tensor())?;
    Ok(())
}

/// Fraction of argmax predictions matching the labels, in inference mode
/// on normalized (unaugmented) images.
pub fn evaluate<S: Scalar>(
    model: &mut Model<S>,
    dataset: &LabeledDataset<S>,
    norm: &AugmentConfig,
    batch_size: usize,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty dataset".into()));
    }
    let n = dataset.len();
    let batch_size = batch_size.min(n).max(1);
    let (z, y, x) = dataset.image_dims();
    let mut correct = 0usize;
    let mut at = 0usize;
    while at < n {
        let take = batch_size.min(n - at);
        let shape = Shape::new(take, z, y, x)?;
        let mut values = Vec::with_capacity(shape.count());
        for i in at..at + take {
            values.extend_from_slice(normalize(&dataset.image(i)?, norm).as_slice());
        }
        let images = Tensor::from_vec(shape, values)?;
        let logits = model.forward(&images, Mode::Infer)?;
        for (pred, i) in argmax_batch(&logits).into_iter().zip(at..at + take) {
            if pred == dataset.labels()[i] {
                correct += 1;
            }
        }
        at += take;
    }
    Ok(correct as f64 / n as f64)
}

/// Build the model for a dataset and drive the full multi-epoch run.
/// `on_epoch` is invoked with every finished epoch's metrics.
pub fn train_run<S: Scalar>(
    description: &str,
    train: &LabeledDataset<S>,
    eval: Option<&LabeledDataset<S>>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&MetricsEntry),
) -> Result<(Model<S>, MetricsLog)> {
    let (z, y, x) = train.image_dims();
    let mut init_rng = Rng::new(config.seed).child(TAG_MODEL);
    let mut model: Model<S> =
        Model::build(description, (z, y, x), config.tn_enabled, &mut init_rng)?;
    let mut state = OptimizerState::new(&mut model);
    let mut log = MetricsLog::new(config.header_line());

    for epoch in 0..config.epochs {
        let entry = train_epoch(&mut model, train, eval, epoch, config, &mut state)?;
        on_epoch(&entry);
        let reached = config
            .stop_at_accuracy
            .map(|t| entry.clean_accuracy >= t)
            .unwrap_or(false);
        log.entries.push(entry);
        if reached {
            break;
        }
    }
    Ok((model, log))
}

/// Synthetic-data split; both halves derive from the run seed on streams
/// disjoint from the model-init and epoch streams.
pub fn synthetic_split<S: Scalar>(
    classes: usize,
    train_n: usize,
    val_n: usize,
    y: usize,
    x: usize,
    noise: f64,
    seed: u64,
) -> Result<(LabeledDataset<S>, LabeledDataset<S>)> {
    let root = Rng::new(seed);
    let train = crate::data::synthetic_dataset(
        &mut root.child(TAG_DATA_TRAIN),
        classes,
        train_n,
        y,
        x,
        noise,
        Split::Train,
    )?;
    let val = crate::data::synthetic_dataset(
        &mut root.child(TAG_DATA_VAL),
        classes,
        val_n,
        y,
        x,
        noise,
        Split::Validation,
    )?;
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_reduces_to_vanilla_without_momentum_or_decay() {
        let mut w = vec![1.0_f64, -2.0];
        let g = vec![0.5, 0.25];
        let mut v = vec![0.0, 0.0];
        sgd_update(&mut w, &g, &mut v, 0.1, 0.0, 0.0);
        assert!((w[0] - 0.95).abs() < 1e-12);
        assert!((w[1] + 2.025).abs() < 1e-12);
    }

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let mut w = vec![1.5_f32, -0.5];
        let g = vec![0.0, 0.0];
        let mut v = vec![0.0, 0.0];
        sgd_update(&mut w, &g, &mut v, 0.1, 0.9, 0.0);
        assert_eq!(w, vec![1.5, -0.5]);
    }

    #[test]
    fn sgd_hand_trace_weight_decay() {
        // w=1, g=0, wd=0.0005, lr=0.1, v=0: v becomes 0.0005, w becomes 0.99995.
        let mut w = vec![1.0_f64];
        let g = vec![0.0];
        let mut v = vec![0.0];
        sgd_update(&mut w, &g, &mut v, 0.1, 0.9, 0.0005);
        assert!((v[0] - 0.0005).abs() < 1e-15);
        assert!((w[0] - 0.99995).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_only_norm_strictly_decreases() {
        for &(lr, wd) in &[(0.1, 0.0005), (0.5, 0.5), (1.0, 0.9)] {
            let mut w = vec![1.0_f64, -3.0, 0.25];
            let g = vec![0.0; 3];
            let mut v = vec![0.0; 3];
            let mut prev: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            for _ in 0..5 {
                sgd_update(&mut w, &g, &mut v, lr, 0.0, wd);
                let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(norm < prev, "norm {norm} did not decrease (lr={lr}, wd={wd})");
                prev = norm;
            }
        }
    }

    #[test]
    fn lr_schedule_reference_points() {
        let config = TrainConfig {
            lr: 0.1,
            lr_drop_period: 30,
            lr_drop_factor: 0.1,
            ..TrainConfig::default()
        };
        assert!((lr_schedule(0, &config) - 0.1).abs() < 1e-12);
        assert!((lr_schedule(29, &config) - 0.1).abs() < 1e-12);
        assert!((lr_schedule(30, &config) - 0.01).abs() < 1e-12);
        assert!((lr_schedule(60, &config) - 0.001).abs() < 1e-12);
    }

    fn quick_config(variant: Variant) -> TrainConfig {
        TrainConfig {
            lr: 0.05,
            batch_size: 10,
            epochs: 5,
            lr_drop_period: 3,
            seed: 7,
            variant,
            augment: AugmentConfig {
                max_shift: 1,
                flip_prob: 0.5,
                ..AugmentConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_bit_identical() {
        let (train, _) = synthetic_split::<f32>(2, 20, 10, 6, 6, 10.0, 3).unwrap();
        let config = TrainConfig {
            lr: 0.0,
            weight_decay: 0.0,
            ..quick_config(Variant::Baseline)
        };
        let mut rng = Rng::new(config.seed).child(TAG_MODEL);
        let mut model: Model<f32> =
            Model::build("flatten,dense:2", (1, 6, 6), false, &mut rng).unwrap();
        let before = model.to_bytes();
        let mut state = OptimizerState::new(&mut model);
        train_epoch(&mut model, &train, None, 0, &config, &mut state).unwrap();
        // Running statistics do not exist here (no batch norm), so the
        // whole blob must be unchanged.
        assert_eq!(model.to_bytes(), before);
    }

    #[test]
    fn baseline_learns_separable_synthetic_data() {
        let (train, val) = synthetic_split::<f32>(2, 40, 20, 6, 6, 5.0, 11).unwrap();
        let config = quick_config(Variant::Baseline);
        let (_, log) = train_run("flatten,dense:2", &train, Some(&val), &config, |_| {}).unwrap();
        let best = log
            .entries
            .iter()
            .map(|e| e.clean_accuracy)
            .fold(0.0, f64::max);
        assert!(best > 0.95, "best accuracy {best} after {} epochs", log.entries.len());
    }

    #[test]
    fn single_layer_fits_noiseless_two_class_data_quickly() {
        // Noiseless two-class synthetic data is separable by construction;
        // a bias-only decision suffices, so 100% train accuracy must be
        // reached within a few steps.
        let mut rng = Rng::new(5);
        let train: LabeledDataset<f32> =
            crate::data::synthetic_dataset(&mut rng, 2, 20, 5, 5, 0.0, Split::Train).unwrap();
        let config = TrainConfig {
            lr: 0.5,
            batch_size: 20,
            epochs: 50,
            lr_drop_period: 1000,
            momentum: 0.0,
            weight_decay: 0.0,
            seed: 2,
            variant: Variant::Baseline,
            augment: AugmentConfig {
                max_shift: 0,
                flip_prob: 0.0,
                ..AugmentConfig::default()
            },
            stop_at_accuracy: Some(1.0),
            ..TrainConfig::default()
        };
        let (_, log) = train_run("flatten,dense:2", &train, None, &config, |_| {}).unwrap();
        assert!(
            log.entries.last().unwrap().clean_accuracy == 1.0,
            "did not reach 100% within 50 single-batch epochs"
        );
        assert!(log.entries.len() <= 50);
    }

    #[test]
    fn same_seed_same_metrics() {
        let (train, val) = synthetic_split::<f32>(3, 30, 12, 6, 6, 8.0, 17).unwrap();
        let config = quick_config(Variant::Fdt);
        let (model_a, log_a) = train_run("flatten,dense:3", &train, Some(&val), &config, |_| {}).unwrap();
        let (model_b, log_b) = train_run("flatten,dense:3", &train, Some(&val), &config, |_| {}).unwrap();
        assert_eq!(model_a.to_bytes(), model_b.to_bytes());
        assert_eq!(log_a.to_csv(), log_b.to_csv());
    }

    #[test]
    fn variants_differ_only_in_header_variant_token() {
        let a = quick_config(Variant::Baseline).header_line();
        let b = quick_config(Variant::Fdt).header_line();
        let diff: Vec<(&str, &str)> = a
            .split_whitespace()
            .zip(b.split_whitespace())
            .filter(|(x, y)| x != y)
            .collect();
        assert_eq!(diff, vec![("variant=baseline", "variant=fdt")]);
    }

    #[test]
    fn overlay_variant_trains() {
        let (train, val) = synthetic_split::<f32>(3, 30, 12, 6, 6, 8.0, 23).unwrap();
        let config = quick_config(Variant::Overlay);
        let (_, log) = train_run("flatten,dense:3", &train, Some(&val), &config, |_| {}).unwrap();
        assert_eq!(log.entries.len(), config.epochs);
        assert!(log.entries.iter().all(|e| e.train_loss.is_finite()));
    }

    #[test]
    fn tn_enabled_keeps_post_tn_channel_means_small() {
        let (train, val) = synthetic_split::<f32>(2, 20, 10, 8, 8, 10.0, 29).unwrap();
        let config = TrainConfig {
            tn_enabled: true,
            epochs: 2,
            ..quick_config(Variant::Baseline)
        };
        let (mut model, _) =
            train_run("conv:6:3,bn,relu,gap,dense:2", &train, Some(&val), &config, |_| {}).unwrap();

        // Probe a forward pass and check every tensor-normalization output.
        let probe_shape = Shape::new(4, 1, 8, 8).unwrap();
        let mut values = Vec::with_capacity(probe_shape.count());
        for i in 0..4 {
            values.extend_from_slice(normalize(&val.image(i).unwrap(), &config.augment).as_slice());
        }
        let probe = Tensor::from_vec(probe_shape, values).unwrap();
        let mut worst: f64 = 0.0;
        let mut seen = 0;
        model
            .forward_observed(&probe, Mode::Infer, &mut |kind, out| {
                if kind != "tn" {
                    return;
                }
                seen += 1;
                let s = out.shape();
                for n in 0..s.n {
                    for y in 0..s.y {
                        for x in 0..s.x {
                            let mean: f64 = (0..s.z)
                                .map(|z| out.get(n, z, y, x).as_f64())
                                .sum::<f64>()
                                / s.z as f64;
                            worst = worst.max(mean.abs());
                        }
                    }
                }
            })
            .unwrap();
        assert!(seen > 0, "no tensor-normalization layers observed");
        assert!(worst < 1e-5, "post-tn channel mean {worst}");
    }

    #[test]
    fn evaluate_counts_constant_model_as_majority_fraction() {
        // A model with zero weights predicts a constant class; accuracy must
        // equal that class's share of the labels.
        let (train, _) = synthetic_split::<f32>(2, 10, 4, 4, 4, 0.0, 31).unwrap();
        let mut rng = Rng::new(1);
        let mut model: Model<f32> =
            Model::build("flatten,dense:2", (1, 4, 4), false, &mut rng).unwrap();
        model.visit_params(&mut |_, values, _| values.fill(0.0));
        let acc = evaluate(&mut model, &train, &AugmentConfig::default(), 4).unwrap();
        // Zero logits everywhere: argmax is class 0; labels alternate 0, 1.
        assert!((acc - 0.5).abs() < 1e-9);
    }

    #[test]
    fn mismatched_class_count_is_usage_error() {
        let (train, _) = synthetic_split::<f32>(3, 9, 3, 4, 4, 0.0, 37).unwrap();
        let mut rng = Rng::new(1);
        let mut model: Model<f32> =
            Model::build("flatten,dense:2", (1, 4, 4), false, &mut rng).unwrap();
        let mut state = OptimizerState::new(&mut model);
        let config = quick_config(Variant::Baseline);
        assert!(matches!(
            train_epoch(&mut model, &train, None, 0, &config, &mut state),
            Err(Error::Usage(_))
        ));
    }
}
