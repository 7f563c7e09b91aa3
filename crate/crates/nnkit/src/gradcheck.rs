//! Double-precision finite-difference validation of every backward pass.
//!
//! Each check builds a small layer (or loss), reads out a fixed random
//! linear functional of its output, and compares the analytic gradients
//! against central differences computed through the forward pass only. The
//! numeric side never calls a backward function, so the two routes are
//! independent.
//!
//! The tensor-normalization layer back-propagates errors unchanged by
//! convention, which is not the Jacobian of mean subtraction. Its check
//! therefore differentiates a modified forward in which the mean is frozen
//! at its cached value; the exact-Jacobian ablation variant is checked
//! against the live forward.

use crate::layers::{
    BatchNormLayer, ConvLayer, DenseLayer, FlattenLayer, GlobalAvgPoolLayer, Layer, MaxPoolLayer,
    Mode, ReluLayer, ResidualBlock, TensorNormLayer,
};
use crate::loss::{multiclass_log_loss, multilabel_log_loss, softmax, ClassMatrix, SUPPORT_EPS};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;

/// Result of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Relative error with a floor that keeps near-zero gradients comparable.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

/// Central difference of `f` along every coordinate of `x`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let keep = work[i];
        work[i] = keep + step;
        let up = f(&work);
        work[i] = keep - step;
        let down = f(&work);
        work[i] = keep;
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

fn random_values(rng: &mut Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| (rng.uniform01() * 2.0 - 1.0) * scale).collect()
}

/// Values bounded away from zero, for kink-free rectifier checks.
fn random_values_off_kink(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let v = rng.uniform01() * 2.0 - 1.0;
            if v.abs() < 0.05 {
                0.05 + v.abs()
            } else {
                v
            }
        })
        .collect()
}

fn readout(out: &Tensor<f64>, weights: &[f64]) -> f64 {
    out.as_slice()
        .iter()
        .zip(weights)
        .map(|(&o, &w)| o * w)
        .sum()
}

fn count_params(layer: &mut Layer<f64>) -> Vec<usize> {
    let mut lens = Vec::new();
    layer.visit_params(&mut |_, values, _| lens.push(values.len()));
    lens
}

fn add_to_param(layer: &mut Layer<f64>, tensor_idx: usize, elem: usize, delta: f64) {
    let mut t = 0;
    layer.visit_params(&mut |_, values, _| {
        if t == tensor_idx {
            values[elem] += delta;
        }
        t += 1;
    });
}

fn collect_grads(layer: &mut Layer<f64>) -> Vec<Vec<f64>> {
    let mut grads = Vec::new();
    layer.visit_params(&mut |_, _, g| grads.push(g.to_vec()));
    grads
}

/// Check a layer's input and parameter gradients against central
/// differences of `readout(forward(x))`.
fn check_layer(name: &str, mut layer: Layer<f64>, input: Tensor<f64>, mode: Mode) -> CheckOutcome {
    let mut rng = Rng::new(0xC0FFEE ^ name.len() as u64);
    let out = layer
        .forward(&input, mode)
        .expect("gradcheck forward must succeed");
    let r = random_values(&mut rng, out.len(), 1.0);

    // Analytic side.
    let upstream = Tensor::from_vec(out.shape(), r.clone()).expect("matching shape");
    let input_grad = layer.backward(&upstream).expect("gradcheck backward");
    let param_grads = collect_grads(&mut layer);

    // Numeric side: forward passes only.
    let shape = input.shape();
    let mut forward_eval = |values: &[f64]| -> f64 {
        let x = Tensor::from_vec(shape, values.to_vec()).expect("matching shape");
        let out = layer.forward(&x, mode).expect("gradcheck forward");
        readout(&out, &r)
    };
    let numeric_input = central_difference(&mut forward_eval, input.as_slice(), FD_STEP);
    let mut worst = max_rel_error(input_grad.as_slice(), &numeric_input);

    // Restore the cache for parameter perturbation (forward_eval left the
    // layer caching a perturbed input; parameters are unchanged).
    let lens = count_params(&mut layer);
    for (tensor_idx, &len) in lens.iter().enumerate() {
        let mut numeric = Vec::with_capacity(len);
        for elem in 0..len {
            add_to_param(&mut layer, tensor_idx, elem, FD_STEP);
            let up = {
                let out = layer.forward(&input, mode).expect("gradcheck forward");
                readout(&out, &r)
            };
            add_to_param(&mut layer, tensor_idx, elem, -2.0 * FD_STEP);
            let down = {
                let out = layer.forward(&input, mode).expect("gradcheck forward");
                readout(&out, &r)
            };
            add_to_param(&mut layer, tensor_idx, elem, FD_STEP);
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        worst = worst.max(max_rel_error(&param_grads[tensor_idx], &numeric));
    }

    CheckOutcome {
        name: name.to_string(),
        max_rel_err: worst,
        tolerance: TOLERANCE,
    }
}

fn check_dense(rng: &mut Rng) -> CheckOutcome {
    let layer = DenseLayer::new(5, 4, rng).unwrap();
    let shape = Shape::new(2, 5, 1, 1).unwrap();
    let input = Tensor::from_vec(shape, random_values(rng, shape.count(), 1.0)).unwrap();
    check_layer("dense", Layer::Dense(layer), input, Mode::Train)
}

fn check_conv(rng: &mut Rng) -> CheckOutcome {
    let layer = ConvLayer::new(3, 4, 3, 1, 1, rng).unwrap();
    let shape = Shape::new(2, 3, 5, 5).unwrap();
    let input = Tensor::from_vec(shape, random_values(rng, shape.count(), 1.0)).unwrap();
    check_layer("conv", Layer::Conv(layer), input, Mode::Train)
}

fn check_conv_tiny(rng: &mut Rng) -> CheckOutcome {
    let layer = ConvLayer::new(1, 2, 2, 1, 0, rng).unwrap();
    let shape = Shape::new(1, 1, 3, 3).unwrap();
    let input = Tensor::from_vec(shape, random_values(rng, shape.count(), 1.0)).unwrap();
    check_layer("conv_1x1x3x3", Layer::Conv(layer), input, Mode::Train)
}

fn check_conv_strided(rng: &mut Rng) -> CheckOutcome {
    let layer = ConvLayer::new(2, 3, 3, 2, 1, rng).unwrap();
    let shape = Shape::new(1, 2, 7, 7).unwrap();
    let input = Tensor::from_vec(shape, random_values(rng, shape.count(), 1.0)).unwrap();
    check_layer("conv_stride2", Layer::Conv(layer), input, Mode::Train)
}

fn check_batchnorm(rng: &mut Rng, mode: Mode) -> CheckOutcome {
    let mut layer: BatchNormLayer<f64> = BatchNormLayer::new(3);
    for g in &mut layer.gamma {
        *g = 0.5 + rng.uniform01();
    }
    for b in &mut layer.beta {
        *b = rng.uniform01() - 0.5;
    }
    for v in &mut layer.running_var {
        *v = 0.5 + rng.uniform01();
    }
    for m in &mut layer.running_mean {
        *m = rng.uniform01() - 0.5;
    }
    let shape = Shape::new(4, 3, 3, 3).unwrap();
    let input = Tensor::from_vec(shape, random_values(rng, shape.count(), 2.0)).unwrap();
    let name = match mode {
        Mode::Train => "batchnorm_train",
        Mode::Infer => "batchnorm_infer",
    };
    check_layer(name, Layer::BatchNorm(layer), input, mode)
}

fn check_relu(rng: &mut Rng) -> CheckOutcome {
    let shape = Shape::new(2, 3, 4, 4).unwrap();
    let input = Tensor::from_vec(shape, random_values_off_kink(rng, shape.count())).unwrap();
    check_layer("relu", Layer::Relu(ReluLayer::new()), input, Mode::Train)
}

fn check_maxpool(rng: &mut Rng) -> CheckOutcome {
    let shape = Shape::new(2, 2, 4, 4).unwrap();
    // Spread values so no pooling window has a near-tie within the step.
    let values: Vec<f64> = (0..shape.count())
        .map(|i| (rng.uniform01() * 2.0 - 1.0) + i as f64 * 1e-3)
        .collect();
    let input = Tensor::from_vec(shape, values).unwrap();
    check_layer("maxpool", Layer::MaxPool(MaxPoolLayer::new(2, 2)), input, Mode::Train)
}

fn check_gap(rng: &mut Rng) -> CheckOutcome {
    let shape = Shape::new(2, 3, 4, 4).unwrap();
    let input = Tensor::from_vec(shape, random_values(rng, shape.count(), 1.0)).unwrap();
    check_layer(
        "global_avg_pool",
        Layer::GlobalAvgPool(GlobalAvgPoolLayer::new()),
        input,
        Mode::Train,
    )
}

fn check_flatten(rng: &mut Rng) -> CheckOutcome {
    let shape = Shape::new(2, 2, 3, 3).unwrap();
    let input = Tensor::from_vec(shape, random_values(rng, shape.count(), 1.0)).unwrap();
    check_layer("flatten", Layer::Flatten(FlattenLayer::new()), input, Mode::Train)
}

fn check_residual(rng: &mut Rng) -> CheckOutcome {
    let body = vec![
        Layer::Conv(ConvLayer::new(2, 4, 3, 1, 1, rng).unwrap()),
        Layer::BatchNorm(BatchNormLayer::new(4)),
        Layer::Relu(ReluLayer::new()),
        Layer::Conv(ConvLayer::new(4, 4, 3, 1, 1, rng).unwrap()),
        Layer::BatchNorm(BatchNormLayer::new(4)),
    ];
    let projection = Some(ConvLayer::new(2, 4, 1, 1, 0, rng).unwrap());
    let post = vec![Layer::Relu(ReluLayer::new())];
    let block = ResidualBlock::new(body, projection, post);
    let shape = Shape::new(2, 2, 4, 4).unwrap();
    let input = Tensor::from_vec(shape, random_values(rng, shape.count(), 1.0)).unwrap();
    check_layer("residual_block", Layer::Residual(block), input, Mode::Train)
}

/// Pass-through backward against the frozen-mean forward.
fn check_tn_frozen_mean(rng: &mut Rng) -> CheckOutcome {
    let shape = Shape::new(2, 4, 3, 3).unwrap();
    let input = Tensor::from_vec(shape, random_values(rng, shape.count(), 1.0)).unwrap();

    let mut tn: TensorNormLayer<f64> = TensorNormLayer::new();
    let out = tn.forward(&input);
    let r = random_values(rng, out.len(), 1.0);

    // Analytic: the convention passes the readout weights through unchanged.
    let upstream = Tensor::from_vec(shape, r.clone()).unwrap();
    let analytic = tn.backward(&upstream).unwrap();

    // Frozen mean, computed here with plain index loops so the oracle does
    // not share code with the layer.
    let mut frozen_mean = vec![0.0; shape.n * shape.y * shape.x];
    for n in 0..shape.n {
        for y in 0..shape.y {
            for x in 0..shape.x {
                let mut sum = 0.0;
                for z in 0..shape.z {
                    sum += input.get(n, z, y, x);
                }
                frozen_mean[(n * shape.y + y) * shape.x + x] = sum / shape.z as f64;
            }
        }
    }
    let mut frozen_forward = |values: &[f64]| -> f64 {
        let x = Tensor::from_vec(shape, values.to_vec()).unwrap();
        let mut acc = 0.0;
        let mut i = 0;
        for n in 0..shape.n {
            for z in 0..shape.z {
                let _ = z;
                for yy in 0..shape.y {
                    for xx in 0..shape.x {
                        let m = frozen_mean[(n * shape.y + yy) * shape.x + xx];
                        acc += (x.as_slice()[i] - m) * r[i];
                        i += 1;
                    }
                }
            }
        }
        acc
    };
    let numeric = central_difference(&mut frozen_forward, input.as_slice(), FD_STEP);

    CheckOutcome {
        name: "tn_frozen_mean".into(),
        max_rel_err: max_rel_error(analytic.as_slice(), &numeric),
        tolerance: TOLERANCE,
    }
}

/// The exact-Jacobian ablation variant against the live forward.
fn check_tn_exact_jacobian(rng: &mut Rng) -> CheckOutcome {
    let shape = Shape::new(2, 4, 3, 3).unwrap();
    let input = Tensor::from_vec(shape, random_values(rng, shape.count(), 1.0)).unwrap();
    check_layer(
        "tn_exact_jacobian",
        Layer::TensorNorm(TensorNormLayer::with_exact_jacobian()),
        input,
        Mode::Train,
    )
}

fn check_multiclass_loss(rng: &mut Rng) -> CheckOutcome {
    let (classes, batch) = (4, 3);
    let logits =
        ClassMatrix::from_vec(classes, batch, random_values(rng, classes * batch, 2.0)).unwrap();
    let labels = vec![2usize, 0, 3];

    let result = multiclass_log_loss(&labels, &logits).unwrap();
    let mut eval = |values: &[f64]| -> f64 {
        let p = ClassMatrix::from_vec(classes, batch, values.to_vec()).unwrap();
        multiclass_log_loss(&labels, &p).unwrap().loss
    };
    let numeric = central_difference(&mut eval, logits.as_slice(), FD_STEP);

    CheckOutcome {
        name: "loss_multiclass".into(),
        max_rel_err: max_rel_error(result.error.as_slice(), &numeric),
        tolerance: TOLERANCE,
    }
}

/// The multi-label scalar loss is the unweighted -log softmax over
/// supported classes; its true gradient per column is
/// `scale * (k * softmax - indicator(support))` for k supported classes,
/// which differs from the back-propagated error `scale * (softmax - target)`.
/// Both are intentional; this check validates the scalar against its own
/// gradient.
fn check_multilabel_loss(rng: &mut Rng) -> CheckOutcome {
    let (classes, batch) = (4, 2);
    let logits =
        ClassMatrix::from_vec(classes, batch, random_values(rng, classes * batch, 2.0)).unwrap();
    let mut targets = ClassMatrix::zeros(classes, batch);
    // Column 0: two supported classes, harmonic weights 2/3 and 1/3.
    targets.set(1, 0, 2.0 / 3.0);
    targets.set(3, 0, 1.0 / 3.0);
    // Column 1: three supported classes, weights 6/11, 3/11, 2/11.
    targets.set(0, 1, 6.0 / 11.0);
    targets.set(2, 1, 3.0 / 11.0);
    targets.set(3, 1, 2.0 / 11.0);

    let probs = softmax(&logits);
    let scale = 1.0 / batch as f64;
    let mut analytic = Vec::with_capacity(classes * batch);
    for b in 0..batch {
        let support: Vec<bool> = (0..classes).map(|y| targets.get(y, b) > SUPPORT_EPS).collect();
        let k = support.iter().filter(|&&s| s).count() as f64;
        for y in 0..classes {
            let indicator = if support[y] { 1.0 } else { 0.0 };
            analytic.push(scale * (k * probs.get(y, b) - indicator));
        }
    }

    let mut eval = |values: &[f64]| -> f64 {
        let p = ClassMatrix::from_vec(classes, batch, values.to_vec()).unwrap();
        multilabel_log_loss(&targets, &p, SUPPORT_EPS).unwrap().loss
    };
    let numeric = central_difference(&mut eval, logits.as_slice(), FD_STEP);

    CheckOutcome {
        name: "loss_multilabel".into(),
        max_rel_err: max_rel_error(&analytic, &numeric),
        tolerance: TOLERANCE,
    }
}

/// Run every finite-difference check; all layers and both losses.
pub fn run_suite() -> Vec<CheckOutcome> {
    let mut rng = Rng::new(0x5EED);
    vec![
        check_dense(&mut rng),
        check_conv(&mut rng),
        check_conv_tiny(&mut rng),
        check_conv_strided(&mut rng),
        check_batchnorm(&mut rng, Mode::Train),
        check_batchnorm(&mut rng, Mode::Infer),
        check_relu(&mut rng),
        check_maxpool(&mut rng),
        check_gap(&mut rng),
        check_flatten(&mut rng),
        check_residual(&mut rng),
        check_tn_frozen_mean(&mut rng),
        check_tn_exact_jacobian(&mut rng),
        check_multiclass_loss(&mut rng),
        check_multilabel_loss(&mut rng),
    ]
}
