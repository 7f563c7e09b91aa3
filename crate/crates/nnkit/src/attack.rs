//! Projected gradient descent in the l-infinity norm, with robust accuracy
//! counted at every attack iteration.
//!
//! The update is `x_{t+1} = x_0 + clip(x_t + alpha * sign(grad) - x_0)` with
//! the clip bounding the cumulative perturbation to [-eps, +eps]. The image
//! itself is not clamped to the valid pixel domain unless a clamp range is
//! configured. The attack gradient is the multi-class log loss at the true
//! label, whichever variant trained the model. sign(0) is 0, so a vanishing
//! gradient never injects perturbation.

use crate::data::{normalize, AugmentConfig, LabeledDataset};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::loss::{multiclass_log_loss, ClassMatrix};
use crate::model::{argmax_batch, Model};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Default iteration count.
pub const DEFAULT_ITERATIONS: usize = 40;

#[derive(Debug, Clone)]
pub struct AttackConfig<S: Scalar> {
    /// Per-pixel clip bound in input-space units.
    pub epsilon: S,
    pub iterations: usize,
    /// Step size; the default rule is `epsilon * 0.01 / 0.3`.
    pub alpha: S,
    /// Optional valid-domain clamp applied after each step; off by default.
    pub clamp: Option<(S, S)>,
}

impl<S: Scalar> AttackConfig<S> {
    pub fn for_epsilon(epsilon: f64) -> Self {
        AttackConfig {
            epsilon: S::from_f64(epsilon),
            iterations: DEFAULT_ITERATIONS,
            alpha: S::from_f64(epsilon * 0.01 / 0.3),
            clamp: None,
        }
    }
}

/// Gradient of the multi-class log loss at the true labels with respect to
/// the input pixels, computed by full backpropagation in inference mode.
pub fn input_gradient<S: Scalar>(
    model: &mut Model<S>,
    input: &Tensor<S>,
    labels: &[usize],
) -> Result<Tensor<S>> {
    let logits = model.forward(input, Mode::Infer)?;
    let result = multiclass_log_loss(labels, &ClassMatrix::from_logits(&logits)?)?;
    model.backward(&result.error.to_tensor())
}

#[inline]
fn sign<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// One attack step; the cumulative perturbation relative to `origin` is
/// clipped to [-epsilon, +epsilon] per pixel.
pub fn pgd_step<S: Scalar>(
    current: &Tensor<S>,
    origin: &Tensor<S>,
    grad: &Tensor<S>,
    alpha: S,
    epsilon: S,
) -> Result<Tensor<S>> {
    if current.shape() != origin.shape() || grad.shape() != origin.shape() {
        return Err(Error::Shape(format!(
            "pgd step: shapes {} / {} / {} must match",
            current.shape(),
            origin.shape(),
            grad.shape()
        )));
    }
    let mut out = origin.clone();
    for ((o, (&c, &x0)), &g) in out
        .as_mut_slice()
        .iter_mut()
        .zip(current.as_slice().iter().zip(origin.as_slice()))
        .zip(grad.as_slice())
    {
        let moved = c + alpha * sign(g) - x0;
        let clipped = moved.max(-epsilon).min(epsilon);
        *o = x0 + clipped;
    }
    Ok(out)
}

/// Per-iteration record of a batched attack.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    /// Argmax class of each sample before any perturbation.
    pub clean_predictions: Vec<usize>,
    /// `predictions[t][b]`: argmax class of sample b after iteration t+1.
    pub predictions: Vec<Vec<usize>>,
    /// Largest |x_t - x_0| observed at each iteration.
    pub linf_per_iter: Vec<f64>,
}

/// Run the full iterative attack on a batch of images.
pub fn pgd_attack<S: Scalar>(
    model: &mut Model<S>,
    origin: &Tensor<S>,
    labels: &[usize],
    config: &AttackConfig<S>,
) -> Result<AttackOutcome> {
    if config.iterations == 0 {
        return Err(Error::Domain("attack needs at least one iteration".into()));
    }
    let mut current = origin.clone();
    // The forward pass for the step-t gradient doubles as the prediction
    // pass for iterate t-1; the model caches belong to `current` throughout.
    let mut logits = model.forward(&current, Mode::Infer)?;
    let clean_predictions = argmax_batch(&logits);

    let mut predictions = Vec::with_capacity(config.iterations);
    let mut linf_per_iter = Vec::with_capacity(config.iterations);

    for _ in 0..config.iterations {
        let result = multiclass_log_loss(labels, &ClassMatrix::from_logits(&logits)?)?;
        let grad = model.backward(&result.error.to_tensor())?;
        current = pgd_step(&current, origin, &grad, config.alpha, config.epsilon)?;
        if let Some((lo, hi)) = config.clamp {
            for v in current.as_mut_slice() {
                *v = (*v).max(lo).min(hi);
            }
        }
        let linf = current
            .sub(origin)?
            .as_slice()
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs().as_f64()));
        linf_per_iter.push(linf);

        logits = model.forward(&current, Mode::Infer)?;
        predictions.push(argmax_batch(&logits));
    }

    Ok(AttackOutcome {
        clean_predictions,
        predictions,
        linf_per_iter,
    })
}

/// Robust-accuracy figures for one epsilon.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub epsilon: f64,
    pub iterations: usize,
    pub images: usize,
    /// Correct predictions at each iteration, summed over all images.
    pub per_iteration_correct: Vec<u64>,
    pub clean_correct: u64,
}

impl AttackReport {
    /// Sum of per-iteration counts over `images * iterations`.
    pub fn robust_accuracy(&self) -> f64 {
        let total: u64 = self.per_iteration_correct.iter().sum();
        total as f64 / (self.images as u64 * self.iterations as u64) as f64
    }

    pub fn clean_accuracy(&self) -> f64 {
        self.clean_correct as f64 / self.images as f64
    }

    /// Assemble a report from per-image correctness trajectories
    /// (`correct[image][iteration]`).
    pub fn from_trajectories(
        epsilon: f64,
        correct: &[Vec<bool>],
        clean: &[bool],
    ) -> Result<AttackReport> {
        if correct.is_empty() || correct.len() != clean.len() {
            return Err(Error::Domain(
                "need one trajectory and one clean flag per image".into(),
            ));
        }
        let iterations = correct[0].len();
        if iterations == 0 || correct.iter().any(|c| c.len() != iterations) {
            return Err(Error::Domain(
                "all trajectories must share one non-zero iteration count".into(),
            ));
        }
        let mut per_iteration_correct = vec![0u64; iterations];
        for trajectory in correct {
            for (t, &ok) in trajectory.iter().enumerate() {
                if ok {
                    per_iteration_correct[t] += 1;
                }
            }
        }
        Ok(AttackReport {
            epsilon,
            iterations,
            images: correct.len(),
            per_iteration_correct,
            clean_correct: clean.iter().filter(|&&c| c).count() as u64,
        })
    }
}

/// Attack every image of a labeled evaluation set (normalized, never
/// augmented) and count correct predictions at every iteration.
pub fn robust_accuracy<S: Scalar>(
    model: &mut Model<S>,
    dataset: &LabeledDataset<S>,
    norm: &AugmentConfig,
    config: &AttackConfig<S>,
    batch_size: usize,
) -> Result<AttackReport> {
    if dataset.is_empty() {
        return Err(Error::Domain("cannot attack an empty dataset".into()));
    }
    let n = dataset.len();
    let batch_size = batch_size.min(n).max(1);
    let (z, y, x) = dataset.image_dims();

    let mut per_iteration_correct = vec![0u64; config.iterations];
    let mut clean_correct = 0u64;

    let mut at = 0;
    while at < n {
        let take = batch_size.min(n - at);
        let shape = Shape::new(take, z, y, x)?;
        let mut values = Vec::with_capacity(shape.count());
        let mut labels = Vec::with_capacity(take);
        for i in at..at + take {
            values.extend_from_slice(normalize(&dataset.image(i)?, norm).as_slice());
            labels.push(dataset.labels()[i]);
        }
        let origin = Tensor::from_vec(shape, values)?;
        let outcome = pgd_attack(model, &origin, &labels, config)?;

        for (pred, &label) in outcome.clean_predictions.iter().zip(&labels) {
            if pred == &label {
                clean_correct += 1;
            }
        }
        for (t, preds) in outcome.predictions.iter().enumerate() {
            for (pred, &label) in preds.iter().zip(&labels) {
                if pred == &label {
                    per_iteration_correct[t] += 1;
                }
            }
        }
        at += take;
    }

    Ok(AttackReport {
        epsilon: config.epsilon.as_f64(),
        iterations: config.iterations,
        images: n,
        per_iteration_correct,
        clean_correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_dataset, Split};
    use crate::rng::Rng;

    #[test]
    fn alpha_rule_reference_value() {
        let config: AttackConfig<f64> = AttackConfig::for_epsilon(0.1);
        assert!((config.alpha - 0.1 * 0.01 / 0.3).abs() < 1e-18);
        assert!((config.alpha - 0.003333333333333334).abs() < 1e-15);
        assert_eq!(config.iterations, 40);
    }

    #[test]
    fn zero_budget_returns_origin() {
        let shape = Shape::new(1, 1, 2, 2).unwrap();
        let origin = Tensor::from_vec(shape, vec![0.1_f64, 0.2, 0.3, 0.4]).unwrap();
        let current = Tensor::from_vec(shape, vec![0.5_f64, 0.5, 0.5, 0.5]).unwrap();
        let grad = Tensor::filled(shape, 1.0);
        let next = pgd_step(&current, &origin, &grad, 0.0, 0.0).unwrap();
        assert_eq!(next, origin);
    }

    #[test]
    fn single_step_arithmetic() {
        let shape = Shape::new(1, 1, 1, 1).unwrap();
        let origin = Tensor::from_vec(shape, vec![0.5_f64]).unwrap();
        let grad = Tensor::from_vec(shape, vec![2.7]).unwrap();
        let alpha = 0.1 * 0.01 / 0.3;
        let next = pgd_step(&origin, &origin, &grad, alpha, 0.1).unwrap();
        assert!((next.as_slice()[0] - (0.5 + alpha)).abs() < 1e-15);
    }

    #[test]
    fn clip_saturates_when_steps_overshoot() {
        // 40 steps of eps/30 drift 4*eps/3; the clip must hold at eps.
        let shape = Shape::new(1, 1, 1, 3).unwrap();
        let origin = Tensor::from_vec(shape, vec![0.1_f64, -0.4, 0.25]).unwrap();
        let grad = Tensor::from_vec(shape, vec![1.0, -3.0, 0.5]).unwrap();
        let eps = 0.1;
        let alpha = eps / 30.0;
        let mut x = origin.clone();
        for _ in 0..40 {
            x = pgd_step(&x, &origin, &grad, alpha, eps).unwrap();
            for (v, o) in x.as_slice().iter().zip(origin.as_slice()) {
                assert!((v - o).abs() <= eps + 1e-7);
            }
        }
        // The positive-gradient pixel must have saturated.
        assert!((x.as_slice()[0] - (0.1 + eps)).abs() < 1e-12);
    }

    fn one_pixel_two_class_model(w0: f32, w1: f32) -> Model<f32> {
        let mut rng = Rng::new(1);
        let mut model: Model<f32> =
            Model::build("flatten,dense:2", (1, 1, 1), false, &mut rng).unwrap();
        model.visit_params(&mut |kind, values, _| {
            if kind == crate::layers::ParamKind::Weight {
                values[0] = w0;
                values[1] = w1;
            } else {
                values.fill(0.0);
            }
        });
        model
    }

    #[test]
    fn linear_model_gradient_sign_matches_closed_form() {
        // Logits (2x, 0). Loss at label 0 decreases in x, so the input
        // gradient is negative; at label 1 it is positive.
        let mut model = one_pixel_two_class_model(2.0, 0.0);
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 1).unwrap(), vec![0.3_f32]).unwrap();
        let g0 = input_gradient(&mut model, &x, &[0]).unwrap();
        assert!(g0.as_slice()[0] < 0.0, "label 0 gradient {}", g0.as_slice()[0]);
        let g1 = input_gradient(&mut model, &x, &[1]).unwrap();
        assert!(g1.as_slice()[0] > 0.0, "label 1 gradient {}", g1.as_slice()[0]);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        // No tensor normalization here: its backward is pass-through by
        // convention and would not match the true derivative of the forward.
        let mut rng = Rng::new(9);
        let mut model: Model<f64> =
            Model::build("conv:3:3,bn,relu,gap,dense:2", (1, 5, 5), false, &mut rng).unwrap();
        let shape = Shape::new(1, 1, 5, 5).unwrap();
        let values: Vec<f64> = (0..25).map(|_| rng.uniform01() - 0.5).collect();
        let x = Tensor::from_vec(shape, values).unwrap();
        let labels = [1usize];

        let analytic = input_gradient(&mut model, &x, &labels).unwrap();

        let step = 1e-6;
        for &pixel in &[0usize, 7, 12, 18, 24] {
            let mut up = x.clone();
            up.as_mut_slice()[pixel] += step;
            let mut down = x.clone();
            down.as_mut_slice()[pixel] -= step;
            let loss = |input: &Tensor<f64>, model: &mut Model<f64>| -> f64 {
                let logits = model.forward(input, Mode::Infer).unwrap();
                multiclass_log_loss(&labels, &ClassMatrix::from_logits(&logits).unwrap())
                    .unwrap()
                    .loss
            };
            let numeric = (loss(&up, &mut model) - loss(&down, &mut model)) / (2.0 * step);
            let a = analytic.as_slice()[pixel];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-4, "pixel {pixel}: analytic {a} vs numeric {numeric}");
        }
    }

    #[test]
    fn zero_weight_model_has_zero_gradient_and_static_attack() {
        let mut model = one_pixel_two_class_model(0.0, 0.0);
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 1).unwrap(), vec![0.3_f32]).unwrap();
        let g = input_gradient(&mut model, &x, &[0]).unwrap();
        assert_eq!(g.as_slice()[0], 0.0);

        // sign(0) = 0: the iterate never moves.
        let config = AttackConfig::for_epsilon(0.1);
        let outcome = pgd_attack(&mut model, &x, &[0], &config).unwrap();
        assert!(outcome.linf_per_iter.iter().all(|&d| d == 0.0));
        for preds in &outcome.predictions {
            assert_eq!(preds, &outcome.clean_predictions);
        }
    }

    #[test]
    fn rigged_model_gives_unit_or_zero_robust_accuracy() {
        let mut rng = Rng::new(13);
        let ds: LabeledDataset<f32> =
            synthetic_dataset(&mut rng, 2, 6, 2, 2, 0.0, Split::Validation).unwrap();
        // Bias strongly favors class 0 regardless of input.
        let mut model = {
            let mut m: Model<f32> =
                Model::build("flatten,dense:2", (1, 2, 2), false, &mut rng).unwrap();
            m.visit_params(&mut |kind, values, _| {
                if kind == crate::layers::ParamKind::Bias {
                    values[0] = 10.0;
                    values[1] = -10.0;
                } else {
                    values.fill(0.0);
                }
            });
            m
        };
        let config = AttackConfig::for_epsilon(0.1);
        let report =
            robust_accuracy(&mut model, &ds, &AugmentConfig::default(), &config, 4).unwrap();
        // Labels alternate 0 and 1, so an always-0 stub is right half the time.
        assert!((report.robust_accuracy() - 0.5).abs() < 1e-12);

        // Make every prediction wrong: bias favors class 1, all labels are 0.
        let all_zero: Vec<usize> = vec![0; ds.len()];
        let images = ds.images().clone();
        let ds0 = LabeledDataset::new(images, all_zero, 2, Split::Validation).unwrap();
        model.visit_params(&mut |kind, values, _| {
            if kind == crate::layers::ParamKind::Bias {
                values[0] = -10.0;
                values[1] = 10.0;
            } else {
                values.fill(0.0);
            }
        });
        let report =
            robust_accuracy(&mut model, &ds0, &AugmentConfig::default(), &config, 4).unwrap();
        assert_eq!(report.robust_accuracy(), 0.0);

        // And always right.
        model.visit_params(&mut |kind, values, _| {
            if kind == crate::layers::ParamKind::Bias {
                values[0] = 10.0;
                values[1] = -10.0;
            } else {
                values.fill(0.0);
            }
        });
        let report =
            robust_accuracy(&mut model, &ds0, &AugmentConfig::default(), &config, 4).unwrap();
        assert_eq!(report.robust_accuracy(), 1.0);
    }

    #[test]
    fn three_image_counting_oracle() {
        // Image A correct at 40/40 iterations, B at 20/40, C at 0/40:
        // robust accuracy is exactly (40 + 20 + 0) / 120 = 0.5.
        let a = vec![true; 40];
        let mut b = vec![true; 20];
        b.extend(vec![false; 20]);
        let c = vec![false; 40];
        let report =
            AttackReport::from_trajectories(0.1, &[a, b, c], &[true, true, false]).unwrap();
        assert_eq!(report.robust_accuracy(), 0.5);
        assert_eq!(report.images, 3);
        assert_eq!(report.iterations, 40);
        let total: u64 = report.per_iteration_correct.iter().sum();
        assert_eq!(total, 60);
    }

    #[test]
    fn zero_epsilon_robust_equals_clean_exactly() {
        let mut rng = Rng::new(21);
        let ds: LabeledDataset<f32> =
            synthetic_dataset(&mut rng, 2, 8, 4, 4, 10.0, Split::Validation).unwrap();
        let mut model: Model<f32> =
            Model::build("conv:3:3,bn,relu,gap,dense:2", (1, 4, 4), false, &mut rng).unwrap();
        let config = AttackConfig::for_epsilon(0.0);
        let report =
            robust_accuracy(&mut model, &ds, &AugmentConfig::default(), &config, 4).unwrap();
        assert_eq!(report.robust_accuracy(), report.clean_accuracy());
        for &count in &report.per_iteration_correct {
            assert_eq!(count, report.clean_correct);
        }
    }

    #[test]
    fn perturbation_budget_holds_for_all_epsilons() {
        let mut rng = Rng::new(23);
        let mut model: Model<f32> =
            Model::build("conv:3:3,bn,relu,gap,dense:2", (1, 4, 4), true, &mut rng).unwrap();
        let shape = Shape::new(2, 1, 4, 4).unwrap();
        let values: Vec<f32> = (0..shape.count()).map(|_| rng.uniform01() as f32 - 0.5).collect();
        let origin = Tensor::from_vec(shape, values).unwrap();
        for &eps in &[1e-1, 1e-2, 1e-3, 1e-4] {
            let config = AttackConfig::for_epsilon(eps);
            let outcome = pgd_attack(&mut model, &origin, &[0, 1], &config).unwrap();
            for (t, &linf) in outcome.linf_per_iter.iter().enumerate() {
                assert!(
                    linf <= eps + 1e-7,
                    "eps {eps}: perturbation {linf} at iteration {t}"
                );
            }
        }
    }

    #[test]
    fn domain_clamp_bounds_the_iterate() {
        let mut rng = Rng::new(29);
        let mut model: Model<f32> =
            Model::build("flatten,dense:2", (1, 2, 2), false, &mut rng).unwrap();
        let shape = Shape::new(1, 1, 2, 2).unwrap();
        let origin = Tensor::from_vec(shape, vec![0.99_f32, 0.01, 0.5, 0.5]).unwrap();
        let mut config = AttackConfig::for_epsilon(0.1);
        config.clamp = Some((0.0, 1.0));
        let outcome = pgd_attack(&mut model, &origin, &[0], &config).unwrap();
        assert!(outcome.linf_per_iter.iter().all(|&d| d <= 0.1 + 1e-7));
    }
}
