//! Softmax transform and the multi-class / multi-label log losses.
//!
//! Both losses return the scalar loss together with the error matrix that is
//! back-propagated. For the multi-label loss the error at a supported entry
//! is `scale * (softmax - target)` and the scalar loss is the unweighted
//! `-log softmax` over supported entries; the scalar is a monitoring
//! quantity and is deliberately not the antiderivative of the error (see
//! the gradient checks in `gradcheck`).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Default support threshold for the multi-label loss. The smallest harmonic
/// factor at 100 classes is about 1.9e-3, four orders of magnitude above.
pub const SUPPORT_EPS: f64 = 1e-6;

/// Classes x batch matrix with contiguous per-sample columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMatrix<S: Scalar> {
    classes: usize,
    batch: usize,
    values: Vec<S>,
}

impl<S: Scalar> ClassMatrix<S> {
    pub fn zeros(classes: usize, batch: usize) -> Self {
        ClassMatrix {
            classes,
            batch,
            values: vec![S::zero(); classes * batch],
        }
    }

    /// Build from column-major values (column b occupies `b*classes ..`).
    pub fn from_vec(classes: usize, batch: usize, values: Vec<S>) -> Result<Self> {
        if values.len() != classes * batch {
            return Err(Error::Shape(format!(
                "class matrix needs {} values, got {}",
                classes * batch,
                values.len()
            )));
        }
        Ok(ClassMatrix {
            classes,
            batch,
            values,
        })
    }

    /// Reinterpret model logits of shape (batch, classes, 1, 1).
    pub fn from_logits(logits: &Tensor<S>) -> Result<Self> {
        let shape = logits.shape();
        if shape.y != 1 || shape.x != 1 {
            return Err(Error::Shape(format!(
                "logit tensor must be (n, classes, 1, 1), got {shape}"
            )));
        }
        Ok(ClassMatrix {
            classes: shape.z,
            batch: shape.n,
            values: logits.as_slice().to_vec(),
        })
    }

    /// Back to a (batch, classes, 1, 1) tensor for model backpropagation.
    pub fn to_tensor(&self) -> Tensor<S> {
        Tensor::from_vec(
            Shape::new(self.batch, self.classes, 1, 1).expect("valid shape"),
            self.values.clone(),
        )
        .expect("consistent buffer")
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    #[inline]
    pub fn get(&self, class: usize, b: usize) -> S {
        self.values[b * self.classes + class]
    }

    #[inline]
    pub fn set(&mut self, class: usize, b: usize, v: S) {
        self.values[b * self.classes + class] = v;
    }

    pub fn column(&self, b: usize) -> &[S] {
        &self.values[b * self.classes..(b + 1) * self.classes]
    }

    pub fn column_mut(&mut self, b: usize) -> &mut [S] {
        &mut self.values[b * self.classes..(b + 1) * self.classes]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    /// Column of the largest entry per sample.
    pub fn argmax_column(&self, b: usize) -> usize {
        let col = self.column(b);
        let mut best = 0;
        for (i, &v) in col.iter().enumerate() {
            if v > col[best] {
                best = i;
            }
        }
        best
    }
}

/// Scalar loss plus the back-propagated error matrix.
#[derive(Debug, Clone)]
pub struct LossResult<S: Scalar> {
    pub loss: S,
    pub error: ClassMatrix<S>,
}

/// Per-column softmax with max subtraction for stability.
pub fn softmax<S: Scalar>(predictions: &ClassMatrix<S>) -> ClassMatrix<S> {
    let mut out = predictions.clone();
    for b in 0..predictions.batch() {
        softmax_column(out.column_mut(b));
    }
    out
}

fn softmax_column<S: Scalar>(col: &mut [S]) {
    let mut max = col[0];
    for &v in col.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = S::zero();
    for v in col.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in col.iter_mut() {
        *v = *v / sum;
    }
}

/// Stable per-entry log of the softmax: p - max - ln(sum exp(p - max)).
fn log_softmax_column<S: Scalar>(col: &[S], out: &mut [S]) {
    let mut max = col[0];
    for &v in col.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = S::zero();
    for &v in col.iter() {
        sum = sum + (v - max).exp();
    }
    let log_sum = sum.ln();
    for (o, &v) in out.iter_mut().zip(col) {
        *o = v - max - log_sum;
    }
}

/// Cross-entropy against one integer label per column.
///
/// Loss: `(1/B) * sum_b -log softmax(P)[label_b]`. Error column b:
/// `(1/B) * (softmax(P) - one_hot(label_b))`.
pub fn multiclass_log_loss<S: Scalar>(
    labels: &[usize],
    predictions: &ClassMatrix<S>,
) -> Result<LossResult<S>> {
    let (classes, batch) = (predictions.classes(), predictions.batch());
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "got {} labels for batch {batch}",
            labels.len()
        )));
    }
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Domain(format!(
                "label {label} of sample {b} outside [0, {classes})"
            )));
        }
    }

    let scale = S::one() / S::from_f64(batch as f64);
    let mut error = softmax(predictions);
    let mut log_probs = vec![S::zero(); classes];
    let mut loss = S::zero();

    for (b, &label) in labels.iter().enumerate() {
        log_softmax_column(predictions.column(b), &mut log_probs);
        loss = loss + scale * -log_probs[label];
        let col = error.column_mut(b);
        for (y, v) in col.iter_mut().enumerate() {
            if y == label {
                *v = scale * (*v - S::one());
            } else {
                *v = scale * *v;
            }
        }
    }
    Ok(LossResult { loss, error })
}

fn gt_column_tolerance<S: Scalar>() -> f64 {
    if S::BYTE_WIDTH == 4 {
        1e-5
    } else {
        1e-9
    }
}

/// Cross-entropy against a per-column class distribution.
///
/// Entries with `target > eps` are "supported": they contribute
/// `-log softmax` to the scalar loss and `scale * (softmax - target)` to the
/// error. All other entries contribute only `scale * softmax` to the error.
/// With one-hot targets this reduces exactly to [`multiclass_log_loss`].
pub fn multilabel_log_loss<S: Scalar>(
    targets: &ClassMatrix<S>,
    predictions: &ClassMatrix<S>,
    eps: S,
) -> Result<LossResult<S>> {
    let (classes, batch) = (predictions.classes(), predictions.batch());
    if targets.classes() != classes || targets.batch() != batch {
        return Err(Error::Shape(format!(
            "targets are {}x{}, predictions are {classes}x{batch}",
            targets.classes(),
            targets.batch()
        )));
    }
    let tol = S::from_f64(gt_column_tolerance::<S>());
    for b in 0..batch {
        let mut sum = S::zero();
        for &v in targets.column(b) {
            if v < -tol || v > S::one() + tol {
                return Err(Error::Domain(format!(
                    "target entry {v} of column {b} outside [0, 1]"
                )));
            }
            sum = sum + v;
        }
        if (sum - S::one()).abs() > tol {
            return Err(Error::Domain(format!(
                "target column {b} sums to {sum}, expected 1"
            )));
        }
    }

    let scale = S::one() / S::from_f64(batch as f64);
    let mut error = softmax(predictions);
    let mut log_probs = vec![S::zero(); classes];
    let mut loss = S::zero();

    for b in 0..batch {
        log_softmax_column(predictions.column(b), &mut log_probs);
        let col = error.column_mut(b);
        for y in 0..classes {
            let target = targets.get(y, b);
            if target > eps {
                loss = loss + scale * -log_probs[y];
                col[y] = scale * (col[y] - target);
            } else {
                col[y] = scale * col[y];
            }
        }
    }
    Ok(LossResult { loss, error })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(classes: usize, batch: usize, v: &[f64]) -> ClassMatrix<f64> {
        ClassMatrix::from_vec(classes, batch, v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_symmetric_column() {
        let p = matrix(2, 1, &[0.0, 0.0]);
        let s = softmax(&p);
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_log3_column() {
        let p = matrix(2, 1, &[3.0_f64.ln(), 0.0]);
        let s = softmax(&p);
        assert!((s.get(0, 0) - 0.75).abs() < 1e-12);
        assert!((s.get(1, 0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_huge_logit_is_stable() {
        let p = ClassMatrix::from_vec(2, 1, vec![1000.0_f32, 0.0]).unwrap();
        let s = softmax(&p);
        assert!(s.get(0, 0).is_finite());
        assert!((s.get(0, 0) - 1.0).abs() < 1e-6);
        assert!(s.get(1, 0).abs() < 1e-6);
    }

    #[test]
    fn softmax_columns_sum_to_one() {
        let p = matrix(4, 3, &[0.3, -2.0, 5.0, 1.0, 0.0, 0.1, -0.1, 2.2, 9.0, -9.0, 3.0, 0.5]);
        let s = softmax(&p);
        for b in 0..3 {
            let sum: f64 = s.column(b).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let p = matrix(3, 2, &[0.5, -1.0, 2.0, 0.0, 4.0, -3.0]);
        let shifted = matrix(3, 2, &[10.5, 9.0, 12.0, 10.0, 14.0, 7.0]);
        let a = softmax(&p);
        let b = softmax(&shifted);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn multiclass_hand_trace() {
        // B=1, P=[0,0], label 0: loss = ln 2, error = [-0.5, +0.5].
        let p = matrix(2, 1, &[0.0, 0.0]);
        let r = multiclass_log_loss(&[0], &p).unwrap();
        assert!((r.loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((r.error.get(0, 0) + 0.5).abs() < 1e-12);
        assert!((r.error.get(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn multiclass_perfect_prediction() {
        // Softmax of [1000, -1000] is exactly 1 at the label in floats.
        let p = matrix(2, 1, &[1000.0, -1000.0]);
        let r = multiclass_log_loss(&[0], &p).unwrap();
        assert_eq!(r.loss, 0.0);
        assert_eq!(r.error.get(0, 0), 0.0);
        assert_eq!(r.error.get(1, 0), 0.0);
    }

    #[test]
    fn multiclass_batch_mean_of_duplicates() {
        let single = multiclass_log_loss(&[1], &matrix(3, 1, &[0.2, 1.0, -0.5])).unwrap();
        let double = multiclass_log_loss(
            &[1, 1],
            &matrix(3, 2, &[0.2, 1.0, -0.5, 0.2, 1.0, -0.5]),
        )
        .unwrap();
        assert!((single.loss - double.loss).abs() < 1e-12);
        // Error halves per column because of the 1/B scale.
        assert!((double.error.get(1, 0) - single.error.get(1, 0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn multiclass_out_of_range_label() {
        let p = matrix(2, 1, &[0.0, 0.0]);
        assert!(matches!(
            multiclass_log_loss(&[2], &p),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn multiclass_error_columns_sum_to_zero() {
        let p = matrix(4, 2, &[0.3, -1.0, 2.0, 0.7, -0.2, 0.0, 1.5, -3.0]);
        let r = multiclass_log_loss(&[2, 0], &p).unwrap();
        for b in 0..2 {
            let sum: f64 = r.error.column(b).iter().sum();
            assert!(sum.abs() < 1e-6, "column {b} sums to {sum}");
        }
    }

    #[test]
    fn multilabel_one_hot_reduces_to_multiclass_bitwise() {
        let p = matrix(3, 2, &[0.2, 1.0, -0.5, 2.0, -1.0, 0.3]);
        let labels = [1usize, 0];
        let mut onehot = ClassMatrix::zeros(3, 2);
        for (b, &l) in labels.iter().enumerate() {
            onehot.set(l, b, 1.0);
        }
        let mc = multiclass_log_loss(&labels, &p).unwrap();
        let ml = multilabel_log_loss(&onehot, &p, SUPPORT_EPS).unwrap();
        assert_eq!(mc.loss, ml.loss);
        assert_eq!(mc.error.as_slice(), ml.error.as_slice());
    }

    #[test]
    fn multilabel_hand_trace_uniform_prediction() {
        // GT = [2/3, 1/3], softmax(P) = [0.5, 0.5]:
        // loss = 2 ln 2, error = [-1/6, +1/6].
        let p = matrix(2, 1, &[0.0, 0.0]);
        let gt = matrix(2, 1, &[2.0 / 3.0, 1.0 / 3.0]);
        let r = multilabel_log_loss(&gt, &p, SUPPORT_EPS).unwrap();
        assert!((r.loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((r.error.get(0, 0) + 1.0 / 6.0).abs() < 1e-12);
        assert!((r.error.get(1, 0) - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn multilabel_error_vanishes_at_target_loss_does_not() {
        // softmax(P) = GT = [2/3, 1/3]: error 0, loss = -ln(2/3) - ln(1/3).
        let p = matrix(2, 1, &[(2.0_f64).ln(), 0.0]); // softmax = [2/3, 1/3]
        let gt = matrix(2, 1, &[2.0 / 3.0, 1.0 / 3.0]);
        let r = multilabel_log_loss(&gt, &p, SUPPORT_EPS).unwrap();
        assert!(r.error.get(0, 0).abs() < 1e-12);
        assert!(r.error.get(1, 0).abs() < 1e-12);
        let expected = -(2.0_f64 / 3.0).ln() - (1.0_f64 / 3.0).ln();
        assert!((r.loss - expected).abs() < 1e-12, "loss {}", r.loss);
    }

    #[test]
    fn multilabel_rejects_non_distribution() {
        let p = matrix(2, 1, &[0.0, 0.0]);
        let bad_sum = matrix(2, 1, &[0.9, 0.3]);
        assert!(matches!(
            multilabel_log_loss(&bad_sum, &p, SUPPORT_EPS),
            Err(Error::Domain(_))
        ));
        let bad_entry = matrix(2, 1, &[1.5, -0.5]);
        assert!(matches!(
            multilabel_log_loss(&bad_entry, &p, SUPPORT_EPS),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn multilabel_error_columns_sum_to_zero() {
        let p = matrix(3, 1, &[0.4, -0.3, 1.2]);
        let gt = matrix(3, 1, &[6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]);
        let r = multilabel_log_loss(&gt, &p, SUPPORT_EPS).unwrap();
        let sum: f64 = r.error.column(0).iter().sum();
        assert!(sum.abs() < 1e-6);
    }

    #[test]
    fn multilabel_error_is_softmax_minus_target_on_support() {
        let p = matrix(3, 1, &[0.4, -0.3, 1.2]);
        let gt = matrix(3, 1, &[0.5, 0.5, 0.0]);
        let s = softmax(&p);
        let r = multilabel_log_loss(&gt, &p, SUPPORT_EPS).unwrap();
        for y in 0..2 {
            let expected = s.get(y, 0) - gt.get(y, 0);
            assert!((r.error.get(y, 0) - expected).abs() < 1e-12);
        }
        // Unsupported entry keeps its raw probability as error.
        assert!((r.error.get(2, 0) - s.get(2, 0)).abs() < 1e-12);
    }
}
