//! Tensor normalization: per-pixel channel-mean subtraction.
//!
//! At every spatial position of a post-rectifier activation tensor the mean
//! across channels is computed and subtracted, independently for each sample
//! in the batch. The layer has no parameters. Its backward pass hands the
//! upstream error through unchanged: the mean is treated as a constant, not
//! differentiated. The exact-Jacobian variant (subtracting the channel mean
//! of the upstream error as well) is available behind a switch for ablation
//! and is off by default.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Per-pixel channel mean: output shape (n, 1, y, x).
pub fn tn_mean<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let shape = input.shape();
    let plane = shape.plane_stride();
    let inv_z = S::one() / S::from_f64(shape.z as f64);
    let mut out = Tensor::zeros(Shape::new(shape.n, 1, shape.y, shape.x).expect("valid shape"));
    for n in 0..shape.n {
        let sample = &input.as_slice()[n * shape.sample_stride()..(n + 1) * shape.sample_stride()];
        let acc = &mut out.as_mut_slice()[n * plane..(n + 1) * plane];
        for z in 0..shape.z {
            let src = &sample[z * plane..(z + 1) * plane];
            for (a, &v) in acc.iter_mut().zip(src) {
                *a = *a + v;
            }
        }
        for a in acc.iter_mut() {
            *a = *a * inv_z;
        }
    }
    out
}

/// Subtract the per-pixel channel mean from every channel.
fn subtract_mean<S: Scalar>(input: &Tensor<S>, mean: &Tensor<S>) -> Tensor<S> {
    let shape = input.shape();
    let plane = shape.plane_stride();
    let mut out = input.clone();
    for n in 0..shape.n {
        let m = &mean.as_slice()[n * plane..(n + 1) * plane];
        let sample =
            &mut out.as_mut_slice()[n * shape.sample_stride()..(n + 1) * shape.sample_stride()];
        for z in 0..shape.z {
            let dst = &mut sample[z * plane..(z + 1) * plane];
            for (d, &mv) in dst.iter_mut().zip(m) {
                *d = *d - mv;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TensorNormLayer<S: Scalar> {
    /// When set, backward applies the true Jacobian of mean subtraction
    /// instead of the default pass-through convention.
    pub exact_jacobian: bool,
    cache: Option<Shape>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> TensorNormLayer<S> {
    pub fn new() -> Self {
        TensorNormLayer {
            exact_jacobian: false,
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn with_exact_jacobian() -> Self {
        TensorNormLayer {
            exact_jacobian: true,
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, input: &Tensor<S>) -> Tensor<S> {
        let mean = tn_mean(input);
        self.cache = Some(input.shape());
        subtract_mean(input, &mean)
    }

    pub fn backward(&mut self, upstream: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = self
            .cache
            .ok_or_else(|| Error::Usage("tn backward without forward cache".into()))?;
        if upstream.shape() != shape {
            return Err(Error::Shape(format!(
                "tn backward: upstream {} vs forward shape {}",
                upstream.shape(),
                shape
            )));
        }
        if self.exact_jacobian {
            let mean = tn_mean(upstream);
            Ok(subtract_mean(upstream, &mean))
        } else {
            Ok(upstream.clone())
        }
    }
}

impl<S: Scalar> Default for TensorNormLayer<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Rectifier and tensor normalization in one pass over the buffer,
/// bit-equivalent to `relu` followed by the normalization.
pub fn relu_tn_fused<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let mut rectified = input.clone();
    for v in rectified.as_mut_slice() {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
    let mean = tn_mean(&rectified);
    subtract_mean(&rectified, &mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        let values = (0..shape.count())
            .map(|_| rng.uniform01() * 4.0 - 2.0)
            .collect();
        Tensor::from_vec(shape, values).unwrap()
    }

    #[test]
    fn mean_of_constant_tensor() {
        let input = Tensor::filled(Shape::new(2, 3, 2, 2).unwrap(), 5.5_f64);
        let mean = tn_mean(&input);
        assert_eq!(mean.shape(), Shape::new(2, 1, 2, 2).unwrap());
        assert!(mean.as_slice().iter().all(|&v| v == 5.5));
    }

    #[test]
    fn mean_hand_evaluation() {
        // One pixel with channel values [0, 2, 4] has mean 2.
        let shape = Shape::new(1, 3, 1, 1).unwrap();
        let input = Tensor::from_vec(shape, vec![0.0_f64, 2.0, 4.0]).unwrap();
        let mean = tn_mean(&input);
        assert_eq!(mean.as_slice(), &[2.0]);
    }

    #[test]
    fn mean_single_channel_identity() {
        let input = random_tensor(Shape::new(1, 1, 3, 3).unwrap(), 2);
        let mean = tn_mean(&input);
        assert_eq!(mean.as_slice(), input.as_slice());
    }

    #[test]
    fn forward_annihilates_constants() {
        let input = Tensor::filled(Shape::new(1, 4, 3, 3).unwrap(), -2.5_f32);
        let mut tn = TensorNormLayer::new();
        let out = tn.forward(&input);
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_hand_evaluation() {
        let shape = Shape::new(1, 3, 1, 1).unwrap();
        let input = Tensor::from_vec(shape, vec![0.0_f64, 2.0, 4.0]).unwrap();
        let mut tn = TensorNormLayer::new();
        let out = tn.forward(&input);
        assert_eq!(out.as_slice(), &[-2.0, 0.0, 2.0]);
    }

    #[test]
    fn forward_single_channel_zeroes() {
        let input = random_tensor(Shape::new(2, 1, 2, 2).unwrap(), 3);
        let mut tn = TensorNormLayer::new();
        let out = tn.forward(&input);
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_is_identity_bitwise() {
        let shape = Shape::new(2, 3, 4, 4).unwrap();
        let input = random_tensor(shape, 4);
        let mut tn = TensorNormLayer::new();
        tn.forward(&input);
        let upstream = random_tensor(shape, 5);
        let down = tn.backward(&upstream).unwrap();
        assert_eq!(down, upstream);

        let zeros = Tensor::zeros(shape);
        let down = tn.backward(&zeros).unwrap();
        assert_eq!(down, zeros);
    }

    #[test]
    fn backward_shape_mismatch_rejected() {
        let mut tn: TensorNormLayer<f64> = TensorNormLayer::new();
        tn.forward(&Tensor::zeros(Shape::new(1, 2, 2, 2).unwrap()));
        let bad = Tensor::zeros(Shape::new(1, 2, 2, 3).unwrap());
        assert!(matches!(tn.backward(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn exact_jacobian_variant_centers_upstream() {
        let shape = Shape::new(1, 2, 1, 1).unwrap();
        let input = random_tensor(shape, 6);
        let mut tn = TensorNormLayer::with_exact_jacobian();
        tn.forward(&input);
        let upstream = Tensor::from_vec(shape, vec![3.0, 1.0]).unwrap();
        let down = tn.backward(&upstream).unwrap();
        assert_eq!(down.as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn output_channel_mean_is_zero() {
        let shape = Shape::new(2, 7, 5, 5).unwrap();
        let input = random_tensor(shape, 7);
        let mut tn = TensorNormLayer::new();
        let out = tn.forward(&input);
        for n in 0..shape.n {
            for y in 0..shape.y {
                for x in 0..shape.x {
                    let sum: f64 = (0..shape.z).map(|z| out.get(n, z, y, x)).sum();
                    assert!(
                        (sum / shape.z as f64).abs() < 1e-12,
                        "channel mean at ({n},{y},{x}) is {}",
                        sum / shape.z as f64
                    );
                }
            }
        }
    }

    #[test]
    fn per_pixel_l2_norm_does_not_increase() {
        let shape = Shape::new(3, 5, 4, 4).unwrap();
        let input = random_tensor(shape, 8);
        let mut tn = TensorNormLayer::new();
        let out = tn.forward(&input);
        for n in 0..shape.n {
            for y in 0..shape.y {
                for x in 0..shape.x {
                    let before: f64 = (0..shape.z).map(|z| input.get(n, z, y, x).powi(2)).sum();
                    let after: f64 = (0..shape.z).map(|z| out.get(n, z, y, x).powi(2)).sum();
                    assert!(
                        after.sqrt() <= before.sqrt() + 1e-12,
                        "norm grew at ({n},{y},{x}): {} -> {}",
                        before.sqrt(),
                        after.sqrt()
                    );
                }
            }
        }
    }

    #[test]
    fn idempotent_within_tolerance() {
        let shape = Shape::new(1, 6, 3, 3).unwrap();
        let input = random_tensor(shape, 9);
        let mut tn = TensorNormLayer::new();
        let once = tn.forward(&input);
        let twice = tn.forward(&once);
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn fused_relu_tn_is_bit_equal_to_two_step() {
        let shape = Shape::new(2, 4, 3, 5).unwrap();
        let input = random_tensor(shape, 10);

        let mut relu = crate::layers::ReluLayer::new();
        let mut tn = TensorNormLayer::new();
        let two_step = tn.forward(&relu.forward(&input));

        let fused = relu_tn_fused(&input);
        assert_eq!(fused, two_step);
    }
}
