//! Fully connected classifier head.

use crate::error::{Error, Result};
use crate::layers::he_init;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Linear layer on (n, features, 1, 1) tensors; weights are (out, in) row-major.
#[derive(Debug, Clone)]
pub struct DenseLayer<S: Scalar> {
    pub in_features: usize,
    pub out_features: usize,
    pub weights: Vec<S>,
    pub bias: Vec<S>,
    pub grad_weights: Vec<S>,
    pub grad_bias: Vec<S>,
    cache: Option<Tensor<S>>,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Result<Self> {
        if out_features == 0 {
            return Err(Error::Domain("dense layer needs out_features >= 1".into()));
        }
        let mut weights = vec![S::zero(); in_features * out_features];
        he_init(&mut weights, in_features, rng)?;
        Ok(DenseLayer {
            in_features,
            out_features,
            weights,
            bias: vec![S::zero(); out_features],
            grad_weights: vec![S::zero(); in_features * out_features],
            grad_bias: vec![S::zero(); out_features],
            cache: None,
        })
    }

    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        if input.z != self.in_features || input.y != 1 || input.x != 1 {
            return Err(Error::Shape(format!(
                "dense expects (n, {}, 1, 1), got {input}",
                self.in_features
            )));
        }
        Shape::new(input.n, self.out_features, 1, 1)
    }

    pub fn forward(&mut self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let out_shape = self.out_shape(input.shape())?;
        let batch = input.shape().n;
        let mut out = Tensor::zeros(out_shape);
        for n in 0..batch {
            let xrow = &input.as_slice()[n * self.in_features..(n + 1) * self.in_features];
            let orow = &mut out.as_mut_slice()[n * self.out_features..(n + 1) * self.out_features];
            for (o, val) in orow.iter_mut().enumerate() {
                let wrow = &self.weights[o * self.in_features..(o + 1) * self.in_features];
                let mut acc = self.bias[o];
                for (&w, &x) in wrow.iter().zip(xrow) {
                    acc = acc + w * x;
                }
                *val = acc;
            }
        }
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor<S>) -> Result<Tensor<S>> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("dense backward without forward cache".into()))?;
        let out_shape = self.out_shape(input.shape())?;
        if upstream.shape() != out_shape {
            return Err(Error::Shape(format!(
                "dense backward: upstream {} does not match output {}",
                upstream.shape(),
                out_shape
            )));
        }

        self.grad_weights.fill(S::zero());
        self.grad_bias.fill(S::zero());
        let mut down = Tensor::zeros(input.shape());
        let batch = input.shape().n;

        for n in 0..batch {
            let xrow = &input.as_slice()[n * self.in_features..(n + 1) * self.in_features];
            let urow = &upstream.as_slice()[n * self.out_features..(n + 1) * self.out_features];
            let drow = &mut down.as_mut_slice()[n * self.in_features..(n + 1) * self.in_features];
            for (o, &u) in urow.iter().enumerate() {
                self.grad_bias[o] = self.grad_bias[o] + u;
                let wrow = &self.weights[o * self.in_features..(o + 1) * self.in_features];
                let gwrow =
                    &mut self.grad_weights[o * self.in_features..(o + 1) * self.in_features];
                for i in 0..self.in_features {
                    gwrow[i] = gwrow[i] + u * xrow[i];
                    drow[i] = drow[i] + u * wrow[i];
                }
            }
        }
        Ok(down)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_chain_rule_single_unit() {
        // One input, one output, w = 2: upstream g gives input grad 2g and
        // weight grad g * input.
        let mut rng = Rng::new(1);
        let mut dense: DenseLayer<f64> = DenseLayer::new(1, 1, &mut rng).unwrap();
        dense.weights[0] = 2.0;
        dense.bias[0] = 0.0;

        let shape = Shape::new(1, 1, 1, 1).unwrap();
        let input = Tensor::from_vec(shape, vec![3.0]).unwrap();
        let out = dense.forward(&input).unwrap();
        assert_eq!(out.as_slice(), &[6.0]);

        let g = 0.7;
        let up = Tensor::from_vec(shape, vec![g]).unwrap();
        let down = dense.backward(&up).unwrap();
        assert_eq!(down.as_slice(), &[2.0 * g]);
        assert_eq!(dense.grad_weights, vec![g * 3.0]);
        assert_eq!(dense.grad_bias, vec![g]);
    }

    #[test]
    fn forward_matches_hand_matvec() {
        let mut rng = Rng::new(2);
        let mut dense: DenseLayer<f64> = DenseLayer::new(3, 2, &mut rng).unwrap();
        dense.weights = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        dense.bias = vec![0.5, -0.5];
        let input =
            Tensor::from_vec(Shape::new(2, 3, 1, 1).unwrap(), vec![1.0, 1.0, 1.0, 0.0, 1.0, 2.0])
                .unwrap();
        let out = dense.forward(&input).unwrap();
        assert_eq!(out.as_slice(), &[6.5, 14.5, 8.5, 16.5]);
    }

    #[test]
    fn rejects_flat_shape_mismatch() {
        let mut rng = Rng::new(3);
        let mut dense: DenseLayer<f32> = DenseLayer::new(4, 2, &mut rng).unwrap();
        let input = Tensor::zeros(Shape::new(1, 2, 2, 1).unwrap());
        assert!(matches!(dense.forward(&input), Err(Error::Shape(_))));
    }
}
