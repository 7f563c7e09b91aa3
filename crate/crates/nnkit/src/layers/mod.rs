//! Forward and backward passes for every layer the experiments need.
//!
//! Layers own their parameters, gradient accumulators and the forward cache
//! consumed by the matching backward call. A cache is valid only for the most
//! recent forward; calling backward without one is a usage error.

mod batchnorm;
mod conv;
mod dense;
mod pool;
mod residual;
mod tn;

pub use batchnorm::BatchNormLayer;
pub use conv::ConvLayer;
pub use dense::DenseLayer;
pub use pool::{residual_add, FlattenLayer, GlobalAvgPoolLayer, MaxPoolLayer};
pub use residual::ResidualBlock;
pub use tn::{relu_tn_fused, tn_mean, TensorNormLayer};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Whether batch statistics are live (training) or frozen (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Classifies parameters so the optimizer can exclude biases and
/// batch-norm scale/shift from weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

/// Fill `values` with He-initialized weights: normal(0, sqrt(2 / fan_in)).
pub fn he_init<S: Scalar>(values: &mut [S], fan_in: usize, rng: &mut Rng) -> Result<()> {
    if fan_in == 0 {
        return Err(Error::Domain("he_init requires fan_in >= 1".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    for v in values.iter_mut() {
        *v = S::from_f64(rng.normal01() * std);
    }
    Ok(())
}

/// Rectifier with cached mask for the backward pass.
#[derive(Debug, Clone)]
pub struct ReluLayer<S: Scalar> {
    cache: Option<Tensor<S>>,
}

impl<S: Scalar> ReluLayer<S> {
    pub fn new() -> Self {
        ReluLayer { cache: None }
    }

    pub fn forward(&mut self, input: &Tensor<S>) -> Tensor<S> {
        let mut out = input.clone();
        for v in out.as_mut_slice() {
            if *v < S::zero() {
                *v = S::zero();
            }
        }
        self.cache = Some(input.clone());
        out
    }

    pub fn backward(&mut self, upstream: &Tensor<S>) -> Result<Tensor<S>> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("relu backward without forward cache".into()))?;
        if input.shape() != upstream.shape() {
            return Err(Error::Shape(format!(
                "relu backward: upstream {} vs cached input {}",
                upstream.shape(),
                input.shape()
            )));
        }
        let mut down = upstream.clone();
        for (d, &x) in down.as_mut_slice().iter_mut().zip(input.as_slice()) {
            if x <= S::zero() {
                *d = S::zero();
            }
        }
        Ok(down)
    }
}

impl<S: Scalar> Default for ReluLayer<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// One layer of a model; dispatches forward/backward by kind.
#[derive(Debug, Clone)]
pub enum Layer<S: Scalar> {
    Conv(ConvLayer<S>),
    Dense(DenseLayer<S>),
    BatchNorm(BatchNormLayer<S>),
    Relu(ReluLayer<S>),
    TensorNorm(TensorNormLayer<S>),
    MaxPool(MaxPoolLayer<S>),
    GlobalAvgPool(GlobalAvgPoolLayer<S>),
    Flatten(FlattenLayer<S>),
    Residual(ResidualBlock<S>),
}

impl<S: Scalar> Layer<S> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Dense(_) => "dense",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu(_) => "relu",
            Layer::TensorNorm(_) => "tn",
            Layer::MaxPool(_) => "maxpool",
            Layer::GlobalAvgPool(_) => "gap",
            Layer::Flatten(_) => "flatten",
            Layer::Residual(_) => "residual",
        }
    }

    pub fn forward(&mut self, input: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        match self {
            Layer::Conv(l) => l.forward(input),
            Layer::Dense(l) => l.forward(input),
            Layer::BatchNorm(l) => l.forward(input, mode),
            Layer::Relu(l) => Ok(l.forward(input)),
            Layer::TensorNorm(l) => Ok(l.forward(input)),
            Layer::MaxPool(l) => l.forward(input),
            Layer::GlobalAvgPool(l) => Ok(l.forward(input)),
            Layer::Flatten(l) => l.forward(input),
            Layer::Residual(l) => l.forward(input, mode),
        }
    }

    pub fn backward(&mut self, upstream: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            Layer::Conv(l) => l.backward(upstream),
            Layer::Dense(l) => l.backward(upstream),
            Layer::BatchNorm(l) => l.backward(upstream),
            Layer::Relu(l) => l.backward(upstream),
            Layer::TensorNorm(l) => l.backward(upstream),
            Layer::MaxPool(l) => l.backward(upstream),
            Layer::GlobalAvgPool(l) => l.backward(upstream),
            Layer::Flatten(l) => l.backward(upstream),
            Layer::Residual(l) => l.backward(upstream),
        }
    }

    /// Output shape for a given input shape, without running the layer.
    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        match self {
            Layer::Conv(l) => l.out_shape(input),
            Layer::Dense(l) => l.out_shape(input),
            Layer::BatchNorm(_)
            | Layer::Relu(_)
            | Layer::TensorNorm(_) => Ok(input),
            Layer::MaxPool(l) => l.out_shape(input),
            Layer::GlobalAvgPool(_) => Shape::new(input.n, input.z, 1, 1),
            Layer::Flatten(_) => Shape::new(input.n, input.sample_stride(), 1, 1),
            Layer::Residual(l) => l.out_shape(input),
        }
    }

    /// Visit every trainable parameter slice with its gradient slice.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamKind, &mut [S], &mut [S])) {
        match self {
            Layer::Conv(l) => {
                f(
                    ParamKind::Weight,
                    l.weights.as_mut_slice(),
                    l.grad_weights.as_mut_slice(),
                );
                f(ParamKind::Bias, &mut l.bias, &mut l.grad_bias);
            }
            Layer::Dense(l) => {
                f(ParamKind::Weight, &mut l.weights, &mut l.grad_weights);
                f(ParamKind::Bias, &mut l.bias, &mut l.grad_bias);
            }
            Layer::BatchNorm(l) => {
                f(ParamKind::BnScale, &mut l.gamma, &mut l.grad_gamma);
                f(ParamKind::BnShift, &mut l.beta, &mut l.grad_beta);
            }
            Layer::Residual(l) => l.visit_params(f),
            _ => {}
        }
    }

    /// Visit every persistent state tensor (parameters plus batch-norm
    /// running statistics) in a deterministic order, with its dimensions.
    pub fn for_each_state(&self, f: &mut dyn FnMut(&[usize], &[S])) {
        match self {
            Layer::Conv(l) => {
                let s = l.weights.shape();
                f(&[s.n, s.z, s.y, s.x], l.weights.as_slice());
                f(&[l.bias.len()], &l.bias);
            }
            Layer::Dense(l) => {
                f(&[l.out_features, l.in_features], &l.weights);
                f(&[l.bias.len()], &l.bias);
            }
            Layer::BatchNorm(l) => {
                f(&[l.gamma.len()], &l.gamma);
                f(&[l.beta.len()], &l.beta);
                f(&[l.running_mean.len()], &l.running_mean);
                f(&[l.running_var.len()], &l.running_var);
            }
            Layer::Residual(l) => l.for_each_state(f),
            _ => {}
        }
    }

    /// Mutable counterpart of [`Layer::for_each_state`], same order.
    pub fn for_each_state_mut(&mut self, f: &mut dyn FnMut(&[usize], &mut [S])) {
        match self {
            Layer::Conv(l) => {
                let s = l.weights.shape();
                f(&[s.n, s.z, s.y, s.x], l.weights.as_mut_slice());
                let dims = [l.bias.len()];
                f(&dims, &mut l.bias);
            }
            Layer::Dense(l) => {
                let dims = [l.out_features, l.in_features];
                f(&dims, &mut l.weights);
                let dims = [l.bias.len()];
                f(&dims, &mut l.bias);
            }
            Layer::BatchNorm(l) => {
                let dims = [l.gamma.len()];
                f(&dims, &mut l.gamma);
                f(&dims, &mut l.beta);
                f(&dims, &mut l.running_mean);
                f(&dims, &mut l.running_var);
            }
            Layer::Residual(l) => l.for_each_state_mut(f),
            _ => {}
        }
    }
}
