//! Residual block: a small layer stack plus a skip connection.

use crate::error::Result;
use crate::layers::{residual_add, ConvLayer, Layer, Mode, ParamKind};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// `post(body(x) + skip(x))` where `skip` is the identity or a 1x1
/// projection convolution when the channel count changes.
#[derive(Debug, Clone)]
pub struct ResidualBlock<S: Scalar> {
    pub body: Vec<Layer<S>>,
    pub projection: Option<ConvLayer<S>>,
    pub post: Vec<Layer<S>>,
}

impl<S: Scalar> ResidualBlock<S> {
    pub fn new(body: Vec<Layer<S>>, projection: Option<ConvLayer<S>>, post: Vec<Layer<S>>) -> Self {
        ResidualBlock {
            body,
            projection,
            post,
        }
    }

    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        let mut shape = input;
        for layer in &self.body {
            shape = layer.out_shape(shape)?;
        }
        for layer in &self.post {
            shape = layer.out_shape(shape)?;
        }
        Ok(shape)
    }

    pub fn forward(&mut self, input: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let mut a = input.clone();
        for layer in &mut self.body {
            a = layer.forward(&a, mode)?;
        }
        let skip = match &mut self.projection {
            Some(conv) => conv.forward(input)?,
            None => input.clone(),
        };
        let mut out = residual_add(&a, &skip)?;
        for layer in &mut self.post {
            out = layer.forward(&out, mode)?;
        }
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = upstream.clone();
        for layer in self.post.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        let mut g_body = g.clone();
        for layer in self.body.iter_mut().rev() {
            g_body = layer.backward(&g_body)?;
        }
        let g_skip = match &mut self.projection {
            Some(conv) => conv.backward(&g)?,
            None => g,
        };
        g_body.add(&g_skip)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamKind, &mut [S], &mut [S])) {
        for layer in &mut self.body {
            layer.visit_params(f);
        }
        if let Some(conv) = &mut self.projection {
            f(
                ParamKind::Weight,
                conv.weights.as_mut_slice(),
                conv.grad_weights.as_mut_slice(),
            );
            f(ParamKind::Bias, &mut conv.bias, &mut conv.grad_bias);
        }
        for layer in &mut self.post {
            layer.visit_params(f);
        }
    }

    pub fn for_each_state(&self, f: &mut dyn FnMut(&[usize], &[S])) {
        for layer in &self.body {
            layer.for_each_state(f);
        }
        if let Some(conv) = &self.projection {
            let s = conv.weights.shape();
            f(&[s.n, s.z, s.y, s.x], conv.weights.as_slice());
            f(&[conv.bias.len()], &conv.bias);
        }
        for layer in &self.post {
            layer.for_each_state(f);
        }
    }

    pub fn for_each_state_mut(&mut self, f: &mut dyn FnMut(&[usize], &mut [S])) {
        for layer in &mut self.body {
            layer.for_each_state_mut(f);
        }
        if let Some(conv) = &mut self.projection {
            let s = conv.weights.shape();
            f(&[s.n, s.z, s.y, s.x], conv.weights.as_mut_slice());
            let dims = [conv.bias.len()];
            f(&dims, &mut conv.bias);
        }
        for layer in &mut self.post {
            layer.for_each_state_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ReluLayer;
    use crate::rng::Rng;

    #[test]
    fn identity_skip_doubles_a_passthrough_body() {
        // Body = 1x1 conv with weight 1 (identity), skip = identity:
        // out = relu(x + x) = 2x for positive input.
        let mut rng = Rng::new(1);
        let mut conv: ConvLayer<f64> = ConvLayer::new(1, 1, 1, 1, 0, &mut rng).unwrap();
        conv.weights.as_mut_slice()[0] = 1.0;
        conv.bias[0] = 0.0;
        let mut block = ResidualBlock::new(
            vec![Layer::Conv(conv)],
            None,
            vec![Layer::Relu(ReluLayer::new())],
        );
        let shape = Shape::new(1, 1, 2, 2).unwrap();
        let input = Tensor::from_vec(shape, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = block.forward(&input, Mode::Train).unwrap();
        assert_eq!(out.as_slice(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn backward_sums_both_branches() {
        // Same block as above; for positive activations d(2x)/dx = 2.
        let mut rng = Rng::new(2);
        let mut conv: ConvLayer<f64> = ConvLayer::new(1, 1, 1, 1, 0, &mut rng).unwrap();
        conv.weights.as_mut_slice()[0] = 1.0;
        conv.bias[0] = 0.0;
        let mut block = ResidualBlock::new(
            vec![Layer::Conv(conv)],
            None,
            vec![Layer::Relu(ReluLayer::new())],
        );
        let shape = Shape::new(1, 1, 1, 2).unwrap();
        let input = Tensor::from_vec(shape, vec![1.0, 2.0]).unwrap();
        block.forward(&input, Mode::Train).unwrap();
        let up = Tensor::from_vec(shape, vec![1.0, 0.5]).unwrap();
        let down = block.backward(&up).unwrap();
        assert_eq!(down.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn projection_changes_channel_count() {
        let mut rng = Rng::new(3);
        let body_conv: ConvLayer<f64> = ConvLayer::new(2, 4, 3, 1, 1, &mut rng).unwrap();
        let proj: ConvLayer<f64> = ConvLayer::new(2, 4, 1, 1, 0, &mut rng).unwrap();
        let mut block = ResidualBlock::new(vec![Layer::Conv(body_conv)], Some(proj), vec![]);
        let input = Tensor::filled(Shape::new(1, 2, 5, 5).unwrap(), 0.3);
        let out = block.forward(&input, Mode::Train).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 4, 5, 5).unwrap());
    }
}
