//! Pooling, flattening and the residual join.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Elementwise sum of two equal-shaped branches; backward routes the
/// upstream gradient to both operands unchanged.
pub fn residual_add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    a.add(b)
}

/// Max pooling with square window `k` and the given stride (no padding).
#[derive(Debug, Clone)]
pub struct MaxPoolLayer<S: Scalar> {
    pub k: usize,
    pub stride: usize,
    cache: Option<(Shape, Vec<usize>)>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> MaxPoolLayer<S> {
    pub fn new(k: usize, stride: usize) -> Self {
        MaxPoolLayer {
            k,
            stride,
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        if input.y < self.k || input.x < self.k {
            return Err(Error::Shape(format!(
                "maxpool window {} does not fit input {input}",
                self.k
            )));
        }
        Shape::new(
            input.n,
            input.z,
            (input.y - self.k) / self.stride + 1,
            (input.x - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&mut self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let in_shape = input.shape();
        let out_shape = self.out_shape(in_shape)?;
        let mut out = Tensor::zeros(out_shape);
        let mut argmax = vec![0usize; out_shape.count()];

        let mut oi = 0;
        for n in 0..in_shape.n {
            for z in 0..in_shape.z {
                for oy in 0..out_shape.y {
                    for ox in 0..out_shape.x {
                        let y0 = oy * self.stride;
                        let x0 = ox * self.stride;
                        let mut best = input.get(n, z, y0, x0);
                        let mut best_at = input.offset(n, z, y0, x0);
                        for dy in 0..self.k {
                            for dx in 0..self.k {
                                let v = input.get(n, z, y0 + dy, x0 + dx);
                                if v > best {
                                    best = v;
                                    best_at = input.offset(n, z, y0 + dy, x0 + dx);
                                }
                            }
                        }
                        out.as_mut_slice()[oi] = best;
                        argmax[oi] = best_at;
                        oi += 1;
                    }
                }
            }
        }

        self.cache = Some((in_shape, argmax));
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor<S>) -> Result<Tensor<S>> {
        let (in_shape, argmax) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("maxpool backward without forward cache".into()))?;
        if upstream.len() != argmax.len() {
            return Err(Error::Shape(format!(
                "maxpool backward: upstream has {} elements, expected {}",
                upstream.len(),
                argmax.len()
            )));
        }
        let mut down = Tensor::zeros(*in_shape);
        for (&src, &g) in argmax.iter().zip(upstream.as_slice()) {
            down.as_mut_slice()[src] = down.as_mut_slice()[src] + g;
        }
        Ok(down)
    }
}

/// Mean over the spatial plane of each channel: (n, z, y, x) -> (n, z, 1, 1).
#[derive(Debug, Clone)]
pub struct GlobalAvgPoolLayer<S: Scalar> {
    cache: Option<Shape>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> GlobalAvgPoolLayer<S> {
    pub fn new() -> Self {
        GlobalAvgPoolLayer {
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, input: &Tensor<S>) -> Tensor<S> {
        let shape = input.shape();
        let plane = shape.plane_stride();
        let inv = S::one() / S::from_f64(plane as f64);
        let mut out = Tensor::zeros(Shape::new(shape.n, shape.z, 1, 1).expect("valid shape"));
        for n in 0..shape.n {
            for z in 0..shape.z {
                let base = n * shape.sample_stride() + z * plane;
                let mut acc = S::zero();
                for &v in &input.as_slice()[base..base + plane] {
                    acc = acc + v;
                }
                out.set(n, z, 0, 0, acc * inv);
            }
        }
        self.cache = Some(shape);
        out
    }

    pub fn backward(&mut self, upstream: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = self
            .cache
            .ok_or_else(|| Error::Usage("gap backward without forward cache".into()))?;
        let expected = Shape::new(shape.n, shape.z, 1, 1)?;
        if upstream.shape() != expected {
            return Err(Error::Shape(format!(
                "gap backward: upstream {} vs expected {expected}",
                upstream.shape()
            )));
        }
        let plane = shape.plane_stride();
        let inv = S::one() / S::from_f64(plane as f64);
        let mut down = Tensor::zeros(shape);
        for n in 0..shape.n {
            for z in 0..shape.z {
                let g = upstream.get(n, z, 0, 0) * inv;
                let base = n * shape.sample_stride() + z * plane;
                for d in &mut down.as_mut_slice()[base..base + plane] {
                    *d = g;
                }
            }
        }
        Ok(down)
    }
}

impl<S: Scalar> Default for GlobalAvgPoolLayer<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Reshape (n, z, y, x) to (n, z*y*x, 1, 1) ahead of a dense head.
#[derive(Debug, Clone)]
pub struct FlattenLayer<S: Scalar> {
    cache: Option<Shape>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> FlattenLayer<S> {
    pub fn new() -> Self {
        FlattenLayer {
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = input.shape();
        self.cache = Some(shape);
        input.reshaped(Shape::new(shape.n, shape.sample_stride(), 1, 1)?)
    }

    pub fn backward(&mut self, upstream: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = self
            .cache
            .ok_or_else(|| Error::Usage("flatten backward without forward cache".into()))?;
        upstream.reshaped(shape)
    }
}

impl<S: Scalar> Default for FlattenLayer<S> {
    fn default() -> Self {
        Self::new()
    }
}
