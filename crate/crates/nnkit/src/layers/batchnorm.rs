//! Batch normalization over the (n, y, x) extent of each channel.

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct BnCache<S: Scalar> {
    input: Tensor<S>,
    mean: Vec<S>,
    inv_std: Vec<S>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer<S: Scalar> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    /// Exponential moving averages used in inference mode. Before any
    /// training update they hold mean 0 and variance 1.
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub eps: S,
    pub momentum: S,
    pub grad_gamma: Vec<S>,
    pub grad_beta: Vec<S>,
    cache: Option<BnCache<S>>,
}

pub const BN_DEFAULT_EPS: f64 = 1e-5;
pub const BN_DEFAULT_MOMENTUM: f64 = 0.9;

impl<S: Scalar> BatchNormLayer<S> {
    pub fn new(channels: usize) -> Self {
        BatchNormLayer {
            gamma: vec![S::one(); channels],
            beta: vec![S::zero(); channels],
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            eps: S::from_f64(BN_DEFAULT_EPS),
            momentum: S::from_f64(BN_DEFAULT_MOMENTUM),
            grad_gamma: vec![S::zero(); channels],
            grad_beta: vec![S::zero(); channels],
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, input: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let shape = input.shape();
        if shape.z != self.channels() {
            return Err(Error::Shape(format!(
                "batchnorm expects {} channels, got {}",
                self.channels(),
                shape.z
            )));
        }

        let plane = shape.plane_stride();
        let per_channel = shape.n * plane;
        let count = S::from_f64(per_channel as f64);

        let (mean, inv_std) = match mode {
            Mode::Train => {
                let mut mean = vec![S::zero(); shape.z];
                let mut var = vec![S::zero(); shape.z];
                for c in 0..shape.z {
                    let mut sum = S::zero();
                    for n in 0..shape.n {
                        let base = n * shape.sample_stride() + c * plane;
                        for &v in &input.as_slice()[base..base + plane] {
                            sum = sum + v;
                        }
                    }
                    let m = sum / count;
                    let mut sq = S::zero();
                    for n in 0..shape.n {
                        let base = n * shape.sample_stride() + c * plane;
                        for &v in &input.as_slice()[base..base + plane] {
                            let d = v - m;
                            sq = sq + d * d;
                        }
                    }
                    mean[c] = m;
                    var[c] = sq / count;
                }
                let one_minus = S::one() - self.momentum;
                for c in 0..shape.z {
                    self.running_mean[c] = self.momentum * self.running_mean[c] + one_minus * mean[c];
                    self.running_var[c] = self.momentum * self.running_var[c] + one_minus * var[c];
                }
                let inv_std: Vec<S> = var
                    .iter()
                    .map(|&v| S::one() / (v + self.eps).sqrt())
                    .collect();
                (mean, inv_std)
            }
            Mode::Infer => {
                let inv_std: Vec<S> = self
                    .running_var
                    .iter()
                    .map(|&v| S::one() / (v + self.eps).sqrt())
                    .collect();
                (self.running_mean.clone(), inv_std)
            }
        };

        let mut out = Tensor::zeros(shape);
        for n in 0..shape.n {
            for c in 0..shape.z {
                let base = n * shape.sample_stride() + c * plane;
                let (g, b, m, is) = (self.gamma[c], self.beta[c], mean[c], inv_std[c]);
                let src = &input.as_slice()[base..base + plane];
                let dst = &mut out.as_mut_slice()[base..base + plane];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = g * (v - m) * is + b;
                }
            }
        }

        self.cache = Some(BnCache {
            input: input.clone(),
            mean,
            inv_std,
            mode,
        });
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor<S>) -> Result<Tensor<S>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("batchnorm backward without forward cache".into()))?;
        let shape = cache.input.shape();
        if upstream.shape() != shape {
            return Err(Error::Shape(format!(
                "batchnorm backward: upstream {} vs input {}",
                upstream.shape(),
                shape
            )));
        }

        let plane = shape.plane_stride();
        let per_channel = shape.n * plane;
        let count = S::from_f64(per_channel as f64);

        self.grad_gamma.fill(S::zero());
        self.grad_beta.fill(S::zero());
        let mut down = Tensor::zeros(shape);

        for c in 0..shape.z {
            let (m, is, g) = (cache.mean[c], cache.inv_std[c], self.gamma[c]);

            let mut sum_u = S::zero();
            let mut sum_u_xhat = S::zero();
            for n in 0..shape.n {
                let base = n * shape.sample_stride() + c * plane;
                let xs = &cache.input.as_slice()[base..base + plane];
                let us = &upstream.as_slice()[base..base + plane];
                for (&x, &u) in xs.iter().zip(us) {
                    sum_u = sum_u + u;
                    sum_u_xhat = sum_u_xhat + u * (x - m) * is;
                }
            }
            self.grad_gamma[c] = sum_u_xhat;
            self.grad_beta[c] = sum_u;

            match cache.mode {
                Mode::Train => {
                    // Full Jacobian through the batch statistics:
                    // dx = (gamma * inv_std / m) * (m*u - sum_u - xhat * sum_u_xhat)
                    let scale = g * is / count;
                    for n in 0..shape.n {
                        let base = n * shape.sample_stride() + c * plane;
                        let xs = &cache.input.as_slice()[base..base + plane];
                        let us = &upstream.as_slice()[base..base + plane];
                        let ds = &mut down.as_mut_slice()[base..base + plane];
                        for ((d, &x), &u) in ds.iter_mut().zip(xs).zip(us) {
                            let xhat = (x - m) * is;
                            *d = scale * (count * u - sum_u - xhat * sum_u_xhat);
                        }
                    }
                }
                Mode::Infer => {
                    // Frozen statistics: the layer is a per-channel affine map.
                    let scale = g * is;
                    for n in 0..shape.n {
                        let base = n * shape.sample_stride() + c * plane;
                        let us = &upstream.as_slice()[base..base + plane];
                        let ds = &mut down.as_mut_slice()[base..base + plane];
                        for (d, &u) in ds.iter_mut().zip(us) {
                            *d = scale * u;
                        }
                    }
                }
            }
        }
        Ok(down)
    }
}
