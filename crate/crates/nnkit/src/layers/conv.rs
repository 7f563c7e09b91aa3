//! 2-D convolution (cross-correlation) with zero padding.
//!
//! The stride-1 path copies each sample into an explicitly zero-padded
//! buffer so the tap loops run without bounds handling, and dispatches on
//! the kernel size so the tap loops unroll. The input gradient is computed
//! as a correlation of the padded upstream error with the 180-degree
//! rotated kernel, which reuses the same inner kernel.

use crate::error::{Error, Result};
use crate::layers::he_init;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone)]
pub struct ConvLayer<S: Scalar> {
    /// Kernel bank, laid out (out_z, in_z, ky, kx).
    pub weights: Tensor<S>,
    pub bias: Vec<S>,
    pub stride: usize,
    pub padding: usize,
    pub grad_weights: Tensor<S>,
    pub grad_bias: Vec<S>,
    cache: Option<Tensor<S>>,
}

impl<S: Scalar> ConvLayer<S> {
    pub fn new(
        in_z: usize,
        out_z: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if kernel == 0 {
            return Err(Error::Domain("kernel size must be >= 1".into()));
        }
        if stride == 0 {
            return Err(Error::Domain("stride must be >= 1".into()));
        }
        let w_shape = Shape::new(out_z, in_z, kernel, kernel)?;
        let mut weights = Tensor::zeros(w_shape);
        he_init(weights.as_mut_slice(), in_z * kernel * kernel, rng)?;
        Ok(ConvLayer {
            weights,
            bias: vec![S::zero(); out_z],
            stride,
            padding,
            grad_weights: Tensor::zeros(w_shape),
            grad_bias: vec![S::zero(); out_z],
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().z
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().n
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape().y
    }

    pub fn out_shape(&self, input: Shape) -> Result<Shape> {
        let k = self.kernel();
        if input.z != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                input.z
            )));
        }
        let padded_y = input.y + 2 * self.padding;
        let padded_x = input.x + 2 * self.padding;
        if padded_y < k || padded_x < k {
            return Err(Error::Shape(format!(
                "conv kernel {k} does not fit padded input {padded_y}x{padded_x}"
            )));
        }
        Shape::new(
            input.n,
            self.out_channels(),
            (padded_y - k) / self.stride + 1,
            (padded_x - k) / self.stride + 1,
        )
    }

    pub fn forward(&mut self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let in_shape = input.shape();
        let out_shape = self.out_shape(in_shape)?;
        let mut out = Tensor::zeros(out_shape);

        let (in_z, k) = (self.in_channels(), self.kernel());
        let (in_plane, out_plane) = (in_shape.plane_stride(), out_shape.plane_stride());
        let w = self.weights.as_slice();

        // Per-sample padded copy of all input channels.
        let (py, px) = (in_shape.y + 2 * self.padding, in_shape.x + 2 * self.padding);
        let mut padded = vec![S::zero(); in_z * py * px];

        for n in 0..in_shape.n {
            let in_base = n * in_shape.sample_stride();
            for ic in 0..in_z {
                fill_padded(
                    &mut padded[ic * py * px..(ic + 1) * py * px],
                    &input.as_slice()[in_base + ic * in_plane..in_base + (ic + 1) * in_plane],
                    in_shape.y,
                    in_shape.x,
                    self.padding,
                );
            }
            let out_base = n * out_shape.sample_stride();
            for oc in 0..out_shape.z {
                let o0 = out_base + oc * out_plane;
                out.as_mut_slice()[o0..o0 + out_plane].fill(self.bias[oc]);
                for ic in 0..in_z {
                    let taps = &w[(oc * in_z + ic) * k * k..(oc * in_z + ic + 1) * k * k];
                    correlate_into(
                        &mut out.as_mut_slice()[o0..o0 + out_plane],
                        &padded[ic * py * px..(ic + 1) * py * px],
                        px,
                        out_shape.y,
                        out_shape.x,
                        self.stride,
                        k,
                        taps,
                    );
                }
            }
        }

        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &Tensor<S>) -> Result<Tensor<S>> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("conv backward without forward cache".into()))?;
        let in_shape = input.shape();
        let out_shape = self.out_shape(in_shape)?;
        if upstream.shape() != out_shape {
            return Err(Error::Shape(format!(
                "conv backward: upstream {} does not match forward output {}",
                upstream.shape(),
                out_shape
            )));
        }

        let (in_z, out_z, k) = (self.in_channels(), self.out_channels(), self.kernel());
        let (in_plane, out_plane) = (in_shape.plane_stride(), out_shape.plane_stride());

        self.grad_weights.as_mut_slice().fill(S::zero());
        self.grad_bias.fill(S::zero());
        let mut down = Tensor::zeros(in_shape);

        let (py, px) = (in_shape.y + 2 * self.padding, in_shape.x + 2 * self.padding);
        let mut padded_in = vec![S::zero(); in_z * py * px];

        // Transposed pass as a correlation: pad the upstream error with
        // margin k-1-padding and walk the kernel rotated by 180 degrees.
        // Only valid for stride 1; the generic path covers larger strides.
        let margin = k - 1 - self.padding.min(k - 1);
        let (uy, ux) = (out_shape.y + 2 * margin, out_shape.x + 2 * margin);
        let mut padded_up = vec![S::zero(); uy * ux];
        let mut flipped = vec![S::zero(); k * k];

        for n in 0..in_shape.n {
            let in_base = n * in_shape.sample_stride();
            let out_base = n * out_shape.sample_stride();
            for ic in 0..in_z {
                fill_padded(
                    &mut padded_in[ic * py * px..(ic + 1) * py * px],
                    &input.as_slice()[in_base + ic * in_plane..in_base + (ic + 1) * in_plane],
                    in_shape.y,
                    in_shape.x,
                    self.padding,
                );
            }

            for oc in 0..out_z {
                let up_plane = &upstream.as_slice()[out_base + oc * out_plane..][..out_plane];

                let mut bias_sum = S::zero();
                for &g in up_plane {
                    bias_sum = bias_sum + g;
                }
                self.grad_bias[oc] = self.grad_bias[oc] + bias_sum;

                if self.stride == 1 {
                    fill_padded(&mut padded_up, up_plane, out_shape.y, out_shape.x, margin);
                }

                for ic in 0..in_z {
                    let widx = (oc * in_z + ic) * k * k;
                    let pin = &padded_in[ic * py * px..(ic + 1) * py * px];

                    // dW[ky][kx] = sum over the output plane of
                    // up[oy][ox] * padded_in[oy*s+ky][ox*s+kx].
                    let gw = &mut self.grad_weights.as_mut_slice()[widx..widx + k * k];
                    weight_grad_into(
                        gw,
                        up_plane,
                        pin,
                        px,
                        out_shape.y,
                        out_shape.x,
                        self.stride,
                        k,
                    );

                    let dplane =
                        &mut down.as_mut_slice()[in_base + ic * in_plane..][..in_plane];
                    if self.stride == 1 {
                        for ky in 0..k {
                            for kx in 0..k {
                                flipped[(k - 1 - ky) * k + (k - 1 - kx)] =
                                    self.weights.as_slice()[widx + ky * k + kx];
                            }
                        }
                        correlate_into(
                            dplane,
                            &padded_up,
                            ux,
                            in_shape.y,
                            in_shape.x,
                            1,
                            k,
                            &flipped,
                        );
                    } else {
                        scatter_strided(
                            dplane,
                            up_plane,
                            &self.weights.as_slice()[widx..widx + k * k],
                            out_shape.y,
                            out_shape.x,
                            in_shape.y,
                            in_shape.x,
                            self.stride,
                            self.padding,
                            k,
                        );
                    }
                }
            }
        }

        Ok(down)
    }
}

/// Copy a plane into the center of a zero-padded buffer.
fn fill_padded<S: Scalar>(dst: &mut [S], src: &[S], y: usize, x: usize, pad: usize) {
    let px = x + 2 * pad;
    dst.fill(S::zero());
    for row in 0..y {
        let d0 = (row + pad) * px + pad;
        dst[d0..d0 + x].copy_from_slice(&src[row * x..(row + 1) * x]);
    }
}

/// out[oy][ox] += sum over taps of w[ky][kx] * padded[oy*s+ky][ox*s+kx].
/// Dispatches on the kernel size so the tap loops fully unroll.
#[allow(clippy::too_many_arguments)]
fn correlate_into<S: Scalar>(
    out: &mut [S],
    padded: &[S],
    px: usize,
    out_y: usize,
    out_x: usize,
    stride: usize,
    k: usize,
    taps: &[S],
) {
    match (stride, k) {
        (1, 1) => correlate_1(out, padded, px, out_y, out_x, taps),
        (1, 3) => correlate_3(out, padded, px, out_y, out_x, taps),
        _ => correlate_dyn(out, padded, px, out_y, out_x, stride, k, taps),
    }
}

/// 1x1 kernel: a scaled add of the (unpadded interior of the) input plane.
fn correlate_1<S: Scalar>(
    out: &mut [S],
    padded: &[S],
    px: usize,
    out_y: usize,
    out_x: usize,
    taps: &[S],
) {
    let w = taps[0];
    for oy in 0..out_y {
        let orow = &mut out[oy * out_x..(oy + 1) * out_x];
        let irow = &padded[oy * px..oy * px + out_x];
        for (o, &i) in orow.iter_mut().zip(irow) {
            *o = *o + w * i;
        }
    }
}

/// 3x3 kernel, stride 1: all nine taps accumulate in one pass per output
/// row, with row slices hoisted so the inner loop vectorizes.
fn correlate_3<S: Scalar>(
    out: &mut [S],
    padded: &[S],
    px: usize,
    out_y: usize,
    out_x: usize,
    taps: &[S],
) {
    let (w00, w01, w02) = (taps[0], taps[1], taps[2]);
    let (w10, w11, w12) = (taps[3], taps[4], taps[5]);
    let (w20, w21, w22) = (taps[6], taps[7], taps[8]);
    for oy in 0..out_y {
        let orow = &mut out[oy * out_x..(oy + 1) * out_x];
        let p0 = &padded[oy * px..oy * px + out_x + 2];
        let p1 = &padded[(oy + 1) * px..(oy + 1) * px + out_x + 2];
        let p2 = &padded[(oy + 2) * px..(oy + 2) * px + out_x + 2];
        for i in 0..out_x {
            let acc = orow[i]
                + w00 * p0[i]
                + w01 * p0[i + 1]
                + w02 * p0[i + 2]
                + w10 * p1[i]
                + w11 * p1[i + 1]
                + w12 * p1[i + 2]
                + w20 * p2[i]
                + w21 * p2[i + 1]
                + w22 * p2[i + 2];
            orow[i] = acc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn correlate_dyn<S: Scalar>(
    out: &mut [S],
    padded: &[S],
    px: usize,
    out_y: usize,
    out_x: usize,
    stride: usize,
    k: usize,
    taps: &[S],
) {
    for oy in 0..out_y {
        let orow = &mut out[oy * out_x..(oy + 1) * out_x];
        for (ox, o) in orow.iter_mut().enumerate() {
            let mut acc = *o;
            for ky in 0..k {
                let base = (oy * stride + ky) * px + ox * stride;
                for kx in 0..k {
                    acc = acc + taps[ky * k + kx] * padded[base + kx];
                }
            }
            *o = acc;
        }
    }
}

/// gw[ky][kx] += sum over the output plane of up[oy][ox] *
/// padded_in[oy*s+ky][ox*s+kx]; each tap is a plane dot product.
#[allow(clippy::too_many_arguments)]
fn weight_grad_into<S: Scalar>(
    gw: &mut [S],
    up: &[S],
    padded_in: &[S],
    px: usize,
    out_y: usize,
    out_x: usize,
    stride: usize,
    k: usize,
) {
    if stride == 1 && k == 3 {
        weight_grad_3(gw, up, padded_in, px, out_y, out_x);
        return;
    }
    for ky in 0..k {
        for kx in 0..k {
            let mut acc = S::zero();
            if stride == 1 {
                for oy in 0..out_y {
                    let urow = &up[oy * out_x..(oy + 1) * out_x];
                    let irow = &padded_in[(oy + ky) * px + kx..(oy + ky) * px + kx + out_x];
                    for (&u, &i) in urow.iter().zip(irow) {
                        acc = acc + u * i;
                    }
                }
            } else {
                for oy in 0..out_y {
                    let ibase = (oy * stride + ky) * px + kx;
                    for ox in 0..out_x {
                        acc = acc + up[oy * out_x + ox] * padded_in[ibase + ox * stride];
                    }
                }
            }
            gw[ky * k + kx] = gw[ky * k + kx] + acc;
        }
    }
}

/// All nine 3x3 tap dots in one pass over the output plane.
fn weight_grad_3<S: Scalar>(
    gw: &mut [S],
    up: &[S],
    padded_in: &[S],
    px: usize,
    out_y: usize,
    out_x: usize,
) {
    let mut acc = [S::zero(); 9];
    for oy in 0..out_y {
        let urow = &up[oy * out_x..(oy + 1) * out_x];
        let p0 = &padded_in[oy * px..oy * px + out_x + 2];
        let p1 = &padded_in[(oy + 1) * px..(oy + 1) * px + out_x + 2];
        let p2 = &padded_in[(oy + 2) * px..(oy + 2) * px + out_x + 2];
        for i in 0..out_x {
            let u = urow[i];
            acc[0] = acc[0] + u * p0[i];
            acc[1] = acc[1] + u * p0[i + 1];
            acc[2] = acc[2] + u * p0[i + 2];
            acc[3] = acc[3] + u * p1[i];
            acc[4] = acc[4] + u * p1[i + 1];
            acc[5] = acc[5] + u * p1[i + 2];
            acc[6] = acc[6] + u * p2[i];
            acc[7] = acc[7] + u * p2[i + 1];
            acc[8] = acc[8] + u * p2[i + 2];
        }
    }
    for (g, a) in gw.iter_mut().zip(acc) {
        *g = *g + a;
    }
}

/// General-stride input-gradient scatter (rarely used path).
#[allow(clippy::too_many_arguments)]
fn scatter_strided<S: Scalar>(
    down: &mut [S],
    up: &[S],
    taps: &[S],
    out_y: usize,
    out_x: usize,
    in_y: usize,
    in_x: usize,
    stride: usize,
    padding: usize,
    k: usize,
) {
    for oy in 0..out_y {
        for ox in 0..out_x {
            let u = up[oy * out_x + ox];
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= in_y as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= in_x as isize {
                        continue;
                    }
                    let di = iy as usize * in_x + ix as usize;
                    down[di] = down[di] + taps[ky * k + kx] * u;
                }
            }
        }
    }
}
