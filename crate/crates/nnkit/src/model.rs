//! Model assembly, execution and the versioned parameter blob.
//!
//! A model is an ordered layer list built from a compact comma-separated
//! description, e.g. `conv:12:3,bn,relu,maxpool:2,res:24,maxpool:2,res:48,
//! gap,dense:10`. Tokens:
//!
//! - `conv:OUT:K`        convolution, stride 1, zero padding K/2
//! - `conv:OUT:K:S:P`    convolution with explicit stride and padding
//! - `bn`                batch normalization
//! - `relu`              rectifier (followed by `tn` when tn is enabled)
//! - `tn`                explicit tensor-normalization layer
//! - `maxpool:K`         max pooling, window K, stride K
//! - `gap`               global average pooling
//! - `flatten`           reshape to a feature vector
//! - `dense:OUT`         fully connected layer
//! - `res:OUT`           residual block conv/bn/relu/conv/bn with skip
//!
//! Enabling tensor normalization inserts a `tn` layer after every rectifier,
//! inside residual blocks included; the classifier head has no rectifier and
//! therefore never gets one.

use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{
    BatchNormLayer, ConvLayer, DenseLayer, FlattenLayer, GlobalAvgPoolLayer, Layer, MaxPoolLayer,
    Mode, ParamKind, ReluLayer, ResidualBlock, TensorNormLayer,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

const BLOB_MAGIC: &[u8; 4] = b"NNKM";
const BLOB_VERSION: u32 = 1;

/// Ordered layer list with its input geometry and class count.
#[derive(Debug, Clone)]
pub struct Model<S: Scalar> {
    pub layers: Vec<Layer<S>>,
    input_shape: Shape,
    class_count: usize,
    description: String,
    tn_enabled: bool,
}

impl<S: Scalar> Model<S> {
    /// Build a model from its token description. `input` is one sample
    /// (z, y, x); weights are He-initialized from `rng`.
    pub fn build(
        description: &str,
        input: (usize, usize, usize),
        tn_enabled: bool,
        rng: &mut Rng,
    ) -> Result<Model<S>> {
        let description = description.trim().to_string();
        let mut layers = Vec::new();
        let mut shape = Shape::new(1, input.0, input.1, input.2)?;

        for token in description.split(',') {
            let token = token.trim();
            if token.is_empty() {
                return Err(Error::Config("empty token in model description".into()));
            }
            let mut parts = token.split(':');
            let head = parts.next().unwrap();
            let args: Vec<&str> = parts.collect();
            match head {
                "conv" => {
                    let (out, k, stride, pad) = parse_conv_args(token, &args)?;
                    let conv = ConvLayer::new(shape.z, out, k, stride, pad, rng)?;
                    shape = conv.out_shape(shape)?;
                    layers.push(Layer::Conv(conv));
                }
                "bn" => {
                    expect_no_args(token, &args)?;
                    layers.push(Layer::BatchNorm(BatchNormLayer::new(shape.z)));
                }
                "relu" => {
                    expect_no_args(token, &args)?;
                    layers.push(Layer::Relu(ReluLayer::new()));
                    if tn_enabled {
                        layers.push(Layer::TensorNorm(TensorNormLayer::new()));
                    }
                }
                "tn" => {
                    expect_no_args(token, &args)?;
                    layers.push(Layer::TensorNorm(TensorNormLayer::new()));
                }
                "maxpool" => {
                    let k = parse_one_arg(token, &args)?;
                    let pool = MaxPoolLayer::new(k, k);
                    shape = pool.out_shape(shape)?;
                    layers.push(Layer::MaxPool(pool));
                }
                "gap" => {
                    expect_no_args(token, &args)?;
                    shape = Shape::new(shape.n, shape.z, 1, 1)?;
                    layers.push(Layer::GlobalAvgPool(GlobalAvgPoolLayer::new()));
                }
                "flatten" => {
                    expect_no_args(token, &args)?;
                    shape = Shape::new(shape.n, shape.sample_stride(), 1, 1)?;
                    layers.push(Layer::Flatten(FlattenLayer::new()));
                }
                "dense" => {
                    let out = parse_one_arg(token, &args)?;
                    if shape.y != 1 || shape.x != 1 {
                        return Err(Error::Config(format!(
                            "dense after spatial shape {shape}; add gap or flatten first"
                        )));
                    }
                    let dense = DenseLayer::new(shape.z, out, rng)?;
                    shape = dense.out_shape(shape)?;
                    layers.push(Layer::Dense(dense));
                }
                "res" => {
                    let out = parse_one_arg(token, &args)?;
                    let block = build_residual(shape.z, out, tn_enabled, rng)?;
                    shape = block.out_shape(shape)?;
                    layers.push(Layer::Residual(block));
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown model token '{other}' in '{token}'"
                    )));
                }
            }
        }

        if shape.y != 1 || shape.x != 1 {
            return Err(Error::Config(format!(
                "model output must be (n, classes, 1, 1), got {shape}"
            )));
        }
        Ok(Model {
            layers,
            input_shape: Shape::new(1, input.0, input.1, input.2)?,
            class_count: shape.z,
            description,
            tn_enabled,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn tn_enabled(&self) -> bool {
        self.tn_enabled
    }

    /// Expected single-sample input shape (1, z, y, x).
    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn param_count(&mut self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |_, values, _| count += values.len());
        count
    }

    pub fn forward(&mut self, input: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        self.forward_observed(input, mode, &mut |_, _| {})
    }

    /// Forward pass invoking `observer` with every layer's kind and output,
    /// recursing into residual blocks.
    pub fn forward_observed(
        &mut self,
        input: &Tensor<S>,
        mode: Mode,
        observer: &mut dyn FnMut(&str, &Tensor<S>),
    ) -> Result<Tensor<S>> {
        self.check_input(input)?;
        let mut current = input.clone();
        for layer in &mut self.layers {
            current = forward_layer_observed(layer, &current, mode, observer)?;
        }
        Ok(current)
    }

    fn check_input(&self, input: &Tensor<S>) -> Result<()> {
        let s = input.shape();
        let want = self.input_shape;
        if s.z != want.z || s.y != want.y || s.x != want.x {
            return Err(Error::Shape(format!(
                "model expects (n, {}, {}, {}) input, got {s}",
                want.z, want.y, want.x
            )));
        }
        Ok(())
    }

    /// Back-propagate the loss error; returns the gradient w.r.t. the input.
    pub fn backward(&mut self, error: &Tensor<S>) -> Result<Tensor<S>> {
        let mut current = error.clone();
        for layer in self.layers.iter_mut().rev() {
            current = layer.backward(&current)?;
        }
        Ok(current)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(ParamKind, &mut [S], &mut [S])) {
        for layer in &mut self.layers {
            layer.visit_params(f);
        }
    }

    pub fn for_each_state(&self, f: &mut dyn FnMut(&[usize], &[S])) {
        for layer in &self.layers {
            layer.for_each_state(f);
        }
    }

    pub fn for_each_state_mut(&mut self, f: &mut dyn FnMut(&[usize], &mut [S])) {
        for layer in &mut self.layers {
            layer.for_each_state_mut(f);
        }
    }

    /// Serialize header, topology and every state tensor little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.push(S::BYTE_WIDTH);
        out.push(self.tn_enabled as u8);
        for dim in [self.input_shape.z, self.input_shape.y, self.input_shape.x] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.class_count as u32).to_le_bytes());
        let desc = self.description.as_bytes();
        out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        out.extend_from_slice(desc);

        let mut count: u32 = 0;
        self.for_each_state(&mut |_, _| count += 1);
        out.extend_from_slice(&count.to_le_bytes());
        self.for_each_state(&mut |dims, values| {
            out.push(dims.len() as u8);
            for &d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in values {
                v.write_le(&mut out);
            }
        });
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model<S>> {
        let mut r = Reader { bytes, at: 0 };
        let magic = r.take(4)?;
        if magic != BLOB_MAGIC {
            return Err(Error::Usage("model blob: bad magic".into()));
        }
        let version = r.u32()?;
        if version != BLOB_VERSION {
            return Err(Error::Usage(format!(
                "model blob: version {version} unsupported (expected {BLOB_VERSION})"
            )));
        }
        let precision = r.u8()?;
        if precision != S::BYTE_WIDTH {
            return Err(Error::Usage(format!(
                "model blob: precision tag {precision} does not match element width {}",
                S::BYTE_WIDTH
            )));
        }
        let tn_enabled = r.u8()? != 0;
        let z = r.u32()? as usize;
        let y = r.u32()? as usize;
        let x = r.u32()? as usize;
        let class_count = r.u32()? as usize;
        let desc_len = r.u32()? as usize;
        let desc_bytes = r.take(desc_len)?;
        let description = std::str::from_utf8(desc_bytes)
            .map_err(|_| Error::Usage("model blob: description is not utf-8".into()))?
            .to_string();

        let mut model = Model::build(&description, (z, y, x), tn_enabled, &mut Rng::new(0))?;
        if model.class_count != class_count {
            return Err(Error::Usage(format!(
                "model blob: class count {class_count} does not match topology ({})",
                model.class_count
            )));
        }

        let tensor_count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(tensor_count);
        for _ in 0..tensor_count {
            let ndims = r.u8()? as usize;
            let mut dims = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                dims.push(r.u32()? as usize);
            }
            let count: usize = dims.iter().product();
            let raw = r.take(count * S::BYTE_WIDTH as usize)?;
            let mut values = Vec::with_capacity(count);
            for chunk in raw.chunks_exact(S::BYTE_WIDTH as usize) {
                values.push(S::read_le(chunk));
            }
            tensors.push((dims, values));
        }

        let mut iter = tensors.into_iter();
        let mut mismatch: Option<String> = None;
        model.for_each_state_mut(&mut |dims, values| {
            if mismatch.is_some() {
                return;
            }
            match iter.next() {
                Some((got_dims, got_values))
                    if got_dims == dims && got_values.len() == values.len() =>
                {
                    values.copy_from_slice(&got_values);
                }
                Some((got_dims, _)) => {
                    mismatch = Some(format!(
                        "model blob: state tensor dims {got_dims:?} do not match {dims:?}"
                    ));
                }
                None => mismatch = Some("model blob: missing state tensors".into()),
            }
        });
        if let Some(msg) = mismatch {
            return Err(Error::Usage(msg));
        }
        if iter.next().is_some() {
            return Err(Error::Usage("model blob: trailing state tensors".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Model<S>> {
        let bytes = std::fs::read(path)?;
        Model::from_bytes(&bytes)
    }
}

/// Write via a temporary sibling file and rename, so partial output is
/// never observable under the target name.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn forward_layer_observed<S: Scalar>(
    layer: &mut Layer<S>,
    input: &Tensor<S>,
    mode: Mode,
    observer: &mut dyn FnMut(&str, &Tensor<S>),
) -> Result<Tensor<S>> {
    if let Layer::Residual(block) = layer {
        let mut a = input.clone();
        for inner in &mut block.body {
            a = forward_layer_observed(inner, &a, mode, observer)?;
        }
        let skip = match &mut block.projection {
            Some(conv) => conv.forward(input)?,
            None => input.clone(),
        };
        let mut out = a.add(&skip)?;
        for inner in &mut block.post {
            out = forward_layer_observed(inner, &out, mode, observer)?;
        }
        return Ok(out);
    }
    let out = layer.forward(input, mode)?;
    observer(layer.kind_name(), &out);
    Ok(out)
}

fn build_residual<S: Scalar>(
    in_z: usize,
    out_z: usize,
    tn_enabled: bool,
    rng: &mut Rng,
) -> Result<ResidualBlock<S>> {
    let mut body: Vec<Layer<S>> = Vec::new();
    body.push(Layer::Conv(ConvLayer::new(in_z, out_z, 3, 1, 1, rng)?));
    body.push(Layer::BatchNorm(BatchNormLayer::new(out_z)));
    body.push(Layer::Relu(ReluLayer::new()));
    if tn_enabled {
        body.push(Layer::TensorNorm(TensorNormLayer::new()));
    }
    body.push(Layer::Conv(ConvLayer::new(out_z, out_z, 3, 1, 1, rng)?));
    body.push(Layer::BatchNorm(BatchNormLayer::new(out_z)));

    let projection = if in_z != out_z {
        Some(ConvLayer::new(in_z, out_z, 1, 1, 0, rng)?)
    } else {
        None
    };

    let mut post: Vec<Layer<S>> = vec![Layer::Relu(ReluLayer::new())];
    if tn_enabled {
        post.push(Layer::TensorNorm(TensorNormLayer::new()));
    }
    Ok(ResidualBlock::new(body, projection, post))
}

fn expect_no_args(token: &str, args: &[&str]) -> Result<()> {
    if args.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("token '{token}' takes no arguments")))
    }
}

fn parse_one_arg(token: &str, args: &[&str]) -> Result<usize> {
    if args.len() != 1 {
        return Err(Error::Config(format!(
            "token '{token}' needs exactly one argument"
        )));
    }
    args[0]
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("token '{token}': '{}' is not a number", args[0])))
}

fn parse_conv_args(token: &str, args: &[&str]) -> Result<(usize, usize, usize, usize)> {
    let nums: Vec<usize> = args
        .iter()
        .map(|a| {
            a.parse::<usize>()
                .map_err(|_| Error::Config(format!("token '{token}': '{a}' is not a number")))
        })
        .collect::<Result<_>>()?;
    match nums.as_slice() {
        [out, k] => Ok((*out, *k, 1, k / 2)),
        [out, k, s, p] => Ok((*out, *k, *s, *p)),
        _ => Err(Error::Config(format!(
            "token '{token}' needs conv:OUT:K or conv:OUT:K:STRIDE:PAD"
        ))),
    }
}

/// Token description of the small residual network used by the experiments.
pub fn reference_description(classes: usize) -> String {
    format!("conv:12:3,bn,relu,maxpool:2,res:24,maxpool:2,res:48,gap,dense:{classes}")
}

/// Per-sample argmax of a (n, classes, 1, 1) logit tensor.
pub fn argmax_batch<S: Scalar>(logits: &Tensor<S>) -> Vec<usize> {
    let shape = logits.shape();
    let classes = shape.z;
    let mut out = Vec::with_capacity(shape.n);
    for n in 0..shape.n {
        let col = &logits.as_slice()[n * classes..(n + 1) * classes];
        let mut best = 0;
        for (i, &v) in col.iter().enumerate() {
            if v > col[best] {
                best = i;
            }
        }
        out.push(best);
    }
    out
}


struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Usage("model blob: truncated".into()));
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
