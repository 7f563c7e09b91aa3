//! Dataset loading, augmentation and normalization.
//!
//! Images are kept in raw [0, 255] scale until [`normalize`] maps them into
//! the model's input domain. The augmentation pipeline is fixed: shift,
//! then flip, then normalize, then (optionally) superposition.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 3073;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

/// Images in raw [0, 255] scale with integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset<S: Scalar> {
    images: Tensor<S>,
    labels: Vec<usize>,
    class_count: usize,
    split: Split,
    by_class: Vec<Vec<usize>>,
}

impl<S: Scalar> LabeledDataset<S> {
    pub fn new(
        images: Tensor<S>,
        labels: Vec<usize>,
        class_count: usize,
        split: Split,
    ) -> Result<Self> {
        let n = images.shape().n;
        if labels.len() != n {
            return Err(Error::Data(format!(
                "{} labels for {n} images",
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::Data("class count must be >= 1".into()));
        }
        let mut by_class = vec![Vec::new(); class_count];
        for (i, &label) in labels.iter().enumerate() {
            if label >= class_count {
                return Err(Error::Data(format!(
                    "label {label} of image {i} outside [0, {class_count})"
                )));
            }
            by_class[label].push(i);
        }
        Ok(LabeledDataset {
            images,
            labels,
            class_count,
            split,
            by_class,
        })
    }

    pub fn len(&self) -> usize {
        self.images.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor<S> {
        &self.images
    }

    /// Sample geometry (z, y, x).
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s.z, s.y, s.x)
    }

    /// Indices of all images belonging to `class`.
    pub fn class_members(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    /// Copy of image `i` as a (1, z, y, x) tensor.
    pub fn image(&self, i: usize) -> Result<Tensor<S>> {
        self.images.sample(i)
    }

    /// First `count` examples as a new dataset.
    pub fn take(&self, count: usize) -> Result<LabeledDataset<S>> {
        if count == 0 || count > self.len() {
            return Err(Error::Data(format!(
                "cannot take {count} of {} examples",
                self.len()
            )));
        }
        let s = self.images.shape();
        let stride = s.sample_stride();
        let images = Tensor::from_vec(
            Shape::new(count, s.z, s.y, s.x)?,
            self.images.as_slice()[..count * stride].to_vec(),
        )?;
        LabeledDataset::new(images, self.labels[..count].to_vec(), self.class_count, self.split)
    }
}

fn read_be_u32(bytes: &[u8], at: usize, field: &str) -> Result<u32> {
    if at + 4 > bytes.len() {
        return Err(Error::Format(format!("{field}: file truncated")));
    }
    Ok(u32::from_be_bytes([
        bytes[at],
        bytes[at + 1],
        bytes[at + 2],
        bytes[at + 3],
    ]))
}

/// Parse a big-endian IDX image/label file pair.
pub fn load_idx<S: Scalar>(
    image_path: &Path,
    label_path: &Path,
    split: Split,
    class_count: usize,
) -> Result<LabeledDataset<S>> {
    let img = std::fs::read(image_path)?;
    let lbl = std::fs::read(label_path)?;

    let magic = read_be_u32(&img, 0, "image magic")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "image magic: expected {IDX_IMAGE_MAGIC:#010x}, got {magic:#010x}"
        )));
    }
    let count = read_be_u32(&img, 4, "image count")? as usize;
    let rows = read_be_u32(&img, 8, "image rows")? as usize;
    let cols = read_be_u32(&img, 12, "image cols")? as usize;
    let payload = count * rows * cols;
    if img.len() != 16 + payload {
        return Err(Error::Format(format!(
            "image payload: expected {payload} bytes, file holds {}",
            img.len() - 16.min(img.len())
        )));
    }

    let lbl_magic = read_be_u32(&lbl, 0, "label magic")?;
    if lbl_magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "label magic: expected {IDX_LABEL_MAGIC:#010x}, got {lbl_magic:#010x}"
        )));
    }
    let lbl_count = read_be_u32(&lbl, 4, "label count")? as usize;
    if lbl_count != count {
        return Err(Error::Format(format!(
            "label count: {lbl_count} labels for {count} images"
        )));
    }
    if lbl.len() != 8 + count {
        return Err(Error::Format(format!(
            "label payload: expected {count} bytes, file holds {}",
            lbl.len() - 8.min(lbl.len())
        )));
    }

    let values: Vec<S> = img[16..].iter().map(|&b| S::from_f64(b as f64)).collect();
    let images = Tensor::from_vec(Shape::new(count, 1, rows, cols)?, values)?;
    let labels: Vec<usize> = lbl[8..].iter().map(|&b| b as usize).collect();
    LabeledDataset::new(images, labels, class_count, split)
}

/// Write a single-channel dataset back to the IDX pair format. Raw values
/// are rounded to bytes, so integral raw-scale datasets round-trip exactly.
pub fn write_idx<S: Scalar>(
    dataset: &LabeledDataset<S>,
    image_path: &Path,
    label_path: &Path,
) -> Result<()> {
    let s = dataset.images().shape();
    if s.z != 1 {
        return Err(Error::Data(format!(
            "idx fixtures are single-channel, dataset has {} channels",
            s.z
        )));
    }
    let mut img = Vec::with_capacity(16 + s.count());
    img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(s.n as u32).to_be_bytes());
    img.extend_from_slice(&(s.y as u32).to_be_bytes());
    img.extend_from_slice(&(s.x as u32).to_be_bytes());
    for &v in dataset.images().as_slice() {
        img.push(v.as_f64().round().clamp(0.0, 255.0) as u8);
    }

    let mut lbl = Vec::with_capacity(8 + dataset.len());
    lbl.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    for &label in dataset.labels() {
        lbl.push(label as u8);
    }

    std::fs::write(image_path, img)?;
    std::fs::write(label_path, lbl)?;
    Ok(())
}

/// Load CIFAR-10 binary batch files: 3073-byte records, one label byte then
/// three 1024-byte color planes (red, green, blue) of a 32x32 image.
pub fn load_cifar10_binary<S: Scalar>(paths: &[&Path], split: Split) -> Result<LabeledDataset<S>> {
    if paths.is_empty() {
        return Err(Error::Data("no cifar batch files given".into()));
    }
    let mut values: Vec<S> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Format(format!(
                "record length: {} is not a positive multiple of {CIFAR_RECORD} ({})",
                bytes.len(),
                path.display()
            )));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            labels.push(record[0] as usize);
            values.extend(record[1..].iter().map(|&b| S::from_f64(b as f64)));
        }
    }
    let images = Tensor::from_vec(Shape::new(labels.len(), 3, 32, 32)?, values)?;
    LabeledDataset::new(images, labels, 10, split)
}

/// Write a 3-channel 32x32 dataset in the CIFAR-10 binary record format.
pub fn write_cifar10_binary<S: Scalar>(dataset: &LabeledDataset<S>, path: &Path) -> Result<()> {
    let s = dataset.images().shape();
    if s.z != 3 || s.y != 32 || s.x != 32 {
        return Err(Error::Data(format!(
            "cifar fixtures need (n, 3, 32, 32) images, got {s}"
        )));
    }
    let stride = s.sample_stride();
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD);
    for i in 0..dataset.len() {
        out.push(dataset.labels()[i] as u8);
        for &v in &dataset.images().as_slice()[i * stride..(i + 1) * stride] {
            out.push(v.as_f64().round().clamp(0.0, 255.0) as u8);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Augmentation and normalization constants.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// Maximum shift in pixels, each direction, zero-filled.
    pub max_shift: usize,
    pub flip_prob: f64,
    /// Per-channel means subtracted by [`normalize`]; single-channel data
    /// uses the first (red) entry.
    pub channel_means: Vec<f64>,
    pub divisor: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_shift: 4,
            flip_prob: 0.5,
            channel_means: vec![122.0, 117.0, 104.0],
            divisor: 256.0,
        }
    }
}

/// Random shift (zero fill) followed by random horizontal flip.
pub fn augment<S: Scalar>(image: &Tensor<S>, config: &AugmentConfig, rng: &mut Rng) -> Tensor<S> {
    let mut out = image.clone();
    if config.max_shift > 0 {
        let s = config.max_shift as i64;
        let dy = rng.below((2 * s + 1) as u64).expect("span >= 1") as i64 - s;
        let dx = rng.below((2 * s + 1) as u64).expect("span >= 1") as i64 - s;
        out = shift_image(&out, dy as isize, dx as isize);
    }
    if config.flip_prob > 0.0 && rng.uniform01() < config.flip_prob {
        out = flip_horizontal(&out);
    }
    out
}

/// Translate by (dy, dx), filling vacated pixels with zero.
pub fn shift_image<S: Scalar>(image: &Tensor<S>, dy: isize, dx: isize) -> Tensor<S> {
    let shape = image.shape();
    let mut out = Tensor::zeros(shape);
    for n in 0..shape.n {
        for z in 0..shape.z {
            for y in 0..shape.y {
                let sy = y as isize - dy;
                if sy < 0 || sy >= shape.y as isize {
                    continue;
                }
                for x in 0..shape.x {
                    let sx = x as isize - dx;
                    if sx < 0 || sx >= shape.x as isize {
                        continue;
                    }
                    out.set(n, z, y, x, image.get(n, z, sy as usize, sx as usize));
                }
            }
        }
    }
    out
}

pub fn flip_horizontal<S: Scalar>(image: &Tensor<S>) -> Tensor<S> {
    let shape = image.shape();
    let mut out = Tensor::zeros(shape);
    for n in 0..shape.n {
        for z in 0..shape.z {
            for y in 0..shape.y {
                for x in 0..shape.x {
                    out.set(n, z, y, x, image.get(n, z, y, shape.x - 1 - x));
                }
            }
        }
    }
    out
}

/// Map raw [0, 255] values into the input domain:
/// `(raw - channel_mean) / divisor` per channel.
pub fn normalize<S: Scalar>(image: &Tensor<S>, config: &AugmentConfig) -> Tensor<S> {
    let shape = image.shape();
    let plane = shape.plane_stride();
    let inv = S::from_f64(1.0 / config.divisor);
    let mut out = image.clone();
    for n in 0..shape.n {
        for z in 0..shape.z {
            let mean = S::from_f64(
                config
                    .channel_means
                    .get(z)
                    .copied()
                    .unwrap_or(config.channel_means[0]),
            );
            let base = n * shape.sample_stride() + z * plane;
            for v in &mut out.as_mut_slice()[base..base + plane] {
                *v = (*v - mean) * inv;
            }
        }
    }
    out
}

/// Linearly separable synthetic dataset: class c images are a constant
/// level 255*(c+1)/(C+1) plus uniform noise, rounded to integers so the
/// raw scale round-trips through the byte fixture formats.
pub fn synthetic_dataset<S: Scalar>(
    rng: &mut Rng,
    class_count: usize,
    n: usize,
    y: usize,
    x: usize,
    noise: f64,
    split: Split,
) -> Result<LabeledDataset<S>> {
    if class_count < 2 {
        return Err(Error::Domain("synthetic dataset needs >= 2 classes".into()));
    }
    if n == 0 {
        return Err(Error::Domain("synthetic dataset needs >= 1 image".into()));
    }
    let shape = Shape::new(n, 1, y, x)?;
    let mut values = Vec::with_capacity(shape.count());
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % class_count;
        labels.push(class);
        let level = 255.0 * (class as f64 + 1.0) / (class_count as f64 + 1.0);
        for _ in 0..y * x {
            let jitter = if noise > 0.0 {
                (rng.uniform01() * 2.0 - 1.0) * noise
            } else {
                0.0
            };
            values.push(S::from_f64((level + jitter).round().clamp(0.0, 255.0)));
        }
    }
    LabeledDataset::new(Tensor::from_vec(shape, values)?, labels, class_count, split)
}
