//! Full-distribution-training data synthesis.
//!
//! A composite example superposes images of k distinct classes, weighted by
//! the normalized harmonic series, and carries the same weighting as its
//! ground-truth class distribution. k is drawn uniformly from {1, .., C},
//! each class appears at most once, and the class drawn first receives the
//! largest factor.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::loss::ClassMatrix;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Normalized harmonic weights F_i = (1/i) / sum_j (1/j), computed in
/// double precision regardless of the training element type.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorVector {
    factors: Vec<f64>,
}

impl FactorVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }
}

/// Harmonic factors for k superposed images.
pub fn harmonic_factors(k: usize) -> Result<FactorVector> {
    if k == 0 {
        return Err(Error::Domain("harmonic_factors requires k >= 1".into()));
    }
    let mut factors: Vec<f64> = (1..=k).map(|i| 1.0 / i as f64).collect();
    let sum: f64 = factors.iter().sum();
    for f in &mut factors {
        *f /= sum;
    }
    Ok(FactorVector { factors })
}

/// Number of images to combine: uniform over {1, .., class_count}.
pub fn sample_composition_size(rng: &mut Rng, class_count: usize) -> Result<usize> {
    if class_count == 0 {
        return Err(Error::Domain("composition size needs class_count >= 1".into()));
    }
    Ok(rng.below(class_count as u64)? as usize + 1)
}

/// k distinct class ids in random order; the first id receives the largest
/// factor. Implemented as a partial Fisher-Yates draw, uniform over ordered
/// k-subsets.
pub fn sample_class_subset(rng: &mut Rng, class_count: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > class_count {
        return Err(Error::Domain(format!(
            "subset size {k} outside [1, {class_count}]"
        )));
    }
    let mut pool: Vec<usize> = (0..class_count).collect();
    for i in 0..k {
        let j = i + rng.below((class_count - i) as u64)? as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    Ok(pool)
}

/// A superposed image together with its factor distribution.
#[derive(Debug, Clone)]
pub struct CompositeExample<S: Scalar> {
    pub image: Tensor<S>,
    /// Ground-truth distribution over all classes; support equals `classes`.
    pub distribution: Vec<S>,
    /// Source classes in factor order (largest factor first).
    pub classes: Vec<usize>,
    pub factors: FactorVector,
    /// Dataset indices of the images that were combined.
    pub sources: Vec<usize>,
}

/// Transform applied to each selected image before superposition; the
/// training pipeline passes augmentation plus normalization here.
pub type ImagePrep<'a, S> = dyn FnMut(Tensor<S>, &mut Rng) -> Result<Tensor<S>> + 'a;

/// Superpose one uniformly drawn image per listed class, weighted by
/// `factors`; the ground-truth distribution carries the same weights.
pub fn compose_example<S: Scalar>(
    dataset: &LabeledDataset<S>,
    classes: &[usize],
    factors: &FactorVector,
    rng: &mut Rng,
    prep: &mut ImagePrep<'_, S>,
) -> Result<CompositeExample<S>> {
    if classes.len() != factors.len() {
        return Err(Error::Domain(format!(
            "{} classes vs {} factors",
            classes.len(),
            factors.len()
        )));
    }
    let class_count = dataset.class_count();
    let mut image: Option<Tensor<S>> = None;
    let mut distribution = vec![S::zero(); class_count];
    let mut sources = Vec::with_capacity(classes.len());

    for (&class, &factor) in classes.iter().zip(factors.as_slice()) {
        if class >= class_count {
            return Err(Error::Domain(format!(
                "class {class} outside [0, {class_count})"
            )));
        }
        let members = dataset.class_members(class);
        if members.is_empty() {
            return Err(Error::Data(format!("class {class} has no images")));
        }
        let pick = members[rng.below(members.len() as u64)? as usize];
        sources.push(pick);
        let prepared = prep(dataset.image(pick)?, rng)?;
        let weighted = prepared.scale(S::from_f64(factor));
        image = Some(match image {
            Some(acc) => acc.add(&weighted)?,
            None => weighted,
        });
        distribution[class] = S::from_f64(factor);
    }

    Ok(CompositeExample {
        image: image.expect("classes is non-empty"),
        distribution,
        classes: classes.to_vec(),
        factors: factors.clone(),
        sources,
    })
}

/// One composite example per batch slot, each with its own k, classes and
/// source images. `force_k` pins the composition size (used by the compose
/// dump and the overlay-free baseline checks).
pub fn compose_batch<S: Scalar>(
    dataset: &LabeledDataset<S>,
    batch: usize,
    rng: &mut Rng,
    force_k: Option<usize>,
    prep: &mut ImagePrep<'_, S>,
) -> Result<Vec<CompositeExample<S>>> {
    if batch == 0 {
        return Err(Error::Domain("batch size must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let k = match force_k {
            Some(k) => {
                if k == 0 || k > dataset.class_count() {
                    return Err(Error::Domain(format!(
                        "forced k {k} outside [1, {}]",
                        dataset.class_count()
                    )));
                }
                k
            }
            None => sample_composition_size(rng, dataset.class_count())?,
        };
        let classes = sample_class_subset(rng, dataset.class_count(), k)?;
        let factors = harmonic_factors(k)?;
        out.push(compose_example(dataset, &classes, &factors, rng, prep)?);
    }
    Ok(out)
}

/// Batched driver: stacks `batch` composite images into one tensor and the
/// ground-truth distributions into a classes x batch matrix.
pub fn fdt_batch<S: Scalar>(
    dataset: &LabeledDataset<S>,
    batch: usize,
    rng: &mut Rng,
    prep: &mut ImagePrep<'_, S>,
) -> Result<(Tensor<S>, ClassMatrix<S>)> {
    let examples = compose_batch(dataset, batch, rng, None, prep)?;
    Ok((
        stack_images(&examples)?,
        gt_matrix(&examples, dataset.class_count())?,
    ))
}

/// Stack per-example images into an (n = batch, z, y, x) tensor.
pub fn stack_images<S: Scalar>(examples: &[CompositeExample<S>]) -> Result<Tensor<S>> {
    if examples.is_empty() {
        return Err(Error::Domain("cannot stack an empty batch".into()));
    }
    let s = examples[0].image.shape();
    let shape = Shape::new(examples.len(), s.z, s.y, s.x)?;
    let mut values = Vec::with_capacity(shape.count());
    for ex in examples {
        if ex.image.shape() != s {
            return Err(Error::Shape("inconsistent image shapes in batch".into()));
        }
        values.extend_from_slice(ex.image.as_slice());
    }
    Tensor::from_vec(shape, values)
}

/// Column-per-example ground-truth distribution matrix.
pub fn gt_matrix<S: Scalar>(
    examples: &[CompositeExample<S>],
    class_count: usize,
) -> Result<ClassMatrix<S>> {
    let mut m = ClassMatrix::zeros(class_count, examples.len());
    for (b, ex) in examples.iter().enumerate() {
        if ex.distribution.len() != class_count {
            return Err(Error::Shape(format!(
                "example distribution has {} classes, expected {class_count}",
                ex.distribution.len()
            )));
        }
        for (c, &v) in ex.distribution.iter().enumerate() {
            m.set(c, b, v);
        }
    }
    Ok(m)
}

/// Identity preparation: superpose raw dataset images.
pub fn raw_prep<S: Scalar>() -> impl FnMut(Tensor<S>, &mut Rng) -> Result<Tensor<S>> {
    |img, _| Ok(img)
}
