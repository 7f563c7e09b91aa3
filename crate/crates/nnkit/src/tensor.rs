//! Dense 4-D tensors with a fixed (n, z, y, x) row-major layout.
//!
//! `x` is the fastest-moving index, so one image row is contiguous and the
//! per-pixel channel reduction walks the buffer with a single stride of
//! `y * x` elements.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dimensions of a 4-D tensor: batch, channels, rows, columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl Shape {
    pub fn new(n: usize, z: usize, y: usize, x: usize) -> Result<Self> {
        if n == 0 || z == 0 || y == 0 || x == 0 {
            return Err(Error::Shape(format!(
                "all dimensions must be >= 1, got ({n}, {z}, {y}, {x})"
            )));
        }
        n.checked_mul(z)
            .and_then(|v| v.checked_mul(y))
            .and_then(|v| v.checked_mul(x))
            .ok_or_else(|| {
                Error::Shape(format!("element count of ({n}, {z}, {y}, {x}) overflows usize"))
            })?;
        Ok(Shape { n, z, y, x })
    }

    /// Total number of elements.
    pub fn count(&self) -> usize {
        self.n * self.z * self.y * self.x
    }

    /// Elements per sample (z * y * x).
    pub fn sample_stride(&self) -> usize {
        self.z * self.y * self.x
    }

    /// Elements per channel plane (y * x).
    pub fn plane_stride(&self) -> usize {
        self.y * self.x
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.z, self.y, self.x)
    }
}

/// Dense 4-D array of `S` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Shape,
    values: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Tensor with every element set to `value`.
    pub fn filled(shape: Shape, value: S) -> Self {
        Tensor {
            values: vec![value; shape.count()],
            shape,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn from_vec(shape: Shape, values: Vec<S>) -> Result<Self> {
        if values.len() != shape.count() {
            return Err(Error::Shape(format!(
                "buffer length {} does not match shape {} ({} elements)",
                values.len(),
                shape,
                shape.count()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<S> {
        self.values
    }

    /// Flat buffer offset of logical index (n, z, y, x).
    #[inline]
    pub fn offset(&self, n: usize, z: usize, y: usize, x: usize) -> usize {
        debug_assert!(n < self.shape.n && z < self.shape.z && y < self.shape.y && x < self.shape.x);
        ((n * self.shape.z + z) * self.shape.y + y) * self.shape.x + x
    }

    #[inline]
    pub fn get(&self, n: usize, z: usize, y: usize, x: usize) -> S {
        self.values[self.offset(n, z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, z: usize, y: usize, x: usize, value: S) {
        let i = self.offset(n, z, y, x);
        self.values[i] = value;
    }

    /// Reinterpret the buffer under a different shape with equal element count.
    pub fn reshaped(&self, shape: Shape) -> Result<Tensor<S>> {
        if shape.count() != self.values.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} elements into {}",
                self.values.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape,
            values: self.values.clone(),
        })
    }

    /// Copy of sample `n` as a (1, z, y, x) tensor.
    pub fn sample(&self, n: usize) -> Result<Tensor<S>> {
        if n >= self.shape.n {
            return Err(Error::Domain(format!(
                "sample index {n} out of range for batch {}",
                self.shape.n
            )));
        }
        let stride = self.shape.sample_stride();
        let shape = Shape::new(1, self.shape.z, self.shape.y, self.shape.x)?;
        Tensor::from_vec(shape, self.values[n * stride..(n + 1) * stride].to_vec())
    }

    fn check_same_shape(&self, other: &Tensor<S>, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{op}: shape mismatch {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Pointwise sum.
    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_same_shape(other, "add")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape,
            values,
        })
    }

    /// Pointwise difference.
    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_same_shape(other, "sub")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor {
            shape: self.shape,
            values,
        })
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_same_shape(other, "mul")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor {
            shape: self.shape,
            values,
        })
    }

    /// Multiply every element by a scalar.
    pub fn scale(&self, factor: S) -> Tensor<S> {
        Tensor {
            shape: self.shape,
            values: self.values.iter().map(|&v| v * factor).collect(),
        }
    }

    /// Add a scalar to every element.
    pub fn add_scalar(&self, value: S) -> Tensor<S> {
        Tensor {
            shape: self.shape,
            values: self.values.iter().map(|&v| v + value).collect(),
        }
    }

    /// Largest absolute element.
    pub fn max_abs(&self) -> S {
        self.values
            .iter()
            .fold(S::zero(), |acc, v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Convert element type (used to cross between f32 training and f64 checks).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            values: self.values.iter().map(|v| T::from_f64(v.as_f64())).collect(),
        }
    }
}

/// `shape` filled with `value`; the spec's tensor constructor.
pub fn tensor_fill<S: Scalar>(shape: Shape, value: S) -> Tensor<S> {
    Tensor::filled(shape, value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn fill_zero_case() {
        let t = tensor_fill(Shape::new(1, 1, 1, 1).unwrap(), 0.0_f64);
        assert_eq!(t.as_slice(), &[0.0]);
    }

    #[test]
    fn fill_constant_case() {
        let t = tensor_fill(Shape::new(1, 2, 1, 1).unwrap(), 3.5_f32);
        assert_eq!(t.as_slice(), &[3.5, 3.5]);
    }

    #[test]
    fn fill_element_count() {
        let t = tensor_fill(Shape::new(2, 3, 4, 5).unwrap(), 1.0_f32);
        assert_eq!(t.len(), 120);
        assert!(t.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(Shape::new(1, 0, 2, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn layout_round_trip_exhaustive() {
        let shape = Shape::new(2, 3, 4, 5).unwrap();
        let mut t = Tensor::zeros(shape);
        let mut expected = 0.0_f64;
        for n in 0..2 {
            for z in 0..3 {
                for y in 0..4 {
                    for x in 0..5 {
                        t.set(n, z, y, x, expected);
                        assert_eq!(t.get(n, z, y, x), expected);
                        expected += 1.0;
                    }
                }
            }
        }
        // x is the fastest index, so the buffer is the counting sequence.
        for (i, &v) in t.as_slice().iter().enumerate() {
            assert_eq!(v, i as f64);
        }
    }

    #[test]
    fn additive_identity() {
        let shape = Shape::new(1, 2, 2, 2).unwrap();
        let mut rng = Rng::new(7);
        let x = random_tensor(shape, &mut rng);
        let zero = Tensor::zeros(shape);
        assert_eq!(x.add(&zero).unwrap(), x);
    }

    #[test]
    fn multiplicative_identity_and_self_cancel() {
        let shape = Shape::new(1, 2, 3, 1).unwrap();
        let mut rng = Rng::new(8);
        let x = random_tensor(shape, &mut rng);
        assert_eq!(x.scale(1.0), x);
        let diff = x.sub(&x).unwrap();
        assert!(diff.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a: Tensor<f32> = Tensor::zeros(Shape::new(1, 1, 2, 2).unwrap());
        let b: Tensor<f32> = Tensor::zeros(Shape::new(1, 1, 2, 3).unwrap());
        assert!(matches!(a.add(&b), Err(Error::Shape(_))));
    }

    fn random_tensor(shape: Shape, rng: &mut Rng) -> Tensor<f64> {
        let values = (0..shape.count()).map(|_| rng.uniform01() * 2.0 - 1.0).collect();
        Tensor::from_vec(shape, values).unwrap()
    }

    #[test]
    fn elementwise_matches_scalar_loop_oracle() {
        let shape = Shape::new(2, 3, 4, 5).unwrap();
        let mut rng = Rng::new(42);
        let a = random_tensor(shape, &mut rng);
        let b = random_tensor(shape, &mut rng);

        let sum = a.add(&b).unwrap();
        let diff = a.sub(&b).unwrap();
        let prod = a.mul(&b).unwrap();
        let scaled = a.scale(0.25);

        for n in 0..2 {
            for z in 0..3 {
                for y in 0..4 {
                    for x in 0..5 {
                        let (av, bv) = (a.get(n, z, y, x), b.get(n, z, y, x));
                        assert_eq!(sum.get(n, z, y, x), av + bv);
                        assert_eq!(diff.get(n, z, y, x), av - bv);
                        assert_eq!(prod.get(n, z, y, x), av * bv);
                        assert_eq!(scaled.get(n, z, y, x), av * 0.25);
                    }
                }
            }
        }
    }
}
