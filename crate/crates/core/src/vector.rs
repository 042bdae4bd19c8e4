use std::ops::{Deref, DerefMut};

/// A dense real vector of the problem dimension.
///
/// Iterates, gradients, error vectors and messages after reconstruction all
/// use this type. It dereferences to `[f64]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn zeros(d: usize) -> Self {
        DenseVector(vec![0.0; d])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        DenseVector(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) {
        debug_assert_eq!(self.0.len(), other.len());
        for (s, o) in self.0.iter_mut().zip(other) {
            *s += alpha * o;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in &mut self.0 {
            *s *= alpha;
        }
    }

    /// `self - other` as a new vector.
    pub fn sub(&self, other: &[f64]) -> DenseVector {
        debug_assert_eq!(self.0.len(), other.len());
        DenseVector(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn dist_sq(&self, other: &[f64]) -> f64 {
        debug_assert_eq!(self.0.len(), other.len());
        self.0.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

impl Deref for DenseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for DenseVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        DenseVector(v)
    }
}

impl FromIterator<f64> for DenseVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        DenseVector(iter.into_iter().collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Mean of equally sized vectors using pairwise (tree) summation in index order.
///
/// The reduction tree depends only on `parts.len()`, so the result is
/// bit-identical regardless of how the parts were produced.
pub fn pairwise_mean<V: AsRef<[f64]>>(parts: &[V]) -> DenseVector {
    assert!(!parts.is_empty(), "pairwise_mean of zero vectors");
    let mut sum = pairwise_sum(parts);
    sum.scale(1.0 / parts.len() as f64);
    sum
}

fn pairwise_sum<V: AsRef<[f64]>>(parts: &[V]) -> DenseVector {
    match parts.len() {
        1 => DenseVector(parts[0].as_ref().to_vec()),
        len => {
            let (left, right) = parts.split_at(len / 2);
            let mut l = pairwise_sum(left);
            let r = pairwise_sum(right);
            l.axpy(1.0, &r);
            l
        }
    }
}
