//! Embedding vectors, product records and the distance metrics shared by the
//! index, the PCA reducer and the decider.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Deref;

use thiserror::Error;

/// Per-modality vector width after reduction.
pub const REDUCED_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector must have at least one element")]
    Empty,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("zero vector has no direction")]
    ZeroVector,
}

/// Fixed-dimension list of finite `f32` values.
#[derive(Clone, PartialEq, Default)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite(pos));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: alloc::vec![0.0; dim],
        }
    }

    /// Unit vector along axis `axis`.
    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.values[axis] = 1.0;
        v
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    fn check_dim(&self, other: &Self) -> Result<(), VectorError> {
        if self.dim() != other.dim() {
            return Err(VectorError::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(())
    }
}

impl Deref for EmbeddingVector {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.values
    }
}

impl fmt::Debug for EmbeddingVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EmbeddingVector(dim={}, ", self.dim())?;
        f.debug_list().entries(self.values.iter().take(4)).finish()?;
        if self.dim() > 4 {
            f.write_str("..")?;
        }
        f.write_str(")")
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.values
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = VectorError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

/// One catalog item. Search runs on `text_vec` only; `image_vec` feeds the
/// decider.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductRecord {
    pub id: String,
    pub text_vec: EmbeddingVector,
    pub image_vec: Option<EmbeddingVector>,
    pub category: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Metric {
    L2,
    InnerProduct,
    /// Inner product on L2-normalized vectors.
    #[default]
    Cosine,
}

impl Metric {
    /// True when a larger score means a closer match.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::L2)
    }

    /// Raw score between two equal-length slices; for `Cosine` the caller
    /// passes normalized slices.
    #[inline]
    pub fn score(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Metric::L2 => libm::sqrt(squared_l2(a, b)),
            Metric::InnerProduct | Metric::Cosine => dot(a, b),
        }
    }

    /// Maps a score onto a key where smaller always ranks first.
    #[inline]
    pub fn sort_key(self, score: f64) -> f64 {
        if self.higher_is_better() {
            -score
        } else {
            score
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::L2 => "l2",
            Metric::InnerProduct => "ip",
            Metric::Cosine => "cosine",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Metric::L2 => 0,
            Metric::InnerProduct => 1,
            Metric::Cosine => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Metric::L2),
            1 => Some(Metric::InnerProduct),
            2 => Some(Metric::Cosine),
            _ => None,
        }
    }
}

impl core::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l2" | "euclidean" => Ok(Metric::L2),
            "ip" | "inner_product" | "innerproduct" => Ok(Metric::InnerProduct),
            "cosine" | "cos" => Ok(Metric::Cosine),
            other => Err(alloc::format!("unknown metric `{other}`")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// Slice kernels. Accumulate in f64; these are the hot loops of search and
// k-means, so they stay on plain slices.

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four independent accumulators so the loop vectorizes
    let mut acc = [0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] as f64 * b[j] as f64;
        acc[1] += a[j + 1] as f64 * b[j + 1] as f64;
        acc[2] += a[j + 2] as f64 * b[j + 2] as f64;
        acc[3] += a[j + 3] as f64 * b[j + 3] as f64;
    }
    let mut tail = 0f64;
    for j in chunks * 4..a.len() {
        tail += a[j] as f64 * b[j] as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        for k in 0..4 {
            let d = a[j + k] as f64 - b[j + k] as f64;
            acc[k] += d * d;
        }
    }
    let mut tail = 0f64;
    for j in chunks * 4..a.len() {
        let d = a[j] as f64 - b[j] as f64;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm(a: &[f32]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Normalizes `values` in place; returns false (leaving them untouched) for
/// the zero vector.
pub fn normalize_in_place(values: &mut [f32]) -> bool {
    let n = norm(values);
    if n == 0.0 {
        return false;
    }
    for v in values.iter_mut() {
        *v = (*v as f64 / n) as f32;
    }
    true
}

pub fn l2_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VectorError> {
    a.check_dim(b)?;
    Ok(libm::sqrt(squared_l2(a, b)))
}

pub fn inner_product(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VectorError> {
    a.check_dim(b)?;
    Ok(dot(a, b))
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VectorError> {
    a.check_dim(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, VectorError> {
    let mut values = v.values.clone();
    if !normalize_in_place(&mut values) {
        return Err(VectorError::ZeroVector);
    }
    Ok(EmbeddingVector { values })
}

/// Distance or similarity of `a` and `b` under `metric`.
pub fn score(metric: Metric, a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VectorError> {
    match metric {
        Metric::L2 => l2_distance(a, b),
        Metric::InnerProduct => inner_product(a, b),
        Metric::Cosine => cosine(a, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
        v(&(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f32>>())
    }

    #[test]
    fn l2_trivial_cases() {
        assert_eq!(l2_distance(&v(&[0.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(l2_distance(&v(&[3.0, 0.0]), &v(&[0.0, 4.0])).unwrap(), 5.0);
    }

    #[test]
    fn l2_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (a, b) = (random(&mut rng, 128), random(&mut rng, 128));
            let mut sum = 0f64;
            for i in 0..128 {
                let d = a[i] as f64 - b[i] as f64;
                sum += d * d;
            }
            let oracle = sum.sqrt();
            let got = l2_distance(&a, &b).unwrap();
            assert!((got - oracle).abs() <= 1e-5 * oracle);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = l2_distance(&v(&[1.0]), &v(&[1.0, 2.0])).unwrap_err();
        assert_eq!(err, VectorError::DimensionMismatch { expected: 1, actual: 2 });
        assert!(inner_product(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
        assert!(cosine(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn construction_rejects_bad_values() {
        assert_eq!(EmbeddingVector::new(vec![]), Err(VectorError::Empty));
        assert_eq!(
            EmbeddingVector::new(vec![0.0, f32::NAN]),
            Err(VectorError::NonFinite(1))
        );
        assert!(EmbeddingVector::new(vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn normalize_cases() {
        let n = normalize(&v(&[3.0, 4.0])).unwrap();
        assert!((n[0] - 0.6).abs() < 1e-6 && (n[1] - 0.8).abs() < 1e-6);
        let again = normalize(&n).unwrap();
        for i in 0..2 {
            assert!((again[i] - n[i]).abs() < 1e-6);
        }
        assert_eq!(normalize(&v(&[0.0, 0.0])), Err(VectorError::ZeroVector));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = normalize(&random(&mut rng, 128)).unwrap();
            let norm: f64 = x.iter().map(|&a| (a as f64) * (a as f64)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn cosine_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 64);
        let neg = v(&a.iter().map(|x| -x).collect::<Vec<_>>());
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() <= 1e-6);
        assert!((cosine(&a, &neg).unwrap() + 1.0).abs() <= 1e-6);
        assert_eq!(cosine(&a, &EmbeddingVector::zeros(64)), Err(VectorError::ZeroVector));

        for _ in 0..20 {
            let (a, b) = (random(&mut rng, 128), random(&mut rng, 128));
            let (mut ab, mut aa, mut bb) = (0f64, 0f64, 0f64);
            for i in 0..128 {
                ab += a[i] as f64 * b[i] as f64;
                aa += a[i] as f64 * a[i] as f64;
                bb += b[i] as f64 * b[i] as f64;
            }
            let oracle = ab / (aa.sqrt() * bb.sqrt());
            let got = cosine(&a, &b).unwrap();
            assert!((got - oracle).abs() <= 1e-5);
            let via_ip = inner_product(&normalize(&a).unwrap(), &normalize(&b).unwrap()).unwrap();
            assert!((got - via_ip).abs() <= 1e-6);
        }
    }

    #[test]
    fn metric_roundtrips_through_code_and_name() {
        for m in [Metric::L2, Metric::InnerProduct, Metric::Cosine] {
            assert_eq!(Metric::from_code(m.code()), Some(m));
            assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
        }
        assert!("manhattan".parse::<Metric>().is_err());
    }

    #[test]
    fn metrics_agree_on_nearest_neighbor_for_normalized_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let set: Vec<_> = (0..200).map(|_| normalize(&random(&mut rng, 32)).unwrap()).collect();
        for _ in 0..20 {
            let q = normalize(&random(&mut rng, 32)).unwrap();
            let argmin_l2 = (0..set.len())
                .min_by(|&i, &j| l2_distance(&q, &set[i]).unwrap().total_cmp(&l2_distance(&q, &set[j]).unwrap()))
                .unwrap();
            let argmax_ip = (0..set.len())
                .max_by(|&i, &j| inner_product(&q, &set[i]).unwrap().total_cmp(&inner_product(&q, &set[j]).unwrap()))
                .unwrap();
            let argmax_cos = (0..set.len())
                .max_by(|&i, &j| cosine(&q, &set[i]).unwrap().total_cmp(&cosine(&q, &set[j]).unwrap()))
                .unwrap();
            assert_eq!(argmin_l2, argmax_ip);
            assert_eq!(argmax_ip, argmax_cos);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn unit_pair() -> impl Strategy<Value = (EmbeddingVector, EmbeddingVector)> {
            (1usize..64).prop_flat_map(|d| {
                (
                    proptest::collection::vec(-10.0f32..10.0, d),
                    proptest::collection::vec(-10.0f32..10.0, d),
                )
            })
            .prop_filter_map("nonzero", |(a, b)| {
                let a = normalize(&EmbeddingVector::new(a).ok()?).ok()?;
                let b = normalize(&EmbeddingVector::new(b).ok()?).ok()?;
                Some((a, b))
            })
        }

        proptest! {
            #[test]
            fn l2_and_ip_related_on_unit_vectors((a, b) in unit_pair()) {
                let d = l2_distance(&a, &b).unwrap();
                let ip = inner_product(&a, &b).unwrap();
                prop_assert!((d * d - (2.0 - 2.0 * ip)).abs() <= 1e-5);
            }

            #[test]
            fn l2_is_symmetric((a, b) in unit_pair()) {
                prop_assert_eq!(l2_distance(&a, &b).unwrap(), l2_distance(&b, &a).unwrap());
            }
        }
    }
}
