//! Deterministic stand-in for the text and image encoders: hashed text
//! embeddings and a clustered synthetic catalog with known duplicates.
//!
//! Geometry. Category centers are unit vectors. A product's identity is
//! `normalize(center + spread·g/√d)` with `g ~ N(0, I)`, and every
//! observation of it is `normalize(identity + σ·g')`. Two distinct products
//! of one category sit about `spread·√2 / √(1 + spread²)` apart; two
//! observations of one product sit about `σ·√(2d)` apart.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use core::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::decider::{Label, PairSample};
use crate::vector::{normalize_in_place, EmbeddingVector, ProductRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(&'static str),
}

/// Spread of product identities around their category center.
pub const DEFAULT_SPREAD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_clusters: usize,
    pub dim: usize,
    /// Per-coordinate noise added to every observation.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.num_clusters == 0 {
            return Err(SynthError::InvalidSpec("num_clusters must be positive"));
        }
        if self.dim == 0 {
            return Err(SynthError::InvalidSpec("dim must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SynthError::InvalidSpec("noise_sigma must be finite and >= 0"));
        }
        Ok(())
    }

    /// Typical distance between two same-category products over the
    /// typical distance between two observations of one product.
    pub fn separation_to_noise(&self) -> f64 {
        let sep = DEFAULT_SPREAD * libm::sqrt(2.0) / libm::sqrt(1.0 + DEFAULT_SPREAD * DEFAULT_SPREAD);
        let noise = self.noise_sigma * libm::sqrt(2.0 * self.dim as f64);
        if noise == 0.0 {
            f64::INFINITY
        } else {
            sep / noise
        }
    }

    /// Largest σ at which [`separation_to_noise`](Self::separation_to_noise)
    /// still reaches `ratio`.
    pub fn sigma_for_ratio(dim: usize, ratio: f64) -> f64 {
        let sep = DEFAULT_SPREAD * libm::sqrt(2.0) / libm::sqrt(1.0 + DEFAULT_SPREAD * DEFAULT_SPREAD);
        sep / (ratio * libm::sqrt(2.0 * dim as f64))
    }
}

fn gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z as f32
        })
        .collect()
}

fn unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    loop {
        let mut v = gaussian(dim, rng);
        if normalize_in_place(&mut v) {
            return v;
        }
    }
}

/// `normalize(base + scale·g)`.
fn perturb(base: &[f32], scale: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    loop {
        let mut v: Vec<f32> = base
            .iter()
            .map(|&b| {
                let z: f64 = StandardNormal.sample(&mut *rng);
                (b as f64 + scale * z) as f32
            })
            .collect();
        if normalize_in_place(&mut v) {
            return v;
        }
    }
}

fn vector(v: Vec<f32>) -> EmbeddingVector {
    EmbeddingVector::new(v).expect("synthetic vectors are finite and nonempty")
}

/// Lowercases and collapses whitespace runs to one space.
pub fn normalize_text(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for word in lower.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Unit vector seeded by the FNV-1a hash of the normalized text.
pub fn hash_embed(text: &str, dim: usize) -> Result<EmbeddingVector, SynthError> {
    if dim == 0 {
        return Err(SynthError::InvalidSpec("dim must be positive"));
    }
    let norm = normalize_text(text);
    if norm.is_empty() {
        return Err(SynthError::EmptyText);
    }
    let mut h = FnvHasher::default();
    h.write(norm.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
    Ok(vector(unit(dim, &mut rng)))
}

/// One product's two modalities before observation noise.
#[derive(Debug, Clone, PartialEq)]
struct Identity {
    cluster: usize,
    text: Vec<f32>,
    image: Vec<f32>,
}

/// Category centers drawn once from the world seed; catalogs and training
/// pairs sampled from the same world share them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    spec: SyntheticSpec,
    text_centers: Vec<Vec<f32>>,
    image_centers: Vec<Vec<f32>>,
}

/// Generated records plus every ground-truth duplicate pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCatalog {
    pub records: Vec<ProductRecord>,
    /// Canonically ordered (`a < b`), sorted.
    pub truth: Vec<(String, String)>,
}

impl SyntheticWorld {
    pub fn new(spec: SyntheticSpec) -> Result<Self, SynthError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let text_centers = (0..spec.num_clusters).map(|_| unit(spec.dim, &mut rng)).collect();
        let image_centers = (0..spec.num_clusters).map(|_| unit(spec.dim, &mut rng)).collect();
        Ok(Self {
            spec,
            text_centers,
            image_centers,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    fn identity(&self, cluster: usize, rng: &mut ChaCha8Rng) -> Identity {
        let scale = DEFAULT_SPREAD / libm::sqrt(self.spec.dim as f64);
        Identity {
            cluster,
            text: perturb(&self.text_centers[cluster], scale, rng),
            image: perturb(&self.image_centers[cluster], scale, rng),
        }
    }

    fn random_identity(&self, rng: &mut ChaCha8Rng) -> Identity {
        let c = rng.random_range(0..self.spec.num_clusters);
        self.identity(c, rng)
    }

    fn observe(&self, id: &Identity, rng: &mut ChaCha8Rng) -> (EmbeddingVector, EmbeddingVector) {
        let s = self.spec.noise_sigma;
        (vector(perturb(&id.text, s, rng)), vector(perturb(&id.image, s, rng)))
    }

    /// `n_products` records in total, `floor(n_products·dup_rate)` of them
    /// fresh observations of other records under new ids. Record order and
    /// ids are shuffled so duplicates are not adjacent.
    pub fn catalog(&self, n_products: usize, dup_rate: f64) -> Result<SyntheticCatalog, SynthError> {
        if !(0.0..1.0).contains(&dup_rate) {
            return Err(SynthError::InvalidSpec("dup_rate must lie in [0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0x9e37_79b9_7f4a_7c15);
        let n_dups = libm::floor(n_products as f64 * dup_rate) as usize;
        let n_orig = n_products - n_dups;
        if n_dups > 0 && n_orig == 0 {
            return Err(SynthError::InvalidSpec("no originals left to duplicate"));
        }
        let identities: Vec<Identity> = (0..n_orig).map(|_| self.random_identity(&mut rng)).collect();
        let mut sources: Vec<usize> = (0..n_orig).collect();
        sources.shuffle(&mut rng);
        // (identity index, observation)
        let mut rows: Vec<(usize, EmbeddingVector, EmbeddingVector)> = Vec::with_capacity(n_products);
        for (i, id) in identities.iter().enumerate() {
            let (t, im) = self.observe(id, &mut rng);
            rows.push((i, t, im));
        }
        for d in 0..n_dups {
            let src = sources[d % n_orig];
            let (t, im) = self.observe(&identities[src], &mut rng);
            rows.push((src, t, im));
        }
        rows.shuffle(&mut rng);

        let mut by_identity: Vec<Vec<usize>> = alloc::vec![Vec::new(); n_orig];
        let mut records = Vec::with_capacity(n_products);
        for (pos, (ident, text, image)) in rows.into_iter().enumerate() {
            by_identity[ident].push(pos);
            records.push(ProductRecord {
                id: product_id(pos),
                text_vec: text,
                image_vec: Some(image),
                category: Some(format!("c{}", identities[ident].cluster)),
            });
        }
        let mut truth = Vec::new();
        for members in &by_identity {
            for (i, &a) in members.iter().enumerate() {
                for &b in &members[i + 1..] {
                    let (x, y) = (product_id(a.min(b)), product_id(a.max(b)));
                    truth.push((x, y));
                }
            }
        }
        truth.sort();
        Ok(SyntheticCatalog { records, truth })
    }

    /// Labeled pairs, half matches. A match is two observations of one
    /// product; a non-match pairs different products, half of them from
    /// the same category.
    pub fn pairs(&self, n_pairs: usize, seed: u64) -> Vec<PairSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_pairs)
            .map(|i| {
                let a = self.random_identity(&mut rng);
                let (label, b) = if i % 2 == 0 {
                    (Label::Match, a.clone())
                } else if i % 4 == 1 {
                    (Label::NotMatch, self.identity(a.cluster, &mut rng))
                } else {
                    (Label::NotMatch, self.random_identity(&mut rng))
                };
                let (text_a, image_a) = self.observe(&a, &mut rng);
                let (text_b, image_b) = self.observe(&b, &mut rng);
                PairSample {
                    text_a,
                    image_a: Some(image_a),
                    text_b,
                    image_b: Some(image_b),
                    label,
                }
            })
            .collect()
    }
}

/// Zero-padded so lexical and numeric order agree.
pub fn product_id(i: usize) -> String {
    format!("p{i:07}")
}

pub fn synth_catalog(spec: &SyntheticSpec, n_products: usize, dup_rate: f64) -> Result<SyntheticCatalog, SynthError> {
    SyntheticWorld::new(spec.clone())?.catalog(n_products, dup_rate)
}

pub fn synth_pairs(spec: &SyntheticSpec, n_pairs: usize, seed: u64) -> Result<Vec<PairSample>, SynthError> {
    Ok(SyntheticWorld::new(spec.clone())?.pairs(n_pairs, seed))
}

/// A fixed random isometry from `source_dim` into `target_dim`, for
/// building high-dimensional data of known intrinsic dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Lift {
    source_dim: usize,
    target_dim: usize,
    /// `source_dim` orthonormal rows of length `target_dim`.
    basis: Vec<f32>,
}

impl Lift {
    pub fn new(source_dim: usize, target_dim: usize, seed: u64) -> Result<Self, SynthError> {
        if source_dim == 0 || source_dim > target_dim {
            return Err(SynthError::InvalidSpec("need 0 < source_dim <= target_dim"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(source_dim);
        while rows.len() < source_dim {
            let mut v: Vec<f64> = (0..target_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            // two Gram-Schmidt passes keep the rows orthonormal to f32 precision
            for _ in 0..2 {
                for r in &rows {
                    let p: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                    for (x, &y) in v.iter_mut().zip(r) {
                        *x -= p * y;
                    }
                }
            }
            let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            if n > 1e-6 {
                rows.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        Ok(Self {
            source_dim,
            target_dim,
            basis: rows.into_iter().flatten().map(|x| x as f32).collect(),
        })
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    /// Maps `v` into the target space, then adds per-coordinate Gaussian
    /// noise of scale `sigma` (none when zero).
    pub fn apply(&self, v: &[f32], sigma: f64, rng: &mut ChaCha8Rng) -> EmbeddingVector {
        assert_eq!(v.len(), self.source_dim, "lift input dimension");
        let mut out = alloc::vec![0f32; self.target_dim];
        for (row, &x) in self.basis.chunks_exact(self.target_dim).zip(v) {
            for (o, &b) in out.iter_mut().zip(row) {
                *o += x * b;
            }
        }
        if sigma > 0.0 {
            for o in out.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut *rng);
                *o += (sigma * z) as f32;
            }
        }
        vector(out)
    }

    /// Applies [`Lift::apply`] to all four vectors of every pair.
    pub fn lift_pairs(&self, pairs: &[PairSample], sigma: f64, seed: u64) -> Vec<PairSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut up = |v: &EmbeddingVector| self.apply(v, sigma, &mut rng);
        pairs
            .iter()
            .map(|p| PairSample {
                text_a: up(&p.text_a),
                image_a: p.image_a.as_ref().map(&mut up),
                text_b: up(&p.text_b),
                image_b: p.image_b.as_ref().map(&mut up),
                label: p.label,
            })
            .collect()
    }
}
