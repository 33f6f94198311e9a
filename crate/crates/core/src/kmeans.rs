//! Lloyd's k-means with k-means++ seeding; the coarse quantizer behind the
//! IVF index.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::vector::squared_l2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KMeansError {
    #[error("cannot form {k} clusters from {n} points")]
    TooFewPoints { n: usize, k: usize },
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("point {index} has dimension {actual}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        actual: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Row-major `k × dim`.
    pub centroids: Vec<f32>,
    pub dim: usize,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

/// Clusters `vectors` into `k` groups. Stops after `max_iters` Lloyd rounds
/// or once no assignment changes. When the data holds at least `k` distinct
/// points every returned centroid owns at least one of them: an empty
/// cluster takes over the point farthest from its own centroid.
pub fn kmeans_fit<V: AsRef<[f32]>>(
    vectors: &[V],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KMeansResult, KMeansError> {
    if k == 0 {
        return Err(KMeansError::ZeroClusters);
    }
    let n = vectors.len();
    if n < k {
        return Err(KMeansError::TooFewPoints { n, k });
    }
    let dim = vectors[0].as_ref().len();
    for (index, v) in vectors.iter().enumerate() {
        if v.as_ref().len() != dim {
            return Err(KMeansError::DimensionMismatch {
                index,
                expected: dim,
                actual: v.as_ref().len(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(vectors, k, dim, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;

    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let changed = assign(vectors, &centroids, dim, &mut assignments);
        let repaired = repair_empty(vectors, &mut centroids, dim, &mut assignments);
        if !changed && !repaired {
            break;
        }
        update_means(vectors, &mut centroids, dim, &assignments);
    }
    // the final mean update may have stranded a cluster
    assign(vectors, &centroids, dim, &mut assignments);
    for _ in 0..k {
        if !repair_empty(vectors, &mut centroids, dim, &mut assignments) {
            break;
        }
        assign(vectors, &centroids, dim, &mut assignments);
    }

    Ok(KMeansResult {
        centroids,
        dim,
        assignments,
        iterations,
    })
}

fn plus_plus_init<V: AsRef<[f32]>>(vectors: &[V], k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = vectors.len();
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(vectors[first].as_ref());

    let mut nearest: Vec<f64> = vectors
        .iter()
        .map(|v| squared_l2(v.as_ref(), vectors[first].as_ref()))
        .collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // every remaining point coincides with a centroid
            chosen.iter().position(|&c| !c).expect("n >= k")
        };
        chosen[pick] = true;
        let p = vectors[pick].as_ref();
        centroids.extend_from_slice(p);
        for (w, v) in nearest.iter_mut().zip(vectors) {
            let d = squared_l2(v.as_ref(), p);
            if d < *w {
                *w = d;
            }
        }
    }
    centroids
}

/// Nearest centroid of `v` (lowest index wins ties) and its squared distance.
pub(crate) fn nearest_centroid(v: &[f32], centroids: &[f32], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_l2(v, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign<V: AsRef<[f32]>>(vectors: &[V], centroids: &[f32], dim: usize, assignments: &mut [usize]) -> bool {
    let mut changed = false;
    for (v, a) in vectors.iter().zip(assignments.iter_mut()) {
        let (c, _) = nearest_centroid(v.as_ref(), centroids, dim);
        if *a != c {
            *a = c;
            changed = true;
        }
    }
    changed
}

fn repair_empty<V: AsRef<[f32]>>(
    vectors: &[V],
    centroids: &mut [f32],
    dim: usize,
    assignments: &mut [usize],
) -> bool {
    let k = centroids.len() / dim;
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    let mut repaired = false;
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, v) in vectors.iter().enumerate() {
            let a = assignments[i];
            if sizes[a] < 2 {
                continue;
            }
            let d = squared_l2(v.as_ref(), &centroids[a * dim..(a + 1) * dim]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        sizes[assignments[i]] -= 1;
        sizes[c] = 1;
        assignments[i] = c;
        centroids[c * dim..(c + 1) * dim].copy_from_slice(vectors[i].as_ref());
        repaired = true;
    }
    repaired
}

fn update_means<V: AsRef<[f32]>>(vectors: &[V], centroids: &mut [f32], dim: usize, assignments: &[usize]) {
    let k = centroids.len() / dim;
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (v, &a) in vectors.iter().zip(assignments) {
        counts[a] += 1;
        for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(v.as_ref()) {
            *s += x as f64;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let inv = 1.0 / counts[c] as f64;
        for (dst, &s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
            *dst = (s * inv) as f32;
        }
    }
}
