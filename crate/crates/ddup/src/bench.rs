//! Memory and latency harnesses over seeded synthetic vectors.

use std::time::Instant;

use ddup_core::ivf::default_nlist;
use ddup_core::{brute_force_search, kmeans_fit, EmbeddingVector, IvfIndex, MemoryFootprint, Metric};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::ServiceError;

/// Points used to train benchmark centroids, per list. Centroid quality
/// does not affect the footprint, so training stays cheap.
const MEM_TRAIN_PER_LIST: usize = 4;
const MEM_TRAIN_ITERS: usize = 3;
const BASELINE_DIM: usize = 128;

fn gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z as f32
        })
        .collect()
}

pub fn bench_id(i: usize) -> String {
    format!("v{i:08}")
}

/// Index filled with `count` standard-normal vectors of width `dim`; the
/// centroids are trained on a small sample first. Metric is L2.
pub struct MemoryIndexBuilder {
    index: IvfIndex,
    rng: ChaCha8Rng,
}

impl MemoryIndexBuilder {
    pub fn new(dim: usize, nlist: usize, seed: u64) -> Result<Self, ServiceError> {
        if dim == 0 || nlist == 0 {
            return Err(ServiceError::invalid("dim and nlist must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ dim as u64);
        let sample: Vec<Vec<f32>> = (0..nlist * MEM_TRAIN_PER_LIST).map(|_| gaussian(dim, &mut rng)).collect();
        let km = kmeans_fit(&sample, nlist, MEM_TRAIN_ITERS, seed)?;
        let index = IvfIndex::with_centroids(dim, Metric::L2, km.centroids)?;
        Ok(Self { index, rng })
    }

    /// Inserts vectors until the index holds `count`.
    pub fn fill_to(&mut self, count: usize) -> Result<(), ServiceError> {
        let dim = self.index.dim();
        for i in self.index.len()..count {
            let v = EmbeddingVector::new(gaussian(dim, &mut self.rng))?;
            self.index.insert(&bench_id(i), &v)?;
        }
        Ok(())
    }

    pub fn index(&self) -> &IvfIndex {
        &self.index
    }

    pub fn into_index(mut self) -> IvfIndex {
        self.index.shrink_to_fit();
        self.index
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryRow {
    pub dim: usize,
    pub count: usize,
    pub nlist: usize,
    pub vector_bytes: usize,
    pub centroid_bytes: usize,
    pub id_bytes: usize,
    pub list_overhead_bytes: usize,
    pub total_bytes: usize,
    pub bytes_per_vector: f64,
    /// Total over the 128-d total at the same count, when both exist.
    pub ratio_vs_128: Option<f64>,
}

impl MemoryRow {
    fn new(dim: usize, nlist: usize, f: &MemoryFootprint) -> Self {
        Self {
            dim,
            count: f.count,
            nlist,
            vector_bytes: f.vector_bytes,
            centroid_bytes: f.centroid_bytes,
            id_bytes: f.id_bytes,
            list_overhead_bytes: f.list_overhead_bytes,
            total_bytes: f.total_bytes,
            bytes_per_vector: f.bytes_per_vector(),
            ratio_vs_128: None,
        }
    }
}

/// Footprint for every `(dim, count)`. Each dimension grows one index
/// through the counts in ascending order. `nlist` defaults to
/// `ceil(sqrt(max count))`.
pub fn bench_memory(
    dims: &[usize],
    counts: &[usize],
    nlist: Option<usize>,
    seed: u64,
) -> Result<Vec<MemoryRow>, ServiceError> {
    let mut counts = counts.to_vec();
    counts.sort_unstable();
    counts.dedup();
    let max = counts.last().copied().unwrap_or(0);
    let nlist = nlist.unwrap_or_else(|| default_nlist(max.max(1)));
    let mut rows = Vec::new();
    for &dim in dims {
        let mut b = MemoryIndexBuilder::new(dim, nlist, seed)?;
        for &c in &counts {
            b.fill_to(c)?;
            rows.push(MemoryRow::new(dim, nlist, &b.index().memory_footprint()));
        }
    }
    let base: Vec<(usize, usize)> = rows
        .iter()
        .filter(|r| r.dim == BASELINE_DIM)
        .map(|r| (r.count, r.total_bytes))
        .collect();
    for r in &mut rows {
        if let Some(&(_, t)) = base.iter().find(|(c, _)| *c == r.count) {
            r.ratio_vs_128 = Some(r.total_bytes as f64 / t as f64);
        }
    }
    Ok(rows)
}

/// Least-squares fit of `y` on `x`: slope, intercept and R².
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// Seeded vectors around `clusters` random unit centers.
pub fn clustered_vectors(count: usize, dim: usize, clusters: usize, spread: f64, seed: u64) -> Vec<EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f32>> = (0..clusters.max(1))
        .map(|_| {
            let mut c = gaussian(dim, &mut rng);
            ddup_core::vector::normalize_in_place(&mut c);
            c
        })
        .collect();
    let scale = spread / (dim as f64).sqrt();
    (0..count)
        .map(|_| {
            let c = &centers[rng.random_range(0..centers.len())];
            let v = c
                .iter()
                .map(|&x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (x as f64 + scale * z) as f32
                })
                .collect();
            EmbeddingVector::new(v).expect("finite")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    pub nprobe: usize,
    pub median_us: f64,
    pub p99_us: f64,
    /// Mean share of the exact top-n found.
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub count: usize,
    pub dim: usize,
    pub nlist: usize,
    pub top_n: usize,
    pub queries: usize,
    pub rows: Vec<LatencyRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencySpec {
    pub count: usize,
    pub dim: usize,
    pub clusters: usize,
    pub nlist: Option<usize>,
    pub top_n: usize,
    pub nprobes: Vec<usize>,
    pub queries: usize,
    pub metric: Metric,
    pub seed: u64,
}

impl Default for LatencySpec {
    fn default() -> Self {
        Self {
            count: 100_000,
            dim: 128,
            clusters: 64,
            nlist: None,
            top_n: 10,
            nprobes: vec![1, 2, 4, 8, 16, 32, 64],
            queries: 200,
            metric: Metric::Cosine,
            seed: 0,
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[i.min(sorted.len() - 1)]
}

/// Per-query latency and recall against exhaustive search for each
/// nprobe (clamped to nlist). Queries are fresh draws from the data
/// distribution.
pub fn bench_latency(spec: &LatencySpec) -> Result<LatencyReport, ServiceError> {
    if spec.count == 0 || spec.queries == 0 || spec.top_n == 0 {
        return Err(ServiceError::invalid("count, queries and top_n must be positive"));
    }
    let data = clustered_vectors(spec.count + spec.queries, spec.dim, spec.clusters, 0.5, spec.seed);
    let (base, queries) = data.split_at(spec.count);
    let records: Vec<(String, EmbeddingVector)> =
        base.iter().enumerate().map(|(i, v)| (bench_id(i), v.clone())).collect();
    let nlist = spec.nlist.unwrap_or_else(|| default_nlist(spec.count));
    let index = IvfIndex::build(&records, nlist, spec.metric, spec.seed)?;
    let truth = queries
        .iter()
        .map(|q| brute_force_search(&records, q, spec.top_n, spec.metric))
        .collect::<Result<Vec<_>, _>>()?;
    // warm the caches once before timing
    for q in queries.iter().take(8) {
        index.search(q, spec.top_n, 1)?;
    }
    let mut sweep: Vec<usize> = spec.nprobes.iter().map(|&p| p.clamp(1, nlist)).collect();
    sweep.sort_unstable();
    sweep.dedup();
    let mut rows = Vec::new();
    for nprobe in sweep {
        let mut times = Vec::with_capacity(queries.len());
        let mut hits = 0usize;
        let mut wanted = 0usize;
        for (q, t) in queries.iter().zip(&truth) {
            let start = Instant::now();
            let got = index.search(q, spec.top_n, nprobe)?;
            times.push(start.elapsed().as_secs_f64() * 1e6);
            wanted += t.len();
            hits += t.iter().filter(|r| got.iter().any(|g| g.id == r.id)).count();
        }
        times.sort_by(f64::total_cmp);
        rows.push(LatencyRow {
            nprobe,
            median_us: percentile(&times, 0.5),
            p99_us: percentile(&times, 0.99),
            recall: hits as f64 / wanted as f64,
        });
    }
    Ok(LatencyReport {
        count: spec.count,
        dim: spec.dim,
        nlist,
        top_n: spec.top_n,
        queries: spec.queries,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_zero_is_centroids_only() {
        let rows = bench_memory(&[16], &[0], Some(4), 1).unwrap();
        assert_eq!(rows[0].total_bytes, 4 * 16 * 4);
        assert_eq!(rows[0].vector_bytes, 0);
    }

    #[test]
    fn linear_fit_recovers_a_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let (m, b, r2) = linear_fit(&x, &y);
        assert!((m - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_probe_has_full_recall() {
        let spec = LatencySpec {
            count: 2000,
            dim: 16,
            clusters: 8,
            nlist: Some(16),
            nprobes: vec![1, 4, 16],
            queries: 30,
            ..LatencySpec::default()
        };
        let r = bench_latency(&spec).unwrap();
        assert_eq!(r.rows.last().unwrap().recall, 1.0);
        for w in r.rows.windows(2) {
            assert!(w[0].recall <= w[1].recall);
        }
    }
}
