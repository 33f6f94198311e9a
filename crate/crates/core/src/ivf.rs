//! IVF_FLAT: k-means coarse quantizer plus uncompressed inverted lists.
//!
//! Queries scan only the `nprobe` lists whose centroids are closest. With
//! `nprobe == nlist` the result is exactly the brute-force ranking; ties are
//! broken by ascending id everywhere so the two can be compared as
//! sequences.

use alloc::boxed::Box;
use alloc::collections::BinaryHeap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::hash::{BuildHasher, BuildHasherDefault};
use core::mem::size_of;

use fnv::FnvHasher;
use hashbrown::HashTable;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kmeans::{kmeans_fit, KMeansError};
use crate::vector::{normalize_in_place, EmbeddingVector, Metric};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IvfError {
    #[error("no records to index")]
    Empty,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("nlist {nlist} must be in 1..={count}")]
    InvalidNlist { nlist: usize, count: usize },
    #[error("nprobe {nprobe} must be in 1..={nlist}")]
    InvalidNprobe { nprobe: usize, nlist: usize },
    #[error("top_n must be at least 1")]
    ZeroTopN,
    #[error("dimension mismatch: index has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector cannot be indexed under the cosine metric")]
    ZeroVector,
    #[error("corrupt index parts: {0}")]
    InvalidParts(&'static str),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub id: String,
    /// Distance for L2, similarity for inner product and cosine.
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Build-time knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfConfig {
    /// `None` picks `ceil(sqrt(count))`.
    pub nlist: Option<usize>,
    pub metric: Metric,
    pub seed: u64,
    /// Lloyd iterations for the coarse quantizer (10, as in common IVF
    /// libraries; list quality saturates early and build time is linear in it).
    pub kmeans_iters: usize,
    /// The quantizer trains on at most this many points per list.
    pub train_points_per_list: usize,
}

impl Default for IvfConfig {
    fn default() -> Self {
        Self {
            nlist: None,
            metric: Metric::Cosine,
            seed: 0,
            kmeans_iters: 10,
            train_points_per_list: 256,
        }
    }
}

pub fn default_nlist(count: usize) -> usize {
    let mut r = libm::sqrt(count as f64) as usize;
    while r * r < count {
        r += 1;
    }
    r.max(1)
}

pub fn default_nprobe(nlist: usize) -> usize {
    (nlist / 16).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Location {
    list: u32,
    pos: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvertedList {
    ids: Vec<Box<str>>,
    /// Row-major `len × dim`.
    vectors: Vec<f32>,
}

impl InvertedList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(|s| &**s)
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }
}

type IdHasher = BuildHasherDefault<FnvHasher>;

#[derive(Clone)]
pub struct IvfIndex {
    dim: usize,
    metric: Metric,
    centroids: Vec<f32>,
    lists: Vec<InvertedList>,
    lookup: HashTable<Location>,
    hasher: IdHasher,
    count: usize,
}

impl core::fmt::Debug for IvfIndex {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("IvfIndex")
            .field("dim", &self.dim)
            .field("metric", &self.metric)
            .field("nlist", &self.nlist())
            .field("count", &self.count)
            .finish()
    }
}

impl PartialEq for IvfIndex {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.metric == other.metric
            && self.centroids == other.centroids
            && self.lists == other.lists
    }
}

/// Byte accounting of an index, mirroring how a vector store's RAM use
/// splits between payload and bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryFootprint {
    pub count: usize,
    pub vector_bytes: usize,
    pub centroid_bytes: usize,
    pub id_bytes: usize,
    pub list_overhead_bytes: usize,
    pub total_bytes: usize,
}

impl MemoryFootprint {
    pub fn bytes_per_vector(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.total_bytes as f64 / self.count as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate<'a> {
    key: f64,
    score: f64,
    id: &'a str,
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate<'_> {
    // smaller = better
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then_with(|| self.id.cmp(other.id))
    }
}

/// Keeps the `top_n` smallest candidates.
struct TopN<'a> {
    n: usize,
    heap: BinaryHeap<Candidate<'a>>,
}

impl<'a> TopN<'a> {
    fn new(n: usize) -> Self {
        Self {
            n,
            heap: BinaryHeap::with_capacity(n + 1),
        }
    }

    #[inline]
    fn offer(&mut self, c: Candidate<'a>) {
        if self.heap.len() < self.n {
            self.heap.push(c);
        } else if let Some(worst) = self.heap.peek() {
            if c < *worst {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    fn finish(self) -> Vec<SearchResult> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .enumerate()
            .map(|(i, c)| SearchResult {
                id: c.id.to_string(),
                score: c.score,
                rank: i + 1,
            })
            .collect()
    }
}

/// Copies `v` into the representation stored for `metric`.
pub fn prepare(metric: Metric, v: &[f32]) -> Result<Vec<f32>, IvfError> {
    let mut out = v.to_vec();
    if metric == Metric::Cosine && !normalize_in_place(&mut out) {
        return Err(IvfError::ZeroVector);
    }
    Ok(out)
}

/// Exact top-`top_n` by full scan; ties go to the lower id.
pub fn brute_force_search(
    records: &[(String, EmbeddingVector)],
    query: &EmbeddingVector,
    top_n: usize,
    metric: Metric,
) -> Result<Vec<SearchResult>, IvfError> {
    if records.is_empty() {
        return Err(IvfError::Empty);
    }
    if top_n == 0 {
        return Err(IvfError::ZeroTopN);
    }
    let q = prepare(metric, query)?;
    let mut top = TopN::new(top_n);
    for (id, v) in records {
        if v.dim() != q.len() {
            return Err(IvfError::DimensionMismatch {
                expected: q.len(),
                actual: v.dim(),
            });
        }
        // only cosine changes the stored form
        let score = if metric == Metric::Cosine {
            metric.score(&q, &prepare(metric, v)?)
        } else {
            metric.score(&q, v)
        };
        top.offer(Candidate {
            key: metric.sort_key(score),
            score,
            id,
        });
    }
    Ok(top.finish())
}

impl IvfIndex {
    /// Trains centroids on `records` and files every record under its
    /// nearest centroid.
    pub fn build(
        records: &[(String, EmbeddingVector)],
        nlist: usize,
        metric: Metric,
        seed: u64,
    ) -> Result<Self, IvfError> {
        Self::build_with(
            records,
            &IvfConfig {
                nlist: Some(nlist),
                metric,
                seed,
                ..IvfConfig::default()
            },
        )
    }

    pub fn build_with(records: &[(String, EmbeddingVector)], config: &IvfConfig) -> Result<Self, IvfError> {
        if records.is_empty() {
            return Err(IvfError::Empty);
        }
        let count = records.len();
        let nlist = config.nlist.unwrap_or_else(|| default_nlist(count));
        if nlist == 0 || nlist > count {
            return Err(IvfError::InvalidNlist { nlist, count });
        }
        let dim = records[0].1.dim();
        let mut prepared = Vec::with_capacity(count);
        for (_, v) in records {
            if v.dim() != dim {
                return Err(IvfError::DimensionMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
            prepared.push(prepare(config.metric, v)?);
        }

        let centroids = Self::train_centroids(&prepared, nlist, config)?;
        let mut index = Self::with_centroids(dim, config.metric, centroids)?;
        for ((id, _), v) in records.iter().zip(prepared) {
            index.insert_prepared(id, v)?;
        }
        index.shrink_to_fit();
        Ok(index)
    }

    fn train_centroids(prepared: &[Vec<f32>], nlist: usize, config: &IvfConfig) -> Result<Vec<f32>, IvfError> {
        let cap = nlist.saturating_mul(config.train_points_per_list.max(1));
        let result = if prepared.len() > cap {
            let mut order: Vec<usize> = (0..prepared.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5a3b1e));
            order.truncate(cap);
            order.sort_unstable();
            let sample: Vec<&[f32]> = order.iter().map(|&i| prepared[i].as_slice()).collect();
            kmeans_fit(&sample, nlist, config.kmeans_iters, config.seed)?
        } else {
            kmeans_fit(prepared, nlist, config.kmeans_iters, config.seed)?
        };
        let mut centroids = result.centroids;
        if config.metric == Metric::Cosine {
            for c in centroids.chunks_exact_mut(result.dim) {
                normalize_in_place(c);
            }
        }
        Ok(centroids)
    }

    /// An empty index over pre-trained centroids (row-major `nlist × dim`).
    pub fn with_centroids(dim: usize, metric: Metric, centroids: Vec<f32>) -> Result<Self, IvfError> {
        if dim == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(dim) {
            return Err(IvfError::InvalidParts("centroid matrix shape"));
        }
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(IvfError::InvalidParts("non-finite centroid"));
        }
        let nlist = centroids.len() / dim;
        Ok(Self {
            dim,
            metric,
            centroids,
            lists: (0..nlist).map(|_| InvertedList::default()).collect(),
            lookup: HashTable::new(),
            hasher: IdHasher::default(),
            count: 0,
        })
    }

    /// Reassembles an index from stored lists, re-deriving the id lookup.
    pub fn from_parts(
        dim: usize,
        metric: Metric,
        centroids: Vec<f32>,
        lists: Vec<(Vec<String>, Vec<f32>)>,
    ) -> Result<Self, IvfError> {
        let mut index = Self::with_centroids(dim, metric, centroids)?;
        if lists.len() != index.nlist() {
            return Err(IvfError::InvalidParts("list count differs from centroid count"));
        }
        for (l, (ids, vectors)) in lists.into_iter().enumerate() {
            if vectors.len() != ids.len() * dim {
                return Err(IvfError::InvalidParts("list payload shape"));
            }
            if vectors.iter().any(|v| !v.is_finite()) {
                return Err(IvfError::InvalidParts("non-finite vector"));
            }
            for (pos, id) in ids.iter().enumerate() {
                let hash = index.hasher.hash_one(id.as_str());
                let lists = &index.lists;
                if index
                    .lookup
                    .find(hash, |loc| &*lists[loc.list as usize].ids[loc.pos as usize] == id.as_str())
                    .is_some()
                {
                    return Err(IvfError::DuplicateId(id.clone()));
                }
                index.lists[l].ids.push(id.as_str().into());
                let lists = &index.lists;
                let hasher = &index.hasher;
                index.lookup.insert_unique(
                    hash,
                    Location {
                        list: l as u32,
                        pos: pos as u32,
                    },
                    |loc| hasher.hash_one(&*lists[loc.list as usize].ids[loc.pos as usize]),
                );
            }
            index.lists[l].vectors = vectors;
            index.count += ids.len();
        }
        Ok(index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, list: usize) -> &[f32] {
        &self.centroids[list * self.dim..(list + 1) * self.dim]
    }

    pub fn lists(&self) -> &[InvertedList] {
        &self.lists
    }

    pub fn contains(&self, id: &str) -> bool {
        self.locate(id).is_some()
    }

    /// Which inverted list holds `id`.
    pub fn list_of(&self, id: &str) -> Option<usize> {
        self.locate(id).map(|l| l.list as usize)
    }

    /// The stored (metric-prepared) vector for `id`.
    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.locate(id).map(|loc| {
            let p = loc.pos as usize;
            &self.lists[loc.list as usize].vectors[p * self.dim..(p + 1) * self.dim]
        })
    }

    fn locate(&self, id: &str) -> Option<Location> {
        let hash = self.hasher.hash_one(id);
        self.lookup
            .find(hash, |loc| &*self.lists[loc.list as usize].ids[loc.pos as usize] == id)
            .copied()
    }

    /// Index of the centroid closest to an already prepared vector.
    pub fn nearest_list(&self, prepared: &[f32]) -> usize {
        let mut best = (0usize, f64::INFINITY);
        for (c, centroid) in self.centroids.chunks_exact(self.dim).enumerate() {
            let key = self.metric.sort_key(self.metric.score(prepared, centroid));
            if key < best.1 {
                best = (c, key);
            }
        }
        best.0
    }

    fn check_dim(&self, v: &[f32]) -> Result<(), IvfError> {
        if v.len() != self.dim {
            return Err(IvfError::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        Ok(())
    }

    /// Adds `id` to the list of its nearest centroid. Centroids are not
    /// retrained; see [`IvfIndex::rebuild`].
    pub fn insert(&mut self, id: &str, vector: &EmbeddingVector) -> Result<(), IvfError> {
        self.check_dim(vector)?;
        let prepared = prepare(self.metric, vector)?;
        self.insert_prepared(id, prepared)
    }

    fn insert_prepared(&mut self, id: &str, prepared: Vec<f32>) -> Result<(), IvfError> {
        if self.contains(id) {
            return Err(IvfError::DuplicateId(id.to_string()));
        }
        let list = self.nearest_list(&prepared);
        let pos = self.lists[list].ids.len();
        self.lists[list].ids.push(id.into());
        self.lists[list].vectors.extend_from_slice(&prepared);
        let hash = self.hasher.hash_one(id);
        let lists = &self.lists;
        let hasher = &self.hasher;
        self.lookup.insert_unique(
            hash,
            Location {
                list: list as u32,
                pos: pos as u32,
            },
            |loc| hasher.hash_one(&*lists[loc.list as usize].ids[loc.pos as usize]),
        );
        self.count += 1;
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Result<(), IvfError> {
        let hash = self.hasher.hash_one(id);
        let lists = &self.lists;
        let entry = self
            .lookup
            .find_entry(hash, |loc| &*lists[loc.list as usize].ids[loc.pos as usize] == id)
            .map_err(|_| IvfError::UnknownId(id.to_string()))?;
        let (loc, _) = entry.remove();
        let (l, p) = (loc.list as usize, loc.pos as usize);
        let dim = self.dim;
        let list = &mut self.lists[l];
        let last = list.ids.len() - 1;
        list.ids.swap_remove(p);
        if p != last {
            let (head, tail) = list.vectors.split_at_mut(last * dim);
            head[p * dim..(p + 1) * dim].copy_from_slice(&tail[..dim]);
        }
        list.vectors.truncate(last * dim);

        if p != last {
            // the former last entry now lives at `p`
            let moved_hash = self.hasher.hash_one(&*self.lists[l].ids[p]);
            let moved = self
                .lookup
                .find_mut(moved_hash, |m| m.list as usize == l && m.pos as usize == last)
                .expect("moved entry is indexed");
            moved.pos = p as u32;
        }
        self.count -= 1;
        Ok(())
    }

    /// Releases spare capacity in the lists and the id lookup.
    pub fn shrink_to_fit(&mut self) {
        for list in &mut self.lists {
            list.ids.shrink_to_fit();
            list.vectors.shrink_to_fit();
        }
        let lists = &self.lists;
        let hasher = &self.hasher;
        self.lookup
            .shrink_to_fit(|loc| hasher.hash_one(&*lists[loc.list as usize].ids[loc.pos as usize]));
    }

    /// Retrains centroids on the current contents and refiles every entry.
    pub fn rebuild(&self, nlist: usize, seed: u64) -> Result<Self, IvfError> {
        let records = self.entries();
        let config = IvfConfig {
            nlist: Some(nlist),
            metric: self.metric,
            seed,
            ..IvfConfig::default()
        };
        Self::build_with(&records, &config)
    }

    /// Every stored `(id, vector)`, ordered by list then position.
    pub fn entries(&self) -> Vec<(String, EmbeddingVector)> {
        let mut out = Vec::with_capacity(self.count);
        for list in &self.lists {
            for (id, v) in list.ids.iter().zip(list.vectors.chunks_exact(self.dim)) {
                out.push((id.to_string(), EmbeddingVector::new(v.to_vec()).expect("stored vectors are finite")));
            }
        }
        out
    }

    /// Lists to scan for `query`, nearest centroid first.
    pub fn probe_order(&self, prepared_query: &[f32]) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = self
            .centroids
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(c, centroid)| (self.metric.sort_key(self.metric.score(prepared_query, centroid)), c))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().map(|(_, c)| c).collect()
    }

    pub fn search(&self, query: &EmbeddingVector, top_n: usize, nprobe: usize) -> Result<Vec<SearchResult>, IvfError> {
        self.search_filtered(query, top_n, nprobe, |_| true)
    }

    /// Like [`IvfIndex::search`] but skips ids rejected by `keep`.
    pub fn search_filtered<F: Fn(&str) -> bool>(
        &self,
        query: &EmbeddingVector,
        top_n: usize,
        nprobe: usize,
        keep: F,
    ) -> Result<Vec<SearchResult>, IvfError> {
        self.check_dim(query)?;
        if top_n == 0 {
            return Err(IvfError::ZeroTopN);
        }
        if nprobe == 0 || nprobe > self.nlist() {
            return Err(IvfError::InvalidNprobe {
                nprobe,
                nlist: self.nlist(),
            });
        }
        let q = prepare(self.metric, query)?;
        let mut top = TopN::new(top_n);
        for l in self.probe_order(&q).into_iter().take(nprobe) {
            let list = &self.lists[l];
            for (id, v) in list.ids.iter().zip(list.vectors.chunks_exact(self.dim)) {
                if !keep(id) {
                    continue;
                }
                let score = self.metric.score(&q, v);
                top.offer(Candidate {
                    key: self.metric.sort_key(score),
                    score,
                    id,
                });
            }
        }
        Ok(top.finish())
    }

    pub fn memory_footprint(&self) -> MemoryFootprint {
        let vector_bytes = self.count * self.dim * size_of::<f32>();
        let centroid_bytes = self.centroids.len() * size_of::<f32>();
        let id_bytes: usize = self
            .lists
            .iter()
            .flat_map(|l| l.ids.iter())
            .map(|id| id.len() + size_of::<Box<str>>())
            .sum();
        // one location slot plus one hashbrown control byte per live entry
        let list_overhead_bytes = self.lookup.len() * (size_of::<Location>() + 1);
        MemoryFootprint {
            count: self.count,
            vector_bytes,
            centroid_bytes,
            id_bytes,
            list_overhead_bytes,
            total_bytes: vector_bytes + centroid_bytes + id_bytes + list_overhead_bytes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ev(v: Vec<f32>) -> EmbeddingVector {
        EmbeddingVector::new(v).unwrap()
    }

    fn random_records(n: usize, dim: usize, seed: u64) -> Vec<(String, EmbeddingVector)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                (
                    format!("p{i:06}"),
                    ev((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()),
                )
            })
            .collect()
    }

    /// Independent scan: plain loops, full sort, no heap.
    fn scalar_scan(records: &[(String, EmbeddingVector)], q: &EmbeddingVector, top_n: usize, metric: Metric) -> Vec<String> {
        let norm = |v: &[f32]| -> Vec<f32> {
            let mut s = 0f64;
            for &x in v {
                s += x as f64 * x as f64;
            }
            let n = s.sqrt();
            v.iter().map(|&x| (x as f64 / n) as f32).collect()
        };
        let q = if metric == Metric::Cosine { norm(q) } else { q.to_vec() };
        let mut scored: Vec<(f64, String)> = records
            .iter()
            .map(|(id, v)| {
                let v = if metric == Metric::Cosine { norm(v) } else { v.to_vec() };
                let key = match metric {
                    Metric::L2 => {
                        let mut s = 0f64;
                        for i in 0..v.len() {
                            s += (q[i] as f64 - v[i] as f64).powi(2);
                        }
                        s
                    }
                    _ => {
                        let mut s = 0f64;
                        for i in 0..v.len() {
                            s += q[i] as f64 * v[i] as f64;
                        }
                        -s
                    }
                };
                (key, id.clone())
            })
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        scored.into_iter().take(top_n).map(|(_, id)| id).collect()
    }

    fn ids(results: &[SearchResult]) -> Vec<String> {
        results.iter().map(|r| r.id.clone()).collect()
    }

    #[test]
    fn single_record_index() {
        let recs = random_records(1, 8, 1);
        let index = IvfIndex::build(&recs, 1, Metric::L2, 0).unwrap();
        assert_eq!(index.nlist(), 1);
        assert_eq!(index.lists()[0].len(), 1);
        let res = index.search(&recs[0].1, 5, 1).unwrap();
        assert_eq!(res.len(), 1);
        assert_eq!(res[0].id, recs[0].0);
        assert_eq!(res[0].score, 0.0);
        assert_eq!(res[0].rank, 1);
    }

    #[test]
    fn assignment_matches_nearest_centroid() {
        let recs = random_records(1000, 16, 2);
        for metric in [Metric::L2, Metric::InnerProduct, Metric::Cosine] {
            let index = IvfIndex::build(&recs, 16, metric, 3).unwrap();
            let total: usize = index.lists().iter().map(|l| l.len()).sum();
            assert_eq!(total, 1000);
            assert_eq!(index.len(), 1000);
            for (id, v) in &recs {
                let p = prepare(metric, v).unwrap();
                let mut best = (usize::MAX, f64::INFINITY);
                for c in 0..16 {
                    let key = metric.sort_key(metric.score(&p, index.centroid(c)));
                    if key < best.1 {
                        best = (c, key);
                    }
                }
                assert_eq!(index.list_of(id), Some(best.0));
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let recs = random_records(500, 8, 4);
        let a = IvfIndex::build(&recs, 10, Metric::Cosine, 9).unwrap();
        let b = IvfIndex::build(&recs, 10, Metric::Cosine, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_probe_equals_brute_force() {
        let recs = random_records(2000, 24, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for metric in [Metric::L2, Metric::InnerProduct, Metric::Cosine] {
            let index = IvfIndex::build(&recs, 20, metric, 7).unwrap();
            for _ in 0..30 {
                let q = ev((0..24).map(|_| rng.random_range(-1.0..1.0)).collect());
                let ivf = index.search(&q, 10, 20).unwrap();
                let bf = brute_force_search(&recs, &q, 10, metric).unwrap();
                assert_eq!(ivf, bf);
                assert_eq!(ids(&bf), scalar_scan(&recs, &q, 10, metric));
                assert!(ivf.iter().enumerate().all(|(i, r)| r.rank == i + 1));
            }
        }
    }

    #[test]
    fn brute_force_breaks_ties_by_id() {
        let recs = vec![
            ("b".to_string(), ev(vec![1.0, 0.0])),
            ("a".to_string(), ev(vec![-1.0, 0.0])),
        ];
        let res = brute_force_search(&recs, &ev(vec![0.0, 1.0]), 2, Metric::L2).unwrap();
        assert_eq!(ids(&res), vec!["a", "b"]);
        let single = brute_force_search(&recs[..1], &ev(vec![5.0, 5.0]), 3, Metric::L2).unwrap();
        assert_eq!(ids(&single), vec!["b"]);
        assert_eq!(brute_force_search(&[], &ev(vec![1.0]), 1, Metric::L2), Err(IvfError::Empty));
    }

    #[test]
    fn insert_and_remove() {
        let recs = random_records(300, 8, 8);
        let mut index = IvfIndex::build(&recs, 8, Metric::L2, 1).unwrap();
        let extra = random_records(400, 8, 9);
        for (id, v) in extra.iter().skip(300) {
            let new_id = format!("new-{id}");
            index.insert(&new_id, v).unwrap();
            let p = prepare(Metric::L2, v).unwrap();
            let (want, _) = crate::kmeans::nearest_centroid(&p, index.centroids(), 8);
            assert_eq!(index.list_of(&new_id), Some(want));
            let top = index.search(v, 1, index.nlist()).unwrap();
            assert_eq!(top[0].id, new_id);
        }
        assert_eq!(index.len(), 400);

        let (id, v) = &recs[17];
        index.remove(id).unwrap();
        assert!(!index.contains(id));
        let res = index.search(v, 400, index.nlist()).unwrap();
        assert!(res.iter().all(|r| &r.id != id));
        assert_eq!(index.remove(id), Err(IvfError::UnknownId(id.clone())));
        index.insert(id, v).unwrap();
        assert_eq!(index.search(v, 1, index.nlist()).unwrap()[0].id, *id);

        assert_eq!(index.insert(id, v), Err(IvfError::DuplicateId(id.clone())));
        assert!(matches!(index.insert("x", &ev(vec![1.0])), Err(IvfError::DimensionMismatch { .. })));
    }

    #[test]
    fn removing_sole_record_empties_index() {
        let recs = random_records(1, 4, 10);
        let mut index = IvfIndex::build(&recs, 1, Metric::Cosine, 0).unwrap();
        index.remove(&recs[0].0).unwrap();
        assert!(index.is_empty());
        assert!(index.search(&recs[0].1, 3, 1).unwrap().is_empty());
        let fp = index.memory_footprint();
        assert_eq!(fp.total_bytes, fp.centroid_bytes);
    }

    #[test]
    fn build_errors() {
        let recs = random_records(5, 4, 11);
        assert_eq!(IvfIndex::build(&[], 1, Metric::L2, 0).unwrap_err(), IvfError::Empty);
        assert_eq!(
            IvfIndex::build(&recs, 6, Metric::L2, 0).unwrap_err(),
            IvfError::InvalidNlist { nlist: 6, count: 5 }
        );
        let mut dup = recs.clone();
        dup.push(recs[0].clone());
        assert_eq!(IvfIndex::build(&dup, 2, Metric::L2, 0).unwrap_err(), IvfError::DuplicateId(recs[0].0.clone()));
        let index = IvfIndex::build(&recs, 2, Metric::L2, 0).unwrap();
        assert_eq!(
            index.search(&recs[0].1, 1, 3).unwrap_err(),
            IvfError::InvalidNprobe { nprobe: 3, nlist: 2 }
        );
        assert!(index.search(&recs[0].1, 1, 0).is_err());
        assert_eq!(index.search(&recs[0].1, 0, 1).unwrap_err(), IvfError::ZeroTopN);
        assert!(matches!(index.search(&ev(vec![1.0]), 1, 1), Err(IvfError::DimensionMismatch { .. })));
        let zero = vec![("z".to_string(), EmbeddingVector::zeros(4))];
        assert_eq!(IvfIndex::build(&zero, 1, Metric::Cosine, 0).unwrap_err(), IvfError::ZeroVector);
    }

    #[test]
    fn defaults() {
        assert_eq!(default_nlist(1), 1);
        assert_eq!(default_nlist(100), 10);
        assert_eq!(default_nlist(101), 11);
        assert_eq!(default_nprobe(8), 1);
        assert_eq!(default_nprobe(64), 4);
        let recs = random_records(50, 4, 12);
        let index = IvfIndex::build_with(&recs, &IvfConfig::default()).unwrap();
        assert_eq!(index.nlist(), 8);
    }

    #[test]
    fn footprint_accounting() {
        let recs = random_records(1000, 32, 13);
        let index = IvfIndex::build(&recs, 10, Metric::L2, 0).unwrap();
        let fp = index.memory_footprint();
        assert_eq!(fp.vector_bytes, 1000 * 32 * 4);
        assert_eq!(fp.centroid_bytes, 10 * 32 * 4);
        assert_eq!(fp.id_bytes, 1000 * (7 + size_of::<Box<str>>()));
        assert_eq!(fp.total_bytes, fp.vector_bytes + fp.centroid_bytes + fp.id_bytes + fp.list_overhead_bytes);
    }

    #[test]
    fn from_parts_roundtrip() {
        let recs = random_records(200, 6, 14);
        let index = IvfIndex::build(&recs, 5, Metric::Cosine, 2).unwrap();
        let lists = index
            .lists()
            .iter()
            .map(|l| (l.ids().map(String::from).collect(), l.vectors().to_vec()))
            .collect();
        let back = IvfIndex::from_parts(6, Metric::Cosine, index.centroids().to_vec(), lists).unwrap();
        assert_eq!(back, index);
        let q = &recs[3].1;
        assert_eq!(back.search(q, 7, 2).unwrap(), index.search(q, 7, 2).unwrap());
        assert!(IvfIndex::from_parts(6, Metric::Cosine, index.centroids().to_vec(), vec![]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        enum Op {
            Insert(u8),
            Remove(u8),
        }

        fn op() -> impl Strategy<Value = Op> {
            prop_oneof![any::<u8>().prop_map(Op::Insert), any::<u8>().prop_map(Op::Remove)]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn partition_stays_consistent(ops in proptest::collection::vec(op(), 1..120)) {
                let seed_recs = random_records(20, 3, 15);
                let mut index = IvfIndex::build(&seed_recs, 4, Metric::L2, 0).unwrap();
                let mut live: alloc::collections::BTreeSet<String> = seed_recs.iter().map(|r| r.0.clone()).collect();
                for op in ops {
                    match op {
                        Op::Insert(k) => {
                            let id = format!("k{k}");
                            let v = ev(vec![k as f32, (k as f32).sin(), 1.0]);
                            let res = index.insert(&id, &v);
                            prop_assert_eq!(res.is_ok(), live.insert(id));
                        }
                        Op::Remove(k) => {
                            let id = format!("k{k}");
                            let res = index.remove(&id);
                            prop_assert_eq!(res.is_ok(), live.remove(&id));
                        }
                    }
                }
                prop_assert_eq!(index.len(), live.len());
                let mut seen = alloc::collections::BTreeSet::new();
                for (l, list) in index.lists().iter().enumerate() {
                    prop_assert_eq!(list.vectors().len(), list.len() * 3);
                    for (pos, id) in list.ids().enumerate() {
                        prop_assert!(seen.insert(id.to_string()));
                        prop_assert_eq!(index.list_of(id), Some(l));
                        prop_assert_eq!(index.vector(id).unwrap(), &list.vectors()[pos * 3..pos * 3 + 3]);
                    }
                }
                prop_assert_eq!(seen, live);
            }
        }
    }
}
