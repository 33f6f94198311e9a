//! The catalog pipeline: ingest records, retrieve candidates by text
//! vector, score pairs with the decider and group duplicates.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use ddup_core::ivf::{default_nlist, default_nprobe};
use ddup_core::vector::REDUCED_DIM;
use ddup_core::{
    DeciderModel, EmbeddingVector, IvfConfig, IvfIndex, Label, Metric, PairSample, PcaModel, ProductRecord,
    SearchResult, UnionFind,
};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::formats::{PairLabel, ProductLine};

pub const DEFAULT_TOP_N: usize = 50;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Pairs per decider forward pass.
const SCORE_BATCH: usize = 256;

/// How the text index was (or will be) built.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexParams {
    /// `None` picks `ceil(sqrt(count))`.
    pub nlist: Option<usize>,
    pub metric: Metric,
    pub seed: u64,
    /// Lists scanned per query when a request does not say; `None` picks
    /// `max(1, nlist / 16)`.
    pub nprobe: Option<usize>,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self {
            nlist: None,
            metric: Metric::Cosine,
            seed: 0,
            nprobe: None,
        }
    }
}

/// A scored candidate pair, ids in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub id_a: String,
    pub id_b: String,
    /// Decider probability of the match class.
    pub probability: f64,
    pub label: PairLabel,
    /// 1-based position in the candidate list that surfaced the pair; 0
    /// when the pair was scored directly.
    pub retrieval_rank: usize,
    pub retrieval_score: f64,
}

/// Products connected through Match decisions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    /// Lowest member id.
    pub representative: String,
    /// Sorted, at least two.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupeOutput {
    /// Sorted by `(id_a, id_b)`.
    pub decisions: Vec<MatchDecision>,
    /// Sorted by representative.
    pub groups: Vec<DuplicateGroup>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    /// 1-based line number in the stream (or position in a batch).
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

/// Outcome of one ingest call. `accepted + rejects.len() == lines`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Non-blank lines read.
    pub lines: usize,
    pub accepted: usize,
    pub rejects: Vec<Reject>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexStats {
    pub nlist: usize,
    pub metric: String,
    pub seed: u64,
    pub nprobe: usize,
    pub indexed: usize,
    pub memory_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaStats {
    pub source_dim: usize,
    pub target_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeciderStats {
    pub input_dim: usize,
    pub conv_filters: usize,
    pub hidden_dims: Vec<usize>,
    pub num_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoreStats {
    pub count: usize,
    pub dim: usize,
    /// Record payload plus the index footprint.
    pub memory_bytes: usize,
    pub index: Option<IndexStats>,
    pub pca_text: Option<PcaStats>,
    pub pca_image: Option<PcaStats>,
    pub decider: Option<DeciderStats>,
}

/// Records keyed by id plus the optional text index, PCA models and
/// decider. Every indexed id is a stored record.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogStore {
    dim: usize,
    /// Insertion order.
    records: Vec<ProductRecord>,
    positions: HashMap<String, usize>,
    index: Option<IvfIndex>,
    index_params: IndexParams,
    pca_text: Option<PcaModel>,
    pca_image: Option<PcaModel>,
    decider: Option<DeciderModel<f32>>,
}

impl Default for CatalogStore {
    fn default() -> Self {
        Self::new(REDUCED_DIM).expect("positive dimension")
    }
}

fn check_threshold(threshold: f64) -> Result<(), ServiceError> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(ServiceError::invalid(format!("threshold {threshold} must lie in (0, 1)")))
    }
}

fn canonical<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl CatalogStore {
    /// An empty store whose stored vectors have width `dim`.
    pub fn new(dim: usize) -> Result<Self, ServiceError> {
        if dim == 0 {
            return Err(ServiceError::invalid("dimension must be positive"));
        }
        Ok(Self {
            dim,
            records: Vec::new(),
            positions: HashMap::new(),
            index: None,
            index_params: IndexParams::default(),
            pca_text: None,
            pca_image: None,
            decider: None,
        })
    }

    /// Reassembles a store from persisted parts, checking every invariant.
    pub(crate) fn from_parts(
        dim: usize,
        records: Vec<ProductRecord>,
        index: Option<IvfIndex>,
        index_params: IndexParams,
        pca_text: Option<PcaModel>,
        pca_image: Option<PcaModel>,
        decider: Option<DeciderModel<f32>>,
    ) -> Result<Self, ServiceError> {
        let mut store = Self::new(dim)?;
        store.index_params = index_params;
        for r in records {
            store.check_record(&r)?;
            store.positions.insert(r.id.clone(), store.records.len());
            store.records.push(r);
        }
        if let Some(ix) = &index {
            if ix.dim() != dim {
                return Err(ServiceError::invalid("index dimension differs from the store"));
            }
            if ix.len() != store.records.len() {
                return Err(ServiceError::invalid("index does not cover every record"));
            }
            for list in ix.lists() {
                if let Some(id) = list.ids().find(|id| !store.positions.contains_key(*id)) {
                    return Err(ServiceError::UnknownId(id.to_string()));
                }
            }
        }
        store.index = index;
        store.set_pca(pca_text, pca_image)?;
        if let Some(m) = decider {
            store.set_decider(m)?;
        }
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in insertion order.
    pub fn records(&self) -> &[ProductRecord] {
        &self.records
    }

    pub fn record(&self, id: &str) -> Option<&ProductRecord> {
        self.positions.get(id).map(|&i| &self.records[i])
    }

    pub fn index(&self) -> Option<&IvfIndex> {
        self.index.as_ref()
    }

    pub fn index_params(&self) -> &IndexParams {
        &self.index_params
    }

    pub fn pca_text(&self) -> Option<&PcaModel> {
        self.pca_text.as_ref()
    }

    pub fn pca_image(&self) -> Option<&PcaModel> {
        self.pca_image.as_ref()
    }

    pub fn decider(&self) -> Option<&DeciderModel<f32>> {
        self.decider.as_ref()
    }

    /// Installs reducers for incoming vectors. Their output width must be
    /// the store's; on an empty store without a decider the store adopts it.
    pub fn set_pca(&mut self, text: Option<PcaModel>, image: Option<PcaModel>) -> Result<(), ServiceError> {
        let target = text.iter().chain(&image).map(|m| m.target_dim()).collect::<Vec<_>>();
        if let Some(&t) = target.first() {
            if target.iter().any(|&x| x != t) {
                return Err(ServiceError::invalid("text and image PCA models must share a target dimension"));
            }
            if t != self.dim {
                if !self.records.is_empty() || self.decider.is_some() || self.index.is_some() {
                    return Err(ServiceError::invalid(format!(
                        "PCA target dimension {t} differs from the store dimension {}",
                        self.dim
                    )));
                }
                self.dim = t;
            }
        }
        self.pca_text = text;
        self.pca_image = image;
        Ok(())
    }

    /// Fits the reducers on raw vectors. The image model is fitted only
    /// when at least two image vectors are given.
    pub fn fit_pca(
        &mut self,
        text: &[EmbeddingVector],
        image: &[EmbeddingVector],
        target_dim: usize,
    ) -> Result<(), ServiceError> {
        let pt = PcaModel::fit(text, target_dim)?;
        let pi = if image.len() >= 2 {
            Some(PcaModel::fit(image, target_dim)?)
        } else {
            None
        };
        self.set_pca(Some(pt), pi)
    }

    pub fn set_decider(&mut self, model: DeciderModel<f32>) -> Result<(), ServiceError> {
        if model.config().input_dim != self.dim {
            return Err(ServiceError::invalid(format!(
                "decider input dimension {} differs from the store dimension {}",
                model.config().input_dim,
                self.dim
            )));
        }
        self.decider = Some(model);
        Ok(())
    }

    /// Brings a raw vector to the store width: kept as is at that width,
    /// projected when a PCA model accepts its width, rejected otherwise.
    /// Image vectors fall back to the text model when no image model is
    /// fitted.
    pub fn reduce(&self, v: EmbeddingVector, image: bool) -> Result<EmbeddingVector, ServiceError> {
        if v.dim() == self.dim {
            return Ok(v);
        }
        let model = if image {
            self.pca_image.as_ref().or(self.pca_text.as_ref())
        } else {
            self.pca_text.as_ref()
        };
        match model {
            Some(m) if m.source_dim() == v.dim() => Ok(m.transform(&v)?),
            _ => Err(ServiceError::InvalidVector(format!(
                "dimension {}, expected {}{}",
                v.dim(),
                self.dim,
                match model {
                    Some(m) => format!(" or {} (PCA input)", m.source_dim()),
                    None => " and no PCA model is fitted".to_string(),
                }
            ))),
        }
    }

    fn check_record(&self, r: &ProductRecord) -> Result<(), ServiceError> {
        if r.id.is_empty() {
            return Err(ServiceError::invalid("id must not be empty"));
        }
        if self.positions.contains_key(&r.id) {
            return Err(ServiceError::invalid(format!("duplicate id `{}`", r.id)));
        }
        for v in std::iter::once(&r.text_vec).chain(&r.image_vec) {
            if v.dim() != self.dim {
                return Err(ServiceError::InvalidVector(format!(
                    "dimension {}, expected {}",
                    v.dim(),
                    self.dim
                )));
            }
        }
        if r.text_vec.is_zero() {
            return Err(ServiceError::InvalidVector("text vector is all zeros".to_string()));
        }
        Ok(())
    }

    /// Reduces and stores one record, filing it in the index when one
    /// exists.
    pub fn insert(&mut self, record: ProductRecord) -> Result<(), ServiceError> {
        let record = ProductRecord {
            text_vec: self.reduce(record.text_vec, false)?,
            image_vec: record.image_vec.map(|v| self.reduce(v, true)).transpose()?,
            ..record
        };
        self.check_record(&record)?;
        if let Some(ix) = &mut self.index {
            ix.insert(&record.id, &record.text_vec)?;
        }
        self.positions.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    fn ingest_line(&mut self, line: &str) -> Result<(), (Option<String>, String)> {
        let parsed: ProductLine = serde_json::from_str(line).map_err(|e| {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_string));
            (id, format!("malformed line: {e}"))
        })?;
        let id = parsed.id.clone();
        let record = parsed.into_record().map_err(|e| (Some(id.clone()), e.to_string()))?;
        self.insert(record).map_err(|e| (Some(id), e.to_string()))
    }

    /// Reads ingestion JSONL. Blank lines are skipped; a bad line is
    /// reported and the stream continues. Only read errors abort.
    pub fn ingest<R: BufRead>(&mut self, reader: R) -> std::io::Result<IngestReport> {
        let mut report = IngestReport::default();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            report.lines += 1;
            match self.ingest_line(&line) {
                Ok(()) => report.accepted += 1,
                Err((id, reason)) => report.rejects.push(Reject { line: n + 1, id, reason }),
            }
        }
        Ok(report)
    }

    pub fn ingest_records(&mut self, records: impl IntoIterator<Item = ProductRecord>) -> IngestReport {
        let mut report = IngestReport::default();
        for (n, r) in records.into_iter().enumerate() {
            report.lines += 1;
            let id = r.id.clone();
            match self.insert(r) {
                Ok(()) => report.accepted += 1,
                Err(e) => report.rejects.push(Reject {
                    line: n + 1,
                    id: Some(id),
                    reason: e.to_string(),
                }),
            }
        }
        report
    }

    /// Trains the text index over every record.
    pub fn build_index(&mut self, params: IndexParams) -> Result<(), ServiceError> {
        if self.records.is_empty() {
            return Err(ServiceError::invalid("cannot build an index over an empty catalog"));
        }
        let entries: Vec<(String, EmbeddingVector)> =
            self.records.iter().map(|r| (r.id.clone(), r.text_vec.clone())).collect();
        let config = IvfConfig {
            nlist: Some(params.nlist.unwrap_or_else(|| default_nlist(entries.len()))),
            metric: params.metric,
            seed: params.seed,
            ..IvfConfig::default()
        };
        if let Some(p) = params.nprobe {
            let nlist = config.nlist.unwrap_or(1);
            if p == 0 || p > nlist {
                return Err(ServiceError::invalid(format!("nprobe {p} must lie in 1..={nlist}")));
            }
        }
        self.index = Some(IvfIndex::build_with(&entries, &config)?);
        self.index_params = params;
        Ok(())
    }

    fn index_or_err(&self) -> Result<&IvfIndex, ServiceError> {
        self.index.as_ref().ok_or(ServiceError::IndexNotBuilt)
    }

    /// Explicit value, else the build-time default, else `nlist / 16`.
    pub fn effective_nprobe(&self, nprobe: Option<usize>) -> Result<usize, ServiceError> {
        let ix = self.index_or_err()?;
        Ok(nprobe
            .or(self.index_params.nprobe)
            .unwrap_or_else(|| default_nprobe(ix.nlist())))
    }

    fn position(&self, id: &str) -> Result<usize, ServiceError> {
        self.positions
            .get(id)
            .copied()
            .ok_or_else(|| ServiceError::UnknownId(id.to_string()))
    }

    /// Nearest products to `id` by text vector, excluding `id` itself.
    pub fn find_candidates(
        &self,
        id: &str,
        top_n: usize,
        nprobe: Option<usize>,
    ) -> Result<Vec<SearchResult>, ServiceError> {
        let pos = self.position(id)?;
        let ix = self.index_or_err()?;
        let nprobe = self.effective_nprobe(nprobe)?;
        Ok(ix.search_filtered(&self.records[pos].text_vec, top_n, nprobe, |other| other != id)?)
    }

    /// Nearest products to a raw query vector (reduced like ingested text).
    pub fn search_vector(
        &self,
        vector: Vec<f32>,
        top_n: usize,
        nprobe: Option<usize>,
    ) -> Result<Vec<SearchResult>, ServiceError> {
        let ix = self.index_or_err()?;
        let q = self.reduce(EmbeddingVector::new(vector)?, false)?;
        let nprobe = self.effective_nprobe(nprobe)?;
        Ok(ix.search(&q, top_n, nprobe)?)
    }

    fn decider_or_err(&self) -> Result<&DeciderModel<f32>, ServiceError> {
        self.decider.as_ref().ok_or(ServiceError::NoDecider)
    }

    /// Match probabilities for record-position pairs, each fed to the
    /// decider in canonical id order.
    fn probabilities(&self, pairs: &[(usize, usize)]) -> Result<Vec<f64>, ServiceError> {
        let model = self.decider_or_err()?;
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(SCORE_BATCH) {
            let inputs = chunk
                .iter()
                .map(|&(a, b)| {
                    let (ra, rb) = (&self.records[a], &self.records[b]);
                    let (ra, rb) = if ra.id <= rb.id { (ra, rb) } else { (rb, ra) };
                    let sample = PairSample {
                        text_a: ra.text_vec.clone(),
                        image_a: ra.image_vec.clone(),
                        text_b: rb.text_vec.clone(),
                        image_b: rb.image_vec.clone(),
                        label: Label::NotMatch,
                    };
                    ddup_core::decider::assemble_input_dim(&sample, self.dim)
                })
                .collect::<Result<Vec<_>, _>>()?;
            for p in model.forward(&inputs)? {
                out.push(p[1] as f64);
            }
        }
        Ok(out)
    }

    fn decision(&self, a: usize, b: usize, probability: f64, threshold: f64, rank: usize, score: f64) -> MatchDecision {
        let (id_a, id_b) = canonical(&self.records[a].id, &self.records[b].id);
        MatchDecision {
            id_a: id_a.to_string(),
            id_b: id_b.to_string(),
            probability,
            label: Label::from_bool(probability >= threshold).into(),
            retrieval_rank: rank,
            retrieval_score: score,
        }
    }

    /// One decision per candidate of `id`, keeping retrieval rank and score.
    pub fn score_candidates(
        &self,
        id: &str,
        candidates: &[SearchResult],
        threshold: f64,
    ) -> Result<Vec<MatchDecision>, ServiceError> {
        check_threshold(threshold)?;
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.position(id)?;
        let pairs = candidates
            .iter()
            .map(|c| {
                let p = self.position(&c.id)?;
                if p == q {
                    return Err(ServiceError::invalid(format!("candidate `{id}` is the query itself")));
                }
                Ok((q, p))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let probs = self.probabilities(&pairs)?;
        Ok(pairs
            .iter()
            .zip(candidates)
            .zip(probs)
            .map(|((&(a, b), c), p)| self.decision(a, b, p, threshold, c.rank, c.score))
            .collect())
    }

    /// Scores two products directly; the retrieval score is their text
    /// similarity under the index metric (cosine without an index).
    pub fn score_pair(&self, id_a: &str, id_b: &str, threshold: f64) -> Result<MatchDecision, ServiceError> {
        check_threshold(threshold)?;
        let (a, b) = (self.position(id_a)?, self.position(id_b)?);
        if a == b {
            return Err(ServiceError::invalid("a product cannot be paired with itself"));
        }
        let p = self.probabilities(&[(a, b)])?[0];
        let metric = self.index.as_ref().map_or(Metric::Cosine, |ix| ix.metric());
        let prep = |v: &EmbeddingVector| ddup_core::ivf::prepare(metric, v);
        let score = metric.score(&prep(&self.records[a].text_vec)?, &prep(&self.records[b].text_vec)?);
        Ok(self.decision(a, b, p, threshold, 0, score))
    }

    /// Retrieves `top_n` candidates for every record, scores each distinct
    /// pair once and groups products connected by Match decisions.
    pub fn dedupe(&self, top_n: usize, threshold: f64, nprobe: Option<usize>) -> Result<DedupeOutput, ServiceError> {
        check_threshold(threshold)?;
        self.index_or_err()?;
        self.decider_or_err()?;
        let mut order: Vec<usize> = (0..self.records.len()).collect();
        order.sort_by(|&a, &b| self.records[a].id.cmp(&self.records[b].id));

        // first retrieval of each pair, queries in id order
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut retrieval: Vec<(usize, f64)> = Vec::new();
        for &q in &order {
            for c in self.find_candidates(&self.records[q].id, top_n, nprobe)? {
                let p = self.positions[&c.id];
                let key = (q.min(p), q.max(p));
                if seen.insert(key) {
                    pairs.push((q, p));
                    retrieval.push((c.rank, c.score));
                }
            }
        }
        let probs = self.probabilities(&pairs)?;
        let mut decisions: Vec<MatchDecision> = pairs
            .iter()
            .zip(&retrieval)
            .zip(probs)
            .map(|((&(a, b), &(rank, score)), p)| self.decision(a, b, p, threshold, rank, score))
            .collect();
        decisions.sort_by(|x, y| (&x.id_a, &x.id_b).cmp(&(&y.id_a, &y.id_b)));

        let mut uf = UnionFind::new(self.records.len());
        for d in &decisions {
            if d.label == PairLabel::Match {
                uf.union(self.positions[&d.id_a], self.positions[&d.id_b]);
            }
        }
        Ok(DedupeOutput {
            groups: self.collect_groups(&mut uf),
            decisions,
        })
    }

    fn collect_groups(&self, uf: &mut UnionFind) -> Vec<DuplicateGroup> {
        let mut groups: Vec<DuplicateGroup> = uf
            .groups(2)
            .into_iter()
            .map(|g| {
                let mut members: Vec<String> = g.into_iter().map(|i| self.records[i].id.clone()).collect();
                members.sort();
                DuplicateGroup {
                    representative: members[0].clone(),
                    members,
                }
            })
            .collect();
        groups.sort_by(|a, b| a.representative.cmp(&b.representative));
        groups
    }

    pub fn stats(&self) -> StoreStats {
        let record_bytes: usize = self
            .records
            .iter()
            .map(|r| r.id.len() + 4 * (r.text_vec.dim() + r.image_vec.as_ref().map_or(0, |v| v.dim())))
            .sum();
        let index = self.index.as_ref().map(|ix| IndexStats {
            nlist: ix.nlist(),
            metric: ix.metric().to_string(),
            seed: self.index_params.seed,
            nprobe: self.index_params.nprobe.unwrap_or_else(|| default_nprobe(ix.nlist())),
            indexed: ix.len(),
            memory_bytes: ix.memory_footprint().total_bytes,
        });
        let pca = |m: &PcaModel| PcaStats {
            source_dim: m.source_dim(),
            target_dim: m.target_dim(),
        };
        StoreStats {
            count: self.records.len(),
            dim: self.dim,
            memory_bytes: record_bytes + index.as_ref().map_or(0, |i| i.memory_bytes),
            index,
            pca_text: self.pca_text.as_ref().map(pca),
            pca_image: self.pca_image.as_ref().map(pca),
            decider: self.decider.as_ref().map(|m| DeciderStats {
                input_dim: m.config().input_dim,
                conv_filters: m.config().conv_filters,
                hidden_dims: m.config().hidden_dims.clone(),
                num_params: m.params().num_params(),
            }),
        }
    }
}
