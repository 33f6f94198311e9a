//! `train-decider` settings file and the labeled pairs it draws from.
//!
//! ```toml
//! val_fraction = 0.2
//! history = "history.csv"
//!
//! [decider]
//! conv_filters = 16
//! hidden_dims = [256, 64]
//!
//! [train]
//! learning_rate = 1e-4
//! max_epochs = 10
//! scheduler = { kind = "plateau", factor = 0.5, patience = 3 }
//!
//! [data]
//! source = "pairs"            # or "synthetic"
//! path = "truth.jsonl"
//! negatives_per_positive = 1
//! ```
//!
//! Relative paths resolve against the settings file's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ddup_core::decider::{LabeledPairs, Scheduler, TrainOutcome};
use ddup_core::{DeciderConfig, DeciderModel, Label, PairSample, SyntheticSpec, SyntheticWorld, TrainConfig};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::CatalogStore;
use crate::config::read_document;
use crate::error::ServiceError;
use crate::formats::{read_jsonl, PairLine};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeciderSection {
    /// Defaults to the store dimension.
    pub input_dim: Option<usize>,
    pub conv_filters: usize,
    pub kernel_size: usize,
    pub hidden_dims: Vec<usize>,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for DeciderSection {
    fn default() -> Self {
        let d = DeciderConfig::default();
        Self {
            input_dim: None,
            conv_filters: d.conv_filters,
            kernel_size: d.kernel_size,
            hidden_dims: d.hidden_dims,
            dropout_rate: d.dropout_rate,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulerSection {
    Plateau {
        #[serde(default = "default_factor")]
        factor: f64,
        #[serde(default = "default_patience")]
        patience: usize,
    },
    Cosine {
        #[serde(default)]
        min_lr: f64,
    },
}

fn default_factor() -> f64 {
    0.5
}

fn default_patience() -> usize {
    3
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerSection::Plateau {
            factor: default_factor(),
            patience: default_patience(),
        }
    }
}

impl From<SchedulerSection> for Scheduler {
    fn from(s: SchedulerSection) -> Self {
        match s {
            SchedulerSection::Plateau { factor, patience } => Scheduler::ReduceOnPlateau { factor, patience },
            SchedulerSection::Cosine { min_lr } => Scheduler::Cosine { min_lr },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub scheduler: SchedulerSection,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            weight_decay: d.weight_decay,
            betas: [d.betas.0, d.betas.1],
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            seed: d.seed,
            scheduler: SchedulerSection::default(),
        }
    }
}

impl From<&TrainSection> for TrainConfig {
    fn from(t: &TrainSection) -> Self {
        TrainConfig {
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            betas: (t.betas[0], t.betas[1]),
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            scheduler: t.scheduler.into(),
            seed: t.seed,
        }
    }
}

fn default_clusters() -> usize {
    64
}

fn default_pairs() -> usize {
    20_000
}

fn default_negatives() -> usize {
    1
}

fn default_candidates() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    /// Pairs drawn from a synthetic world at the decider's input width.
    Synthetic {
        #[serde(default = "default_clusters")]
        num_clusters: usize,
        /// Defaults to the noise giving a separation-to-noise ratio of 10.
        #[serde(default)]
        noise_sigma: Option<f64>,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_pairs")]
        n_pairs: usize,
    },
    /// Labeled id pairs over the stored catalog. Every listed pair is used;
    /// for each match, `negatives_per_positive` non-matches are added,
    /// alternating between a retrieved near neighbor and a random product.
    Pairs {
        path: PathBuf,
        #[serde(default = "default_negatives")]
        negatives_per_positive: usize,
        /// Neighbors considered when mining a hard negative.
        #[serde(default = "default_candidates")]
        candidates: usize,
    },
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection::Synthetic {
            num_clusters: default_clusters(),
            noise_sigma: None,
            seed: 0,
            n_pairs: default_pairs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingFile {
    pub decider: DeciderSection,
    pub train: TrainSection,
    pub data: DataSection,
    /// Share of the pairs held out for validation.
    pub val_fraction: f64,
    /// Where to write the per-epoch CSV, if anywhere.
    pub history: Option<PathBuf>,
}

impl Default for TrainingFile {
    fn default() -> Self {
        Self {
            decider: DeciderSection::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
            val_fraction: 0.2,
            history: None,
        }
    }
}

impl TrainingFile {
    /// Reads a TOML or JSON file and resolves relative paths against it.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let doc = read_document(path)?;
        let mut file: TrainingFile =
            serde_json::from_value(doc).map_err(|e| ServiceError::invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSection::Pairs { path, .. } = &mut file.data {
            rebase(path);
        }
        if let Some(h) = &mut file.history {
            rebase(h);
        }
        Ok(file)
    }

    pub fn decider_config(&self, store_dim: usize) -> DeciderConfig {
        DeciderConfig {
            input_dim: self.decider.input_dim.unwrap_or(store_dim),
            conv_filters: self.decider.conv_filters,
            kernel_size: self.decider.kernel_size,
            hidden_dims: self.decider.hidden_dims.clone(),
            dropout_rate: self.decider.dropout_rate,
            seed: self.decider.seed,
        }
    }
}

fn sample_for(store: &CatalogStore, a: &str, b: &str, label: Label) -> Result<PairSample, ServiceError> {
    let ra = store.record(a).ok_or_else(|| ServiceError::UnknownId(a.to_string()))?;
    let rb = store.record(b).ok_or_else(|| ServiceError::UnknownId(b.to_string()))?;
    let (ra, rb) = if ra.id <= rb.id { (ra, rb) } else { (rb, ra) };
    Ok(PairSample {
        text_a: ra.text_vec.clone(),
        image_a: ra.image_vec.clone(),
        text_b: rb.text_vec.clone(),
        image_b: rb.image_vec.clone(),
        label,
    })
}

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Listed pairs plus mined negatives, in a seeded order.
pub fn pairs_from_store(
    store: &CatalogStore,
    lines: &[PairLine],
    negatives_per_positive: usize,
    candidates: usize,
    seed: u64,
) -> Result<Vec<PairSample>, ServiceError> {
    if store.len() < 2 {
        return Err(ServiceError::invalid("need at least two stored products"));
    }
    let known: HashSet<(String, String)> = lines.iter().map(|l| key(&l.id_a, &l.id_b)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for l in lines {
        out.push(sample_for(store, &l.id_a, &l.id_b, l.label.into())?);
        if Label::from(l.label) != Label::Match {
            continue;
        }
        for j in 0..negatives_per_positive {
            let pick = |other: &str| other != l.id_a && !known.contains(&key(&l.id_a, other));
            let mut chosen = None;
            if j % 2 == 0 && candidates > 0 && store.index().is_some() {
                let near: Vec<String> = store
                    .find_candidates(&l.id_a, candidates, None)?
                    .into_iter()
                    .map(|c| c.id)
                    .filter(|c| pick(c))
                    .collect();
                chosen = near.choose(&mut rng).cloned();
            }
            if chosen.is_none() {
                for _ in 0..64 {
                    let r = &store.records()[rng.random_range(0..store.len())].id;
                    if pick(r) {
                        chosen = Some(r.clone());
                        break;
                    }
                }
            }
            if let Some(c) = chosen {
                out.push(sample_for(store, &l.id_a, &c, Label::NotMatch)?);
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Splits off the trailing `val_fraction` (at least one pair each side).
pub fn split(samples: &[PairSample], val_fraction: f64) -> Result<(&[PairSample], &[PairSample]), ServiceError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(ServiceError::invalid("val_fraction must lie in (0, 1)"));
    }
    if samples.len() < 2 {
        return Err(ServiceError::invalid("need at least two labeled pairs"));
    }
    let n_val = ((samples.len() as f64 * val_fraction).round() as usize).clamp(1, samples.len() - 1);
    Ok(samples.split_at(samples.len() - n_val))
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub outcome: TrainOutcome<f32>,
    pub train_pairs: usize,
    pub val_pairs: usize,
}

/// Assembles the pairs `file` describes and trains a fresh decider.
pub fn run(store: &CatalogStore, file: &TrainingFile) -> Result<TrainingRun, ServiceError> {
    let config = file.decider_config(store.dim());
    let samples = match &file.data {
        DataSection::Synthetic {
            num_clusters,
            noise_sigma,
            seed,
            n_pairs,
        } => {
            let spec = SyntheticSpec {
                num_clusters: *num_clusters,
                dim: config.input_dim,
                noise_sigma: noise_sigma.unwrap_or_else(|| SyntheticSpec::sigma_for_ratio(config.input_dim, 10.0)),
                seed: *seed,
            };
            SyntheticWorld::new(spec)?.pairs(*n_pairs, seed.wrapping_add(1))
        }
        DataSection::Pairs {
            path,
            negatives_per_positive,
            candidates,
        } => {
            let lines: Vec<PairLine> = read_jsonl(path)?;
            pairs_from_store(store, &lines, *negatives_per_positive, *candidates, file.train.seed)?
        }
    };
    let (train, val) = split(&samples, file.val_fraction)?;
    let train_set = LabeledPairs::from_samples(train, config.input_dim)?;
    let val_set = LabeledPairs::from_samples(val, config.input_dim)?;
    let model = DeciderModel::<f32>::new(config)?;
    let outcome = model.train(&train_set, &val_set, &TrainConfig::from(&file.train))?;
    Ok(TrainingRun {
        outcome,
        train_pairs: train.len(),
        val_pairs: val.len(),
    })
}
