#![allow(dead_code)]

use std::sync::OnceLock;

use ddup::catalog::IndexParams;
use ddup::CatalogStore;
use ddup_core::decider::{LabeledPairs, Scheduler};
use ddup_core::{DeciderConfig, DeciderModel, EmbeddingVector, ProductRecord, SyntheticSpec, SyntheticWorld, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const DIM: usize = 16;
pub const SIGMA: f64 = 0.01;

pub fn spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_clusters: 16,
        dim: DIM,
        noise_sigma: SIGMA,
        seed,
    }
}

pub fn small_decider_config(dim: usize) -> DeciderConfig {
    DeciderConfig {
        input_dim: dim,
        conv_filters: 4,
        hidden_dims: vec![32],
        ..DeciderConfig::default()
    }
}

pub fn fast_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 12,
        scheduler: Scheduler::ReduceOnPlateau { factor: 0.5, patience: 2 },
        ..TrainConfig::default()
    }
}

/// Decider trained once per test binary on synthetic pairs at `DIM`, σ 0.01.
pub fn decider() -> DeciderModel<f32> {
    static MODEL: OnceLock<DeciderModel<f32>> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let world = SyntheticWorld::new(spec(100)).unwrap();
            let train = LabeledPairs::from_samples(&world.pairs(16000, 1), DIM).unwrap();
            let val = LabeledPairs::from_samples(&world.pairs(1000, 2), DIM).unwrap();
            let out = DeciderModel::<f32>::new(small_decider_config(DIM))
                .unwrap()
                .train(&train, &val, &fast_train_config())
                .unwrap();
            assert!(out.val_report.macro_f1 >= 0.95, "{:?}", out.val_report);
            out.model
        })
        .clone()
}

pub fn record(id: &str, text: Vec<f32>) -> ProductRecord {
    ProductRecord {
        id: id.to_string(),
        text_vec: EmbeddingVector::new(text).unwrap(),
        image_vec: None,
        category: None,
    }
}

pub fn noisy(v: &[f32], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = Normal::new(0.0, sigma).unwrap();
    v.iter().map(|&x| x + n.sample(rng) as f32).collect()
}

/// Store of a synthetic catalog with index and trained decider.
pub fn synthetic_store(n: usize, dup_rate: f64, seed: u64, nlist: usize) -> (CatalogStore, Vec<(String, String)>) {
    let cat = SyntheticWorld::new(spec(seed)).unwrap().catalog(n, dup_rate).unwrap();
    let mut store = CatalogStore::new(DIM).unwrap();
    let report = store.ingest_records(cat.records);
    assert!(report.rejects.is_empty(), "{:?}", report.rejects);
    store
        .build_index(IndexParams {
            nlist: Some(nlist),
            seed,
            ..IndexParams::default()
        })
        .unwrap();
    store.set_decider(decider()).unwrap();
    (store, cat.truth)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
