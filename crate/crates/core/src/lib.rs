//! Algorithms for multimodal product deduplication.
//!
//! Everything here needs only `alloc`: embedding vectors and metrics, PCA
//! compression, the IVF_FLAT index, the pair-classifying decider network,
//! image preparation (structured patches, scale augmentation, MS-SSIM), a
//! synthetic embedder for tests, and union-find grouping. File formats, the
//! CLI and the HTTP service live in the `ddup` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
// NaN-rejecting range checks read better negated; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod decider;
pub mod group;
pub mod image;
pub mod ivf;
pub mod kmeans;
pub mod linalg;
pub mod pca;
pub mod synth;
pub mod vector;

pub use decider::{DeciderConfig, DeciderError, DeciderModel, Label, PairSample, TrainConfig};
pub use group::UnionFind;
pub use ivf::{brute_force_search, IvfConfig, IvfError, IvfIndex, MemoryFootprint, SearchResult};
pub use kmeans::{kmeans_fit, KMeansError, KMeansResult};
pub use image::{Image, ImageError};
pub use pca::{PcaError, PcaModel};
pub use synth::{SyntheticCatalog, SyntheticSpec, SyntheticWorld};
pub use vector::{EmbeddingVector, Metric, ProductRecord, VectorError};
