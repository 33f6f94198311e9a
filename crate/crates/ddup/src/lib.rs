//! Product deduplication service built on `ddup-core`: the catalog
//! pipeline (ingest, retrieve, score, group), binary snapshots, settings,
//! file formats, benchmarks, the HTTP API and the `ddup` command line.

pub mod bench;
pub mod catalog;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod server;
pub mod snapshot;
pub mod training;

pub use catalog::{CatalogStore, DedupeOutput, DuplicateGroup, IndexParams, IngestReport, MatchDecision};
pub use config::Config;
pub use error::ServiceError;
