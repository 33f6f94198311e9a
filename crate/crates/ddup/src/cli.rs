//! The `ddup` command line. Each catalog command loads the working
//! snapshot, applies its change and writes the snapshot back.

use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ddup_core::image::{content_bbox, ms_ssim, scale_augment, structured_patches, AugmentParams};
use ddup_core::synth::Lift;
use ddup_core::{EmbeddingVector, Metric, SyntheticSpec, SyntheticWorld};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::bench::{bench_latency, bench_memory, LatencySpec};
use crate::catalog::CatalogStore;
use crate::config::{Config, SETTINGS_ENV};
use crate::formats::{self, read_jsonl, ProductLine};
use crate::server::{serve, AppState};
use crate::snapshot;
use crate::training::{self, TrainingFile};

#[derive(Debug, Parser)]
#[command(name = "ddup", version, about = "Multimodal product deduplication")]
pub struct Cli {
    /// Working snapshot (overrides the `store` setting)
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Settings file, TOML or JSON
    #[arg(long, global = true, env = SETTINGS_ENV)]
    pub settings: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic catalog as ingestion JSONL plus ground-truth pairs
    Synth(SynthArgs),
    /// Add products from an ingestion JSONL file
    Ingest { file: PathBuf },
    /// Fit text and image PCA reducers on raw ingestion JSONL
    FitPca {
        /// Output width (defaults to the `dim` setting)
        #[arg(long)]
        dim: Option<usize>,
        /// Products whose raw vectors the models are fitted on
        #[arg(long)]
        input: PathBuf,
    },
    /// Train the text-vector IVF index over every stored product
    BuildIndex {
        #[arg(long)]
        nlist: Option<usize>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Default lists scanned per query
        #[arg(long)]
        nprobe: Option<usize>,
    },
    /// Train the decider from a TOML or JSON training file
    TrainDecider {
        #[arg(long)]
        config: PathBuf,
        /// Per-epoch CSV (overrides `history` in the training file)
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Nearest stored products to a stored product
    Search {
        id: String,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        nprobe: Option<usize>,
    },
    /// Decider verdict for two stored products
    ScorePair {
        id_a: String,
        id_b: String,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score every product's candidates and group duplicates
    Dedupe {
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        nprobe: Option<usize>,
        /// Decision log (JSONL)
        #[arg(long)]
        out: PathBuf,
        /// Groups document (defaults to `<out>.groups.json`)
        #[arg(long)]
        groups: Option<PathBuf>,
    },
    /// Memory and latency benchmarks
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Serve the HTTP API over the working snapshot
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
    },
    /// Copy the working snapshot out, or verify a snapshot and adopt it
    #[command(subcommand)]
    Snapshot(SnapshotCommand),
    /// Counts, dimensions and memory of the working snapshot
    Stats,
    /// Image preprocessing utilities (PNG or binary PPM)
    #[command(subcommand)]
    Image(ImageCommand),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    pub products: usize,
    #[arg(long, default_value_t = 0.05)]
    pub dup_rate: f64,
    #[arg(long, default_value_t = 64)]
    pub clusters: usize,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    /// Observation noise; defaults to the value giving `--ratio`
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Target separation-to-noise ratio when `--sigma` is absent
    #[arg(long, default_value_t = 10.0)]
    pub ratio: f64,
    /// Embed the vectors isometrically into this wider space
    #[arg(long)]
    pub raw_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Index footprint per dimension and count, with ratios to 128-d
    Mem {
        #[arg(long, value_delimiter = ',', default_values_t = [128, 256, 512, 1024])]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [100_000])]
        counts: Vec<usize>,
        #[arg(long)]
        nlist: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Query latency and recall against exhaustive search per nprobe
    Lat {
        #[arg(long, default_value_t = 100_000)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 10)]
        top_n: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8, 16, 32, 64])]
        nprobe: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long)]
        nlist: Option<usize>,
        #[arg(long, default_value = "cosine")]
        metric: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum SnapshotCommand {
    /// Write the working snapshot to `path`
    Save { path: PathBuf },
    /// Verify `path` and make it the working snapshot
    Load { path: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum ImageCommand {
    /// Center, two random cells and the resized full image of a 3x3 grid
    Patches {
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for patch_0.png .. patch_3.png
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Background-aware scale augmentation
    Augment {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.3)]
        apply_threshold: f64,
        #[arg(long, default_value_t = 0.6)]
        min_scale: f64,
        #[arg(long, default_value_t = 1.0)]
        max_scale: f64,
    },
    /// Bounding box of the non-background content
    Bbox {
        input: PathBuf,
        #[arg(long, default_value_t = ddup_core::image::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Multi-scale structural similarity of two equally sized images
    MsSsim {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 5)]
        scales: usize,
    },
}

fn open_store(path: &Path, dim: usize) -> Result<CatalogStore> {
    if path.exists() {
        snapshot::load(path).with_context(|| format!("loading {}", path.display()))
    } else {
        Ok(CatalogStore::new(dim)?)
    }
}

fn save_store(store: &CatalogStore, path: &Path) -> Result<()> {
    snapshot::save(store, path).with_context(|| format!("saving {}", path.display()))
}

fn print(v: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&v).expect("json"));
}

fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_clusters: a.clusters,
        dim: a.dim,
        noise_sigma: a.sigma.unwrap_or_else(|| SyntheticSpec::sigma_for_ratio(a.dim, a.ratio)),
        seed: a.seed,
    };
    let catalog = SyntheticWorld::new(spec.clone())?.catalog(a.products, a.dup_rate)?;
    let records = match a.raw_dim {
        None => catalog.records,
        Some(raw) => {
            let lift = Lift::new(a.dim, raw, a.seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            catalog
                .records
                .into_iter()
                .map(|r| ddup_core::ProductRecord {
                    text_vec: lift.apply(&r.text_vec, 0.0, &mut rng),
                    image_vec: r.image_vec.as_ref().map(|v| lift.apply(v, 0.0, &mut rng)),
                    ..r
                })
                .collect()
        }
    };
    formats::write_products(&a.out, &records)?;
    formats::write_truth(&a.truth, &catalog.truth)?;
    print(json!({
        "products": records.len(),
        "truth_pairs": catalog.truth.len(),
        "noise_sigma": spec.noise_sigma,
        "separation_to_noise": spec.separation_to_noise(),
    }));
    Ok(())
}

fn fit_pca(store: &mut CatalogStore, input: &Path, dim: usize) -> Result<()> {
    let lines: Vec<ProductLine> = read_jsonl(input)?;
    let mut text = Vec::with_capacity(lines.len());
    let mut image = Vec::new();
    for l in lines {
        text.push(EmbeddingVector::new(l.text_vec)?);
        if let Some(v) = l.image_vec {
            image.push(EmbeddingVector::new(v)?);
        }
    }
    store.fit_pca(&text, &image, dim)?;
    Ok(())
}

fn image_command(cmd: &ImageCommand) -> Result<()> {
    match cmd {
        ImageCommand::Patches { input, seed, out_dir } => {
            let img = formats::read_image(input)?;
            let set = structured_patches(&img, *seed)?;
            std::fs::create_dir_all(out_dir)?;
            let mut out = Vec::new();
            for (i, (patch, tag)) in set.patches.iter().zip(set.provenance).enumerate() {
                let path = out_dir.join(format!("patch_{i}.png"));
                formats::write_image(&path, patch)?;
                out.push(json!({ "path": path, "tag": format!("{tag:?}"), "grid_cell": tag.grid_cell() }));
            }
            print(json!({ "patches": out }));
        }
        ImageCommand::Augment {
            input,
            output,
            seed,
            apply_threshold,
            min_scale,
            max_scale,
        } => {
            let img = formats::read_image(input)?;
            let params = AugmentParams {
                apply_threshold: *apply_threshold,
                scale_range: (*min_scale, *max_scale),
                ..AugmentParams::default()
            };
            let out = scale_augment(&img, *seed, &params)?;
            formats::write_image(output, &out)?;
            print(json!({ "changed": out != img }));
        }
        ImageCommand::Bbox { input, tolerance } => {
            let b = content_bbox(&formats::read_image(input)?, *tolerance);
            print(json!({ "x_min": b.x_min, "y_min": b.y_min, "x_max": b.x_max, "y_max": b.y_max }));
        }
        ImageCommand::MsSsim { a, b, scales } => {
            let score = ms_ssim(&formats::read_image(a)?, &formats::read_image(b)?, *scales)?;
            print(json!({ "ms_ssim": score }));
        }
    }
    Ok(())
}

fn bench_command(cmd: &BenchCommand) -> Result<()> {
    match cmd {
        BenchCommand::Mem {
            dims,
            counts,
            nlist,
            seed,
        } => {
            let rows = bench_memory(dims, counts, *nlist, *seed)?;
            println!("{:>6} {:>10} {:>6} {:>14} {:>10} {:>8}", "dim", "count", "nlist", "bytes", "B/vector", "ratio");
            for r in &rows {
                let ratio = r.ratio_vs_128.map_or("-".to_string(), |x| format!("{x:.3}"));
                println!(
                    "{:>6} {:>10} {:>6} {:>14} {:>10.1} {:>8}",
                    r.dim, r.count, r.nlist, r.total_bytes, r.bytes_per_vector, ratio
                );
            }
        }
        BenchCommand::Lat {
            count,
            dim,
            top_n,
            nprobe,
            queries,
            nlist,
            metric,
            seed,
        } => {
            let spec = LatencySpec {
                count: *count,
                dim: *dim,
                nlist: *nlist,
                top_n: *top_n,
                nprobes: nprobe.clone(),
                queries: *queries,
                metric: metric.parse::<Metric>().map_err(anyhow::Error::msg)?,
                seed: *seed,
                ..LatencySpec::default()
            };
            let r = bench_latency(&spec)?;
            println!("count {} dim {} nlist {} top_n {}", r.count, r.dim, r.nlist, r.top_n);
            println!("{:>6} {:>12} {:>12} {:>8}", "nprobe", "median_us", "p99_us", "recall");
            for row in &r.rows {
                println!(
                    "{:>6} {:>12.1} {:>12.1} {:>8.4}",
                    row.nprobe, row.median_us, row.p99_us, row.recall
                );
            }
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = Config::from_env(cli.settings.as_deref())?;
    if let Some(s) = &cli.store {
        config.store = s.clone();
    }
    let path = config.store.clone();
    match &cli.command {
        Command::Synth(a) => synth(a)?,
        Command::Ingest { file } => {
            let mut store = open_store(&path, config.dim)?;
            let f = std::fs::File::open(file).with_context(|| format!("opening {}", file.display()))?;
            let report = store.ingest(BufReader::new(f))?;
            save_store(&store, &path)?;
            print(json!({ "lines": report.lines, "accepted": report.accepted, "rejects": report.rejects, "count": store.len() }));
        }
        Command::FitPca { dim, input } => {
            let mut store = open_store(&path, config.dim)?;
            fit_pca(&mut store, input, dim.unwrap_or(config.dim))?;
            save_store(&store, &path)?;
            print(json!({ "pca_text": store.stats().pca_text, "pca_image": store.stats().pca_image }));
        }
        Command::BuildIndex {
            nlist,
            metric,
            seed,
            nprobe,
        } => {
            let mut store = open_store(&path, config.dim)?;
            let mut settings = config.index.clone();
            if nlist.is_some() {
                settings.nlist = *nlist;
            }
            if let Some(m) = metric {
                settings.metric = m.clone();
            }
            if let Some(s) = seed {
                settings.seed = *s;
            }
            if nprobe.is_some() {
                settings.nprobe = *nprobe;
            }
            store.build_index(settings.to_params()?)?;
            save_store(&store, &path)?;
            print(json!({ "index": store.stats().index }));
        }
        Command::TrainDecider { config: file, history } => {
            let mut store = open_store(&path, config.dim)?;
            let tf = TrainingFile::load(file)?;
            let run = training::run(&store, &tf)?;
            if let Some(h) = history.clone().or(tf.history.clone()) {
                formats::write_history(&h, &run.outcome.history)?;
            }
            let report = run.outcome.val_report;
            store.set_decider(run.outcome.model)?;
            save_store(&store, &path)?;
            print(json!({
                "train_pairs": run.train_pairs,
                "val_pairs": run.val_pairs,
                "epochs": run.outcome.history.len(),
                "val_macro_f1": report.macro_f1,
                "val_accuracy": report.accuracy,
                "match": { "precision": report.matched.precision, "recall": report.matched.recall, "f1": report.matched.f1 },
                "not_match": { "precision": report.not_matched.precision, "recall": report.not_matched.recall, "f1": report.not_matched.f1 },
            }));
        }
        Command::Search { id, top_n, nprobe } => {
            let store = open_store(&path, config.dim)?;
            let results = store.find_candidates(id, top_n.unwrap_or(config.dedupe.top_n), nprobe.or(config.dedupe.nprobe))?;
            let rows: Vec<_> = results
                .iter()
                .map(|r| json!({ "id": r.id, "score": r.score, "rank": r.rank }))
                .collect();
            print(json!({ "results": rows }));
        }
        Command::ScorePair { id_a, id_b, threshold } => {
            let store = open_store(&path, config.dim)?;
            let d = store.score_pair(id_a, id_b, threshold.unwrap_or(config.dedupe.threshold))?;
            print(serde_json::to_value(d)?);
        }
        Command::Dedupe {
            top_n,
            threshold,
            nprobe,
            out,
            groups,
        } => {
            let store = open_store(&path, config.dim)?;
            let result = store.dedupe(
                top_n.unwrap_or(config.dedupe.top_n),
                threshold.unwrap_or(config.dedupe.threshold),
                nprobe.or(config.dedupe.nprobe),
            )?;
            let groups_path = groups.clone().unwrap_or_else(|| {
                let mut p = out.as_os_str().to_owned();
                p.push(".groups.json");
                PathBuf::from(p)
            });
            formats::write_decisions(out, &result.decisions)?;
            formats::write_groups(&groups_path, &result.groups)?;
            let matches = result
                .decisions
                .iter()
                .filter(|d| d.label == formats::PairLabel::Match)
                .count();
            print(json!({
                "decisions": result.decisions.len(),
                "matches": matches,
                "groups": result.groups.len(),
                "out": out,
                "groups_path": groups_path,
            }));
        }
        Command::Bench(b) => bench_command(b)?,
        Command::Serve { port, host } => {
            let store = open_store(&path, config.dim)?;
            let host = host.clone().unwrap_or(config.server.host.clone());
            let port = port.unwrap_or(config.server.port);
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .with_context(|| format!("bad listen address {host}:{port}"))?;
            let state = AppState::new(store, config.dedupe.clone());
            tokio::runtime::Runtime::new()?.block_on(serve(state, addr))?;
        }
        Command::Snapshot(SnapshotCommand::Save { path: dest }) => {
            if !path.exists() {
                bail!("no working snapshot at {}", path.display());
            }
            let store = open_store(&path, config.dim)?;
            save_store(&store, dest)?;
            print(json!({ "saved": dest, "count": store.len() }));
        }
        Command::Snapshot(SnapshotCommand::Load { path: src }) => {
            let store = snapshot::load(src).with_context(|| format!("loading {}", src.display()))?;
            save_store(&store, &path)?;
            print(json!({ "loaded": src, "count": store.len() }));
        }
        Command::Stats => {
            let store = open_store(&path, config.dim)?;
            print(serde_json::to_value(store.stats())?);
        }
        Command::Image(cmd) => image_command(cmd)?,
    }
    Ok(())
}
