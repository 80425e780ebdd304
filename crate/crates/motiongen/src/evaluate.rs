//! Benchmark driver: scores a checkpoint on the store's test split.

use std::path::PathBuf;

use anyhow::{bail, Result};

use motion_core::benchmark::{run_benchmark, BenchmarkConfig, BenchmarkIds};
use motion_core::embedder::EmbedderConfig;
use motion_core::metrics::MetricReport;

use crate::checkpoint::Checkpoint;
use crate::corpus::{bench_cases, load_split};
use crate::generate::Generator;
use crate::store::{ClipStore, Split};
use crate::train::train_embedder_checkpoint;

#[derive(Clone, Debug)]
pub struct EvaluateOptions {
    pub checkpoint: PathBuf,
    pub store: PathBuf,
    /// Pinned embedder checkpoint; trained from the training split and saved
    /// here when the file does not exist yet.
    pub embedders: PathBuf,
    pub embedder_config: EmbedderConfig,
    pub benchmark: BenchmarkConfig,
    pub report: PathBuf,
}

/// Runs the benchmark and writes the report text. The report depends only on
/// the checkpoints, the store and the benchmark seed.
pub fn run_evaluate(opts: &EvaluateOptions) -> Result<MetricReport> {
    let generator = Generator::load(&opts.checkpoint)?;
    let store = ClipStore::open(&opts.store)?;
    if store.skeleton != generator.model.skeleton {
        bail!("checkpoint skeleton '{}' differs from the store's", generator.model.skeleton.name);
    }
    if !opts.embedders.exists() {
        log::info!("training evaluation embedders into {}", opts.embedders.display());
        train_embedder_checkpoint(&opts.store, opts.embedder_config.clone(), &opts.embedders)?;
    }
    let (ckpt, embedder_checksum) = Checkpoint::load(&opts.embedders)?;
    let embedders = ckpt.to_embedder()?;
    let manifest = store.read_manifest()?;
    let cases = bench_cases(&load_split(&store, &manifest, Split::Test)?);
    let ids = BenchmarkIds { model_checksum: generator.checksum.clone(), embedder_checksum };
    let report = run_benchmark(&generator.model, &generator.schedule, &embedders, &cases, &opts.benchmark, &ids)?;
    crate::store::write_atomic(&opts.report, report.to_string().as_bytes())?;
    Ok(report)
}
