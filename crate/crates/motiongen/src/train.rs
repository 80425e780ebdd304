//! Training drivers for the denoiser and the evaluation embedders.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use motion_core::curriculum::{CurriculumSpec, Trainer};
use motion_core::embedder::{train_embedders, EmbedderConfig, EmbedderPair};
use motion_core::model::{Denoiser, ModelConfig};
use motion_core::schedule::build_schedule;

use crate::checkpoint::Checkpoint;
use crate::corpus::{corpus_clips, embed_pairs, load_split};
use crate::store::{ClipStore, Split};

pub const FINAL_CHECKPOINT: &str = "final.mckp";
pub const TRAIN_LOG: &str = "train.log";

/// Where a run starts from.
#[derive(Clone, Debug)]
pub enum TrainStart {
    Fresh { model: ModelConfig, curriculum: CurriculumSpec, seed: u64 },
    Resume(PathBuf),
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub store: PathBuf,
    pub out_dir: PathBuf,
    pub start: TrainStart,
    pub checkpoint_every: usize,
    /// Stop after this many global steps even if the curriculum continues.
    pub stop_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub checksum: String,
    pub steps: usize,
    pub last_loss: Option<f64>,
}

fn step_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step-{step:06}.mckp"))
}

/// Runs the curriculum over the store's training split. Every log line is
/// appended to `train.log`; a non-finite step aborts the run and leaves the
/// last periodic checkpoint as the newest good state.
pub fn run_training(opts: &TrainOptions) -> Result<TrainOutcome> {
    if opts.checkpoint_every == 0 {
        bail!("checkpoint interval must be positive");
    }
    let store = ClipStore::open(&opts.store)?;
    let manifest = store.read_manifest()?;
    let loaded = load_split(&store, &manifest, Split::Train)?;
    if loaded.is_empty() {
        bail!("training split of {} is empty", opts.store.display());
    }
    let clips = corpus_clips(&loaded);
    let mut trainer = match &opts.start {
        TrainStart::Fresh { model, curriculum, seed } => {
            let model = Denoiser::new(model.clone(), store.skeleton.clone())?;
            let schedule = build_schedule(model.config.diffusion_steps, model.config.schedule)?;
            Trainer::new(model, curriculum.clone(), schedule, *seed)?
        }
        TrainStart::Resume(path) => {
            let (ckpt, _) = Checkpoint::load(path)?;
            let tr = ckpt.to_trainer()?;
            if tr.model.skeleton != store.skeleton {
                bail!("checkpoint skeleton '{}' differs from the store's", tr.model.skeleton.name);
            }
            tr
        }
    };
    std::fs::create_dir_all(&opts.out_dir).with_context(|| format!("creating {}", opts.out_dir.display()))?;
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(opts.out_dir.join(TRAIN_LOG))
        .context("opening training log")?;
    let end = opts.stop_at.map_or(trainer.curriculum.total_steps(), |s| s.min(trainer.curriculum.total_steps()));
    log::info!(
        "training {} parameters on {} clips, steps {}..{end}",
        trainer.model.param_count(),
        clips.len(),
        trainer.step
    );
    let mut last_loss = None;
    while trainer.step < end {
        let entry = match trainer.train_step(&clips) {
            Ok(e) => e,
            Err(e) => {
                writeln!(log, "abort step={} error={e}", trainer.step)?;
                return Err(anyhow::Error::new(e)).context(format!("training aborted at step {}", trainer.step));
            }
        };
        writeln!(log, "step={} stage={} loss={:.6} lr={:.4e}", entry.step, entry.stage_name, entry.loss, entry.lr)?;
        last_loss = Some(entry.loss);
        if trainer.step % opts.checkpoint_every == 0 && trainer.step < end {
            Checkpoint::from_trainer(&trainer).save(&step_path(&opts.out_dir, trainer.step))?;
        }
    }
    let path = opts.out_dir.join(FINAL_CHECKPOINT);
    let checksum = Checkpoint::from_trainer(&trainer).save(&path)?;
    writeln!(log, "saved {} step={} sha256={checksum}", FINAL_CHECKPOINT, trainer.step)?;
    Ok(TrainOutcome { checkpoint: path, checksum, steps: trainer.step, last_loss })
}

/// Trains the text and motion embedders on the training split's captions.
pub fn train_embedder_checkpoint(store_dir: &Path, config: EmbedderConfig, out: &Path) -> Result<(EmbedderPair, String)> {
    let store = ClipStore::open(store_dir)?;
    let manifest = store.read_manifest()?;
    let loaded = load_split(&store, &manifest, Split::Train)?;
    let pairs = embed_pairs(&loaded, &config);
    let (pair, history) = train_embedders(&pairs, config, store.skeleton.feature_dim())?;
    log::info!("embedder loss by epoch: {history:?}");
    let checksum = Checkpoint::embedder(&pair, &store.skeleton).save(out)?;
    Ok((pair, checksum))
}
