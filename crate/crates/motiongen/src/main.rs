use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use motion_core::benchmark::{BenchTask, BenchmarkConfig, SubsetMode};
use motion_core::SkeletonSpec;

use motiongen::config::{CurriculumFile, EmbedderFile, ModelFile};
use motiongen::evaluate::{run_evaluate, EvaluateOptions};
use motiongen::fixtures::write_fixtures;
use motiongen::generate::{run_generate, GenerateOptions};
use motiongen::ingest::{ingest_dir, IngestOptions};
use motiongen::request::{TaskChoice, TaskParams, DEFAULT_FRAMES};
use motiongen::retarget::RetargetMap;
use motiongen::service::{serve, ServeOptions};
use motiongen::store::{build_manifest, ClipStore, TEST_PER_DATASET};
use motiongen::train::{run_training, train_embedder_checkpoint, TrainOptions, TrainStart};

#[derive(Parser)]
#[command(name = "motiongen", version, about = "Unified multi-condition motion generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetArg {
    Encoder,
    RawStatistics,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic raw corpus and matching configuration files.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Convert a directory of per-dataset BVH folders into a clip store.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        skeleton: PathBuf,
        /// Default retarget map; a dataset's own retarget.toml takes precedence.
        #[arg(long)]
        retarget: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Seed of the train/test split written after ingestion.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Rebuild the train/test split of a store.
    Manifest {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = TEST_PER_DATASET)]
        test_per_dataset: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train the denoiser through the staged curriculum.
    Train {
        #[arg(long)]
        store: PathBuf,
        /// Model configuration (TOML); desk defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        curriculum: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many global steps.
        #[arg(long)]
        stop_at: Option<usize>,
    },
    /// Train the text and motion embedders used by the benchmark.
    TrainEmbedders {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate one or more consecutive clips.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        /// t2m, s2g, m2d, predict, inbetween, complete, trajectory or dense.
        #[arg(long, default_value = "t2m")]
        task: TaskChoice,
        #[arg(long)]
        text: Option<String>,
        /// Speech or music features for s2g / m2d.
        #[arg(long)]
        audio: Option<PathBuf>,
        /// Clip container used as the initial reference.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Clip container holding the observed motion of a control task.
        #[arg(long)]
        global: Option<PathBuf>,
        #[arg(long)]
        prefix: Option<usize>,
        #[arg(long)]
        suffix: Option<usize>,
        /// Controlled joint names, comma separated.
        #[arg(long, value_delimiter = ',')]
        joints: Vec<String>,
        /// Observed cells as `frame:joint`, comma separated.
        #[arg(long, value_delimiter = ',')]
        cells: Vec<String>,
        /// Root XZ waypoints as `x:z`, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        waypoints: Vec<String>,
        #[arg(long)]
        key_joints_only: bool,
        #[arg(long, default_value_t = 1)]
        clips: usize,
        #[arg(long, default_value_t = DEFAULT_FRAMES)]
        frames: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        guidance: f64,
        /// `.bvh`, `.mclp` or `.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the store's test split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Embedder checkpoint; trained and written here when missing.
        #[arg(long)]
        embedders: PathBuf,
        #[arg(long)]
        embedder_config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "t2m,gstc,m2d,s2g")]
        tasks: Vec<String>,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        guidance: f64,
        #[arg(long, value_enum, default_value = "encoder")]
        subset_mode: SubsetArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP generation service.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Session persistence directory; defaults to `<store>/sessions`.
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        idle_minutes: u64,
        /// Directory served for any other path (the studio bundle).
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn pairs(items: &[String], what: &str) -> Result<Vec<(f64, f64)>> {
    items
        .iter()
        .map(|s| {
            let (a, b) = s.split_once(':').with_context(|| format!("{what} '{s}' must look like a:b"))?;
            Ok((a.trim().parse().with_context(|| format!("bad {what} '{s}'"))?, b.trim().parse().with_context(|| format!("bad {what} '{s}'"))?))
        })
        .collect()
}

fn load_skeleton(path: &Path) -> Result<SkeletonSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let s: SkeletonSpec = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    s.validate()?;
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fixtures { out, seed } => {
            let p = write_fixtures(&out, seed)?;
            println!("fixtures written to {}", p.raw.display());
        }
        Command::Ingest { input, skeleton, retarget, out, sigma, seed } => {
            let skel = load_skeleton(&skeleton)?;
            let map = match &retarget {
                Some(p) => Some(RetargetMap::from_toml(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?),
                None => None,
            };
            let store = if out.join("skeleton.toml").exists() { ClipStore::open(&out)? } else { ClipStore::create(&out, &skel)? };
            if store.skeleton != skel {
                bail!("{} was created for skeleton '{}'", out.display(), store.skeleton.name);
            }
            let lock = store.lock()?;
            let opts = IngestOptions { sigma, ..IngestOptions::default() };
            let summary = ingest_dir(&input, map.as_ref(), &store, &lock, &opts)?;
            let manifest = build_manifest(&store.records()?, TEST_PER_DATASET, seed)?;
            store.write_manifest(&lock, &manifest)?;
            println!(
                "ingested {} files into {} clips ({} skipped); {} train / {} test",
                summary.files,
                summary.clips,
                summary.skipped.len(),
                manifest.train,
                manifest.test
            );
        }
        Command::Manifest { store, test_per_dataset, seed } => {
            let store = ClipStore::open(&store)?;
            let lock = store.lock()?;
            let manifest = build_manifest(&store.records()?, test_per_dataset, seed)?;
            store.write_manifest(&lock, &manifest)?;
            println!("{} train / {} test clips", manifest.train, manifest.test);
        }
        Command::Train { store, config, curriculum, out, seed, resume, stop_at } => {
            let cur_file = match &curriculum {
                Some(p) => CurriculumFile::load(p)?,
                None => CurriculumFile::default(),
            };
            let start = match resume {
                Some(p) => TrainStart::Resume(p),
                None => {
                    let model = match &config {
                        Some(p) => ModelFile::load(p)?,
                        None => ModelFile::default().model,
                    };
                    TrainStart::Fresh { model, curriculum: cur_file.build()?, seed }
                }
            };
            let o = run_training(&TrainOptions { store, out_dir: out, start, checkpoint_every: cur_file.checkpoint_every, stop_at })?;
            println!("{} steps, final loss {:?}; {} sha256 {}", o.steps, o.last_loss, o.checkpoint.display(), o.checksum);
        }
        Command::TrainEmbedders { store, config, out } => {
            let cfg = match &config {
                Some(p) => EmbedderFile::load(p)?,
                None => Default::default(),
            };
            let (_, checksum) = train_embedder_checkpoint(&store, cfg, &out)?;
            println!("{} sha256 {checksum}", out.display());
        }
        Command::Generate {
            ckpt,
            task,
            text,
            audio,
            reference,
            global,
            prefix,
            suffix,
            joints,
            cells,
            waypoints,
            key_joints_only,
            clips,
            frames,
            seed,
            guidance,
            out,
        } => {
            let cells = pairs(&cells, "cell")?
                .into_iter()
                .map(|(f, j)| {
                    if f < 0.0 || j < 0.0 || f.fract() != 0.0 || j.fract() != 0.0 {
                        bail!("cells must be non-negative integers");
                    }
                    Ok([f as usize, j as usize])
                })
                .collect::<Result<_>>()?;
            let params = TaskParams {
                prefix,
                suffix,
                cells,
                joints,
                waypoints: pairs(&waypoints, "waypoint")?.into_iter().map(|(x, z)| [x, z]).collect(),
                key_joints_only,
            };
            let opts = GenerateOptions { checkpoint: ckpt, task, text, audio, reference, global, params, clips, frames, seed, guidance, out };
            let session = run_generate(&opts)?;
            println!("{} clips, {} frames -> {}", session.clips.len(), session.total_frames(), opts.out.display());
        }
        Command::Evaluate { ckpt, store, embedders, embedder_config, tasks, repeats, seed, guidance, subset_mode, out } => {
            let tasks = tasks.iter().map(|t| t.parse::<BenchTask>()).collect::<Result<Vec<_>, _>>()?;
            let embedder_config = match &embedder_config {
                Some(p) => EmbedderFile::load(p)?,
                None => Default::default(),
            };
            let benchmark = BenchmarkConfig {
                repeats,
                seed,
                guidance,
                tasks,
                subset_mode: match subset_mode {
                    SubsetArg::Encoder => SubsetMode::Encoder,
                    SubsetArg::RawStatistics => SubsetMode::RawStatistics,
                },
                ..BenchmarkConfig::default()
            };
            let report = run_evaluate(&EvaluateOptions { checkpoint: ckpt, store, embedders, embedder_config, benchmark, report: out.clone() })?;
            print!("{report}");
            println!("report written to {}", out.display());
        }
        Command::Serve { ckpt, store, bind, sessions, idle_minutes, static_dir } => {
            let sessions_dir = sessions.unwrap_or_else(|| store.join("sessions"));
            let opts = ServeOptions { checkpoint: ckpt, store, bind, sessions_dir, idle: Duration::from_secs(idle_minutes * 60), static_dir };
            tokio::runtime::Builder::new_multi_thread().enable_all().build()?.block_on(serve(opts))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
