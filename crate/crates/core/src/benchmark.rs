//! Repeated generate-embed-score runs over a test split.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::condition::{ConditionBundle, HashedTokenizer, MaskSet, TextFeaturizer};
use crate::embedder::EmbedderPair;
use crate::error::{bail, Error, Result};
use crate::features::MotionFeatures;
use crate::metrics::{
    diversity, face_mse, fid, multimodality, restrict_columns, retrieval_metrics, subset_columns, subset_statistics,
    summarize, MetricReport, MetricRow, DIVERSITY_PAIRS, RETRIEVAL_POOL,
};
use crate::model::Denoiser;
use crate::rng::{derive_seed, stream};
use crate::sampler::generate;
use crate::schedule::NoiseSchedule;
use crate::task::{make_task_mask, TaskMaskSpec};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BenchTask {
    /// Caption only.
    T2m,
    /// Caption plus dense control of every joint position.
    Gstc,
    /// Music only.
    M2d,
    /// Speech only.
    S2g,
}

impl BenchTask {
    pub const ALL: [BenchTask; 4] = [BenchTask::T2m, BenchTask::Gstc, BenchTask::M2d, BenchTask::S2g];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchTask::T2m => "t2m",
            BenchTask::Gstc => "gstc",
            BenchTask::M2d => "m2d",
            BenchTask::S2g => "s2g",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for BenchTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchTask::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown benchmark task '{s}' (expected t2m, gstc, m2d, s2g)")))
    }
}

/// How joint-subset FID embeds a clip.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SubsetMode {
    /// The motion encoder applied to the clip with other columns zeroed.
    #[default]
    Encoder,
    /// Per-column mean and deviation of the subset's raw features.
    RawStatistics,
}

/// One test clip with whatever conditions it carries.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchCase {
    pub id: String,
    pub caption: Option<String>,
    pub features: MotionFeatures,
    pub speech: Option<Matrix>,
    pub music: Option<Matrix>,
    pub has_face: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub repeats: usize,
    pub seed: u64,
    pub pool: usize,
    /// Retrieval pools drawn per repeat.
    pub pools: usize,
    pub diversity_pairs: usize,
    pub guidance: f64,
    pub subset_mode: SubsetMode,
    pub tasks: Vec<BenchTask>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            repeats: 20,
            seed: 7,
            pool: RETRIEVAL_POOL,
            pools: 16,
            diversity_pairs: DIVERSITY_PAIRS,
            guidance: 1.0,
            subset_mode: SubsetMode::Encoder,
            tasks: BenchTask::ALL.to_vec(),
        }
    }
}

/// Identifies the pinned models in the report header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchmarkIds {
    pub model_checksum: String,
    pub embedder_checksum: String,
}

struct Embedded {
    text: Vec<Vec<f64>>,
    motion: Vec<Vec<f64>>,
}

fn embed_cases(emb: &EmbedderPair, tok: &HashedTokenizer, cases: &[&BenchCase], clips: &[&MotionFeatures]) -> Result<Embedded> {
    let mut text = Vec::with_capacity(cases.len());
    let mut motion = Vec::with_capacity(cases.len());
    for (c, m) in cases.iter().zip(clips) {
        text.push(emb.embed_text(&tok.tokenize(c.caption.as_deref().unwrap_or("")))?);
        motion.push(emb.embed_motion(&m.values)?);
    }
    Ok(Embedded { text, motion })
}

fn subset_embeddings(
    emb: &EmbedderPair,
    cols: &[usize],
    mode: SubsetMode,
    clips: &[&MotionFeatures],
) -> Result<Vec<Vec<f64>>> {
    clips
        .iter()
        .map(|m| match mode {
            SubsetMode::Encoder => emb.embed_motion(&restrict_columns(m, cols).values),
            SubsetMode::RawStatistics => Ok(subset_statistics(m, cols)),
        })
        .collect()
}

fn case_bundle(task: BenchTask, case: &BenchCase, model: &Denoiser) -> Result<(ConditionBundle, MaskSet)> {
    let skel = &model.skeleton;
    let tok = HashedTokenizer { buckets: model.config.text_buckets, max_tokens: model.config.max_text_tokens };
    let mut bundle = ConditionBundle::default();
    let mut masks = MaskSet::new(skel);
    let caption = || case.caption.as_deref().map(|c| tok.featurize(c)).filter(|t| !t.is_empty());
    match task {
        BenchTask::T2m => bundle.text = caption(),
        BenchTask::Gstc => {
            bundle.text = caption();
            bundle.global = Some(case.features.clone());
            masks.task = Some(make_task_mask(&TaskMaskSpec::dense(), skel, case.features.frames())?);
        }
        BenchTask::M2d => bundle.music = case.music.clone(),
        BenchTask::S2g => bundle.speech = case.speech.clone(),
    }
    Ok((bundle, masks))
}

fn eligible(task: BenchTask, c: &BenchCase) -> bool {
    match task {
        BenchTask::T2m | BenchTask::Gstc => c.caption.as_deref().is_some_and(|s| !s.trim().is_empty()),
        BenchTask::M2d => c.music.is_some(),
        BenchTask::S2g => c.speech.is_some(),
    }
}

/// Generates one clip per eligible test case for every repeat and scores it.
/// Tasks without eligible cases are skipped with a warning.
pub fn run_benchmark(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    embedders: &EmbedderPair,
    cases: &[BenchCase],
    config: &BenchmarkConfig,
    ids: &BenchmarkIds,
) -> Result<MetricReport> {
    if config.repeats < 2 {
        bail!(InvalidArgument, "benchmark needs at least 2 repeats, got {}", config.repeats);
    }
    if cases.is_empty() {
        bail!(InvalidArgument, "test split is empty");
    }
    if embedders.feature_dim != model.feature_dim() {
        bail!(Shape, "embedders expect {} columns, model produces {}", embedders.feature_dim, model.feature_dim());
    }
    let etok = HashedTokenizer { buckets: embedders.config.text_buckets, max_tokens: embedders.config.max_tokens };
    let skel = &model.skeleton;
    let whole: Vec<usize> = (0..skel.joint_count()).collect();
    let hand_cols = subset_columns(skel, &skel.hand_joints)?;
    let whole_cols = subset_columns(skel, &whole)?;
    let mut rows: Vec<MetricRow> = Vec::new();
    let mut ran = Vec::new();

    for &task in &config.tasks {
        let subset: Vec<&BenchCase> = cases.iter().filter(|c| eligible(task, c)).collect();
        if subset.len() < 2 {
            log::warn!("benchmark: skipping {task}, only {} test clips carry its condition", subset.len());
            continue;
        }
        ran.push(task.as_str());
        let gt: Vec<&MotionFeatures> = subset.iter().map(|c| &c.features).collect();
        let gt_emb = embed_cases(embedders, &etok, &subset, &gt)?;
        let gt_hands = subset_embeddings(embedders, &hand_cols, config.subset_mode, &gt)?;
        let gt_whole = match config.subset_mode {
            SubsetMode::Encoder => gt_emb.motion.clone(),
            SubsetMode::RawStatistics => subset_embeddings(embedders, &whole_cols, config.subset_mode, &gt)?,
        };
        let uses_text = matches!(task, BenchTask::T2m | BenchTask::Gstc);
        let retrieval = uses_text && subset.len() >= config.pool;
        if uses_text && !retrieval {
            log::warn!("benchmark: {task} has {} clips, fewer than the retrieval pool {}", subset.len(), config.pool);
        }
        let mut per: Vec<(String, Vec<f64>)> = Vec::new();
        let mut push = |name: &str, v: f64| match per.iter_mut().find(|(n, _)| n == name) {
            Some((_, vals)) => vals.push(v),
            None => per.push((name.to_string(), vec![v])),
        };
        let mut repeats_emb: Vec<Vec<Vec<f64>>> = vec![Vec::new(); subset.len()];
        for r in 0..config.repeats {
            let mut gen = Vec::with_capacity(subset.len());
            for (i, case) in subset.iter().enumerate() {
                let (bundle, masks) = case_bundle(task, case, model)?;
                let seed = derive_seed(config.seed, &[task.index(), r as u64, i as u64]);
                gen.push(generate(model, schedule, &bundle, &masks, case.features.frames(), seed, config.guidance)?);
            }
            let gen_refs: Vec<&MotionFeatures> = gen.iter().collect();
            let emb = embed_cases(embedders, &etok, &subset, &gen_refs)?;
            let mut rng = stream(config.seed, &[task.index(), r as u64, 1 << 32]);
            if task == BenchTask::T2m || task == BenchTask::Gstc {
                push("fid", fid(&emb.motion, &gt_emb.motion)?);
            } else {
                let whole_gen = match config.subset_mode {
                    SubsetMode::Encoder => emb.motion.clone(),
                    SubsetMode::RawStatistics => subset_embeddings(embedders, &whole_cols, config.subset_mode, &gen_refs)?,
                };
                push("fid_whole_body", fid(&whole_gen, &gt_whole)?);
                let hands = subset_embeddings(embedders, &hand_cols, config.subset_mode, &gen_refs)?;
                push("fid_hands", fid(&hands, &gt_hands)?);
                if task == BenchTask::S2g {
                    let with_face: Vec<usize> = (0..subset.len()).filter(|&i| subset[i].has_face).collect();
                    if !with_face.is_empty() {
                        let g: Vec<MotionFeatures> = with_face.iter().map(|&i| gen[i].clone()).collect();
                        let t: Vec<MotionFeatures> = with_face.iter().map(|&i| subset[i].features.clone()).collect();
                        push("face_mse", face_mse(&g, &t, skel)?);
                    }
                }
            }
            if retrieval {
                let ret = retrieval_metrics(&emb.text, &emb.motion, config.pool, config.pools, &mut rng)?;
                push("r_precision_top1", ret.r1);
                push("r_precision_top2", ret.r2);
                push("r_precision_top3", ret.r3);
                push("multimodal_dist", ret.mm_dist);
                let gt_ret = retrieval_metrics(&gt_emb.text, &gt_emb.motion, config.pool, config.pools, &mut rng)?;
                push("gt.r_precision_top1", gt_ret.r1);
                push("gt.r_precision_top2", gt_ret.r2);
                push("gt.r_precision_top3", gt_ret.r3);
                push("gt.multimodal_dist", gt_ret.mm_dist);
            }
            push("gt.fid", fid(&gt_emb.motion, &gt_emb.motion)?);
            push("diversity", diversity(&emb.motion, config.diversity_pairs, &mut rng)?);
            push("gt.diversity", diversity(&gt_emb.motion, config.diversity_pairs, &mut rng)?);
            for (i, e) in emb.motion.into_iter().enumerate() {
                repeats_emb[i].push(e);
            }
        }
        for (name, vals) in &per {
            rows.push(summarize(format!("{task}.{name}"), vals)?);
        }
        // spread across repeats of the same condition; the interval runs over conditions
        let per_condition: Vec<f64> =
            repeats_emb.iter().map(|g| multimodality(core::slice::from_ref(g))).collect::<Result<_>>()?;
        let mut mm = summarize(format!("{task}.multimodality"), &per_condition)?;
        mm.mean = multimodality(&repeats_emb)?;
        rows.push(mm);
    }
    if ran.is_empty() {
        bail!(InvalidArgument, "no requested task has test clips carrying its condition");
    }
    let header = vec![
        (String::from("model_checksum"), ids.model_checksum.clone()),
        (String::from("embedder_checksum"), ids.embedder_checksum.clone()),
        (String::from("embedding_normalization"), String::from("none")),
        (String::from("subset_embedding"), String::from(match config.subset_mode {
            SubsetMode::Encoder => "encoder",
            SubsetMode::RawStatistics => "raw_statistics",
        })),
        (String::from("seed"), format!("{}", config.seed)),
        (String::from("tasks"), ran.join(",")),
        (String::from("test_clips"), format!("{}", cases.len())),
    ];
    Ok(MetricReport { header, repeats: config.repeats, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_names_round_trip() {
        for t in BenchTask::ALL {
            assert_eq!(t.as_str().parse::<BenchTask>().unwrap(), t);
        }
        assert!("x2y".parse::<BenchTask>().is_err());
    }
}
