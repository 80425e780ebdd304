//! Directory-level ingestion: BVH files plus sidecars become stored clips.
//!
//! Input layout: one subdirectory per dataset holding `*.bvh` files, an
//! optional `dataset.toml` (`task = "S2G"`), an optional `retarget.toml`
//! overriding the global map, and per-file sidecars sharing the BVH stem:
//! `<stem>.captions.txt`, `<stem>.audio.f32`, `<stem>.face.f32`. Sidecar
//! matrices carry one row per BVH frame.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use motion_core::features::{extract_features, DEFAULT_CONTACT_THRESHOLD};
use motion_core::motion::FACE_DIM;
use motion_core::preprocess::{gaussian_smooth, normalize_clip, resample, segment_ranges, TARGET_FPS};
use motion_core::{GlobalMotion, Matrix, SkeletonSpec};

use crate::align::{standardize_and_align, AlignOptions};
use crate::bvh::parse_bvh;
use crate::clip::{AudioKind, AudioRef, ClipFile, ClipRecord, DatasetTask};
use crate::retarget::{retarget, RetargetMap};
use crate::store::{ClipStore, StoreLock};

#[derive(Clone, Debug, PartialEq)]
pub struct IngestOptions {
    pub sigma: f64,
    pub contact_threshold: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { sigma: 1.0, contact_threshold: DEFAULT_CONTACT_THRESHOLD }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetConfig {
    task: DatasetTask,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub files: usize,
    pub clips: usize,
    /// Files that produced no clip, with the reason.
    pub skipped: Vec<(String, String)>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> =
        fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    v.sort();
    Ok(v)
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Linear resampling of per-frame rows at the positions [`resample`] samples.
fn resample_rows(m: &Matrix, fps_in: f64, fps_out: f64) -> Matrix {
    if fps_in == fps_out || m.rows == 0 {
        return m.clone();
    }
    let n = ((m.rows as f64 * fps_out / fps_in).round() as usize).max(1);
    let ratio = fps_in / fps_out;
    let mut out = Matrix::zeros(n, m.cols);
    for k in 0..n {
        let s = (k as f64 * ratio).min((m.rows - 1) as f64);
        let a = s.floor() as usize;
        let b = (a + 1).min(m.rows - 1);
        let t = s - a as f64;
        for c in 0..m.cols {
            out.set(k, c, m.get(a, c) + (m.get(b, c) - m.get(a, c)) * t);
        }
    }
    out
}

fn read_sidecar(path: &Path, frames: usize) -> Result<Option<Matrix>> {
    if !path.is_file() {
        return Ok(None);
    }
    let m = crate::clip::decode_matrix(&fs::read(path)?).with_context(|| format!("decoding {}", path.display()))?;
    if m.rows != frames {
        bail!("{} has {} rows but the BVH has {frames} frames", path.display(), m.rows);
    }
    Ok(Some(m))
}

fn read_captions(path: &Path) -> Result<Vec<String>> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    Ok(fs::read_to_string(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// Everything one BVH file contributes, before it is written.
pub struct IngestedFile {
    pub clips: Vec<ClipFile>,
    /// Audio rows per clip, aligned with `clips`.
    pub audio: Vec<Option<(AudioKind, Matrix)>>,
}

/// Runs the per-file pipeline: parse, align, retarget, smooth, resample,
/// normalize, segment and extract features.
#[allow(clippy::too_many_arguments)]
pub fn ingest_file(
    bvh_path: &Path,
    dataset: &str,
    task: DatasetTask,
    map: &RetargetMap,
    skeleton: &SkeletonSpec,
    opts: &IngestOptions,
) -> Result<IngestedFile> {
    let text = fs::read_to_string(bvh_path).with_context(|| format!("reading {}", bvh_path.display()))?;
    let doc = parse_bvh(&text).map_err(|e| anyhow!("{}: {e}", bvh_path.display()))?;
    let template = map.standardize_rest.then(|| map.template(skeleton));
    let align = AlignOptions {
        source_up: map.source_up,
        source_forward: map.source_forward,
        target_up: skeleton.up_axis,
        target_forward: skeleton.forward_axis,
        template,
    };
    let (doc, report) = standardize_and_align(&doc, &align).map_err(|e| anyhow!("{}: {e}", bvh_path.display()))?;
    if report.flagged() {
        log::warn!("{}: rest pose of {:?} not matched to the template", bvh_path.display(), report.unmatched);
    }
    let rt = retarget(&doc, map, skeleton).map_err(|e| anyhow!("{}: {e}", bvh_path.display()))?;
    let stem = bvh_path.file_stem().and_then(|s| s.to_str()).ok_or_else(|| anyhow!("bad file name {}", bvh_path.display()))?;
    let side = |ext: &str| bvh_path.with_file_name(format!("{stem}.{ext}"));
    let frames = doc.frame_count();
    let captions = read_captions(&side("captions.txt"))?;
    let audio = read_sidecar(&side("audio.f32"), frames)?;
    let face = read_sidecar(&side("face.f32"), frames)?;
    let audio_kind = match (task, &audio) {
        (_, None) => None,
        (DatasetTask::S2g, Some(_)) => Some(AudioKind::Speech),
        (DatasetTask::M2d, Some(_)) => Some(AudioKind::Music),
        (t, Some(_)) => {
            log::warn!("{}: audio sidecar ignored for {t} dataset", bvh_path.display());
            None
        }
    };
    let mut motion: GlobalMotion = rt.motion;
    if let Some(f) = &face {
        if f.cols != FACE_DIM {
            bail!("{}: face sidecar has {} coefficients, expected {FACE_DIM}", bvh_path.display(), f.cols);
        }
        motion.face = Some((0..f.rows).map(|r| f.row(r).to_vec()).collect());
    }
    let fps_in = motion.fps;
    let motion = gaussian_smooth(&motion, opts.sigma)?;
    let motion = resample(&motion, TARGET_FPS)?;
    let motion = normalize_clip(&motion, skeleton)?;
    let audio = audio.filter(|_| audio_kind.is_some()).map(|a| resample_rows(&a, fps_in, TARGET_FPS));
    if let Some(a) = &audio {
        if a.rows != motion.frames() {
            bail!("{}: resampled audio has {} rows for {} frames", bvh_path.display(), a.rows, motion.frames());
        }
    }
    let mut out = IngestedFile { clips: Vec::new(), audio: Vec::new() };
    if captions.is_empty() && audio.is_none() {
        log::warn!("{}: no caption or audio attachment; skipped", bvh_path.display());
        return Ok(out);
    }
    for (seg, (start, len)) in segment_ranges(motion.frames()).into_iter().enumerate() {
        let piece = motion.slice(start, len);
        let features = extract_features(&piece, skeleton, opts.contact_threshold)?;
        let id = format!("{}-{}-{seg:03}", sanitize(dataset), sanitize(stem));
        let record = ClipRecord {
            id: id.clone(),
            dataset: dataset.to_string(),
            task,
            fps: TARGET_FPS,
            frames: len,
            captions: captions.clone(),
            audio: None,
            has_face: face.is_some(),
            joint_valid: rt.joint_valid.clone(),
            sequence: format!("{dataset}/{stem}"),
            segment: seg,
            unmatched_joints: report.unmatched.clone(),
        };
        out.clips.push(ClipFile::new(skeleton, record, features));
        out.audio.push(audio.as_ref().zip(audio_kind).map(|(a, k)| (k, a.slice_rows(start, len))));
    }
    Ok(out)
}

/// Ingests every dataset subdirectory of `input` into `store`.
pub fn ingest_dir(input: &Path, default_map: Option<&RetargetMap>, store: &ClipStore, lock: &StoreLock, opts: &IngestOptions) -> Result<IngestSummary> {
    let mut summary = IngestSummary::default();
    let mut any = false;
    for dir in sorted_entries(input)? {
        if !dir.is_dir() {
            continue;
        }
        any = true;
        let dataset = dir.file_name().and_then(|s| s.to_str()).ok_or_else(|| anyhow!("bad dataset directory {}", dir.display()))?.to_string();
        let task = match fs::read_to_string(dir.join("dataset.toml")) {
            Ok(t) => toml::from_str::<DatasetConfig>(&t).with_context(|| format!("parsing {}/dataset.toml", dir.display()))?.task,
            Err(_) => DatasetTask::T2m,
        };
        let local_map = match fs::read_to_string(dir.join("retarget.toml")) {
            Ok(t) => Some(RetargetMap::from_toml(&t).with_context(|| format!("parsing {}/retarget.toml", dir.display()))?),
            Err(_) => None,
        };
        let map = local_map.as_ref().or(default_map).ok_or_else(|| anyhow!("dataset '{dataset}' has no retarget map"))?;
        for path in sorted_entries(&dir)? {
            if path.extension().and_then(|e| e.to_str()).is_none_or(|e| !e.eq_ignore_ascii_case("bvh")) {
                continue;
            }
            summary.files += 1;
            let file = ingest_file(&path, &dataset, task, map, &store.skeleton, opts)?;
            if file.clips.is_empty() {
                summary.skipped.push((path.display().to_string(), "no clip produced".into()));
            }
            for (mut clip, audio) in file.clips.into_iter().zip(file.audio) {
                if let Some((kind, m)) = audio {
                    let rel = store.write_attachment(lock, &format!("{}.audio", clip.record.id), &m)?;
                    clip.record.audio = Some(AudioRef { kind, path: rel });
                }
                store.write_clip(lock, &clip)?;
                summary.clips += 1;
            }
        }
    }
    if !any {
        bail!("{} contains no dataset subdirectories", input.display());
    }
    Ok(summary)
}
