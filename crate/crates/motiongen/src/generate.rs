//! Clip generation against a session, shared by the CLI and the service.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use motion_core::curriculum::REFERENCE_FRAMES;
use motion_core::features::MotionFeatures;
use motion_core::model::Denoiser;
use motion_core::sampler::generate;
use motion_core::schedule::{build_schedule, NoiseSchedule};
use motion_core::session::{continue_clip, ClipInfo, SessionState};
use motion_core::{Matrix, SkeletonSpec};

use crate::bvh::write_bvh;
use crate::checkpoint::Checkpoint;
use crate::clip::{decode_clip, decode_matrix, encode_clip, ClipFile, ClipRecord, DatasetTask};
use crate::request::{build_conditions, describe, FieldError, ResolvedRequest, TaskChoice, TaskParams};
use crate::retarget::bvh_from_motion;

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("invalid request: {}", describe(.0))]
    Invalid(Vec<FieldError>),
    #[error("generation failed: {0}")]
    Failed(String),
}

/// A loaded denoiser with its sampling schedule.
pub struct Generator {
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub checksum: String,
}

impl Generator {
    pub fn load(path: &Path) -> Result<Self> {
        let (ckpt, checksum) = Checkpoint::load(path)?;
        let model = ckpt.to_denoiser()?;
        let schedule = build_schedule(model.config.diffusion_steps, model.config.schedule)?;
        Ok(Self { model, schedule, checksum })
    }

    /// Appends one clip to `session`, conditioned on the trailing history
    /// window. The session is left untouched on error.
    pub fn extend(&self, session: &mut SessionState, req: &ResolvedRequest, guidance: f64) -> Result<MotionFeatures, GenerateError> {
        let reference = session.reference_window(REFERENCE_FRAMES);
        let (bundle, masks) = build_conditions(&self.model, req, session.anchor, reference.as_ref()).map_err(GenerateError::Invalid)?;
        let info = ClipInfo { caption: req.text.clone(), task: Some(req.task.as_str().to_string()) };
        let mut next = session.clone();
        let clip = continue_clip(&self.model, &self.schedule, &mut next, bundle, &masks, req.frames, guidance, info)
            .map_err(|e| GenerateError::Failed(e.to_string()))?;
        Self::commit(session, next, clip)
    }

    /// Like [`Generator::extend`] but conditioned on an explicit reference
    /// clip instead of the session history.
    pub fn extend_with_reference(
        &self,
        session: &mut SessionState,
        req: &ResolvedRequest,
        reference: MotionFeatures,
        guidance: f64,
    ) -> Result<MotionFeatures, GenerateError> {
        if reference.dim() != self.model.feature_dim() || reference.frames() == 0 {
            return Err(GenerateError::Invalid(vec![FieldError::new(
                "reference_clip",
                format!("reference must be non-empty with {} columns", self.model.feature_dim()),
            )]));
        }
        let reference = reference.tail(REFERENCE_FRAMES);
        let (mut bundle, masks) = build_conditions(&self.model, req, session.anchor, Some(&reference)).map_err(GenerateError::Invalid)?;
        bundle.reference = Some(reference);
        let seed = session.next_seed();
        let clip = generate(&self.model, &self.schedule, &bundle, &masks, req.frames, seed, guidance)
            .map_err(|e| GenerateError::Failed(e.to_string()))?;
        let mut next = session.clone();
        next.push_clip(clip.clone(), ClipInfo { caption: req.text.clone(), task: Some(req.task.as_str().to_string()) }, seed);
        Self::commit(session, next, clip)
    }

    fn commit(session: &mut SessionState, next: SessionState, clip: MotionFeatures) -> Result<MotionFeatures, GenerateError> {
        if !clip.values.is_finite() {
            return Err(GenerateError::Failed("sampler produced non-finite values".into()));
        }
        *session = next;
        Ok(clip)
    }
}

#[derive(Clone, Debug)]
pub struct GenerateOptions {
    pub checkpoint: PathBuf,
    pub task: TaskChoice,
    pub text: Option<String>,
    /// Speech or music features (`.f32` matrix), chosen by the task.
    pub audio: Option<PathBuf>,
    /// Stored clip used as the reference before any history exists.
    pub reference: Option<PathBuf>,
    /// Stored clip holding the observed motion of control tasks.
    pub global: Option<PathBuf>,
    pub params: TaskParams,
    pub clips: usize,
    pub frames: usize,
    pub seed: u64,
    pub guidance: f64,
    pub out: PathBuf,
}

fn window(m: &Matrix, k: usize, frames: usize, what: &str) -> Result<Matrix> {
    let start = k * frames;
    if m.rows < start + frames {
        bail!("{what} has {} rows; clip {} needs rows {start}..{}", m.rows, k + 1, start + frames);
    }
    Ok(m.slice_rows(start, frames))
}

fn read_features(path: &Path) -> Result<MotionFeatures> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(decode_clip(&bytes).with_context(|| format!("decoding {}", path.display()))?.features)
}

/// Generates `clips` consecutive clips into one session and writes it as BVH
/// (`.bvh`), as one concatenated feature clip (`.mclp`) or as the session
/// JSON (`.json`).
pub fn run_generate(opts: &GenerateOptions) -> Result<SessionState> {
    let out_kind = opts.out.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if !matches!(out_kind.as_str(), "bvh" | "mclp" | "json") {
        bail!("output must end in .bvh, .mclp or .json, got {}", opts.out.display());
    }
    if opts.clips == 0 {
        bail!("need at least one clip");
    }
    let generator = Generator::load(&opts.checkpoint)?;
    let skel = &generator.model.skeleton;
    let audio = match &opts.audio {
        Some(p) => Some(decode_matrix(&std::fs::read(p).with_context(|| format!("reading {}", p.display()))?)?),
        None => None,
    };
    if audio.is_some() && opts.task.audio_kind().is_none() {
        bail!("--audio applies to the s2g and m2d tasks only");
    }
    let global = opts.global.as_deref().map(read_features).transpose()?;
    let mut session = SessionState::new("cli", skel.name.clone(), opts.seed);
    session.user_reference = opts.reference.as_deref().map(read_features).transpose()?;
    for k in 0..opts.clips {
        let audio_k = audio.as_ref().map(|a| window(a, k, opts.frames, "audio")).transpose()?;
        let global_k = global
            .as_ref()
            .map(|g| window(&g.values, k, opts.frames, "observed motion").map(|v| MotionFeatures::new(g.fps, v)))
            .transpose()?;
        let req = ResolvedRequest {
            task: opts.task,
            text: opts.text.clone(),
            params: opts.params.clone(),
            speech: audio_k.clone().filter(|_| opts.task == TaskChoice::S2g),
            music: audio_k.filter(|_| opts.task == TaskChoice::M2d),
            global: global_k,
            frames: opts.frames,
        };
        generator.extend(&mut session, &req, opts.guidance)?;
        log::info!("clip {} of {}: {} frames", k + 1, opts.clips, opts.frames);
    }
    let bytes = match out_kind.as_str() {
        "bvh" => write_bvh(&bvh_from_motion(skel, &session.stitch(skel)?)).into_bytes(),
        "mclp" => encode_clip(&session_clip(skel, &session, opts)?)?,
        _ => serde_json::to_vec_pretty(&session)?,
    };
    crate::store::write_atomic(&opts.out, &bytes)?;
    Ok(session)
}

fn session_clip(skel: &SkeletonSpec, session: &SessionState, opts: &GenerateOptions) -> Result<ClipFile> {
    let parts: Vec<MotionFeatures> = session.clips.iter().map(|c| c.features.clone()).collect();
    let features = MotionFeatures::concat(&parts).context("session has no clips")?;
    let task = match opts.task {
        TaskChoice::S2g => DatasetTask::S2g,
        TaskChoice::M2d => DatasetTask::M2d,
        _ => DatasetTask::T2m,
    };
    let record = ClipRecord {
        id: format!("generated-{}", opts.seed),
        dataset: "generated".into(),
        task,
        fps: features.fps,
        frames: features.frames(),
        captions: opts.text.iter().cloned().collect(),
        audio: None,
        has_face: false,
        joint_valid: vec![true; skel.joint_count()],
        sequence: format!("generated/{}", opts.seed),
        segment: 0,
        unmatched_joints: Vec::new(),
    };
    Ok(ClipFile::new(skel, record, features))
}
