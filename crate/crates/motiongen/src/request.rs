//! Condition payloads shared by the CLI and the service, and their
//! translation into a condition bundle plus masks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use motion_core::condition::{ConditionBundle, HashedTokenizer, MaskSet, TextFeaturizer};
use motion_core::features::{Anchor, MotionFeatures};
use motion_core::fk::rest_positions;
use motion_core::{Mat3, Vec3};
use motion_core::model::Denoiser;
use motion_core::task::{make_task_mask, TaskKind, TaskMaskSpec};
use motion_core::{Matrix, SkeletonSpec};

fn wrap_angle(a: f64) -> f64 {
    let t = core::f64::consts::TAU;
    a - t * ((a + t / 2.0) / t).floor()
}

use crate::clip::AudioKind;

pub const DEFAULT_FRAMES: usize = 150;
/// Frames over which a waypoint path turns from the start heading to the path.
const HEADING_BLEND: usize = 15;

/// What a request asks the model for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskChoice {
    T2m,
    S2g,
    M2d,
    Control(TaskKind),
}

impl TaskChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::T2m => "t2m",
            Self::S2g => "s2g",
            Self::M2d => "m2d",
            Self::Control(k) => k.as_str(),
        }
    }

    pub fn audio_kind(self) -> Option<AudioKind> {
        match self {
            Self::S2g => Some(AudioKind::Speech),
            Self::M2d => Some(AudioKind::Music),
            _ => None,
        }
    }
}

impl fmt::Display for TaskChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "t2m" => Ok(Self::T2m),
            "s2g" => Ok(Self::S2g),
            "m2d" => Ok(Self::M2d),
            other => other
                .parse::<TaskKind>()
                .map(Self::Control)
                .map_err(|_| format!("unknown task '{other}' (t2m, s2g, m2d, predict, inbetween, complete, trajectory, dense)")),
        }
    }
}

/// Optional task parameters; unset values take the task defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskParams {
    pub prefix: Option<usize>,
    pub suffix: Option<usize>,
    /// Observed `[frame, joint]` cells for completion.
    #[serde(default)]
    pub cells: Vec<[usize; 2]>,
    /// Controlled joint names for trajectory control; default the root.
    #[serde(default)]
    pub joints: Vec<String>,
    /// Sparse root XZ targets in session coordinates, in visiting order.
    #[serde(default)]
    pub waypoints: Vec<[f64; 2]>,
    /// Keep only the skeleton's key joints of the observed motion.
    #[serde(default)]
    pub key_joints_only: bool,
}

/// A request with every referenced attachment already loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedRequest {
    pub task: TaskChoice,
    pub text: Option<String>,
    pub params: TaskParams,
    pub speech: Option<Matrix>,
    pub music: Option<Matrix>,
    /// Observed motion for control tasks.
    pub global: Option<MotionFeatures>,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

pub fn describe(errors: &[FieldError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Standing root height of the rest pose above its lowest foot joint.
pub fn rest_root_height(skel: &SkeletonSpec) -> f64 {
    let basis = skel.canonical_basis();
    let pos = rest_positions(skel);
    let feet = skel.foot_joints();
    let candidates: Vec<usize> = if feet.is_empty() { (0..skel.joint_count()).collect() } else { feet };
    let low = candidates.iter().map(|&j| basis.mul_vec(pos[j]).y).fold(f64::INFINITY, f64::min);
    basis.mul_vec(pos[0]).y - low
}

/// Root columns of a clip that starts at `start` and walks the polyline
/// through `waypoints` at constant speed, facing its direction of travel.
/// Integrating the result from `start` visits every waypoint; the last frame
/// lands on the final one.
pub fn densify_waypoints(skel: &SkeletonSpec, start: Anchor, waypoints: &[[f64; 2]], frames: usize, height: f64) -> MotionFeatures {
    let mut pts = vec![[start.x, start.z]];
    pts.extend_from_slice(waypoints);
    let seg_len: Vec<f64> = pts.windows(2).map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt()).collect();
    let total: f64 = seg_len.iter().sum();
    let at = |s: f64| -> ([f64; 2], f64) {
        let mut acc = 0.0;
        for (i, &l) in seg_len.iter().enumerate() {
            if s <= acc + l || i + 1 == seg_len.len() {
                let t = if l > 0.0 { ((s - acc) / l).clamp(0.0, 1.0) } else { 0.0 };
                let (a, b) = (pts[i], pts[i + 1]);
                let heading = if l > 0.0 { (b[0] - a[0]).atan2(b[1] - a[1]) } else { f64::NAN };
                return ([a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t], heading);
            }
            acc += l;
        }
        (pts[0], f64::NAN)
    };
    let steps = frames.saturating_sub(1).max(1);
    let mut pos = Vec::with_capacity(frames);
    let mut path_heading = Vec::with_capacity(frames);
    for k in 0..frames {
        let (p, h) = at(total * k as f64 / steps as f64);
        pos.push(p);
        path_heading.push(h);
    }
    // fill headings of degenerate spans from their neighbours
    let mut last = start.yaw;
    for h in &mut path_heading {
        if h.is_nan() {
            *h = last;
        }
        last = *h;
    }
    let yaw: Vec<f64> = (0..frames)
        .map(|k| {
            let w = (k as f64 / HEADING_BLEND as f64).min(1.0);
            start.yaw + wrap_angle(path_heading[k] - start.yaw) * w
        })
        .collect();
    let layout = skel.layout();
    let mut values = Matrix::zeros(frames, layout.dim());
    for i in 0..frames {
        let (a, b) = if i + 1 < frames { (i, i + 1) } else if frames > 1 { (i - 1, i) } else { (i, i) };
        let d = Vec3::new(pos[b][0] - pos[a][0], 0.0, pos[b][1] - pos[a][1]);
        let local = Mat3::rot_y(-yaw[a]).mul_vec(d);
        let row = values.row_mut(i);
        row[0] = wrap_angle(yaw[b] - yaw[a]);
        row[1] = local.x;
        row[2] = local.z;
        row[3] = height;
    }
    MotionFeatures::new(30.0, values)
}

/// Builds the bundle and masks for `req`; errors name the offending fields.
/// `anchor` and `reference` describe the session the clip will extend.
pub fn build_conditions(
    model: &Denoiser,
    req: &ResolvedRequest,
    anchor: Anchor,
    reference: Option<&MotionFeatures>,
) -> Result<(ConditionBundle, MaskSet), Vec<FieldError>> {
    let skel = &model.skeleton;
    let cfg = &model.config;
    let frames = req.frames;
    let mut errs = Vec::new();
    if frames < 2 || frames > cfg.max_frames {
        errs.push(FieldError::new("frames", format!("must be in 2..={}", cfg.max_frames)));
    }
    let mut bundle = ConditionBundle::default();
    let mut masks = MaskSet::new(skel);
    if let Some(text) = &req.text {
        let tok = HashedTokenizer { buckets: cfg.text_buckets, max_tokens: cfg.max_text_tokens };
        let t = tok.featurize(text);
        if t.is_empty() {
            errs.push(FieldError::new("text", "caption has no words"));
        } else {
            bundle.text = Some(t);
        }
    }
    if req.speech.is_some() && req.music.is_some() {
        errs.push(FieldError::new("speech", "speech and music are mutually exclusive"));
        errs.push(FieldError::new("music", "speech and music are mutually exclusive"));
    }
    let take_audio = |m: &Option<Matrix>, name: &str, dim: usize, errs: &mut Vec<FieldError>| -> Option<Matrix> {
        let m = m.as_ref()?;
        if m.cols != dim {
            errs.push(FieldError::new(name, format!("features must have {dim} columns, got {}", m.cols)));
            return None;
        }
        if m.rows < frames {
            errs.push(FieldError::new(name, format!("needs at least {frames} rows, got {}", m.rows)));
            return None;
        }
        Some(m.slice_rows(0, frames))
    };
    bundle.speech = take_audio(&req.speech, "speech", cfg.speech_dim, &mut errs);
    bundle.music = take_audio(&req.music, "music", cfg.music_dim, &mut errs);
    match req.task {
        TaskChoice::T2m => {
            if bundle.text.is_none() {
                errs.push(FieldError::new("text", "t2m needs a caption"));
            }
        }
        TaskChoice::S2g if req.speech.is_none() => errs.push(FieldError::new("speech", "s2g needs speech features")),
        TaskChoice::M2d if req.music.is_none() => errs.push(FieldError::new("music", "m2d needs music features")),
        TaskChoice::S2g | TaskChoice::M2d => {}
        TaskChoice::Control(kind) => {
            let p = &req.params;
            let mut spec = TaskMaskSpec::new(kind);
            if let Some(v) = p.prefix {
                spec.prefix = v;
            }
            if let Some(v) = p.suffix {
                spec.suffix = v;
            }
            spec.cells = p.cells.iter().map(|c| (c[0], c[1])).collect();
            for name in &p.joints {
                match skel.joint_index(name) {
                    Some(j) => spec.joints.push(j),
                    None => errs.push(FieldError::new("task_params.joints", format!("unknown joint '{name}'"))),
                }
            }
            let global = match (&req.global, kind) {
                (Some(g), _) if !p.waypoints.is_empty() => {
                    errs.push(FieldError::new("task_params.waypoints", "give waypoints or an observed clip, not both"));
                    Some(g.clone())
                }
                (Some(g), _) => Some(g.clone()),
                (None, TaskKind::Trajectory) if !p.waypoints.is_empty() => {
                    if !spec.joints.iter().all(|&j| j == 0) {
                        errs.push(FieldError::new("task_params.joints", "waypoints control the root only"));
                    }
                    let height = reference.map_or_else(|| rest_root_height(skel), |r| r.values.get(r.frames() - 1, 3));
                    Some(densify_waypoints(skel, anchor, &p.waypoints, frames.max(2), height))
                }
                (None, _) => {
                    errs.push(FieldError::new("global", format!("{kind} needs observed motion")));
                    None
                }
            };
            if !p.waypoints.is_empty() && kind != TaskKind::Trajectory {
                errs.push(FieldError::new("task_params.waypoints", "waypoints apply to trajectory tasks only"));
            }
            if let Some(g) = &global {
                if g.frames() != frames || g.dim() != skel.feature_dim() {
                    errs.push(FieldError::new(
                        "global",
                        format!("observed motion must be {frames} x {}, got {} x {}", skel.feature_dim(), g.frames(), g.dim()),
                    ));
                }
            }
            match make_task_mask(&spec, skel, frames.max(1)) {
                Ok(m) => masks.task = Some(m),
                Err(e) => errs.push(FieldError::new("task_params", e.to_string())),
            }
            if p.key_joints_only {
                masks = masks.key_joints_only(skel);
            }
            bundle.global = global;
        }
    }
    if !matches!(req.task, TaskChoice::Control(_)) && req.params != TaskParams::default() {
        errs.push(FieldError::new("task_params", format!("{} takes no task parameters", req.task)));
    }
    if errs.is_empty() {
        if let Err(bad) = bundle.validate(skel, &masks, frames, (cfg.speech_dim, cfg.music_dim)) {
            errs.extend(bad.into_iter().map(|(f, m)| FieldError::new(f, m)));
        }
    }
    if errs.is_empty() {
        Ok((bundle, masks))
    } else {
        Err(errs)
    }
}
