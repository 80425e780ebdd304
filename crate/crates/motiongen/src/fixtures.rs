//! Synthetic raw corpus in the ingest layout, plus matching configuration.
//!
//! Four datasets exercise the ingestion paths: centimeter units and renamed
//! joints throughout, 24, 30 and 60 fps sources, a Z-up source with its own
//! retarget map, music and speech sidecars, and face coefficients.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::Rng;

use motion_core::rng::stream;
use motion_core::synth::{synth_motion, Style, SynthParams};
use motion_core::{Matrix, SignedAxis, SkeletonSpec};

use crate::align::{basis_change, change_basis};
use crate::bvh::{write_bvh, BvhDocument};
use crate::clip::{encode_matrix, AudioKind, DatasetTask};
use crate::config::{CurriculumFile, EmbedderFile, ModelFile};
use crate::retarget::{bvh_from_motion, RetargetMap};

/// Canonical joint names as a typical mocap export names them.
pub const SOURCE_NAMES: [(&str, &str); 24] = [
    ("pelvis", "Hips"),
    ("left_hip", "LeftUpLeg"),
    ("right_hip", "RightUpLeg"),
    ("spine1", "Spine"),
    ("left_knee", "LeftLeg"),
    ("right_knee", "RightLeg"),
    ("spine2", "Spine1"),
    ("left_ankle", "LeftFoot"),
    ("right_ankle", "RightFoot"),
    ("spine3", "Spine2"),
    ("left_foot", "LeftToeBase"),
    ("right_foot", "RightToeBase"),
    ("neck", "Neck"),
    ("left_collar", "LeftShoulder"),
    ("right_collar", "RightShoulder"),
    ("head", "Head"),
    ("left_shoulder", "LeftArm"),
    ("right_shoulder", "RightArm"),
    ("left_elbow", "LeftForeArm"),
    ("right_elbow", "RightForeArm"),
    ("left_wrist", "LeftHand"),
    ("right_wrist", "RightHand"),
    ("left_hand", "LeftHandMiddle1"),
    ("right_hand", "RightHandMiddle1"),
];

/// Source units per meter.
pub const SOURCE_UNITS: f64 = 100.0;
pub const AUDIO_DIM: usize = 16;

struct DatasetPlan {
    name: &'static str,
    task: DatasetTask,
    fps: f64,
    styles: &'static [Style],
    files: usize,
    z_up: bool,
    audio: Option<AudioKind>,
    face: bool,
    caption_suffix: &'static str,
    /// Leading files long enough to split into two segments.
    long_files: usize,
}

const PLANS: [DatasetPlan; 4] = [
    DatasetPlan {
        name: "hml",
        task: DatasetTask::T2m,
        fps: 24.0,
        styles: &[Style::Walk, Style::Run, Style::Turn, Style::Backward],
        files: 20,
        z_up: false,
        audio: None,
        face: false,
        caption_suffix: "",
        long_files: 2,
    },
    DatasetPlan {
        name: "mox",
        task: DatasetTask::T2m,
        fps: 60.0,
        styles: &[Style::Wave, Style::Jump, Style::Idle, Style::Kick],
        files: 20,
        z_up: true,
        audio: None,
        face: false,
        caption_suffix: "",
        long_files: 0,
    },
    DatasetPlan {
        name: "aist",
        task: DatasetTask::M2d,
        fps: 30.0,
        styles: &[Style::Jump, Style::Kick, Style::Wave],
        files: 16,
        z_up: false,
        audio: Some(AudioKind::Music),
        face: false,
        caption_suffix: " to the music",
        long_files: 0,
    },
    DatasetPlan {
        name: "beat",
        task: DatasetTask::S2g,
        fps: 30.0,
        styles: &[Style::Idle, Style::Wave],
        files: 16,
        z_up: false,
        audio: Some(AudioKind::Speech),
        face: true,
        caption_suffix: " while talking",
        long_files: 0,
    },
];

/// Paths written by [`write_fixtures`].
#[derive(Clone, Debug)]
pub struct FixturePaths {
    pub raw: PathBuf,
    pub skeleton: PathBuf,
    pub retarget: PathBuf,
    pub model: PathBuf,
    pub curriculum: PathBuf,
    pub embedder: PathBuf,
}

pub fn source_map() -> RetargetMap {
    RetargetMap {
        joints: SOURCE_NAMES.iter().map(|(t, s)| (s.to_string(), t.to_string())).collect(),
        exclude: Vec::new(),
        rest_corrections: Default::default(),
        scale: 1.0 / SOURCE_UNITS,
        source_up: SignedAxis::PosY,
        source_forward: SignedAxis::PosZ,
        standardize_rest: true,
    }
}

/// A desk motion exported with source joint names and centimeter units.
pub fn export_source_bvh(skel: &SkeletonSpec, motion: &motion_core::GlobalMotion) -> BvhDocument {
    let mut doc = bvh_from_motion(skel, motion);
    for j in &mut doc.joints {
        if let Some((_, s)) = SOURCE_NAMES.iter().find(|(t, _)| *t == j.name) {
            j.name = s.to_string();
        }
        j.offset = j.offset.map(|v| v * SOURCE_UNITS);
        j.end_site = j.end_site.map(|e| e.map(|v| v * SOURCE_UNITS));
    }
    let starts = doc.channel_starts();
    for (j, joint) in doc.joints.iter().enumerate() {
        for (c, ch) in joint.channels.iter().enumerate() {
            if !ch.is_rotation() {
                for row in &mut doc.motion {
                    row[starts[j] + c] *= SOURCE_UNITS;
                }
            }
        }
    }
    doc
}

/// Beat-like features: harmonics of the motion's own cycle, so audio and
/// motion share their tempo.
fn audio_features(frames: usize, fps: f64, period: f64, phase: f64, kind: AudioKind) -> Matrix {
    let offset = if kind == AudioKind::Speech { 0.5 } else { 0.0 };
    let mut m = Matrix::zeros(frames, AUDIO_DIM);
    for i in 0..frames {
        let t = i as f64 / fps / period + phase;
        for k in 0..AUDIO_DIM / 2 {
            let w = std::f64::consts::TAU * (k + 1) as f64 * t;
            m.set(i, 2 * k, (w + offset).sin() / (k + 1) as f64);
            m.set(i, 2 * k + 1, (w + offset).cos() / (k + 1) as f64);
        }
    }
    m
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Writes the raw corpus under `dir/raw` and configuration next to it.
/// Output depends only on `seed`.
pub fn write_fixtures(dir: &Path, seed: u64) -> Result<FixturePaths> {
    let skel = SkeletonSpec::desk();
    let raw = dir.join("raw");
    for (di, plan) in PLANS.iter().enumerate() {
        let ddir = raw.join(plan.name);
        fs::create_dir_all(&ddir).with_context(|| format!("creating {}", ddir.display()))?;
        if plan.task != DatasetTask::T2m {
            write(&ddir.join("dataset.toml"), format!("task = \"{}\"\n", plan.task))?;
        }
        let mut map = source_map();
        let basis = if plan.z_up {
            map.source_up = SignedAxis::PosZ;
            map.source_forward = SignedAxis::NegY;
            write(&ddir.join("retarget.toml"), map.to_toml())?;
            basis_change(SignedAxis::PosY, SignedAxis::PosZ, SignedAxis::PosZ, SignedAxis::NegY)
        } else {
            None
        };
        for f in 0..plan.files {
            let mut rng = stream(seed, &[di as u64, f as u64]);
            let style = plan.styles[f % plan.styles.len()];
            let len30 = if f < plan.long_files { rng.gen_range(181..=185) } else { rng.gen_range(31..=35) };
            let frames = (len30 as f64 * plan.fps / 30.0).round() as usize;
            let mut p = SynthParams::new(style, frames);
            p.fps = plan.fps;
            p.intensity = rng.gen_range(0.8..1.2);
            p.period = rng.gen_range(0.8..1.3);
            p.phase = rng.gen_range(0.0..1.0);
            p.heading = rng.gen_range(-3.0..3.0);
            p.start = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            p.with_face = plan.face;
            let motion = synth_motion(&skel, &p);
            let mut doc = export_source_bvh(&skel, &motion);
            if let Some(b) = &basis {
                doc = change_basis(&doc, b);
            }
            let stem = format!("{}_{f:02}", style.name());
            write(&ddir.join(format!("{stem}.bvh")), write_bvh(&doc))?;
            let captions: Vec<String> = [style.caption().to_string(), format!("{} at a steady pace", style.caption())]
                .into_iter()
                .map(|c| format!("{c}{}", plan.caption_suffix))
                .collect();
            write(&ddir.join(format!("{stem}.captions.txt")), captions.join("\n") + "\n")?;
            if let Some(kind) = plan.audio {
                let a = audio_features(frames, plan.fps, p.period, p.phase, kind);
                write(&ddir.join(format!("{stem}.audio.f32")), encode_matrix(&a))?;
            }
            if let Some(face) = &motion.face {
                write(&ddir.join(format!("{stem}.face.f32")), encode_matrix(&Matrix::from_rows(face)))?;
            }
        }
    }
    let paths = FixturePaths {
        skeleton: dir.join("skeleton.toml"),
        retarget: dir.join("retarget.toml"),
        model: dir.join("model.toml"),
        curriculum: dir.join("curriculum.toml"),
        embedder: dir.join("embedder.toml"),
        raw,
    };
    write(&paths.skeleton, toml::to_string(&skel)?)?;
    write(&paths.retarget, source_map().to_toml())?;
    let mut model = ModelFile::default();
    model.model.speech_dim = AUDIO_DIM;
    model.model.music_dim = AUDIO_DIM;
    write(&paths.model, toml::to_string(&model)?)?;
    let curriculum = CurriculumFile { batch_sizes: Some(vec![4, 4, 4, 2]), ..CurriculumFile::default() };
    write(&paths.curriculum, toml::to_string(&curriculum)?)?;
    write(&paths.embedder, toml::to_string(&EmbedderFile::default())?)?;
    Ok(paths)
}
