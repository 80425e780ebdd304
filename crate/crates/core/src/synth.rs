//! Procedural motions for fixtures and tests.
//!
//! Joints are addressed by their desk names (`left_hip`, `right_elbow`, ...),
//! so any skeleton sharing those names can be animated; missing joints are
//! skipped. Every style is periodic in its pose so clips can loop.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use crate::math::{Mat3, Quat, Vec3};
use crate::motion::{GlobalMotion, FACE_DIM};
use crate::skeleton::SkeletonSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Style {
    Walk,
    Run,
    Wave,
    Jump,
    Turn,
    Idle,
    Kick,
    Backward,
}

impl Style {
    pub const ALL: [Style; 8] =
        [Style::Walk, Style::Run, Style::Wave, Style::Jump, Style::Turn, Style::Idle, Style::Kick, Style::Backward];

    pub fn caption(self) -> &'static str {
        match self {
            Style::Walk => "a person walks forward",
            Style::Run => "someone runs quickly ahead",
            Style::Wave => "a person waves the right hand",
            Style::Jump => "the man jumps up and down in place",
            Style::Turn => "a person walks in a circle turning left",
            Style::Idle => "a person stands still and sways",
            Style::Kick => "the person kicks with the left leg",
            Style::Backward => "a person steps backward slowly",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Style::Walk => "walk",
            Style::Run => "run",
            Style::Wave => "wave",
            Style::Jump => "jump",
            Style::Turn => "turn",
            Style::Idle => "idle",
            Style::Kick => "kick",
            Style::Backward => "backward",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub style: Style,
    pub frames: usize,
    pub fps: f64,
    /// Multiplies amplitudes and speeds.
    pub intensity: f64,
    /// Cycle period in seconds.
    pub period: f64,
    /// Phase offset in cycles.
    pub phase: f64,
    /// Initial facing yaw about +Y.
    pub heading: f64,
    pub start: [f64; 2],
    pub with_face: bool,
}

impl SynthParams {
    pub fn new(style: Style, frames: usize) -> Self {
        Self {
            style,
            frames,
            fps: 30.0,
            intensity: 1.0,
            period: 1.0,
            phase: 0.0,
            heading: 0.0,
            start: [0.0, 0.0],
            with_face: false,
        }
    }
}

const STAND_HEIGHT: f64 = 0.93;

struct Pose<'a> {
    skeleton: &'a SkeletonSpec,
    slots: Vec<Option<usize>>,
    rots: Vec<Quat>,
}

impl Pose<'_> {
    fn set(&mut self, name: &str, m: Mat3) {
        if let Some(j) = self.skeleton.joint_index(name) {
            if let Some(k) = self.slots[j] {
                self.rots[k] = Quat::from_matrix(&m);
            }
        }
    }
}

/// Local rotations and root state of one frame.
fn frame(skeleton: &SkeletonSpec, p: &SynthParams, time: f64) -> (f64, f64, Vec<Quat>) {
    let a = p.intensity;
    let w = TAU / p.period;
    let ph = w * time + TAU * p.phase;
    let s = libm::sin(ph);
    let c = libm::cos(ph);
    let mut pose = Pose {
        skeleton,
        slots: skeleton.rotation_slots(),
        rots: alloc::vec![Quat::IDENTITY; skeleton.rotated_count()],
    };
    let mut yaw = p.heading;
    let mut height = STAND_HEIGHT;
    let mut root_tilt = Mat3::IDENTITY;
    match p.style {
        Style::Walk | Style::Turn | Style::Backward | Style::Run => {
            let (amp, knee, arm) = match p.style {
                Style::Run => (0.7, 1.1, 0.8),
                Style::Backward => (0.35, 0.4, 0.2),
                _ => (0.45, 0.6, 0.35),
            };
            height = STAND_HEIGHT - 0.02 * a + 0.02 * a * libm::fabs(c);
            pose.set("left_hip", Mat3::rot_x(-amp * a * s));
            pose.set("right_hip", Mat3::rot_x(amp * a * s));
            pose.set("left_knee", Mat3::rot_x(knee * a * (0.5 + 0.5 * s).max(0.0)));
            pose.set("right_knee", Mat3::rot_x(knee * a * (0.5 - 0.5 * s).max(0.0)));
            pose.set("left_shoulder", Mat3::rot_x(arm * a * s).mul_mat(&Mat3::rot_z(-1.2)));
            pose.set("right_shoulder", Mat3::rot_x(-arm * a * s).mul_mat(&Mat3::rot_z(1.2)));
            pose.set("left_elbow", Mat3::rot_y(0.3 * a));
            pose.set("right_elbow", Mat3::rot_y(-0.3 * a));
            pose.set("spine2", Mat3::rot_y(0.1 * a * s));
            if p.style == Style::Run {
                root_tilt = Mat3::rot_x(0.2);
            }
            if p.style == Style::Turn {
                yaw += 0.6 * a * time;
            }
        }
        Style::Wave => {
            pose.set("right_shoulder", Mat3::rot_z(-0.3));
            pose.set("right_elbow", Mat3::rot_y(-(1.2 + 0.5 * a * s)));
            pose.set("left_shoulder", Mat3::rot_z(-1.2));
            pose.set("head", Mat3::rot_y(-0.2 * a * s));
        }
        Style::Jump => {
            let air = libm::sin(ph).max(0.0);
            let crouch = (-libm::sin(ph)).max(0.0);
            height = STAND_HEIGHT + 0.3 * a * air - 0.15 * a * crouch;
            pose.set("left_hip", Mat3::rot_x(-0.8 * crouch));
            pose.set("right_hip", Mat3::rot_x(-0.8 * crouch));
            pose.set("left_knee", Mat3::rot_x(1.4 * crouch));
            pose.set("right_knee", Mat3::rot_x(1.4 * crouch));
            pose.set("left_shoulder", Mat3::rot_z(-1.2 + 0.9 * a * air));
            pose.set("right_shoulder", Mat3::rot_z(1.2 - 0.9 * a * air));
        }
        Style::Idle => {
            root_tilt = Mat3::rot_z(0.04 * a * s);
            pose.set("spine2", Mat3::rot_z(-0.05 * a * s));
            pose.set("left_shoulder", Mat3::rot_z(-1.25));
            pose.set("right_shoulder", Mat3::rot_z(1.25));
            pose.set("head", Mat3::rot_y(0.1 * a * c));
        }
        Style::Kick => {
            let k = (libm::sin(ph)).max(0.0);
            pose.set("left_hip", Mat3::rot_x(-1.3 * a * k));
            pose.set("left_knee", Mat3::rot_x(0.9 * a * (1.0 - k) * k * 4.0));
            pose.set("left_shoulder", Mat3::rot_z(-0.9));
            pose.set("right_shoulder", Mat3::rot_z(0.9));
            pose.set("spine2", Mat3::rot_x(0.15 * a * k));
        }
    }
    let root_rot = Mat3::rot_y(yaw).mul_mat(&root_tilt);
    pose.set("pelvis", root_rot);
    if skeleton.joint_index("pelvis").is_none() {
        if let Some(k) = pose.slots[0] {
            pose.rots[k] = Quat::from_matrix(&root_rot);
        }
    }
    (height, yaw, pose.rots)
}

/// Animates `skeleton` in the canonical frame (+Y up, facing +Z at yaw 0) and
/// maps the result into the skeleton's own axis convention.
pub fn synth_motion(skeleton: &SkeletonSpec, p: &SynthParams) -> GlobalMotion {
    let dt = 1.0 / p.fps;
    let basis_t = skeleton.canonical_basis().transpose();
    let mut root_translation = Vec::with_capacity(p.frames);
    let mut local_rotations = Vec::with_capacity(p.frames);
    let mut xz = Vec3::new(p.start[0], 0.0, p.start[1]);
    let speed = synth_speed(p);
    for i in 0..p.frames {
        let time = i as f64 * dt;
        let (height, yaw, mut rots) = frame(skeleton, p, time);
        let pos = Vec3::new(xz.x, height, xz.z);
        root_translation.push(basis_t.mul_vec(pos));
        let root_slot = skeleton.rotation_slots()[0];
        if let Some(k) = root_slot {
            let canon = rots[k].to_matrix();
            rots[k] = Quat::from_matrix(&basis_t.mul_mat(&canon).mul_mat(&skeleton.canonical_basis()));
        }
        local_rotations.push(rots);
        xz += Mat3::rot_y(yaw).mul_vec(Vec3::new(0.0, 0.0, speed * dt));
    }
    let face = p.with_face.then(|| {
        (0..p.frames)
            .map(|i| {
                let time = i as f64 * dt;
                (0..FACE_DIM).map(|k| 0.3 * libm::sin(TAU * time / p.period + k as f64 * PI / 17.0)).collect()
            })
            .collect()
    });
    GlobalMotion { fps: p.fps, root_translation, local_rotations, face }
}

fn synth_speed(p: &SynthParams) -> f64 {
    let base = match p.style {
        Style::Run => 3.0,
        Style::Backward => -0.6,
        Style::Walk | Style::Turn => 1.2,
        _ => 0.0,
    };
    base * p.intensity
}

/// A caption with light variation, for multi-caption fixtures.
pub fn caption_variants(style: Style) -> Vec<String> {
    let base = style.caption();
    alloc::vec![String::from(base), alloc::format!("{base} at a steady pace")]
}
