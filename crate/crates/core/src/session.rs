//! Clip-by-clip long-horizon generation.
//!
//! Each new clip is conditioned on the trailing window of what came before and
//! integrates its root from the terminal state of the previous clip.

use alloc::string::String;
use alloc::vec::Vec;

use crate::condition::{ConditionBundle, MaskSet};
use crate::curriculum::REFERENCE_FRAMES;
use crate::error::{bail, Result};
use crate::features::{integrate_root, recover_motion, Anchor, MotionFeatures};
use crate::model::Denoiser;
use crate::motion::GlobalMotion;
use crate::rng::derive_seed;
use crate::sampler::generate;
use crate::schedule::NoiseSchedule;
use crate::skeleton::SkeletonSpec;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClipEntry {
    pub features: MotionFeatures,
    /// Root state the clip integrates from.
    pub start: Anchor,
    pub caption: Option<String>,
    pub task: Option<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SessionState {
    pub id: String,
    pub skeleton: String,
    pub seed: u64,
    pub clips: Vec<ClipEntry>,
    /// Terminal root state of the last clip.
    pub anchor: Anchor,
    /// Used as the reference until the session has history.
    pub user_reference: Option<MotionFeatures>,
}

/// Metadata recorded with a generated clip.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClipInfo {
    pub caption: Option<String>,
    pub task: Option<String>,
}

impl SessionState {
    pub fn new(id: impl Into<String>, skeleton: impl Into<String>, seed: u64) -> Self {
        Self {
            id: id.into(),
            skeleton: skeleton.into(),
            seed,
            clips: Vec::new(),
            anchor: Anchor::default(),
            user_reference: None,
        }
    }

    pub fn total_frames(&self) -> usize {
        self.clips.iter().map(|c| c.features.frames()).sum()
    }

    /// The last `len` frames of history, or of the user reference while the
    /// history is empty.
    pub fn reference_window(&self, len: usize) -> Option<MotionFeatures> {
        if self.clips.is_empty() {
            return self.user_reference.as_ref().map(|r| r.tail(len));
        }
        let mut taken = 0;
        let mut parts = Vec::new();
        for c in self.clips.iter().rev() {
            let need = len - taken;
            let f = c.features.frames();
            parts.push(if f > need { c.features.tail(need) } else { c.features.clone() });
            taken += f.min(need);
            if taken == len {
                break;
            }
        }
        parts.reverse();
        MotionFeatures::concat(&parts)
    }

    /// Seed of the next clip.
    pub fn next_seed(&self) -> u64 {
        derive_seed(self.seed, &[self.clips.len() as u64])
    }

    /// Appends a clip and advances the anchor through its root velocities.
    pub fn push_clip(&mut self, features: MotionFeatures, info: ClipInfo, seed: u64) {
        let (_, terminal) = integrate_root(&features, self.anchor);
        self.clips.push(ClipEntry { features, start: self.anchor, caption: info.caption, task: info.task, seed });
        self.anchor = terminal;
    }

    /// Recovers every clip from its start anchor and concatenates them.
    pub fn stitch(&self, skeleton: &SkeletonSpec) -> Result<GlobalMotion> {
        if self.clips.is_empty() {
            bail!(InvalidArgument, "session '{}' has no clips", self.id);
        }
        let mut out: Option<GlobalMotion> = None;
        for c in &self.clips {
            let m = recover_motion(&c.features, skeleton, c.start.yaw, [c.start.x, c.start.z])?;
            match &mut out {
                None => out = Some(m),
                Some(acc) => {
                    acc.root_translation.extend(m.root_translation);
                    acc.local_rotations.extend(m.local_rotations);
                    acc.face = match (acc.face.take(), m.face) {
                        (None, None) => None,
                        (a, b) => {
                            let fa = a.unwrap_or_else(|| zero_face(acc.local_rotations.len() - c.features.frames()));
                            let fb = b.unwrap_or_else(|| zero_face(c.features.frames()));
                            Some(fa.into_iter().chain(fb).collect())
                        }
                    };
                }
            }
        }
        Ok(out.expect("at least one clip"))
    }
}

fn zero_face(frames: usize) -> Vec<Vec<f64>> {
    alloc::vec![alloc::vec![0.0; crate::motion::FACE_DIM]; frames]
}

/// Generates the next clip of `session`, injecting the trailing history window
/// as the reference condition.
#[allow(clippy::too_many_arguments)]
pub fn continue_clip(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    session: &mut SessionState,
    mut bundle: ConditionBundle,
    masks: &MaskSet,
    frames: usize,
    guidance: f64,
    info: ClipInfo,
) -> Result<MotionFeatures> {
    if model.skeleton.name != session.skeleton {
        bail!(
            InvalidArgument,
            "session uses skeleton '{}' but the model was trained on '{}'",
            session.skeleton,
            model.skeleton.name
        );
    }
    if bundle.reference.is_some() {
        bail!(InvalidArgument, "the reference channel is filled from session history");
    }
    bundle.reference = session.reference_window(REFERENCE_FRAMES);
    let seed = session.next_seed();
    let clip = generate(model, schedule, &bundle, masks, frames, seed, guidance)?;
    session.push_clip(clip.clone(), info, seed);
    Ok(clip)
}
