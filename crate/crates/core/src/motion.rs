use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::fk::forward_kinematics;
use crate::math::{Quat, Vec3};
use crate::skeleton::SkeletonSpec;

pub const FACE_DIM: usize = 100;

/// Motion in world coordinates: root path plus per-joint local rotations.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GlobalMotion {
    pub fps: f64,
    pub root_translation: Vec<Vec3>,
    /// `frames x rotated_joints`
    pub local_rotations: Vec<Vec<Quat>>,
    /// `frames x FACE_DIM`
    pub face: Option<Vec<Vec<f64>>>,
}

impl GlobalMotion {
    pub fn frames(&self) -> usize {
        self.root_translation.len()
    }

    pub fn validate(&self, skeleton: &SkeletonSpec) -> Result<()> {
        let f = self.frames();
        if f == 0 {
            bail!(InvalidArgument, "motion has no frames");
        }
        if !(self.fps > 0.0) {
            bail!(InvalidArgument, "fps must be positive, got {}", self.fps);
        }
        if self.local_rotations.len() != f {
            bail!(Shape, "{} root positions but {} rotation frames", f, self.local_rotations.len());
        }
        if let Some(bad) = self.local_rotations.iter().position(|r| r.len() != skeleton.rotated_count()) {
            bail!(Shape, "frame {bad} has {} rotations, expected {}", self.local_rotations[bad].len(), skeleton.rotated_count());
        }
        for (i, frame) in self.local_rotations.iter().enumerate() {
            for q in frame {
                if !q.is_finite() || (q.norm() - 1.0).abs() > 1e-6 {
                    bail!(InvalidRotation, "frame {i} holds a non-unit quaternion");
                }
            }
        }
        if let Some(face) = &self.face {
            if face.len() != f || face.iter().any(|r| r.len() != FACE_DIM) {
                bail!(Shape, "face channel must be {f} x {FACE_DIM}");
            }
        }
        if self.root_translation.iter().any(|p| !p.is_finite()) {
            bail!(NonFinite, "root translation");
        }
        Ok(())
    }

    /// World positions for every frame.
    pub fn joint_positions(&self, skeleton: &SkeletonSpec) -> Result<Vec<Vec<Vec3>>> {
        self.root_translation
            .iter()
            .zip(&self.local_rotations)
            .map(|(&root, rots)| forward_kinematics(skeleton, root, rots))
            .collect()
    }

    /// Frames `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> GlobalMotion {
        let end = (start + len).min(self.frames());
        GlobalMotion {
            fps: self.fps,
            root_translation: self.root_translation[start..end].to_vec(),
            local_rotations: self.local_rotations[start..end].to_vec(),
            face: self.face.as_ref().map(|f| f[start..end].to_vec()),
        }
    }

    /// A motionless clip in the rest pose.
    pub fn rest(skeleton: &SkeletonSpec, frames: usize, fps: f64, root: Vec3) -> GlobalMotion {
        GlobalMotion {
            fps,
            root_translation: alloc::vec![root; frames],
            local_rotations: alloc::vec![alloc::vec![Quat::IDENTITY; skeleton.rotated_count()]; frames],
            face: None,
        }
    }
}
