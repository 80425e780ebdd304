//! Per-frame pose tuple: root yaw rate, planar root velocity in the facing
//! frame, root height, root-relative joint positions, 6D joint rotations, joint
//! velocities in the facing frame, foot contacts and face coefficients.
//!
//! All feature math happens in the canonical frame (up = +Y, forward = +Z);
//! skeletons with another convention are mapped through
//! [`SkeletonSpec::canonical_basis`] on the way in and out.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{bail, Result};
use crate::fk::forward_kinematics;
use crate::math::{wrap_angle, Mat3, Quat, Vec3};
use crate::motion::{GlobalMotion, FACE_DIM};
use crate::rotation::{matrix_to_sixd, sixd_to_matrix_or_identity};
use crate::skeleton::SkeletonSpec;
use crate::tensor::Matrix;

pub const CONTACT_DIM: usize = 4;
pub const ROOT_DIM: usize = 4;
/// Heel/toe speed threshold in meters per frame at 30 fps.
pub const DEFAULT_CONTACT_THRESHOLD: f64 = 0.002;

/// Column ranges of the feature vector for `N` joints, `N'` rotated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    pub joints: usize,
    pub rotated: usize,
}

impl FeatureLayout {
    pub fn new(joints: usize, rotated: usize) -> Self {
        Self { joints, rotated }
    }

    pub const fn dim_for(joints: usize, rotated: usize) -> usize {
        ROOT_DIM + 3 * (joints - 1) + 6 * rotated + 3 * joints + CONTACT_DIM + FACE_DIM
    }

    pub fn dim(&self) -> usize {
        Self::dim_for(self.joints, self.rotated)
    }

    pub fn root(&self) -> Range<usize> {
        0..ROOT_DIM
    }

    pub fn positions(&self) -> Range<usize> {
        let s = ROOT_DIM;
        s..s + 3 * (self.joints - 1)
    }

    pub fn rotations(&self) -> Range<usize> {
        let s = self.positions().end;
        s..s + 6 * self.rotated
    }

    pub fn velocities(&self) -> Range<usize> {
        let s = self.rotations().end;
        s..s + 3 * self.joints
    }

    pub fn contacts(&self) -> Range<usize> {
        let s = self.velocities().end;
        s..s + CONTACT_DIM
    }

    pub fn face(&self) -> Range<usize> {
        let s = self.contacts().end;
        s..s + FACE_DIM
    }

    /// Position columns of joint `j >= 1`.
    pub fn position_of(&self, j: usize) -> Range<usize> {
        let s = self.positions().start + 3 * (j - 1);
        s..s + 3
    }

    pub fn rotation_of_slot(&self, k: usize) -> Range<usize> {
        let s = self.rotations().start + 6 * k;
        s..s + 6
    }

    pub fn velocity_of(&self, j: usize) -> Range<usize> {
        let s = self.velocities().start + 3 * j;
        s..s + 3
    }

    /// Joint owning each feature column. Root features belong to joint 0,
    /// contact columns to their heel/toe joint, face columns to the face joint.
    pub fn column_joints(&self, skeleton: &SkeletonSpec) -> Vec<usize> {
        let mut owner = vec![0usize; self.dim()];
        for j in 1..self.joints {
            for c in self.position_of(j) {
                owner[c] = j;
            }
        }
        for (k, &j) in skeleton.rotated_joints.iter().enumerate() {
            for c in self.rotation_of_slot(k) {
                owner[c] = j;
            }
        }
        for j in 0..self.joints {
            for c in self.velocity_of(j) {
                owner[c] = j;
            }
        }
        let contact_joints = contact_joint_slots(skeleton);
        for (i, c) in self.contacts().enumerate() {
            owner[c] = contact_joints[i].unwrap_or(0);
        }
        for c in self.face() {
            owner[c] = skeleton.face_joint;
        }
        owner
    }
}

/// `[left heel, right heel, left toe, right toe]`.
pub fn contact_joint_slots(skeleton: &SkeletonSpec) -> [Option<usize>; 4] {
    [
        skeleton.heel_joints.first().copied(),
        skeleton.heel_joints.get(1).copied(),
        skeleton.toe_joints.first().copied(),
        skeleton.toe_joints.get(1).copied(),
    ]
}

/// A clip in feature space, `frames x dim`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MotionFeatures {
    pub fps: f64,
    pub values: Matrix,
}

impl MotionFeatures {
    pub fn new(fps: f64, values: Matrix) -> Self {
        Self { fps, values }
    }

    pub fn zeros(fps: f64, frames: usize, dim: usize) -> Self {
        Self { fps, values: Matrix::zeros(frames, dim) }
    }

    pub fn frames(&self) -> usize {
        self.values.rows
    }

    pub fn dim(&self) -> usize {
        self.values.cols
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    /// Trailing `n` frames (all of them if shorter).
    pub fn tail(&self, n: usize) -> MotionFeatures {
        let start = self.frames().saturating_sub(n);
        MotionFeatures { fps: self.fps, values: self.values.slice_rows(start, self.frames() - start) }
    }

    pub fn concat(clips: &[MotionFeatures]) -> Option<MotionFeatures> {
        let first = clips.first()?;
        let rows: Vec<&Matrix> = clips.iter().map(|c| &c.values).collect();
        Some(MotionFeatures { fps: first.fps, values: Matrix::concat_rows(&rows) })
    }
}

/// Planar root state used to seed integration: yaw about up and ground XZ.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Anchor {
    pub yaw: f64,
    pub x: f64,
    pub z: f64,
}

/// Per-frame binary contact flags from heel/toe speeds. Velocities are forward
/// differences; the last frame reuses the previous difference.
pub fn detect_foot_contacts(positions: &[Vec<Vec3>], skeleton: &SkeletonSpec, threshold: f64) -> Vec<[bool; 4]> {
    let slots = contact_joint_slots(skeleton);
    if slots.iter().any(Option::is_none) {
        log::warn!("skeleton '{}' lacks some heel/toe joints; missing contact columns stay zero", skeleton.name);
    }
    let f = positions.len();
    let t2 = threshold * threshold;
    (0..f)
        .map(|i| {
            let (a, b) = if f < 2 {
                (0, 0)
            } else if i + 1 < f {
                (i, i + 1)
            } else {
                (i - 1, i)
            };
            let mut out = [false; 4];
            for (k, slot) in slots.iter().enumerate() {
                if let Some(j) = *slot {
                    out[k] = (positions[b][j] - positions[a][j]).norm_squared() < t2;
                }
            }
            out
        })
        .collect()
}

fn planar(v: Vec3) -> (f64, f64) {
    (v.x, v.z)
}

pub fn extract_features(motion: &GlobalMotion, skeleton: &SkeletonSpec, contact_threshold: f64) -> Result<MotionFeatures> {
    let f = motion.frames();
    if f < 2 {
        bail!(InvalidArgument, "feature extraction needs at least 2 frames, got {f}");
    }
    motion.validate(skeleton)?;
    let layout = skeleton.layout();
    let basis = skeleton.canonical_basis();
    let basis_t = basis.transpose();
    let slots = skeleton.rotation_slots();
    let root_slot = slots[0].expect("validated skeleton rotates the root");

    let world = motion.joint_positions(skeleton)?;
    let canon: Vec<Vec<Vec3>> = world.iter().map(|fr| fr.iter().map(|&p| basis.mul_vec(p)).collect()).collect();
    let contacts = detect_foot_contacts(&world, skeleton, contact_threshold);
    let root_rot: Vec<Mat3> = motion
        .local_rotations
        .iter()
        .map(|r| basis.mul_mat(&r[root_slot].to_matrix()).mul_mat(&basis_t))
        .collect();
    let yaw: Vec<f64> = root_rot.iter().map(crate::math::yaw_of).collect();

    let mut values = Matrix::zeros(f, layout.dim());
    for i in 0..f {
        let unyaw = Mat3::rot_y(-yaw[i]);
        let row = values.row_mut(i);
        // differences use (i, i+1); the last frame repeats the previous one
        let (a, b) = if i + 1 < f { (i, i + 1) } else { (i - 1, i) };
        let unyaw_a = Mat3::rot_y(-yaw[a]);
        row[0] = wrap_angle(yaw[b] - yaw[a]);
        let (dx, dz) = planar(unyaw_a.mul_vec(canon[b][0] - canon[a][0]));
        row[1] = dx;
        row[2] = dz;
        row[3] = canon[i][0].y;
        for j in 1..layout.joints {
            let p = unyaw.mul_vec(canon[i][j] - canon[i][0]);
            row[layout.position_of(j)].copy_from_slice(&p.to_array());
        }
        for (k, &joint) in skeleton.rotated_joints.iter().enumerate() {
            let m = if joint == 0 {
                unyaw.mul_mat(&root_rot[i])
            } else {
                motion.local_rotations[i][k].to_matrix()
            };
            row[layout.rotation_of_slot(k)].copy_from_slice(&matrix_to_sixd(&m));
        }
        for j in 0..layout.joints {
            let v = unyaw_a.mul_vec(canon[b][j] - canon[a][j]);
            row[layout.velocity_of(j)].copy_from_slice(&v.to_array());
        }
        for (k, c) in layout.contacts().enumerate() {
            row[c] = if contacts[i][k] { 1.0 } else { 0.0 };
        }
        if let Some(face) = &motion.face {
            row[layout.face()].copy_from_slice(&face[i]);
        }
    }
    Ok(MotionFeatures { fps: motion.fps, values })
}

/// Integrates the root yaw rate and planar velocity from `start`. Returns the
/// per-frame anchors and the state one step past the last frame.
pub fn integrate_root(features: &MotionFeatures, start: Anchor) -> (Vec<Anchor>, Anchor) {
    let mut out = Vec::with_capacity(features.frames());
    let mut cur = start;
    for i in 0..features.frames() {
        out.push(cur);
        let row = features.frame(i);
        let step = Mat3::rot_y(cur.yaw).mul_vec(Vec3::new(row[1], 0.0, row[2]));
        cur = Anchor { yaw: cur.yaw + row[0], x: cur.x + step.x, z: cur.z + step.z };
    }
    (out, cur)
}

pub fn recover_motion(
    features: &MotionFeatures,
    skeleton: &SkeletonSpec,
    initial_yaw: f64,
    initial_xz: [f64; 2],
) -> Result<GlobalMotion> {
    let layout = skeleton.layout();
    if features.dim() != layout.dim() {
        bail!(Shape, "feature dimension {} does not match skeleton '{}' ({})", features.dim(), skeleton.name, layout.dim());
    }
    if features.frames() == 0 {
        bail!(InvalidArgument, "no frames to recover");
    }
    let basis = skeleton.canonical_basis();
    let basis_t = basis.transpose();
    let (anchors, _) = integrate_root(features, Anchor { yaw: initial_yaw, x: initial_xz[0], z: initial_xz[1] });

    let mut root_translation = Vec::with_capacity(features.frames());
    let mut local_rotations = Vec::with_capacity(features.frames());
    let mut face = Vec::with_capacity(features.frames());
    let mut any_face = false;
    for (i, anchor) in anchors.iter().enumerate() {
        let row = features.frame(i);
        let root_c = Vec3::new(anchor.x, row[3], anchor.z);
        root_translation.push(basis_t.mul_vec(root_c));
        let mut rots = Vec::with_capacity(layout.rotated);
        for (k, &joint) in skeleton.rotated_joints.iter().enumerate() {
            let r = &row[layout.rotation_of_slot(k)];
            let six = [r[0], r[1], r[2], r[3], r[4], r[5]];
            let m = sixd_to_matrix_or_identity(&six);
            let m = if joint == 0 {
                let canon = Mat3::rot_y(anchor.yaw).mul_mat(&m);
                basis_t.mul_mat(&canon).mul_mat(&basis)
            } else {
                m
            };
            rots.push(Quat::from_matrix(&m));
        }
        local_rotations.push(rots);
        let fr = row[layout.face()].to_vec();
        any_face |= fr.iter().any(|&v| v != 0.0);
        face.push(fr);
    }
    Ok(GlobalMotion { fps: features.fps, root_translation, local_rotations, face: any_face.then_some(face) })
}

/// World joint positions of every recovered frame.
pub fn recover_positions(
    features: &MotionFeatures,
    skeleton: &SkeletonSpec,
    start: Anchor,
) -> Result<Vec<Vec<Vec3>>> {
    let motion = recover_motion(features, skeleton, start.yaw, [start.x, start.z])?;
    motion
        .root_translation
        .iter()
        .zip(&motion.local_rotations)
        .map(|(&root, rots)| forward_kinematics(skeleton, root, rots))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_ranges_tile_the_vector() {
        let l = FeatureLayout::new(24, 24);
        assert_eq!(l.root().end, l.positions().start);
        assert_eq!(l.face().end, l.dim());
        assert_eq!(l.dim(), 393);
        assert_eq!(FeatureLayout::new(127, 53).dim(), 1185);
    }

    #[test]
    fn static_clip_features() {
        let s = SkeletonSpec::desk();
        let m = GlobalMotion::rest(&s, 10, 30.0, Vec3::new(0.0, 0.9, 0.0));
        let feats = extract_features(&m, &s, DEFAULT_CONTACT_THRESHOLD).unwrap();
        let l = s.layout();
        for i in 0..10 {
            let row = feats.frame(i);
            assert_eq!(&row[0..3], &[0.0, 0.0, 0.0]);
            assert!(row[l.velocities()].iter().all(|&v| v == 0.0));
            assert!(row[l.contacts()].iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn single_frame_rejected() {
        let s = SkeletonSpec::desk();
        let m = GlobalMotion::rest(&s, 1, 30.0, Vec3::ZERO);
        assert!(extract_features(&m, &s, DEFAULT_CONTACT_THRESHOLD).is_err());
    }

    #[test]
    fn zero_features_hover() {
        let s = SkeletonSpec::desk();
        let mut f = MotionFeatures::zeros(30.0, 5, s.feature_dim());
        for i in 0..5 {
            f.values.row_mut(i)[3] = 1.0;
        }
        let m = recover_motion(&f, &s, 0.0, [0.0, 0.0]).unwrap();
        for i in 0..5 {
            assert_eq!(m.root_translation[i], Vec3::new(0.0, 1.0, 0.0));
            assert!(m.local_rotations[i].iter().all(|q| q.angle_to(&Quat::IDENTITY) < 1e-12));
        }
        assert!(m.face.is_none());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let s = SkeletonSpec::desk();
        let f = MotionFeatures::zeros(30.0, 5, 10);
        assert!(recover_motion(&f, &s, 0.0, [0.0, 0.0]).is_err());
    }
}
