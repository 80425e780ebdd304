//! Canonical skeleton description and the two built-in configurations.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::features::FeatureLayout;
use crate::math::{Mat3, Vec3};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum SignedAxis {
    #[cfg_attr(feature = "serde", serde(rename = "+X"))]
    PosX,
    #[cfg_attr(feature = "serde", serde(rename = "-X"))]
    NegX,
    #[cfg_attr(feature = "serde", serde(rename = "+Y"))]
    PosY,
    #[cfg_attr(feature = "serde", serde(rename = "-Y"))]
    NegY,
    #[cfg_attr(feature = "serde", serde(rename = "+Z"))]
    PosZ,
    #[cfg_attr(feature = "serde", serde(rename = "-Z"))]
    NegZ,
}

impl SignedAxis {
    pub fn vector(self) -> Vec3 {
        match self {
            SignedAxis::PosX => Vec3::X,
            SignedAxis::NegX => -Vec3::X,
            SignedAxis::PosY => Vec3::Y,
            SignedAxis::NegY => -Vec3::Y,
            SignedAxis::PosZ => Vec3::Z,
            SignedAxis::NegZ => -Vec3::Z,
        }
    }

    pub fn parse(s: &str) -> Option<SignedAxis> {
        Some(match s {
            "+X" | "X" => SignedAxis::PosX,
            "-X" => SignedAxis::NegX,
            "+Y" | "Y" => SignedAxis::PosY,
            "-Y" => SignedAxis::NegY,
            "+Z" | "Z" => SignedAxis::PosZ,
            "-Z" => SignedAxis::NegZ,
            _ => return None,
        })
    }
}

/// Rotation taking a frame with the given up/forward axes onto the canonical
/// frame (up = +Y, forward = +Z). `None` if the axes are not perpendicular.
pub fn basis_to_canonical(up: SignedAxis, forward: SignedAxis) -> Option<Mat3> {
    let u = up.vector();
    let f = forward.vector();
    if u.dot(f).abs() > 1e-12 {
        return None;
    }
    Some(Mat3::from_rows(u.cross(f), u, f))
}

/// Joint tree plus the index sets the representation and masks need.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SkeletonSpec {
    pub name: String,
    pub joint_names: Vec<String>,
    /// Parent index per joint; `-1` marks the root.
    pub parents: Vec<i32>,
    /// Local rest translations in meters.
    pub rest_offsets: Vec<[f64; 3]>,
    pub rotated_joints: Vec<usize>,
    /// `[left, right]`.
    pub heel_joints: Vec<usize>,
    /// `[left, right]`.
    pub toe_joints: Vec<usize>,
    pub hand_joints: Vec<usize>,
    pub key_joints: Vec<usize>,
    pub body_parts: Vec<Vec<usize>>,
    /// Joint that owns the face coefficient columns.
    pub face_joint: usize,
    pub up_axis: SignedAxis,
    pub forward_axis: SignedAxis,
}

impl SkeletonSpec {
    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn rotated_count(&self) -> usize {
        self.rotated_joints.len()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        let p = self.parents[j];
        (p >= 0).then_some(p as usize)
    }

    pub fn offset(&self, j: usize) -> Vec3 {
        Vec3::from_array(self.rest_offsets[j])
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn children(&self, j: usize) -> Vec<usize> {
        (0..self.joint_count()).filter(|&c| self.parent(c) == Some(j)).collect()
    }

    /// For each joint, its slot in `rotated_joints`.
    pub fn rotation_slots(&self) -> Vec<Option<usize>> {
        let mut slots = vec![None; self.joint_count()];
        for (k, &j) in self.rotated_joints.iter().enumerate() {
            slots[j] = Some(k);
        }
        slots
    }

    pub fn feature_dim(&self) -> usize {
        FeatureLayout::dim_for(self.joint_count(), self.rotated_count())
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(self.joint_count(), self.rotated_count())
    }

    /// World-to-canonical basis change for this skeleton's axis convention.
    pub fn canonical_basis(&self) -> Mat3 {
        basis_to_canonical(self.up_axis, self.forward_axis).unwrap_or(Mat3::IDENTITY)
    }

    pub fn foot_joints(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.heel_joints.iter().chain(self.toe_joints.iter()).copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Skeleton bone segments `(parent, child)`, for renderers.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.joint_count()).filter_map(|j| self.parent(j).map(|p| (p, j))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joint_count();
        if n == 0 {
            bail!(InvalidSkeleton, "skeleton has no joints");
        }
        if self.parents.len() != n || self.rest_offsets.len() != n {
            bail!(
                InvalidSkeleton,
                "{} names but {} parents and {} offsets",
                n,
                self.parents.len(),
                self.rest_offsets.len()
            );
        }
        if self.parents[0] != -1 {
            bail!(InvalidSkeleton, "joint 0 must be the root (parent -1)");
        }
        for j in 1..n {
            let p = self.parents[j];
            if p < 0 || p as usize >= j {
                bail!(InvalidSkeleton, "joint {j} has parent {p}; parents must precede children");
            }
        }
        let in_range = |set: &[usize], what: &str| -> Result<()> {
            if let Some(bad) = set.iter().find(|&&j| j >= n) {
                bail!(InvalidSkeleton, "{what} index {bad} out of range for {n} joints");
            }
            Ok(())
        };
        in_range(&self.rotated_joints, "rotated joint")?;
        in_range(&self.heel_joints, "heel joint")?;
        in_range(&self.toe_joints, "toe joint")?;
        in_range(&self.hand_joints, "hand joint")?;
        in_range(&self.key_joints, "key joint")?;
        if self.face_joint >= n {
            bail!(InvalidSkeleton, "face joint {} out of range", self.face_joint);
        }
        if !self.rotated_joints.contains(&0) {
            bail!(InvalidSkeleton, "the root must carry a rotation");
        }
        let mut seen = vec![false; n];
        for &j in &self.rotated_joints {
            if seen[j] {
                bail!(InvalidSkeleton, "rotated joint {j} listed twice");
            }
            seen[j] = true;
        }
        if self.heel_joints.len() > 2 || self.toe_joints.len() > 2 {
            bail!(InvalidSkeleton, "at most two heel and two toe joints are supported");
        }
        let mut owner = vec![usize::MAX; n];
        for (p, part) in self.body_parts.iter().enumerate() {
            for &j in part {
                if j >= n {
                    bail!(InvalidSkeleton, "body part {p} lists joint {j} out of range");
                }
                if owner[j] != usize::MAX {
                    bail!(InvalidSkeleton, "joint {j} belongs to parts {} and {p}", owner[j]);
                }
                owner[j] = p;
            }
        }
        if let Some(j) = owner.iter().position(|&o| o == usize::MAX) {
            bail!(InvalidSkeleton, "joint {j} ({}) is in no body part", self.joint_names[j]);
        }
        if basis_to_canonical(self.up_axis, self.forward_axis).is_none() {
            bail!(InvalidSkeleton, "up and forward axes must be perpendicular");
        }
        Ok(())
    }

    /// Body part owning each joint; assumes a validated skeleton.
    pub fn part_of_joint(&self) -> Vec<usize> {
        let mut owner = vec![0; self.joint_count()];
        for (p, part) in self.body_parts.iter().enumerate() {
            for &j in part {
                owner[j] = p;
            }
        }
        owner
    }

    /// The 24-joint body fixture (SMPL ordering), Y-up, facing +Z.
    pub fn desk() -> SkeletonSpec {
        let names = [
            "pelvis",
            "left_hip",
            "right_hip",
            "spine1",
            "left_knee",
            "right_knee",
            "spine2",
            "left_ankle",
            "right_ankle",
            "spine3",
            "left_foot",
            "right_foot",
            "neck",
            "left_collar",
            "right_collar",
            "head",
            "left_shoulder",
            "right_shoulder",
            "left_elbow",
            "right_elbow",
            "left_wrist",
            "right_wrist",
            "left_hand",
            "right_hand",
        ];
        let parents = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21];
        let offsets = [
            [0.0, 0.0, 0.0],
            [0.06, -0.09, 0.0],
            [-0.06, -0.09, 0.0],
            [0.0, 0.11, 0.0],
            [0.04, -0.38, 0.0],
            [-0.04, -0.38, 0.0],
            [0.0, 0.14, 0.0],
            [0.0, -0.40, -0.04],
            [0.0, -0.40, -0.04],
            [0.0, 0.06, 0.0],
            [0.0, -0.06, 0.12],
            [0.0, -0.06, 0.12],
            [0.0, 0.21, 0.0],
            [0.08, 0.12, 0.0],
            [-0.08, 0.12, 0.0],
            [0.0, 0.09, 0.05],
            [0.10, 0.03, 0.0],
            [-0.10, 0.03, 0.0],
            [0.26, 0.0, 0.0],
            [-0.26, 0.0, 0.0],
            [0.25, 0.0, 0.0],
            [-0.25, 0.0, 0.0],
            [0.08, 0.0, 0.0],
            [-0.08, 0.0, 0.0],
        ];
        SkeletonSpec {
            name: "desk24".to_string(),
            joint_names: names.iter().map(|s| s.to_string()).collect(),
            parents: parents.to_vec(),
            rest_offsets: offsets.to_vec(),
            rotated_joints: (0..24).collect(),
            heel_joints: vec![7, 8],
            toe_joints: vec![10, 11],
            hand_joints: vec![20, 21, 22, 23],
            key_joints: vec![0, 10, 11, 15, 20, 21],
            body_parts: vec![
                vec![0, 3, 6, 9],
                vec![1, 4, 7, 10],
                vec![2, 5, 8, 11],
                vec![12, 15],
                vec![13, 16, 18, 20, 22],
                vec![14, 17, 19, 21, 23],
            ],
            face_joint: 15,
            up_axis: SignedAxis::PosY,
            forward_axis: SignedAxis::PosZ,
        }
    }

    /// The 127-joint whole-body layout: 55 articulated joints (body, jaw,
    /// eyes, 2x15 finger joints) followed by 72 landmark joints (nose, eyes,
    /// ears, feet, fingertips, 51 face landmarks). 53 joints carry rotations.
    pub fn whole_body() -> SkeletonSpec {
        let desk = SkeletonSpec::desk();
        let mut names: Vec<String> = desk.joint_names[..22].to_vec();
        let mut parents: Vec<i32> = desk.parents[..22].to_vec();
        let mut offsets: Vec<[f64; 3]> = desk.rest_offsets[..22].to_vec();
        let mut push = |names: &mut Vec<String>, name: String, parent: usize, off: [f64; 3]| {
            names.push(name);
            parents.push(parent as i32);
            offsets.push(off);
        };
        // 22 jaw, 23/24 eyes
        push(&mut names, "jaw".into(), 15, [0.0, -0.02, 0.04]);
        push(&mut names, "left_eye_smplhf".into(), 15, [0.03, 0.05, 0.08]);
        push(&mut names, "right_eye_smplhf".into(), 15, [-0.03, 0.05, 0.08]);
        // 25..=39 left fingers, 40..=54 right fingers
        let fingers = ["index", "middle", "pinky", "ring", "thumb"];
        for (side, wrist, sign) in [("left", 20usize, 1.0), ("right", 21usize, -1.0)] {
            for (fi, finger) in fingers.iter().enumerate() {
                let spread = (fi as f64 - 2.0) * 0.02;
                for seg in 1..=3 {
                    let parent = if seg == 1 { wrist } else { names.len() - 1 };
                    let off = if seg == 1 { [sign * 0.09, 0.0, spread] } else { [sign * 0.03, 0.0, 0.0] };
                    push(&mut names, format!("{side}_{finger}{seg}"), parent, off);
                }
            }
        }
        debug_assert_eq!(names.len(), 55);
        // 55..=59 nose, eyes, ears
        push(&mut names, "nose".into(), 15, [0.0, 0.02, 0.11]);
        push(&mut names, "right_eye".into(), 15, [-0.03, 0.05, 0.09]);
        push(&mut names, "left_eye".into(), 15, [0.03, 0.05, 0.09]);
        push(&mut names, "right_ear".into(), 15, [-0.08, 0.03, 0.0]);
        push(&mut names, "left_ear".into(), 15, [0.08, 0.03, 0.0]);
        // 60..=65 feet
        push(&mut names, "left_big_toe".into(), 10, [0.02, -0.02, 0.08]);
        push(&mut names, "left_small_toe".into(), 10, [0.05, -0.02, 0.06]);
        push(&mut names, "left_heel".into(), 7, [0.0, -0.07, -0.06]);
        push(&mut names, "right_big_toe".into(), 11, [-0.02, -0.02, 0.08]);
        push(&mut names, "right_small_toe".into(), 11, [-0.05, -0.02, 0.06]);
        push(&mut names, "right_heel".into(), 8, [0.0, -0.07, -0.06]);
        // 66..=75 fingertips (thumb, index, middle, ring, pinky)
        let tip_of = ["thumb", "index", "middle", "ring", "pinky"];
        for (side, sign) in [("left", 1.0), ("right", -1.0)] {
            for finger in tip_of {
                let base = names.iter().position(|n| *n == format!("{side}_{finger}3")).unwrap();
                push(&mut names, format!("{side}_{finger}_tip"), base, [sign * 0.02, 0.0, 0.0]);
            }
        }
        // 76..=126 face landmarks: brows/eyes/nose on the head, mouth on the jaw
        for k in 0..51usize {
            let (parent, row) = if k < 31 { (15usize, k) } else { (22usize, k - 31) };
            let col = row % 10;
            let line = row / 10;
            let off = [(col as f64 - 4.5) * 0.01, 0.04 - line as f64 * 0.015, 0.09];
            push(&mut names, format!("face_landmark_{k:02}"), parent, off);
        }
        assert_eq!(names.len(), 127);

        let mut rotated: Vec<usize> = (0..=22).collect();
        rotated.extend(25..=54);

        let mut left_hand: Vec<usize> = vec![20];
        let mut right_hand: Vec<usize> = vec![21];
        for j in 25..=39 {
            left_hand.push(j);
        }
        for j in 40..=54 {
            right_hand.push(j);
        }
        left_hand.extend(66..=70);
        right_hand.extend(71..=75);
        let hand_joints: Vec<usize> = left_hand.iter().chain(right_hand.iter()).copied().collect();

        let split_hand = |joints: &[usize], first_fingers: &[&str]| -> (Vec<usize>, Vec<usize>) {
            let (a, b): (Vec<usize>, Vec<usize>) =
                joints.iter().partition(|&&j| first_fingers.iter().any(|f| names[j].contains(f)));
            (a, b)
        };
        let (lh_a, lh_b) = split_hand(&left_hand[1..], &["thumb", "index"]);
        let (rh_a, rh_b) = split_hand(&right_hand[1..], &["thumb", "index"]);

        let body_parts = vec![
            vec![0, 3, 6, 9],
            vec![1, 4, 7, 10, 60, 61, 62],
            vec![2, 5, 8, 11, 63, 64, 65],
            vec![12, 15, 22, 23, 24, 55, 56, 57, 58, 59],
            vec![13, 16, 18, 20],
            vec![14, 17, 19, 21],
            lh_a,
            lh_b,
            rh_a,
            rh_b,
            (76..107).collect(),
            (107..127).collect(),
        ];

        SkeletonSpec {
            name: "whole_body127".to_string(),
            joint_names: names,
            parents,
            rest_offsets: offsets,
            rotated_joints: rotated,
            heel_joints: vec![62, 65],
            toe_joints: vec![60, 63],
            hand_joints,
            key_joints: vec![0, 10, 11, 15, 20, 21],
            body_parts,
            face_joint: 15,
            up_axis: SignedAxis::PosY,
            forward_axis: SignedAxis::PosZ,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_skeletons_validate() {
        let desk = SkeletonSpec::desk();
        desk.validate().unwrap();
        assert_eq!((desk.joint_count(), desk.rotated_count(), desk.body_parts.len()), (24, 24, 6));
        let wb = SkeletonSpec::whole_body();
        wb.validate().unwrap();
        assert_eq!((wb.joint_count(), wb.rotated_count(), wb.body_parts.len()), (127, 53, 12));
    }

    #[test]
    fn feature_dims() {
        assert_eq!(SkeletonSpec::whole_body().feature_dim(), 1185);
        assert_eq!(SkeletonSpec::desk().feature_dim(), 393);
    }

    #[test]
    fn rejects_bad_partition() {
        let mut s = SkeletonSpec::desk();
        s.body_parts[0].push(1);
        assert!(s.validate().is_err());
        let mut s = SkeletonSpec::desk();
        s.parents[5] = 7;
        assert!(s.validate().is_err());
        let mut s = SkeletonSpec::desk();
        s.rotated_joints.retain(|&j| j != 0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn canonical_basis_for_z_up() {
        let b = basis_to_canonical(SignedAxis::PosZ, SignedAxis::NegY).unwrap();
        assert!((b.mul_vec(Vec3::Z) - Vec3::Y).norm() < 1e-15);
        assert!((b.mul_vec(-Vec3::Y) - Vec3::Z).norm() < 1e-15);
        assert!((b.determinant() - 1.0).abs() < 1e-15);
    }
}
