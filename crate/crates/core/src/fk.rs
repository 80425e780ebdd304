use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math::{Mat3, Quat, Vec3};
use crate::skeleton::SkeletonSpec;

/// World joint positions and orientations for one frame.
#[derive(Clone, Debug)]
pub struct Pose {
    pub positions: Vec<Vec3>,
    pub orientations: Vec<Mat3>,
}

/// Accumulates local rotations down the tree. `rotations` holds one entry per
/// `skeleton.rotated_joints`; all other joints keep their rest orientation.
/// The root is placed at `root_translation`, ignoring its rest offset.
pub fn forward_kinematics(skeleton: &SkeletonSpec, root_translation: Vec3, rotations: &[Quat]) -> Result<Vec<Vec3>> {
    Ok(forward_kinematics_full(skeleton, root_translation, rotations)?.positions)
}

pub fn forward_kinematics_full(skeleton: &SkeletonSpec, root_translation: Vec3, rotations: &[Quat]) -> Result<Pose> {
    if rotations.len() != skeleton.rotated_count() {
        bail!(
            Shape,
            "expected {} rotations for skeleton '{}', got {}",
            skeleton.rotated_count(),
            skeleton.name,
            rotations.len()
        );
    }
    let mut local = alloc::vec![Mat3::IDENTITY; skeleton.joint_count()];
    for (&joint, q) in skeleton.rotated_joints.iter().zip(rotations) {
        local[joint] = q.to_matrix();
    }
    Ok(fk_with_matrices(skeleton, root_translation, &local))
}

/// FK from one local rotation matrix per joint.
pub fn fk_with_matrices(skeleton: &SkeletonSpec, root_translation: Vec3, local: &[Mat3]) -> Pose {
    let n = skeleton.joint_count();
    let mut positions = Vec::with_capacity(n);
    let mut orientations: Vec<Mat3> = Vec::with_capacity(n);
    for j in 0..n {
        match skeleton.parent(j) {
            None => {
                positions.push(root_translation);
                orientations.push(local[j]);
            }
            Some(p) => {
                let parent_rot = orientations[p];
                positions.push(positions[p] + parent_rot.mul_vec(skeleton.offset(j)));
                orientations.push(parent_rot.mul_mat(&local[j]));
            }
        }
    }
    Pose { positions, orientations }
}

/// Rest-pose joint positions with the root at the origin.
pub fn rest_positions(skeleton: &SkeletonSpec) -> Vec<Vec3> {
    let local = alloc::vec![Mat3::IDENTITY; skeleton.joint_count()];
    fk_with_matrices(skeleton, Vec3::ZERO, &local).positions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::SignedAxis;
    use alloc::string::ToString;
    use alloc::vec;
    use core::f64::consts::FRAC_PI_2;

    fn chain() -> SkeletonSpec {
        SkeletonSpec {
            name: "chain".to_string(),
            joint_names: vec!["a".to_string(), "b".to_string()],
            parents: vec![-1, 0],
            rest_offsets: vec![[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            rotated_joints: vec![0, 1],
            heel_joints: vec![],
            toe_joints: vec![],
            hand_joints: vec![],
            key_joints: vec![0],
            body_parts: vec![vec![0, 1]],
            face_joint: 0,
            up_axis: SignedAxis::PosY,
            forward_axis: SignedAxis::PosZ,
        }
    }

    #[test]
    fn identity_pose_accumulates_offsets() {
        let s = SkeletonSpec::desk();
        let rots = vec![Quat::IDENTITY; s.rotated_count()];
        let p = forward_kinematics(&s, Vec3::ZERO, &rots).unwrap();
        for j in 1..s.joint_count() {
            let expected = p[s.parent(j).unwrap()] + s.offset(j);
            assert!((p[j] - expected).norm() < 1e-15);
        }
    }

    #[test]
    fn quarter_turn_chain() {
        let s = chain();
        let rots = [Quat::from_axis_angle(Vec3::new(0.0, 0.0, FRAC_PI_2)), Quat::IDENTITY];
        let p = forward_kinematics(&s, Vec3::ZERO, &rots).unwrap();
        assert!((p[1] - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rotation_count_checked() {
        let s = chain();
        assert!(forward_kinematics(&s, Vec3::ZERO, &[Quat::IDENTITY]).is_err());
    }
}
