use motion_core::fk::{fk_with_matrices, forward_kinematics, rest_positions};
use motion_core::rotation::{angular_distance, convert_rotation, euler_to_matrix, matrix_to_euler};
use motion_core::{EulerOrder, Mat3, Quat, Rotation, RotationForm, SkeletonSpec, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Uniform on SO(3): normalized 4D Gaussian.
fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    loop {
        let q = Quat::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if let Some(q) = q.try_normalize(1e-6) {
            return q;
        }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
}

const FORMS: [RotationForm; 4] = [RotationForm::Quaternion, RotationForm::AxisAngle, RotationForm::Matrix, RotationForm::SixD];

#[test]
fn every_form_round_trips_within_a_microradian() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let q = Rotation::Quaternion(random_quat(&mut rng));
        for a in FORMS {
            let ra = convert_rotation(&q, a).unwrap();
            for b in FORMS {
                let back = convert_rotation(&convert_rotation(&ra, b).unwrap(), RotationForm::Quaternion).unwrap();
                worst = worst.max(angular_distance(&q, &back).unwrap());
            }
        }
    }
    assert!(worst < 1e-6, "worst round-trip error {worst}");
}

#[test]
fn euler_round_trips_in_every_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for order in EulerOrder::ALL {
        for _ in 0..2000 {
            let q = Rotation::Quaternion(random_quat(&mut rng));
            let e = convert_rotation(&q, RotationForm::Euler(order)).unwrap();
            let back = convert_rotation(&e, RotationForm::Quaternion).unwrap();
            assert!(angular_distance(&q, &back).unwrap() < 1e-6, "{order:?}");
        }
    }
}

#[test]
fn euler_gimbal_lock_reconstructs_the_matrix() {
    for order in EulerOrder::ALL {
        let m = euler_to_matrix([0.3, std::f64::consts::FRAC_PI_2, -0.2], order);
        let back = euler_to_matrix(matrix_to_euler(&m, order), order);
        let err: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| (m.0[i][j] - back.0[i][j]).abs()).sum();
        assert!(err < 1e-9, "{order:?}: {err}");
    }
}

#[test]
fn axis_angle_near_pi_and_zero() {
    for angle in [0.0, 1e-12, 1e-6, std::f64::consts::PI - 1e-9, std::f64::consts::PI] {
        let v = Vec3::new(0.6, -0.8, 0.0).scale(angle);
        let r = Rotation::AxisAngle(v);
        for f in FORMS {
            let back = convert_rotation(&convert_rotation(&r, f).unwrap(), RotationForm::AxisAngle).unwrap();
            assert!(angular_distance(&r, &back).unwrap() < 1e-6, "angle {angle} via {f:?}");
        }
    }
}

#[test]
fn degenerate_sixd_is_rejected() {
    let parallel = Rotation::SixD([1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
    assert!(convert_rotation(&parallel, RotationForm::Matrix).is_err());
    let zero = Rotation::SixD([0.0; 6]);
    assert!(convert_rotation(&zero, RotationForm::Quaternion).is_err());
}

#[test]
fn fk_is_rigidly_equivariant() {
    let skel = SkeletonSpec::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let rots: Vec<Quat> = (0..skel.rotated_count()).map(|_| random_quat(&mut rng)).collect();
        let root = random_vec(&mut rng, 2.0);
        let base = forward_kinematics(&skel, root, &rots).unwrap();

        let g = random_quat(&mut rng);
        let shift = random_vec(&mut rng, 5.0);
        let mut moved = rots.clone();
        // rotated_joints[0] is the root
        assert_eq!(skel.rotated_joints[0], 0);
        moved[0] = g.mul(&rots[0]);
        let out = forward_kinematics(&skel, g.rotate(root) + shift, &moved).unwrap();
        for (a, b) in base.iter().zip(&out) {
            let expect = g.rotate(*a) + shift;
            assert!((expect - *b).norm() < 1e-9, "{:?} vs {:?}", expect, b);
        }
    }
}

#[test]
fn fk_preserves_bone_lengths() {
    let skel = SkeletonSpec::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let local: Vec<Mat3> = (0..skel.joint_count()).map(|_| random_quat(&mut rng).to_matrix()).collect();
    let pose = fk_with_matrices(&skel, Vec3::ZERO, &local);
    for j in 1..skel.joint_count() {
        let p = skel.parent(j).unwrap();
        let len = (pose.positions[j] - pose.positions[p]).norm();
        assert!((len - skel.offset(j).norm()).abs() < 1e-12);
    }
}

#[test]
fn identity_rotations_give_rest_pose() {
    let skel = SkeletonSpec::desk();
    let ident = vec![Quat::IDENTITY; skel.rotated_count()];
    let fk = forward_kinematics(&skel, Vec3::ZERO, &ident).unwrap();
    for (a, b) in fk.iter().zip(rest_positions(&skel)) {
        assert!((*a - b).norm() < 1e-15);
    }
}

#[test]
fn fk_rejects_wrong_rotation_count() {
    let skel = SkeletonSpec::desk();
    assert!(forward_kinematics(&skel, Vec3::ZERO, &[Quat::IDENTITY]).is_err());
}
