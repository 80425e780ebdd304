use motion_core::fk::forward_kinematics;
use motion_core::math::{yaw_of, Quat, Vec3};
use motion_core::preprocess::{gaussian_smooth, normalize_clip, resample, segment, segment_ranges};
use motion_core::synth::{synth_motion, Style, SynthParams};
use motion_core::{GlobalMotion, SkeletonSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn still(skel: &SkeletonSpec, frames: usize, fps: f64, root: Vec3, yaw: f64) -> GlobalMotion {
    let mut rots = vec![Quat::IDENTITY; skel.rotated_count()];
    rots[0] = Quat::from_axis_angle(Vec3::new(0.0, yaw, 0.0));
    GlobalMotion { fps, root_translation: vec![root; frames], local_rotations: vec![rots; frames], face: None }
}

fn max_motion_diff(a: &GlobalMotion, b: &GlobalMotion) -> f64 {
    let mut worst: f64 = 0.0;
    for f in 0..a.frames() {
        worst = worst.max((a.root_translation[f] - b.root_translation[f]).norm());
        for (p, q) in a.local_rotations[f].iter().zip(&b.local_rotations[f]) {
            worst = worst.max(p.angle_to(q));
        }
    }
    worst
}

fn walk(skel: &SkeletonSpec, frames: usize, fps: f64) -> GlobalMotion {
    let mut p = SynthParams::new(Style::Walk, frames);
    p.fps = fps;
    p.heading = 1.1;
    p.start = [0.7, -2.0];
    synth_motion(skel, &p)
}

#[test]
fn constant_motion_is_unchanged_by_smoothing() {
    let skel = SkeletonSpec::desk();
    let m = still(&skel, 20, 30.0, Vec3::new(0.2, 0.9, -1.0), 0.7);
    assert!(max_motion_diff(&gaussian_smooth(&m, 1.5).unwrap(), &m) < 1e-12);
    assert!(gaussian_smooth(&m, 0.0).is_err());
}

#[test]
fn translation_spike_is_attenuated_to_the_kernel_centre() {
    let skel = SkeletonSpec::desk();
    let mut m = still(&skel, 21, 30.0, Vec3::ZERO, 0.0);
    let h = 2.0;
    m.root_translation[10].y = h;
    for sigma in [0.5, 1.0, 2.0] {
        let r = (3.0f64 * sigma).ceil() as i64;
        let total: f64 = (-r..=r).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).sum();
        let out = gaussian_smooth(&m, sigma).unwrap();
        assert!((out.root_translation[10].y - h / total).abs() < 1e-12, "sigma {sigma}");
    }
}

#[test]
fn smoothed_rotations_stay_orthonormal() {
    let skel = SkeletonSpec::desk();
    let mut m = walk(&skel, 40, 30.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for frame in &mut m.local_rotations {
        for q in frame.iter_mut() {
            let jitter = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
            *q = q.mul(&Quat::from_axis_angle(jitter));
        }
    }
    let out = gaussian_smooth(&m, 1.0).unwrap();
    for frame in &out.local_rotations {
        for q in frame {
            assert!((q.norm() - 1.0).abs() < 1e-9);
            let r = q.to_matrix();
            let rtr = r.transpose().mul_mat(&r);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((rtr.0[i][j] - e).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn resampling_counts_and_timing() {
    let skel = SkeletonSpec::desk();
    let m = walk(&skel, 60, 30.0);
    assert_eq!(resample(&m, 30.0).unwrap(), m);
    assert_eq!(resample(&walk(&skel, 120, 24.0), 30.0).unwrap().frames(), 150);
    assert_eq!(resample(&walk(&skel, 61, 24.0), 30.0).unwrap().frames(), 76);
    // constant velocity: every output step covers two source steps
    let mut line = still(&skel, 61, 60.0, Vec3::ZERO, 0.0);
    for (i, p) in line.root_translation.iter_mut().enumerate() {
        *p = Vec3::new(0.01 * i as f64, 0.9, -0.02 * i as f64);
    }
    let out = resample(&line, 30.0).unwrap();
    assert_eq!((out.frames(), out.fps), (31, 30.0));
    for k in 1..out.frames() {
        let d = out.root_translation[k] - out.root_translation[k - 1];
        assert!((d.x - 0.02).abs() < 1e-12 && (d.z + 0.04).abs() < 1e-12);
    }
}

#[test]
fn normalization_turns_to_forward_at_the_origin() {
    let skel = SkeletonSpec::desk();
    // facing -X from (3, h, 5)
    let m = still(&skel, 5, 30.0, Vec3::new(3.0, 1.3, 5.0), -std::f64::consts::FRAC_PI_2);
    let n = normalize_clip(&m, &skel).unwrap();
    let root = n.local_rotations[0][0];
    assert!(root.angle_to(&Quat::IDENTITY) < 1e-9);
    assert!(n.root_translation[0].x.abs() < 1e-9 && n.root_translation[0].z.abs() < 1e-9);
    let pos = forward_kinematics(&skel, n.root_translation[0], &n.local_rotations[0]).unwrap();
    let floor = skel.foot_joints().iter().map(|&j| pos[j].y).fold(f64::INFINITY, f64::min);
    assert!(floor.abs() < 1e-9);
}

#[test]
fn normalization_is_rigid_and_idempotent() {
    let skel = SkeletonSpec::desk();
    let m = walk(&skel, 45, 30.0);
    let n = normalize_clip(&m, &skel).unwrap();
    assert!(yaw_of(&n.local_rotations[0][0].to_matrix()).abs() < 1e-9);
    assert!(max_motion_diff(&normalize_clip(&n, &skel).unwrap(), &n) < 1e-9);
    for f in [0, 20, 44] {
        let a = forward_kinematics(&skel, m.root_translation[f], &m.local_rotations[f]).unwrap();
        let b = forward_kinematics(&skel, n.root_translation[f], &n.local_rotations[f]).unwrap();
        for i in 0..a.len() {
            for j in 0..i {
                assert!(((a[i] - a[j]).norm() - (b[i] - b[j]).norm()).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn segmentation_keeps_remainders_of_a_second_or_more() {
    let lens = |f: usize| segment_ranges(f).iter().map(|r| r.1).collect::<Vec<_>>();
    assert_eq!(lens(149), [149]);
    assert_eq!(lens(150), [150]);
    assert_eq!(lens(151), [150]);
    assert_eq!(lens(179), [150]);
    assert_eq!(lens(180), [150, 30]);
    assert_eq!(lens(170), [150]);
    assert_eq!(lens(450), [150, 150, 150]);
    let skel = SkeletonSpec::desk();
    let m = walk(&skel, 200, 30.0);
    let parts = segment(&m);
    assert_eq!(parts.len(), 2);
    assert_eq!(parts[1].root_translation[0], m.root_translation[150]);
}
