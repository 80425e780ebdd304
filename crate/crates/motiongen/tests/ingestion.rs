use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use motion_core::fk::forward_kinematics;
use motion_core::math::{Mat3, Quat, Vec3};
use motion_core::synth::{synth_motion, Style, SynthParams};
use motion_core::{GlobalMotion, SignedAxis, SkeletonSpec};
use motiongen::align::{basis_change, change_basis, standardize_and_align, standardize_rest, AlignOptions, TPoseTemplate};
use motiongen::bvh::{parse_bvh, write_bvh, BvhDocument, BvhJoint, ChannelKind};
use motiongen::fixtures::{export_source_bvh, source_map, write_fixtures};
use motiongen::ingest::{ingest_dir, IngestOptions};
use motiongen::retarget::{bvh_from_motion, retarget, skeleton_from_bvh, RetargetMap};
use motiongen::store::{build_manifest, ClipStore, TEST_PER_DATASET};

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn ingest_fixtures(root: &Path) -> (PathBuf, ClipStore) {
    let paths = write_fixtures(&root.join("fx"), 7).unwrap();
    let store = ClipStore::create(&root.join("store"), &SkeletonSpec::desk()).unwrap();
    let lock = store.lock().unwrap();
    let summary = ingest_dir(&paths.raw, Some(&source_map()), &store, &lock, &IngestOptions::default()).unwrap();
    assert!(summary.skipped.is_empty());
    let manifest = build_manifest(&store.records().unwrap(), TEST_PER_DATASET, 7).unwrap();
    store.write_manifest(&lock, &manifest).unwrap();
    (paths.raw, store)
}

fn walk(skel: &SkeletonSpec, frames: usize) -> GlobalMotion {
    let mut p = SynthParams::new(Style::Walk, frames);
    p.heading = 0.6;
    p.start = [1.0, -0.5];
    synth_motion(skel, &p)
}

fn max_world_diff(a: &BvhDocument, b: &BvhDocument) -> f64 {
    let mut worst: f64 = 0.0;
    for f in 0..a.frame_count() {
        let (pa, _) = a.world_pose(f);
        let (pb, _) = b.world_pose(f);
        for (x, y) in pa.iter().zip(&pb) {
            worst = worst.max((*x - *y).norm());
        }
    }
    worst
}

#[test]
fn fixture_corpus_round_trips_through_the_writer() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_fixtures(dir.path(), 7).unwrap();
    let bvhs: Vec<PathBuf> = files_under(&paths.raw).into_iter().filter(|p| p.extension().is_some_and(|e| e == "bvh")).collect();
    assert_eq!(bvhs.len(), 72);
    for p in bvhs {
        let text = fs::read_to_string(&p).unwrap();
        let doc = parse_bvh(&text).unwrap();
        let again = parse_bvh(&write_bvh(&doc)).unwrap();
        assert_eq!(doc, again, "{}", p.display());
        assert_eq!(write_bvh(&again), text);
    }
}

#[test]
fn ingest_is_byte_deterministic_and_keeps_frame_bookkeeping() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (raw, store) = ingest_fixtures(a.path());
    let (_, other) = ingest_fixtures(b.path());
    let fa = files_under(&store.root);
    let fb = files_under(&other.root);
    assert_eq!(fa.iter().map(|p| p.strip_prefix(&store.root).unwrap()).collect::<Vec<_>>(), fb.iter().map(|p| p.strip_prefix(&other.root).unwrap()).collect::<Vec<_>>());
    for (x, y) in fa.iter().zip(&fb) {
        assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{} differs", x.display());
    }

    let records = store.records().unwrap();
    let mut by_sequence: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in &records {
        assert_eq!(r.fps, 30.0);
        by_sequence.entry(r.sequence.clone()).or_default().push(r.frames);
    }
    for (seq, lens) in by_sequence {
        let doc = parse_bvh(&fs::read_to_string(raw.join(format!("{seq}.bvh"))).unwrap()).unwrap();
        let frames30 = (doc.frame_count() as f64 * 30.0 / doc.fps()).round() as usize;
        // the oracle: whole windows of 150, then the tail if it lasts a second
        let mut expect = vec![150; frames30 / 150];
        if frames30 % 150 >= 30 {
            expect.push(frames30 % 150);
        }
        assert_eq!(lens, expect, "{seq}");
    }
    let manifest = store.read_manifest().unwrap();
    assert_eq!(manifest.test, 40);
    assert_eq!(manifest.train + manifest.test, records.len());
    assert_eq!(build_manifest(&records, TEST_PER_DATASET, 7).unwrap(), manifest);
}

#[test]
fn t_posed_document_is_a_fixed_point_of_standardization() {
    let skel = SkeletonSpec::desk();
    let doc = export_source_bvh(&skel, &walk(&skel, 12));
    let (out, report) = standardize_rest(&doc, &source_map().template(&skel));
    assert!(!report.flagged());
    for (a, b) in doc.joints.iter().zip(&out.joints) {
        assert!((0..3).all(|k| (a.offset[k] - b.offset[k]).abs() < 1e-9));
    }
    for (ra, rb) in doc.motion.iter().zip(&out.motion) {
        assert!(ra.iter().zip(rb).all(|(x, y)| (x - y).abs() < 1e-9));
    }
}

#[test]
fn a_pose_rest_is_rewritten_without_moving_the_body() {
    let skel = SkeletonSpec::desk();
    let mut doc = export_source_bvh(&skel, &walk(&skel, 20));
    // arms hang 45 degrees below horizontal
    let lowered = [
        ("LeftForeArm", -45.0f64),
        ("LeftHand", -45.0),
        ("LeftHandMiddle1", -45.0),
        ("RightForeArm", 45.0),
        ("RightHand", 45.0),
        ("RightHandMiddle1", 45.0),
    ];
    for (name, deg) in lowered {
        let j = doc.joint_index(name).unwrap();
        let r = Mat3::rot_z(deg.to_radians());
        doc.joints[j].offset = r.mul_vec(Vec3::from_array(doc.joints[j].offset)).to_array();
    }
    let template = source_map().template(&skel);
    let (out, report) = standardize_rest(&doc, &template);
    assert!(!report.flagged());
    assert!(max_world_diff(&doc, &out) < 1e-6);
    for (name, _) in lowered {
        let j = out.joint_index(name).unwrap();
        let dir = Vec3::from_array(out.joints[j].offset).try_normalize(1e-12).unwrap();
        assert!((dir - template.bone_directions[name]).norm() < 1e-9, "{name}");
    }
}

#[test]
fn unmatched_rest_directions_are_reported() {
    let skel = SkeletonSpec::desk();
    let doc = export_source_bvh(&skel, &walk(&skel, 3));
    let mut template: TPoseTemplate = source_map().template(&skel);
    template.bone_directions.remove("Head");
    let (_, report) = standardize_rest(&doc, &template);
    assert_eq!(report.unmatched, ["Neck"]);
}

#[test]
fn axis_swap_rotates_the_root_path_by_the_basis_change() {
    let skel = SkeletonSpec::desk();
    let doc = bvh_from_motion(&skel, &walk(&skel, 15));
    let b = basis_change(SignedAxis::PosY, SignedAxis::PosZ, SignedAxis::PosZ, SignedAxis::NegY).unwrap();
    // by hand: up +Y goes to +Z and forward +Z goes to -Y, so x is fixed
    let hand = Mat3::from_cols(Vec3::X, Vec3::Z, Vec3::new(0.0, -1.0, 0.0));
    for i in 0..3 {
        for j in 0..3 {
            assert!((b.0[i][j] - hand.0[i][j]).abs() < 1e-12);
        }
    }
    let z_up = change_basis(&doc, &b);
    for f in 0..doc.frame_count() {
        let (p, _) = doc.world_pose(f);
        let (q, _) = z_up.world_pose(f);
        for (x, y) in p.iter().zip(&q) {
            assert!((hand.mul_vec(*x) - *y).norm() < 1e-9);
        }
    }
    let opts = AlignOptions {
        source_up: SignedAxis::PosZ,
        source_forward: SignedAxis::NegY,
        target_up: SignedAxis::PosY,
        target_forward: SignedAxis::PosZ,
        template: None,
    };
    let (back, _) = standardize_and_align(&z_up, &opts).unwrap();
    assert!(max_world_diff(&doc, &back) < 1e-9);
}

#[test]
fn identity_retarget_preserves_positions() {
    let skel = SkeletonSpec::desk();
    let doc = bvh_from_motion(&skel, &walk(&skel, 10));
    let target = skeleton_from_bvh(&doc, "copy", 1.0);
    let rt = retarget(&doc, &RetargetMap::identity(&doc), &target).unwrap();
    assert!(rt.joint_valid.iter().all(|&v| v) && rt.dropped.is_empty());
    for f in 0..doc.frame_count() {
        let (p, _) = doc.world_pose(f);
        let q = forward_kinematics(&target, rt.motion.root_translation[f], &rt.motion.local_rotations[f]).unwrap();
        for (x, y) in p.iter().zip(&q) {
            assert!((*x - *y).norm() < 1e-9);
        }
    }
}

#[test]
fn extra_finger_joints_are_dropped() {
    let skel = SkeletonSpec::desk();
    let mut doc = bvh_from_motion(&skel, &walk(&skel, 6));
    let fingers = ["left_index1", "left_index2", "right_index1"];
    let parents = ["left_hand", "left_index1", "right_hand"];
    for (name, parent) in fingers.iter().zip(parents) {
        let p = doc.joint_index(parent).unwrap();
        doc.joints.push(BvhJoint {
            name: name.to_string(),
            parent: Some(p),
            offset: [0.03, 0.0, 0.0],
            channels: vec![ChannelKind::Zrotation, ChannelKind::Xrotation, ChannelKind::Yrotation],
            end_site: None,
        });
        for (f, row) in doc.motion.iter_mut().enumerate() {
            row.extend([10.0 + f as f64, -5.0, 3.0]);
        }
    }
    let mut map = RetargetMap::identity(&doc);
    for f in fingers {
        map.joints.remove(f);
    }
    let rt = retarget(&doc, &map, &skel).unwrap();
    rt.motion.validate(&skel).unwrap();
    assert_eq!(rt.dropped, fingers);
    assert!(rt.joint_valid.iter().all(|&v| v));
    // mapping a finger onto a missing target joint is an error
    assert!(retarget(&doc, &RetargetMap::identity(&doc), &skel).is_err());
}

#[test]
fn rotated_rest_frames_are_corrected() {
    let skel = SkeletonSpec::desk();
    let motion = walk(&skel, 12);
    let direct = bvh_from_motion(&skel, &motion);
    // the same motion authored on a skeleton whose joint frames are turned by Q
    let q = Quat::from_axis_angle(Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)).to_matrix();
    let mut source = direct.clone();
    for j in &mut source.joints {
        if j.parent.is_some() {
            j.offset = q.mul_vec(Vec3::from_array(j.offset)).to_array();
        }
    }
    for f in 0..direct.frame_count() {
        for j in 0..direct.joints.len() {
            if direct.joints[j].channels.iter().any(|c| c.is_rotation()) {
                let l = direct.local_rotation(f, j);
                let qp = if direct.joints[j].parent.is_some() { q } else { Mat3::IDENTITY };
                source.set_local_rotation(f, j, &qp.mul_mat(&l).mul_mat(&q.transpose()));
            }
        }
    }
    let mut map = RetargetMap::identity(&source);
    map.rest_corrections = skel.joint_names.iter().map(|n| (n.clone(), [0.0, 0.0, 90.0])).collect();
    let rt = retarget(&source, &map, &skel).unwrap();
    for f in 0..motion.frames() {
        assert!((rt.motion.root_translation[f] - motion.root_translation[f]).norm() < 1e-6);
        for (a, b) in rt.motion.local_rotations[f].iter().zip(&motion.local_rotations[f]) {
            assert!(a.angle_to(b) < 1e-6);
        }
    }
    // without the corrections the retarget is visibly wrong
    let bare = retarget(&source, &RetargetMap::identity(&source), &skel).unwrap();
    assert!(bare.motion.local_rotations[0][0].angle_to(&motion.local_rotations[0][0]) > 1.0);
}
