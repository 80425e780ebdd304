//! Clip cleanup run after retargeting: Gaussian smoothing, frame-rate
//! conversion, facing/ground normalization and fixed-length segmentation.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::fk::forward_kinematics;
use crate::math::{yaw_of, Mat3, Quat, Vec3};
use crate::motion::GlobalMotion;
use crate::skeleton::SkeletonSpec;

pub const TARGET_FPS: f64 = 30.0;
pub const SEGMENT_FRAMES: usize = 150;
/// Remainders shorter than this are dropped by [`segment`].
pub const MIN_REMAINDER: usize = 30;

/// Unnormalized truncated kernel `exp(-k²/2σ²)` for `|k| <= ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = libm::ceil(3.0 * sigma) as i64;
    (-r..=r).map(|k| libm::exp(-((k * k) as f64) / (2.0 * sigma * sigma))).collect()
}

/// Weights of frame `i` over its in-range neighbours, renormalized to sum 1.
fn window(kernel: &[f64], i: usize, frames: usize) -> Vec<(usize, f64)> {
    let r = (kernel.len() / 2) as i64;
    let mut w: Vec<(usize, f64)> = (-r..=r)
        .filter_map(|k| {
            let j = i as i64 + k;
            (0..frames as i64).contains(&j).then(|| (j as usize, kernel[(k + r) as usize]))
        })
        .collect();
    let total: f64 = w.iter().map(|p| p.1).sum();
    for p in &mut w {
        p.1 /= total;
    }
    w
}

/// Smooths translations by convolution and rotations in the tangent space at
/// each frame, which is one Gauss-Newton step of the weighted rotation mean.
pub fn gaussian_smooth(motion: &GlobalMotion, sigma_frames: f64) -> Result<GlobalMotion> {
    if !(sigma_frames > 0.0) || !sigma_frames.is_finite() {
        bail!(InvalidArgument, "smoothing sigma must be positive, got {sigma_frames}");
    }
    let f = motion.frames();
    let kernel = gaussian_kernel(sigma_frames);
    let mut out = motion.clone();
    for i in 0..f {
        let w = window(&kernel, i, f);
        out.root_translation[i] = w.iter().fold(Vec3::ZERO, |acc, &(j, wj)| acc + motion.root_translation[j].scale(wj));
        for k in 0..motion.local_rotations[i].len() {
            let base = motion.local_rotations[i][k];
            let inv = base.conjugate();
            let tangent = w
                .iter()
                .fold(Vec3::ZERO, |acc, &(j, wj)| acc + inv.mul(&motion.local_rotations[j][k]).to_axis_angle().scale(wj));
            let q = base.mul(&Quat::from_axis_angle(tangent));
            out.local_rotations[i][k] = q.try_normalize(0.0).unwrap_or(base);
        }
    }
    Ok(out)
}

/// Resamples to `target_fps`: output frame `k` samples source time `k / target_fps`
/// (clamped to the last frame), lerping translations and face, slerping rotations.
pub fn resample(motion: &GlobalMotion, target_fps: f64) -> Result<GlobalMotion> {
    if !(motion.fps > 0.0) || !(target_fps > 0.0) {
        bail!(InvalidArgument, "frame rates must be positive ({} -> {target_fps})", motion.fps);
    }
    let f = motion.frames();
    if f == 0 {
        bail!(InvalidArgument, "motion has no frames");
    }
    if motion.fps == target_fps {
        return Ok(motion.clone());
    }
    let n = (libm::round(f as f64 * target_fps / motion.fps) as usize).max(1);
    let ratio = motion.fps / target_fps;
    let mut root = Vec::with_capacity(n);
    let mut rots = Vec::with_capacity(n);
    let mut face = motion.face.as_ref().map(|_| Vec::with_capacity(n));
    for k in 0..n {
        let s = (k as f64 * ratio).min((f - 1) as f64);
        let a = libm::floor(s) as usize;
        let b = (a + 1).min(f - 1);
        let t = s - a as f64;
        root.push(motion.root_translation[a].lerp(motion.root_translation[b], t));
        let (ra, rb) = (&motion.local_rotations[a], &motion.local_rotations[b]);
        rots.push(ra.iter().zip(rb).map(|(qa, qb)| qa.slerp(qb, t)).collect());
        if let (Some(out), Some(src)) = (&mut face, &motion.face) {
            out.push(src[a].iter().zip(&src[b]).map(|(x, y)| x + (y - x) * t).collect());
        }
    }
    Ok(GlobalMotion { fps: target_fps, root_translation: root, local_rotations: rots, face })
}

/// Rigidly moves the clip so frame 0 faces +Z (canonical forward) with its root
/// over the origin, and the lowest foot joint of frame 0 touches the ground.
pub fn normalize_clip(motion: &GlobalMotion, skeleton: &SkeletonSpec) -> Result<GlobalMotion> {
    motion.validate(skeleton)?;
    let basis = skeleton.canonical_basis();
    let basis_t = basis.transpose();
    let root_slot = skeleton.rotation_slots()[0].expect("validated skeleton rotates the root");
    let canon_root = |m: &GlobalMotion, i: usize| basis.mul_mat(&m.local_rotations[i][root_slot].to_matrix()).mul_mat(&basis_t);

    let yaw0 = yaw_of(&canon_root(motion, 0));
    let turn = Mat3::rot_y(-yaw0);
    let t0 = basis.mul_vec(motion.root_translation[0]);
    let origin = Vec3::new(t0.x, 0.0, t0.z);
    let mut out = motion.clone();
    for i in 0..motion.frames() {
        let p = turn.mul_vec(basis.mul_vec(motion.root_translation[i]) - origin);
        out.root_translation[i] = basis_t.mul_vec(p);
        let r = turn.mul_mat(&canon_root(motion, i));
        out.local_rotations[i][root_slot] = Quat::from_matrix(&basis_t.mul_mat(&r).mul_mat(&basis));
    }
    let pos = forward_kinematics(skeleton, out.root_translation[0], &out.local_rotations[0])?;
    let feet = skeleton.foot_joints();
    let candidates: Vec<usize> = if feet.is_empty() { (0..skeleton.joint_count()).collect() } else { feet };
    let floor = candidates.iter().map(|&j| basis.mul_vec(pos[j]).y).fold(f64::INFINITY, f64::min);
    let lift = basis_t.mul_vec(Vec3::new(0.0, floor, 0.0));
    for p in &mut out.root_translation {
        *p = *p - lift;
    }
    Ok(out)
}

/// Consecutive windows of `SEGMENT_FRAMES`; a shorter tail is kept only when it
/// has at least `MIN_REMAINDER` frames.
pub fn segment(motion: &GlobalMotion) -> Vec<GlobalMotion> {
    segment_ranges(motion.frames()).into_iter().map(|(s, l)| motion.slice(s, l)).collect()
}

/// `(start, len)` of every window [`segment`] produces for `frames` frames.
pub fn segment_ranges(frames: usize) -> Vec<(usize, usize)> {
    let mut out = vec![];
    let mut start = 0;
    while start < frames {
        let len = (frames - start).min(SEGMENT_FRAMES);
        if len == SEGMENT_FRAMES || len >= MIN_REMAINDER {
            out.push((start, len));
        }
        start += len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segmentation_boundaries() {
        let lens = |f: usize| segment_ranges(f).iter().map(|r| r.1).collect::<Vec<_>>();
        assert_eq!(lens(450), vec![150, 150, 150]);
        assert_eq!(lens(170), vec![150]);
        assert_eq!(lens(179), vec![150]);
        assert_eq!(lens(180), vec![150, 30]);
        assert_eq!(lens(29), Vec::<usize>::new());
    }

    #[test]
    fn resample_counts() {
        let s = SkeletonSpec::desk();
        let m = GlobalMotion::rest(&s, 120, 24.0, Vec3::ZERO);
        assert_eq!(resample(&m, 30.0).unwrap().frames(), 150);
    }

    #[test]
    fn kernel_is_truncated_at_three_sigma() {
        assert_eq!(gaussian_kernel(1.0).len(), 7);
        assert_eq!(gaussian_kernel(0.5).len(), 5);
    }
}
