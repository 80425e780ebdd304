//! Transport of BVH motion onto a canonical skeleton, and the reverse export.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use motion_core::math::{Mat3, Quat, Vec3};
use motion_core::{GlobalMotion, SignedAxis, SkeletonSpec};

use crate::align::TPoseTemplate;
use crate::bvh::{BvhDocument, BvhJoint, ChannelKind};

#[derive(Debug, Error, PartialEq)]
pub enum RetargetError {
    #[error("retarget map names source joint '{0}', which the document does not have")]
    UnknownSource(String),
    #[error("retarget map names target joint '{0}', which the skeleton does not have")]
    UnknownTarget(String),
    #[error("target joint '{0}' is mapped from more than one source joint")]
    NotInjective(String),
    #[error("rotated target joint '{0}' is neither mapped nor excluded")]
    Uncovered(String),
    #[error("target joint '{0}' is both mapped and excluded")]
    MappedAndExcluded(String),
    #[error("the target root '{0}' must be mapped")]
    RootUnmapped(String),
    #[error("scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("document has no frames")]
    Empty,
}

fn default_scale() -> f64 {
    1.0
}

fn default_up() -> SignedAxis {
    SignedAxis::PosY
}

fn default_forward() -> SignedAxis {
    SignedAxis::PosZ
}

fn default_true() -> bool {
    true
}

/// How one source skeleton maps onto the canonical one. Unmapped source
/// joints are dropped; excluded target joints keep the identity rotation and
/// are marked invalid for the reconstruction loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetargetMap {
    /// Source joint name to target joint name.
    pub joints: BTreeMap<String, String>,
    /// Target joints deliberately left unmapped.
    #[serde(default)]
    pub exclude: Vec<String>,
    /// Per target joint, the rotation vector (degrees) `Q` with
    /// `world_target = world_source · Q`.
    #[serde(default)]
    pub rest_corrections: BTreeMap<String, [f64; 3]>,
    /// Multiplier taking source translation units to meters.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_up")]
    pub source_up: SignedAxis,
    #[serde(default = "default_forward")]
    pub source_forward: SignedAxis,
    /// Rewrite the source rest pose to the target's before transport.
    #[serde(default = "default_true")]
    pub standardize_rest: bool,
}

impl RetargetMap {
    /// Every joint of `doc` mapped to the same-named target joint.
    pub fn identity(doc: &BvhDocument) -> Self {
        Self {
            joints: doc.joints.iter().map(|j| (j.name.clone(), j.name.clone())).collect(),
            exclude: Vec::new(),
            rest_corrections: BTreeMap::new(),
            scale: 1.0,
            source_up: SignedAxis::PosY,
            source_forward: SignedAxis::PosZ,
            standardize_rest: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("retarget map serializes")
    }

    fn correction(&self, target: &str) -> Mat3 {
        self.rest_corrections.get(target).map_or(Mat3::IDENTITY, |v| {
            Quat::from_axis_angle(Vec3::new(v[0].to_radians(), v[1].to_radians(), v[2].to_radians())).to_matrix()
        })
    }

    /// Checks the map against a document and a target skeleton; returns the
    /// source joint index of every target joint.
    pub fn resolve(&self, doc: &BvhDocument, target: &SkeletonSpec) -> Result<Vec<Option<usize>>, RetargetError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(RetargetError::BadScale(self.scale));
        }
        let mut source_of = vec![None; target.joint_count()];
        for (src, tgt) in &self.joints {
            let s = doc.joint_index(src).ok_or_else(|| RetargetError::UnknownSource(src.clone()))?;
            let t = target.joint_index(tgt).ok_or_else(|| RetargetError::UnknownTarget(tgt.clone()))?;
            if source_of[t].replace(s).is_some() {
                return Err(RetargetError::NotInjective(tgt.clone()));
            }
        }
        let excluded: BTreeSet<&str> = self.exclude.iter().map(String::as_str).collect();
        for name in excluded.iter().chain(self.rest_corrections.keys().map(String::as_str).collect::<Vec<_>>().iter()) {
            if target.joint_index(name).is_none() {
                return Err(RetargetError::UnknownTarget((*name).to_string()));
            }
        }
        for &j in &target.rotated_joints {
            let name = &target.joint_names[j];
            match (source_of[j].is_some(), excluded.contains(name.as_str())) {
                (false, false) => return Err(RetargetError::Uncovered(name.clone())),
                (true, true) => return Err(RetargetError::MappedAndExcluded(name.clone())),
                _ => {}
            }
        }
        if source_of[0].is_none() {
            return Err(RetargetError::RootUnmapped(target.joint_names[0].clone()));
        }
        Ok(source_of)
    }

    /// Target bone directions keyed by source joint name, for rest standardization.
    pub fn template(&self, target: &SkeletonSpec) -> TPoseTemplate {
        let mut t = TPoseTemplate::default();
        for (src, tgt) in &self.joints {
            if let Some(j) = target.joint_index(tgt) {
                if target.parent(j).is_some() {
                    if let Some(d) = target.offset(j).try_normalize(1e-12) {
                        t.bone_directions.insert(src.clone(), d);
                    }
                }
            }
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Retargeted {
    pub motion: GlobalMotion,
    /// Per target joint: false where the source had no data.
    pub joint_valid: Vec<bool>,
    /// Source joints with no target, in document order.
    pub dropped: Vec<String>,
}

/// Transports world orientations: `W_t(j) = W_s(src j) · Q_j` for mapped joints,
/// `W_t(j) = W_t(parent)` otherwise, then reads local rotations off the target tree.
pub fn retarget(doc: &BvhDocument, map: &RetargetMap, target: &SkeletonSpec) -> Result<Retargeted, RetargetError> {
    if doc.frame_count() == 0 {
        return Err(RetargetError::Empty);
    }
    let source_of = map.resolve(doc, target)?;
    let n = target.joint_count();
    let corr: Vec<Mat3> = target.joint_names.iter().map(|name| map.correction(name)).collect();
    let slots = target.rotation_slots();
    let mut joint_valid = vec![false; n];
    for j in 0..n {
        joint_valid[j] = match source_of[j] {
            Some(_) => true,
            None => slots[j].is_none() && target.parent(j).is_some_and(|p| joint_valid[p]),
        };
    }
    let mapped: BTreeSet<usize> = source_of.iter().flatten().copied().collect();
    let dropped = (0..doc.joints.len()).filter(|s| !mapped.contains(s)).map(|s| doc.joints[s].name.clone()).collect();

    let mut root_translation = Vec::with_capacity(doc.frame_count());
    let mut local_rotations = Vec::with_capacity(doc.frame_count());
    let root_src = source_of[0].expect("resolved map maps the root");
    for f in 0..doc.frame_count() {
        let (pos, rot) = doc.world_pose(f);
        let mut world = vec![Mat3::IDENTITY; n];
        let mut frame = vec![Quat::IDENTITY; target.rotated_count()];
        for j in 0..n {
            let parent_world = target.parent(j).map_or(Mat3::IDENTITY, |p| world[p]);
            world[j] = match source_of[j] {
                Some(s) if slots[j].is_some() => rot[s].mul_mat(&corr[j]),
                _ => parent_world,
            };
            if let Some(k) = slots[j] {
                frame[k] = Quat::from_matrix(&parent_world.transpose().mul_mat(&world[j]));
            }
        }
        root_translation.push(pos[root_src].scale(map.scale));
        local_rotations.push(frame);
    }
    let motion = GlobalMotion { fps: doc.fps(), root_translation, local_rotations, face: None };
    Ok(Retargeted { motion, joint_valid, dropped })
}

/// A skeleton with the document's tree, every joint rotated, one body part.
pub fn skeleton_from_bvh(doc: &BvhDocument, name: &str, scale: f64) -> SkeletonSpec {
    let n = doc.joints.len();
    SkeletonSpec {
        name: name.to_string(),
        joint_names: doc.joints.iter().map(|j| j.name.clone()).collect(),
        parents: doc.joints.iter().map(|j| j.parent.map_or(-1, |p| p as i32)).collect(),
        rest_offsets: doc.joints.iter().map(|j| j.offset.map(|v| v * scale)).collect(),
        rotated_joints: (0..n).collect(),
        heel_joints: vec![],
        toe_joints: vec![],
        hand_joints: vec![],
        key_joints: vec![0],
        body_parts: vec![(0..n).collect()],
        face_joint: 0,
        up_axis: SignedAxis::PosY,
        forward_axis: SignedAxis::PosZ,
    }
}

fn dfs_order(skel: &SkeletonSpec) -> Vec<usize> {
    let mut order = Vec::with_capacity(skel.joint_count());
    let mut stack = vec![0];
    while let Some(j) = stack.pop() {
        order.push(j);
        let mut kids = skel.children(j);
        kids.reverse();
        stack.extend(kids);
    }
    order
}

/// Writes canonical motion as BVH: joints in depth-first order, the root with
/// three position channels, rotated joints with ZXY Euler channels in degrees.
pub fn bvh_from_motion(skel: &SkeletonSpec, motion: &GlobalMotion) -> BvhDocument {
    let order = dfs_order(skel);
    let mut index = vec![0; skel.joint_count()];
    for (k, &j) in order.iter().enumerate() {
        index[j] = k;
    }
    let slots = skel.rotation_slots();
    let rot = [ChannelKind::Zrotation, ChannelKind::Xrotation, ChannelKind::Yrotation];
    let joints: Vec<BvhJoint> = order
        .iter()
        .map(|&j| {
            let mut channels = Vec::new();
            if j == 0 {
                channels.extend([ChannelKind::Xposition, ChannelKind::Yposition, ChannelKind::Zposition]);
            }
            if slots[j].is_some() {
                channels.extend(rot);
            }
            BvhJoint {
                name: skel.joint_names[j].clone(),
                parent: skel.parent(j).map(|p| index[p]),
                offset: skel.rest_offsets[j],
                channels,
                end_site: None,
            }
        })
        .collect();
    let width: usize = joints.iter().map(|j| j.channels.len()).sum();
    let mut doc = BvhDocument { joints, frame_time: 1.0 / motion.fps, motion: vec![vec![0.0; width]; motion.frames()] };
    for f in 0..motion.frames() {
        doc.set_local_translation(f, 0, motion.root_translation[f]);
        for (k, &j) in order.iter().enumerate() {
            if let Some(s) = slots[j] {
                doc.set_local_rotation(f, k, &motion.local_rotations[f][s].to_matrix());
            }
        }
    }
    doc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_export_is_depth_first() {
        let s = SkeletonSpec::desk();
        let doc = bvh_from_motion(&s, &GlobalMotion::rest(&s, 2, 30.0, Vec3::new(0.0, 0.9, 0.0)));
        for (k, j) in doc.joints.iter().enumerate() {
            assert!(j.parent.map_or(k == 0, |p| p < k));
        }
        assert_eq!(doc.channel_count(), 3 + 3 * 24);
    }

    #[test]
    fn uncovered_target_joint_is_rejected() {
        let s = SkeletonSpec::desk();
        let doc = bvh_from_motion(&s, &GlobalMotion::rest(&s, 1, 30.0, Vec3::ZERO));
        let mut map = RetargetMap::identity(&doc);
        map.joints.remove("left_hand");
        assert_eq!(map.resolve(&doc, &s), Err(RetargetError::Uncovered("left_hand".into())));
        map.exclude.push("left_hand".into());
        assert!(map.resolve(&doc, &s).is_ok());
    }
}
