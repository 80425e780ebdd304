//! Rest-pose standardization and axis-convention alignment of BVH documents.
//!
//! Both rewrites keep world joint positions unchanged (up to the fixed basis
//! change): a rest correction `R_j` at joint `j` rotates the offsets of its
//! children, and the local rotations become `R_parent · L_j · R_jᵀ`.

use std::collections::BTreeMap;

use motion_core::math::{Mat3, Vec3};
use motion_core::rotation::rotation_between;
use motion_core::skeleton::basis_to_canonical;
use motion_core::SignedAxis;

use crate::bvh::BvhDocument;

/// Desired rest direction of the bone ending at each named joint, expressed in
/// the document's (post-alignment) frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TPoseTemplate {
    pub bone_directions: BTreeMap<String, Vec3>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignOptions {
    pub source_up: SignedAxis,
    pub source_forward: SignedAxis,
    pub target_up: SignedAxis,
    pub target_forward: SignedAxis,
    pub template: Option<TPoseTemplate>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AlignReport {
    /// Joints with child bones none of which the template could match.
    pub unmatched: Vec<String>,
}

impl AlignReport {
    pub fn flagged(&self) -> bool {
        !self.unmatched.is_empty()
    }
}

/// Fixed rotation from the source axis convention to the target one.
pub fn basis_change(source_up: SignedAxis, source_forward: SignedAxis, target_up: SignedAxis, target_forward: SignedAxis) -> Option<Mat3> {
    let s = basis_to_canonical(source_up, source_forward)?;
    let t = basis_to_canonical(target_up, target_forward)?;
    Some(t.transpose().mul_mat(&s))
}

/// Expresses the whole document in the frame rotated by `b`: world positions
/// become `b · x` for every joint and frame.
pub fn change_basis(doc: &BvhDocument, b: &Mat3) -> BvhDocument {
    let bt = b.transpose();
    let mut out = doc.clone();
    for j in &mut out.joints {
        j.offset = b.mul_vec(Vec3::from_array(j.offset)).to_array();
        if let Some(e) = j.end_site {
            j.end_site = Some(b.mul_vec(Vec3::from_array(e)).to_array());
        }
    }
    if *b == Mat3::IDENTITY {
        return out;
    }
    for j in 0..doc.joints.len() {
        let rotates = doc.joints[j].channels.iter().any(|c| c.is_rotation());
        if rotates {
            out.ensure_full_rotation(j);
        }
        // a partial set of position channels cannot hold a rotated vector
        if doc.joints[j].channels.iter().any(|c| !c.is_rotation()) {
            assert_full_position(&doc.joints[j].channels);
        }
    }
    for f in 0..doc.frame_count() {
        for j in 0..doc.joints.len() {
            if doc.joints[j].channels.iter().any(|c| !c.is_rotation()) {
                let t = doc.local_translation(f, j);
                out.set_local_translation(f, j, b.mul_vec(t));
            }
            if doc.joints[j].channels.iter().any(|c| c.is_rotation()) {
                let l = doc.local_rotation(f, j);
                out.set_local_rotation(f, j, &b.mul_mat(&l).mul_mat(&bt));
            }
        }
    }
    out
}

fn assert_full_position(channels: &[crate::bvh::ChannelKind]) {
    let n = channels.iter().filter(|c| !c.is_rotation()).count();
    assert!(n == 3, "joints with position channels must carry all three axes");
}

/// Per-joint rest corrections taking each joint's primary child bone onto the
/// template direction.
fn rest_corrections(doc: &BvhDocument, template: &TPoseTemplate) -> (Vec<Mat3>, Vec<String>) {
    let mut corr = vec![Mat3::IDENTITY; doc.joints.len()];
    let mut unmatched = Vec::new();
    for j in 0..doc.joints.len() {
        let children = doc.children(j);
        if children.is_empty() {
            continue;
        }
        let found = children.iter().find_map(|&c| {
            let dir = template.bone_directions.get(&doc.joints[c].name)?;
            rotation_between(Vec3::from_array(doc.joints[c].offset), *dir)
        });
        match found {
            Some(r) => corr[j] = r,
            None => unmatched.push(doc.joints[j].name.clone()),
        }
    }
    (corr, unmatched)
}

/// Rewrites the rest pose so child bones follow the template, folding the
/// corrections into the motion so world poses are unchanged.
pub fn standardize_rest(doc: &BvhDocument, template: &TPoseTemplate) -> (BvhDocument, AlignReport) {
    let (corr, unmatched) = rest_corrections(doc, template);
    let mut out = doc.clone();
    let identity = corr.iter().all(|r| *r == Mat3::IDENTITY);
    if identity {
        return (out, AlignReport { unmatched });
    }
    for (j, joint) in out.joints.iter_mut().enumerate() {
        if let Some(p) = joint.parent {
            joint.offset = corr[p].mul_vec(Vec3::from_array(joint.offset)).to_array();
        }
        if let Some(e) = joint.end_site {
            joint.end_site = Some(corr[j].mul_vec(Vec3::from_array(e)).to_array());
        }
    }
    let needs = |j: usize| {
        let parent_corr = doc.joints[j].parent.map_or(Mat3::IDENTITY, |p| corr[p]);
        corr[j] != Mat3::IDENTITY || parent_corr != Mat3::IDENTITY
    };
    for j in 0..doc.joints.len() {
        if needs(j) {
            out.ensure_full_rotation(j);
        }
    }
    for f in 0..doc.frame_count() {
        for j in 0..doc.joints.len() {
            if !needs(j) {
                continue;
            }
            let rp = doc.joints[j].parent.map_or(Mat3::IDENTITY, |p| corr[p]);
            let l = doc.local_rotation(f, j);
            out.set_local_rotation(f, j, &rp.mul_mat(&l).mul_mat(&corr[j].transpose()));
            // non-root position channels hold offsets in the parent frame
            if doc.joints[j].parent.is_some() && doc.joints[j].channels.iter().any(|c| !c.is_rotation()) {
                let t = doc.local_translation(f, j);
                out.set_local_translation(f, j, rp.mul_vec(t));
            }
        }
    }
    (out, AlignReport { unmatched })
}

/// Rotates the document into the target axis convention, then standardizes
/// the rest pose when a template is given.
pub fn standardize_and_align(doc: &BvhDocument, opts: &AlignOptions) -> Result<(BvhDocument, AlignReport), String> {
    let b = basis_change(opts.source_up, opts.source_forward, opts.target_up, opts.target_forward)
        .ok_or_else(|| "source or target up/forward axes are not perpendicular".to_string())?;
    for joint in &doc.joints {
        let n = joint.channels.iter().filter(|c| !c.is_rotation()).count();
        if n != 0 && n != 3 {
            return Err(format!("joint '{}' has {n} position channels; expected 0 or 3", joint.name));
        }
    }
    let aligned = change_basis(doc, &b);
    Ok(match &opts.template {
        Some(t) => standardize_rest(&aligned, t),
        None => (aligned, AlignReport::default()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvh::parse_bvh;

    const ARM: &str = "HIERARCHY\nROOT hip\n{\n  OFFSET 0 0 0\n  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation\n  JOINT arm\n  {\n    OFFSET 1 0 0\n    CHANNELS 3 Zrotation Xrotation Yrotation\n    End Site\n    {\n      OFFSET 1 0 0\n    }\n  }\n}\nMOTION\nFrames: 1\nFrame Time: 0.04\n0 1 0 10 20 30 5 -15 40\n";

    #[test]
    fn matching_template_is_fixed_point() {
        let d = parse_bvh(ARM).unwrap();
        let mut t = TPoseTemplate::default();
        t.bone_directions.insert("arm".into(), Vec3::X);
        let (out, rep) = standardize_rest(&d, &t);
        assert_eq!(out, d);
        assert!(rep.unmatched.is_empty());
    }

    #[test]
    fn missing_template_entry_is_reported() {
        let d = parse_bvh(ARM).unwrap();
        let (_, rep) = standardize_rest(&d, &TPoseTemplate::default());
        assert_eq!(rep.unmatched, vec!["hip".to_string()]);
        assert!(rep.flagged());
    }
}
