//! Binary clip container and the float-matrix sidecar format.
//!
//! Container layout, all little endian:
//! `"MCLP"`, version u32, joints u32, rotated u32, dim u32, fps f64, frames u32,
//! `frames x dim` f32 features (frame major), metadata length u32, TOML metadata.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use motion_core::{Matrix, MotionFeatures, SkeletonSpec};

pub const CLIP_MAGIC: &[u8; 4] = b"MCLP";
pub const CLIP_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a {expected} file (bad magic)")]
    BadMagic { expected: &'static str },
    #[error("unsupported {what} version {found}")]
    Version { what: &'static str, found: u32 },
    #[error("file truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after the payload")]
    Trailing(usize),
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("{0}")]
    Invalid(String),
}

/// Source-dataset task tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DatasetTask {
    T2m,
    M2d,
    S2g,
    Hoi,
    Hsi,
    Hhi,
}

impl DatasetTask {
    pub const ALL: [DatasetTask; 6] = [Self::T2m, Self::M2d, Self::S2g, Self::Hoi, Self::Hsi, Self::Hhi];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::T2m => "T2M",
            Self::M2d => "M2D",
            Self::S2g => "S2G",
            Self::Hoi => "HOI",
            Self::Hsi => "HSI",
            Self::Hhi => "HHI",
        }
    }
}

impl fmt::Display for DatasetTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetTask {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|t| t.as_str().eq_ignore_ascii_case(s)).ok_or_else(|| format!("unknown dataset task '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AudioKind {
    Speech,
    Music,
}

/// A per-frame audio feature attachment stored next to the clip.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioRef {
    pub kind: AudioKind,
    /// Path relative to the store root.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub dataset: String,
    pub task: DatasetTask,
    pub fps: f64,
    pub frames: usize,
    pub captions: Vec<String>,
    pub audio: Option<AudioRef>,
    /// Face coefficients were supplied and fill the face columns.
    pub has_face: bool,
    /// Per joint: false where the source had no data.
    pub joint_valid: Vec<bool>,
    /// Source sequence and this clip's position in it.
    pub sequence: String,
    pub segment: usize,
    /// Joints the rest-pose template could not match.
    #[serde(default)]
    pub unmatched_joints: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipFile {
    pub joints: usize,
    pub rotated: usize,
    pub record: ClipRecord,
    pub features: MotionFeatures,
}

impl ClipFile {
    pub fn new(skeleton: &SkeletonSpec, record: ClipRecord, features: MotionFeatures) -> Self {
        Self { joints: skeleton.joint_count(), rotated: skeleton.rotated_count(), record, features }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(FormatError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let raw = self.take(n.checked_mul(4).ok_or(FormatError::Truncated(self.bytes.len()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect())
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::Trailing(n)),
        }
    }
}

fn u32_of(n: usize, what: &str) -> Result<u32, FormatError> {
    u32::try_from(n).map_err(|_| FormatError::Invalid(format!("{what} {n} does not fit in 32 bits")))
}

pub fn encode_clip(clip: &ClipFile) -> Result<Vec<u8>, FormatError> {
    let f = &clip.features;
    if clip.record.frames != f.frames() || clip.record.fps != f.fps {
        return Err(FormatError::Invalid("record frame count or fps disagrees with the features".into()));
    }
    let meta = toml::to_string(&clip.record).map_err(|e| FormatError::Metadata(e.to_string()))?;
    let mut out = Vec::with_capacity(32 + f.values.data.len() * 4 + meta.len());
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(clip.joints, "joint count")?.to_le_bytes());
    out.extend_from_slice(&u32_of(clip.rotated, "rotated count")?.to_le_bytes());
    out.extend_from_slice(&u32_of(f.dim(), "feature dim")?.to_le_bytes());
    out.extend_from_slice(&f.fps.to_le_bytes());
    out.extend_from_slice(&u32_of(f.frames(), "frame count")?.to_le_bytes());
    for &v in &f.values.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&u32_of(meta.len(), "metadata length")?.to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    Ok(out)
}

pub fn decode_clip(bytes: &[u8]) -> Result<ClipFile, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(CLIP_MAGIC.as_slice()) {
        return Err(FormatError::BadMagic { expected: "clip" });
    }
    let version = r.u32()?;
    if version != CLIP_VERSION {
        return Err(FormatError::Version { what: "clip", found: version });
    }
    let joints = r.u32()? as usize;
    let rotated = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let fps = r.f64()?;
    let frames = r.u32()? as usize;
    if dim != motion_core::features::FeatureLayout::dim_for(joints, rotated) {
        return Err(FormatError::Invalid(format!("dim {dim} inconsistent with {joints} joints / {rotated} rotated")));
    }
    let data = r.f32s(frames * dim)?;
    let meta_len = r.u32()? as usize;
    let meta = std::str::from_utf8(r.take(meta_len)?).map_err(|e| FormatError::Metadata(e.to_string()))?;
    r.finish()?;
    let record: ClipRecord = toml::from_str(meta).map_err(|e| FormatError::Metadata(e.to_string()))?;
    if record.frames != frames {
        return Err(FormatError::Invalid(format!("metadata says {} frames, header {frames}", record.frames)));
    }
    Ok(ClipFile { joints, rotated, record, features: MotionFeatures::new(fps, Matrix::from_vec(frames, dim, data)) })
}

/// Sidecar matrix: u32 rows, u32 cols, then `rows x cols` f32, little endian.
pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + m.data.len() * 4);
    out.extend_from_slice(&(m.rows as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols as u32).to_le_bytes());
    for &v in &m.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let data = r.f32s(rows * cols)?;
    r.finish()?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::Invalid("non-finite value in feature matrix".into()));
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ClipFile {
        let s = SkeletonSpec::desk();
        let d = s.feature_dim();
        let values = Matrix::from_vec(3, d, (0..3 * d).map(|i| i as f64 * 0.25).collect());
        let record = ClipRecord {
            id: "a-000".into(),
            dataset: "a".into(),
            task: DatasetTask::T2m,
            fps: 30.0,
            frames: 3,
            captions: vec!["walk".into()],
            audio: None,
            has_face: false,
            joint_valid: vec![true; 24],
            sequence: "a/x".into(),
            segment: 0,
            unmatched_joints: vec![],
        };
        ClipFile::new(&s, record, MotionFeatures::new(30.0, values))
    }

    #[test]
    fn clip_round_trip() {
        let c = sample();
        let bytes = encode_clip(&c).unwrap();
        assert_eq!(&bytes[..4], CLIP_MAGIC);
        assert_eq!(decode_clip(&bytes).unwrap(), c);
    }

    #[test]
    fn truncation_and_trailing_bytes_are_rejected() {
        let bytes = encode_clip(&sample()).unwrap();
        assert!(matches!(decode_clip(&bytes[..40]), Err(FormatError::Truncated(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_clip(&extra), Err(FormatError::Trailing(1))));
    }

    #[test]
    fn matrix_round_trip() {
        let m = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 4.0, 5.5]);
        assert_eq!(decode_matrix(&encode_matrix(&m)).unwrap(), m);
    }
}
