//! Condition channels, text featurization and the mask set that accompanies
//! every training sample or generation request.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{bail, Result};
use crate::features::MotionFeatures;
use crate::skeleton::SkeletonSpec;
use crate::task::{CellMask, TaskMask};
use crate::tensor::Matrix;

/// Prefix channels, in prefix order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Channel {
    Text,
    Global,
    Speech,
    Music,
    Reference,
}

impl Channel {
    pub const ALL: [Channel; 5] = [Channel::Text, Channel::Global, Channel::Speech, Channel::Music, Channel::Reference];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Text => "text",
            Channel::Global => "global",
            Channel::Speech => "speech",
            Channel::Music => "music",
            Channel::Reference => "reference",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A set of channels as a bit set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChannelSet(u8);

impl ChannelSet {
    pub const EMPTY: ChannelSet = ChannelSet(0);
    pub const ALL: ChannelSet = ChannelSet(0b11111);

    pub fn of(channels: &[Channel]) -> Self {
        channels.iter().fold(Self::EMPTY, |s, &c| s.with(c))
    }

    pub fn with(self, c: Channel) -> Self {
        ChannelSet(self.0 | (1 << c.index()))
    }

    pub fn without(self, c: Channel) -> Self {
        ChannelSet(self.0 & !(1 << c.index()))
    }

    pub fn contains(self, c: Channel) -> bool {
        self.0 & (1 << c.index()) != 0
    }

    pub fn is_superset(self, other: ChannelSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Channel> {
        Channel::ALL.into_iter().filter(move |&c| self.contains(c))
    }
}

/// Text as the denoiser sees it.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TextCondition {
    /// Token ids into the model's learned embedding table.
    Tokens(Vec<usize>),
    /// Precomputed `L x d_t` features from an external encoder.
    Features(Matrix),
}

impl TextCondition {
    pub fn len(&self) -> usize {
        match self {
            TextCondition::Tokens(t) => t.len(),
            TextCondition::Features(m) => m.rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Turns a caption into a [`TextCondition`].
pub trait TextFeaturizer {
    fn featurize(&self, text: &str) -> TextCondition;
}

/// Vocabulary-free tokenizer: lowercase alphanumeric words hashed (FNV-1a)
/// into a fixed number of buckets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HashedTokenizer {
    pub buckets: usize,
    pub max_tokens: usize,
}

impl Default for HashedTokenizer {
    fn default() -> Self {
        Self { buckets: 4096, max_tokens: 32 }
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashedTokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut Vec<usize>| {
            if !word.is_empty() {
                out.push((fnv1a(word.as_bytes()) % self.buckets as u64) as usize);
                word.clear();
            }
        };
        for ch in text.chars() {
            if ch.is_alphanumeric() {
                word.extend(ch.to_lowercase());
            } else {
                flush(&mut word, &mut out);
            }
        }
        flush(&mut word, &mut out);
        out.truncate(self.max_tokens);
        out
    }
}

impl TextFeaturizer for HashedTokenizer {
    fn featurize(&self, text: &str) -> TextCondition {
        TextCondition::Tokens(self.tokenize(text))
    }
}

/// Optional condition channels; `None` means absent.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConditionBundle {
    pub text: Option<TextCondition>,
    /// Observed motion; which cells count is decided by [`MaskSet::task`].
    pub global: Option<MotionFeatures>,
    /// `F x d_s`, one row per motion frame.
    pub speech: Option<Matrix>,
    /// `F x d_m`, one row per motion frame.
    pub music: Option<Matrix>,
    pub reference: Option<MotionFeatures>,
}

impl ConditionBundle {
    pub fn text(text: TextCondition) -> Self {
        Self { text: Some(text), ..Self::default() }
    }

    pub fn present(&self) -> ChannelSet {
        let mut s = ChannelSet::EMPTY;
        let flags = [
            self.text.is_some(),
            self.global.is_some(),
            self.speech.is_some(),
            self.music.is_some(),
            self.reference.is_some(),
        ];
        for (c, on) in Channel::ALL.into_iter().zip(flags) {
            if on {
                s = s.with(c);
            }
        }
        s
    }

    /// Drops every channel outside `keep`.
    pub fn restrict(&mut self, keep: ChannelSet) {
        if !keep.contains(Channel::Text) {
            self.text = None;
        }
        if !keep.contains(Channel::Global) {
            self.global = None;
        }
        if !keep.contains(Channel::Speech) {
            self.speech = None;
        }
        if !keep.contains(Channel::Music) {
            self.music = None;
        }
        if !keep.contains(Channel::Reference) {
            self.reference = None;
        }
    }

    /// Returns the offending field names when the bundle is malformed.
    pub fn validate(
        &self,
        skeleton: &SkeletonSpec,
        masks: &MaskSet,
        frames: usize,
        audio_dims: (usize, usize),
    ) -> core::result::Result<(), Vec<(&'static str, String)>> {
        let mut bad = Vec::new();
        let d = skeleton.feature_dim();
        if self.speech.is_some() && self.music.is_some() {
            bad.push(("speech", String::from("speech and music are mutually exclusive")));
            bad.push(("music", String::from("speech and music are mutually exclusive")));
        }
        if let Some(t) = &self.text {
            if t.is_empty() {
                bad.push(("text", String::from("text has no tokens")));
            }
        }
        if let Some(g) = &self.global {
            if g.dim() != d || g.frames() != frames {
                bad.push(("global", alloc::format!("expected {frames} x {d}, got {} x {}", g.frames(), g.dim())));
            }
            match &masks.task {
                None => bad.push(("task", String::from("global motion needs a task mask"))),
                Some(t) if t.frames() != frames || t.mask.joints != skeleton.joint_count() => {
                    bad.push(("task", alloc::format!("task mask must be {frames} x {}", skeleton.joint_count())))
                }
                _ => {}
            }
        }
        for (name, m, dim) in [("speech", &self.speech, audio_dims.0), ("music", &self.music, audio_dims.1)] {
            if let Some(m) = m {
                if m.rows != frames || m.cols != dim {
                    bad.push((name, alloc::format!("expected {frames} x {dim}, got {} x {}", m.rows, m.cols)));
                }
            }
        }
        if let Some(r) = &self.reference {
            if r.dim() != d || r.frames() == 0 {
                bad.push(("reference", alloc::format!("reference must be non-empty with {d} columns")));
            }
        }
        if masks.disentangle.len() != skeleton.joint_count() {
            bad.push(("disentangle", String::from("disentanglement mask must cover every joint")));
        }
        if let Some(r) = &masks.recon {
            if r.frames != frames || r.joints != skeleton.joint_count() {
                bad.push(("recon", String::from("reconstruction mask shape")));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad)
        }
    }

    pub fn check(&self, skeleton: &SkeletonSpec, masks: &MaskSet, frames: usize, audio_dims: (usize, usize)) -> Result<()> {
        if let Err(bad) = self.validate(skeleton, masks, frames, audio_dims) {
            let (field, msg) = &bad[0];
            bail!(InvalidArgument, "{field}: {msg}");
        }
        Ok(())
    }
}

/// Masks accompanying a bundle.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MaskSet {
    /// Channel-level attention switch; a present channel is attended only if
    /// its bit is set here.
    pub channels: ChannelSet,
    pub task: Option<TaskMask>,
    /// Joint-level; `true` keeps the joint in the global-motion condition.
    pub disentangle: Vec<bool>,
    /// Supervised cells; `None` supervises everything.
    pub recon: Option<CellMask>,
    /// Whether face columns carry data.
    pub face_valid: bool,
}

impl MaskSet {
    pub fn new(skeleton: &SkeletonSpec) -> Self {
        Self {
            channels: ChannelSet::ALL,
            task: None,
            disentangle: vec![true; skeleton.joint_count()],
            recon: None,
            face_valid: false,
        }
    }

    /// Keeps only the skeleton's key joints in the global condition.
    pub fn key_joints_only(mut self, skeleton: &SkeletonSpec) -> Self {
        self.disentangle = vec![false; skeleton.joint_count()];
        for &j in &skeleton.key_joints {
            self.disentangle[j] = true;
        }
        self
    }

    /// Observed feature cells of the global condition, as 0/1.
    pub fn observed(&self, skeleton: &SkeletonSpec) -> Option<Matrix> {
        self.task.as_ref().map(|t| t.observed_columns(skeleton, &self.disentangle))
    }

    /// Per-cell loss weights (0/1) for an `frames x D` target.
    pub fn loss_weights(&self, skeleton: &SkeletonSpec, frames: usize) -> Matrix {
        let mut w = match &self.recon {
            Some(r) => r.to_columns(skeleton),
            None => Matrix::filled(frames, skeleton.feature_dim(), 1.0),
        };
        if !self.face_valid {
            let face = skeleton.layout().face();
            for f in 0..w.rows {
                w.row_mut(f)[face.clone()].fill(0.0);
            }
        }
        w
    }
}
