//! Views of a clip store as training clips, benchmark cases and embedder pairs.

use std::collections::BTreeMap;

use anyhow::Result;

use motion_core::benchmark::BenchCase;
use motion_core::condition::HashedTokenizer;
use motion_core::curriculum::CorpusClip;
use motion_core::embedder::{EmbedPair, EmbedderConfig};
use motion_core::Matrix;

use crate::clip::{AudioKind, ClipFile};
use crate::store::{ClipStore, DatasetManifest, Split};

#[derive(Clone, Debug)]
pub struct LoadedClip {
    pub file: ClipFile,
    pub audio: Option<(AudioKind, Matrix)>,
}

impl LoadedClip {
    fn audio_of(&self, kind: AudioKind) -> Option<Matrix> {
        self.audio.as_ref().filter(|(k, _)| *k == kind).map(|(_, m)| m.clone())
    }
}

/// Clips of one split in manifest order, with their audio attachments.
pub fn load_split(store: &ClipStore, manifest: &DatasetManifest, split: Split) -> Result<Vec<LoadedClip>> {
    manifest
        .ids(split)
        .into_iter()
        .map(|id| {
            let file = store.read_clip(id)?;
            let audio = match &file.record.audio {
                Some(a) => Some((a.kind, store.read_attachment(&a.path)?)),
                None => None,
            };
            Ok(LoadedClip { file, audio })
        })
        .collect()
}

/// Training clips; each clip's reference is the preceding segment of its
/// sequence when that segment is in the same split.
pub fn corpus_clips(clips: &[LoadedClip]) -> Vec<CorpusClip> {
    let by_key: BTreeMap<(&str, usize), &LoadedClip> =
        clips.iter().map(|c| ((c.file.record.sequence.as_str(), c.file.record.segment), c)).collect();
    clips
        .iter()
        .map(|c| {
            let r = &c.file.record;
            let reference = r
                .segment
                .checked_sub(1)
                .and_then(|s| by_key.get(&(r.sequence.as_str(), s)))
                .map(|p| p.file.features.clone());
            CorpusClip {
                id: r.id.clone(),
                features: c.file.features.clone(),
                captions: r.captions.clone(),
                reference,
                speech: c.audio_of(AudioKind::Speech),
                music: c.audio_of(AudioKind::Music),
                joint_valid: r.joint_valid.clone(),
                has_face: r.has_face,
            }
        })
        .collect()
}

pub fn bench_cases(clips: &[LoadedClip]) -> Vec<BenchCase> {
    clips
        .iter()
        .map(|c| BenchCase {
            id: c.file.record.id.clone(),
            caption: c.file.record.captions.first().cloned(),
            features: c.file.features.clone(),
            speech: c.audio_of(AudioKind::Speech),
            music: c.audio_of(AudioKind::Music),
            has_face: c.file.record.has_face,
        })
        .collect()
}

/// One pair per caption of every captioned clip.
pub fn embed_pairs(clips: &[LoadedClip], config: &EmbedderConfig) -> Vec<EmbedPair> {
    let tok = HashedTokenizer { buckets: config.text_buckets, max_tokens: config.max_tokens };
    clips
        .iter()
        .flat_map(|c| {
            c.file.record.captions.iter().map(|cap| EmbedPair { tokens: tok.tokenize(cap), motion: c.file.features.values.clone() })
        })
        .filter(|p| !p.tokens.is_empty())
        .collect()
}
