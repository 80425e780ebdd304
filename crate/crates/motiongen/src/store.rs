//! On-disk clip store and dataset manifest.
//!
//! ```text
//! <root>/skeleton.toml        canonical skeleton
//! <root>/clips/<id>.mclp      clip containers
//! <root>/attachments/<id>.f32 audio feature matrices
//! <root>/manifest.toml        split assignment
//! <root>/.lock                held by the single writer
//! ```
//! Nothing written depends on wall-clock time or directory iteration order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use motion_core::condition::fnv1a;
use motion_core::rng::stream;
use motion_core::{Matrix, SkeletonSpec};

use crate::clip::{decode_clip, decode_matrix, encode_clip, encode_matrix, ClipFile, ClipRecord, DatasetTask};

pub const TEST_PER_DATASET: usize = 10;

/// Exclusive writer lock; released on drop.
#[derive(Debug)]
pub struct StoreLock {
    path: PathBuf,
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Clone, Debug)]
pub struct ClipStore {
    pub root: PathBuf,
    pub skeleton: SkeletonSpec,
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut f = File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("moving {} into place", path.display()))
}

pub fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) || id.starts_with('.') {
        bail!("clip id '{id}' must be non-empty ASCII letters, digits, '-', '_' or '.'");
    }
    Ok(())
}

impl ClipStore {
    /// Creates an empty store, or opens an existing one built for the same skeleton.
    pub fn create(root: &Path, skeleton: &SkeletonSpec) -> Result<Self> {
        skeleton.validate()?;
        fs::create_dir_all(root.join("clips"))?;
        fs::create_dir_all(root.join("attachments"))?;
        let spec_path = root.join("skeleton.toml");
        let text = toml::to_string(skeleton)?;
        if spec_path.exists() {
            let existing: SkeletonSpec = toml::from_str(&fs::read_to_string(&spec_path)?)?;
            if existing != *skeleton {
                bail!("store {} was built for skeleton '{}'", root.display(), existing.name);
            }
        } else {
            write_atomic(&spec_path, text.as_bytes())?;
        }
        Ok(Self { root: root.to_path_buf(), skeleton: skeleton.clone() })
    }

    pub fn open(root: &Path) -> Result<Self> {
        let spec_path = root.join("skeleton.toml");
        let text = fs::read_to_string(&spec_path).with_context(|| format!("{} is not a clip store", root.display()))?;
        let skeleton: SkeletonSpec = toml::from_str(&text).with_context(|| format!("parsing {}", spec_path.display()))?;
        skeleton.validate()?;
        Ok(Self { root: root.to_path_buf(), skeleton })
    }

    pub fn lock(&self) -> Result<StoreLock> {
        let path = self.root.join(".lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| format!("store {} is locked by another writer ({} exists)", self.root.display(), path.display()))?;
        Ok(StoreLock { path })
    }

    fn clip_path(&self, id: &str) -> PathBuf {
        self.root.join("clips").join(format!("{id}.mclp"))
    }

    pub fn write_clip(&self, _lock: &StoreLock, clip: &ClipFile) -> Result<()> {
        check_id(&clip.record.id)?;
        if clip.joints != self.skeleton.joint_count() || clip.rotated != self.skeleton.rotated_count() {
            bail!("clip '{}' does not match the store skeleton", clip.record.id);
        }
        write_atomic(&self.clip_path(&clip.record.id), &encode_clip(clip)?)
    }

    pub fn read_clip(&self, id: &str) -> Result<ClipFile> {
        check_id(id)?;
        let path = self.clip_path(id);
        let bytes = fs::read(&path).with_context(|| format!("reading clip '{id}'"))?;
        let clip = decode_clip(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        if clip.joints != self.skeleton.joint_count() || clip.rotated != self.skeleton.rotated_count() {
            bail!("clip '{id}' was stored for another skeleton");
        }
        Ok(clip)
    }

    /// Stores a matrix attachment and returns its store-relative path.
    pub fn write_attachment(&self, _lock: &StoreLock, name: &str, m: &Matrix) -> Result<String> {
        check_id(name)?;
        let rel = format!("attachments/{name}.f32");
        write_atomic(&self.root.join(&rel), &encode_matrix(m))?;
        Ok(rel)
    }

    pub fn read_attachment(&self, rel: &str) -> Result<Matrix> {
        let name = rel.strip_prefix("attachments/").and_then(|n| n.strip_suffix(".f32"));
        match name {
            Some(n) if check_id(n).is_ok() => {}
            _ => bail!("attachment reference '{rel}' is not inside the store"),
        }
        let bytes = fs::read(self.root.join(rel)).with_context(|| format!("reading attachment '{rel}'"))?;
        Ok(decode_matrix(&bytes)?)
    }

    pub fn attachment_exists(&self, name: &str) -> bool {
        check_id(name).is_ok() && self.root.join(format!("attachments/{name}.f32")).is_file()
    }

    /// Sorted ids of every stored clip.
    pub fn clip_ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join("clips"))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".mclp") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn records(&self) -> Result<Vec<ClipRecord>> {
        self.clip_ids()?.iter().map(|id| Ok(self.read_clip(id)?.record)).collect()
    }

    pub fn write_manifest(&self, _lock: &StoreLock, m: &DatasetManifest) -> Result<()> {
        write_atomic(&self.root.join("manifest.toml"), toml::to_string(m)?.as_bytes())
    }

    pub fn read_manifest(&self) -> Result<DatasetManifest> {
        let path = self.root.join("manifest.toml");
        let text = fs::read_to_string(&path).with_context(|| format!("{} has no manifest; run `manifest` first", self.root.display()))?;
        Ok(toml::from_str(&text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub dataset: String,
    pub task: DatasetTask,
    pub frames: usize,
    pub captions: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCount {
    pub clips: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub test_per_dataset: usize,
    pub train: usize,
    pub test: usize,
    pub datasets: BTreeMap<String, DatasetCount>,
    pub clips: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.clips.iter().filter(|c| c.split == split).map(|c| c.id.as_str()).collect()
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.clips.iter().find(|c| c.id == id).map(|c| c.split)
    }
}

/// Seeded uniform choice of `test_per_dataset` test clips per dataset; the
/// rest train. Datasets with fewer clips go entirely to test.
pub fn build_manifest(records: &[ClipRecord], test_per_dataset: usize, seed: u64) -> Result<DatasetManifest> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            bail!("duplicate clip id '{}'", r.id);
        }
    }
    let mut by_dataset: BTreeMap<&str, Vec<&ClipRecord>> = BTreeMap::new();
    for r in records {
        by_dataset.entry(r.dataset.as_str()).or_default().push(r);
    }
    let mut test_ids = BTreeSet::new();
    let mut datasets = BTreeMap::new();
    for (name, clips) in &mut by_dataset {
        clips.sort_by(|a, b| a.id.cmp(&b.id));
        let chosen: Vec<usize> = if clips.len() < test_per_dataset {
            log::warn!("dataset '{name}' has {} clips (< {test_per_dataset}); all go to test", clips.len());
            (0..clips.len()).collect()
        } else {
            let mut rng = stream(seed, &[fnv1a(name.as_bytes())]);
            sample(&mut rng, clips.len(), test_per_dataset).into_vec()
        };
        for &i in &chosen {
            test_ids.insert(clips[i].id.as_str());
        }
        datasets.insert(name.to_string(), DatasetCount { clips: clips.len(), test: chosen.len() });
    }
    let mut clips: Vec<ManifestEntry> = records
        .iter()
        .map(|r| ManifestEntry {
            id: r.id.clone(),
            dataset: r.dataset.clone(),
            task: r.task,
            frames: r.frames,
            captions: r.captions.len(),
            split: if test_ids.contains(r.id.as_str()) { Split::Test } else { Split::Train },
        })
        .collect();
    clips.sort_by(|a, b| a.id.cmp(&b.id));
    let test = test_ids.len();
    Ok(DatasetManifest { seed, test_per_dataset, train: clips.len() - test, test, datasets, clips })
}
