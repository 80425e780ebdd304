//! Checkpoint container.
//!
//! Layout, little endian: `"MCKP"`, version u32, TOML header (u32 length +
//! bytes), tensor count u32, then per tensor: name (u32 length + bytes),
//! rows u32, cols u32, f32 values. An optional resume section follows (flag
//! u8): optimizer step u64 and, per tensor, f64 parameters plus AdamW first and
//! second moments, which makes resumption bit-exact. The last 32 bytes are the
//! SHA-256 of everything before them.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use motion_core::curriculum::{CurriculumSpec, Trainer};
use motion_core::embedder::{EmbedderConfig, EmbedderPair};
use motion_core::graph::ParamStore;
use motion_core::model::{Denoiser, ModelConfig};
use motion_core::optim::AdamW;
use motion_core::schedule::build_schedule;
use motion_core::{Matrix, SkeletonSpec};

use crate::clip::FormatError;

pub const CKPT_MAGIC: &[u8; 4] = b"MCKP";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Denoiser,
    Embedder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Global steps completed.
    pub step: usize,
    pub seed: u64,
    pub curriculum: CurriculumSpec,
    pub optimizer: OptimizerMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: CheckpointKind,
    pub feature_dim: usize,
    pub skeleton: SkeletonSpec,
    pub model: Option<ModelConfig>,
    pub embedder: Option<EmbedderConfig>,
    pub training: Option<TrainingMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResumeState {
    pub t: u64,
    pub params: Vec<Matrix>,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Matrix)>,
    pub resume: Option<ResumeState>,
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    out.extend_from_slice(&u32::try_from(v).context("value exceeds 32 bits")?.to_le_bytes());
    Ok(())
}

fn named(params: &ParamStore) -> Vec<(String, Matrix)> {
    params.iter().map(|(_, n, m)| (n.to_string(), m.clone())).collect()
}

impl Checkpoint {
    pub fn denoiser(model: &Denoiser) -> Self {
        Self {
            header: CheckpointHeader {
                kind: CheckpointKind::Denoiser,
                feature_dim: model.feature_dim(),
                skeleton: model.skeleton.clone(),
                model: Some(model.config.clone()),
                embedder: None,
                training: None,
            },
            tensors: named(&model.params),
            resume: None,
        }
    }

    pub fn from_trainer(tr: &Trainer) -> Self {
        let mut c = Self::denoiser(&tr.model);
        let o = &tr.optimizer;
        c.header.training = Some(TrainingMeta {
            step: tr.step,
            seed: tr.seed,
            curriculum: tr.curriculum.clone(),
            optimizer: OptimizerMeta { beta1: o.beta1, beta2: o.beta2, eps: o.eps, weight_decay: o.weight_decay },
        });
        c.resume = Some(ResumeState {
            t: o.t,
            params: tr.model.params.iter().map(|(_, _, m)| m.clone()).collect(),
            m: o.m.clone(),
            v: o.v.clone(),
        });
        c
    }

    pub fn embedder(e: &EmbedderPair, skeleton: &SkeletonSpec) -> Self {
        Self {
            header: CheckpointHeader {
                kind: CheckpointKind::Embedder,
                feature_dim: e.feature_dim,
                skeleton: skeleton.clone(),
                model: None,
                embedder: Some(e.config.clone()),
                training: None,
            },
            tensors: named(&e.params),
            resume: None,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        let header = toml::to_string(&self.header).context("serializing checkpoint header")?;
        push_u32(&mut out, header.len())?;
        out.extend_from_slice(header.as_bytes());
        push_u32(&mut out, self.tensors.len())?;
        for (name, m) in &self.tensors {
            push_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            push_u32(&mut out, m.rows)?;
            push_u32(&mut out, m.cols)?;
            for &v in &m.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        match &self.resume {
            None => out.push(0),
            Some(r) => {
                out.push(1);
                out.extend_from_slice(&r.t.to_le_bytes());
                for list in [&r.params, &r.m, &r.v] {
                    if list.len() != self.tensors.len() {
                        bail!("resume section has {} tensors, expected {}", list.len(), self.tensors.len());
                    }
                    for (m, (name, t)) in list.iter().zip(&self.tensors) {
                        if m.shape() != t.shape() {
                            bail!("resume tensor for '{name}' has the wrong shape");
                        }
                        for &v in &m.data {
                            out.extend_from_slice(&v.to_le_bytes());
                        }
                    }
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 32 || &bytes[..4] != CKPT_MAGIC {
            return Err(FormatError::BadMagic { expected: "checkpoint" }.into());
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            bail!("checkpoint checksum mismatch (file corrupt or truncated)");
        }
        let mut pos = 4;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos + n;
            if end > body.len() {
                return Err(FormatError::Truncated(body.len()).into());
            }
            let s = &body[pos..end];
            pos = end;
            Ok(s)
        };
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
        let version = u32_at(take(4)?) as u32;
        if version != CKPT_VERSION {
            return Err(FormatError::Version { what: "checkpoint", found: version }.into());
        }
        let hlen = u32_at(take(4)?);
        let header: CheckpointHeader = toml::from_str(std::str::from_utf8(take(hlen)?)?).context("parsing checkpoint header")?;
        let count = u32_at(take(4)?);
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = u32_at(take(4)?);
            let name = std::str::from_utf8(take(nlen)?)?.to_string();
            let rows = u32_at(take(4)?);
            let cols = u32_at(take(4)?);
            let raw = take(rows * cols * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
            tensors.push((name, Matrix::from_vec(rows, cols, data)));
        }
        let resume = match take(1)?[0] {
            0 => None,
            1 => {
                let t = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
                let mut lists = Vec::with_capacity(3);
                for _ in 0..3 {
                    let mut list = Vec::with_capacity(count);
                    for (_, m) in &tensors {
                        let raw = take(m.rows * m.cols * 8)?;
                        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                        list.push(Matrix::from_vec(m.rows, m.cols, data));
                    }
                    lists.push(list);
                }
                let v = lists.pop().expect("three lists");
                let m = lists.pop().expect("three lists");
                let params = lists.pop().expect("three lists");
                Some(ResumeState { t, params, m, v })
            }
            f => bail!("bad resume flag {f}"),
        };
        if pos != body.len() {
            return Err(FormatError::Trailing(body.len() - pos).into());
        }
        Ok(Self { header, tensors, resume })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.encode()?;
        crate::store::write_atomic(path, &bytes)?;
        Ok(file_checksum(&bytes))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        let c = Self::decode(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        Ok((c, file_checksum(&bytes)))
    }

    /// Parameters at full precision when a resume section exists.
    fn param_store(&self) -> ParamStore {
        let mut s = ParamStore::new();
        match &self.resume {
            Some(r) => {
                for ((name, _), m) in self.tensors.iter().zip(&r.params) {
                    s.add(name.clone(), m.clone());
                }
            }
            None => {
                for (name, m) in &self.tensors {
                    s.add(name.clone(), m.clone());
                }
            }
        }
        s
    }

    pub fn to_denoiser(&self) -> Result<Denoiser> {
        if self.header.kind != CheckpointKind::Denoiser {
            bail!("checkpoint holds an embedder, not a denoiser");
        }
        let config = self.header.model.clone().context("denoiser checkpoint has no model config")?;
        let mut model = Denoiser::new(config, self.header.skeleton.clone())?;
        model.load_params(self.param_store())?;
        Ok(model)
    }

    pub fn to_embedder(&self) -> Result<EmbedderPair> {
        if self.header.kind != CheckpointKind::Embedder {
            bail!("checkpoint holds a denoiser, not an embedder");
        }
        let config = self.header.embedder.clone().context("embedder checkpoint has no config")?;
        let mut e = EmbedderPair::new(config, self.header.feature_dim)?;
        e.load_params(self.param_store())?;
        Ok(e)
    }

    /// Rebuilds the exact training state written by [`Checkpoint::from_trainer`].
    pub fn to_trainer(&self) -> Result<Trainer> {
        let training = self.header.training.clone().context("checkpoint has no training state")?;
        let resume = self.resume.clone().context("checkpoint has no resume section")?;
        let model = self.to_denoiser()?;
        let schedule = build_schedule(model.config.diffusion_steps, model.config.schedule)?;
        let mut tr = Trainer::new(model, training.curriculum, schedule, training.seed)?;
        let o = training.optimizer;
        let mut opt = AdamW::with_hyper(&tr.model.params, o.beta1, o.beta2, o.eps, o.weight_decay);
        opt.m = resume.m;
        opt.v = resume.v;
        opt.t = resume.t;
        tr.optimizer = opt;
        tr.step = training.step;
        Ok(tr)
    }
}

pub fn file_checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
