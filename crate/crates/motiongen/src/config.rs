//! TOML configuration files for the model, the curriculum and the embedders.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use motion_core::curriculum::{CurriculumSpec, StageSpec};
use motion_core::embedder::EmbedderConfig;
use motion_core::model::ModelConfig;

/// Desk budget factor: 1/2300 of the reference step counts.
pub const DESK_SCALE: f64 = 1.0 / 2300.0;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// `[model]` table; missing keys take the desk defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default)]
    pub model: ModelConfig,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<ModelConfig> {
        let f: ModelFile = toml::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
        Ok(f.model)
    }
}

fn default_scale() -> f64 {
    DESK_SCALE
}

fn default_every() -> usize {
    100
}

/// The four-stage schedule scaled by `scale`, with optional overrides. A full
/// `stages` list replaces the generated stages entirely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumFile {
    #[serde(default = "default_scale")]
    pub scale: f64,
    pub batch_sizes: Option<Vec<usize>>,
    pub dropout: Option<f64>,
    pub lr_initial: Option<f64>,
    pub lr_floor: Option<f64>,
    /// Steps between periodic checkpoints.
    #[serde(default = "default_every")]
    pub checkpoint_every: usize,
    pub stages: Option<Vec<StageSpec>>,
}

impl Default for CurriculumFile {
    fn default() -> Self {
        Self {
            scale: DESK_SCALE,
            batch_sizes: None,
            dropout: None,
            lr_initial: None,
            lr_floor: None,
            checkpoint_every: default_every(),
            stages: None,
        }
    }
}

impl CurriculumFile {
    pub fn load(path: &Path) -> Result<Self> {
        toml::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn build(&self) -> Result<CurriculumSpec> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            bail!("curriculum scale must be positive, got {}", self.scale);
        }
        if self.checkpoint_every == 0 {
            bail!("checkpoint_every must be positive");
        }
        let mut spec = CurriculumSpec::full(self.scale);
        if let Some(stages) = &self.stages {
            spec.stages = stages.clone();
        }
        if let Some(b) = &self.batch_sizes {
            if b.len() != spec.stages.len() {
                bail!("batch_sizes has {} entries for {} stages", b.len(), spec.stages.len());
            }
            for (s, &n) in spec.stages.iter_mut().zip(b) {
                s.batch_size = n;
            }
        }
        for s in &mut spec.stages {
            if let Some(d) = self.dropout {
                s.dropout = d;
            }
            if let Some(lr) = self.lr_initial {
                s.lr.initial = lr;
            }
            if let Some(lr) = self.lr_floor {
                s.lr.floor = lr;
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderFile {
    #[serde(default)]
    pub embedder: EmbedderConfig,
}

impl EmbedderFile {
    pub fn load(path: &Path) -> Result<EmbedderConfig> {
        let f: EmbedderFile = toml::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
        f.embedder.validate()?;
        Ok(f.embedder)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_to_every_stage() {
        let f: CurriculumFile = toml::from_str("scale = 0.001\nbatch_sizes = [2, 2, 2, 1]\ndropout = 0.0").unwrap();
        let c = f.build().unwrap();
        assert_eq!(c.stages.iter().map(|s| s.batch_size).collect::<Vec<_>>(), [2, 2, 2, 1]);
        assert!(c.stages.iter().all(|s| s.dropout == 0.0));
        assert_eq!(c.stages[0].steps, 460);
    }

    #[test]
    fn model_file_defaults_to_desk() {
        let cfg: ModelFile = toml::from_str("[model]\nlayers = 1").unwrap();
        assert_eq!(cfg.model, ModelConfig { layers: 1, ..ModelConfig::desk() });
    }
}
