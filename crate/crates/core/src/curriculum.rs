//! Staged training: conditions are switched on from weakest to strongest
//! (text, reference, global control, audio), each stage with its own budget,
//! batch size and restarted learning-rate cosine.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::condition::{Channel, ChannelSet, ConditionBundle, HashedTokenizer, MaskSet, TextFeaturizer};
use crate::error::{bail, Result};
use crate::features::MotionFeatures;
use crate::loss::{draw_noise, loss_and_grad, TrainingSample};
use crate::model::Denoiser;
use crate::optim::AdamW;
use crate::rng::stream;
use crate::schedule::NoiseSchedule;
use crate::skeleton::SkeletonSpec;
use crate::task::{make_task_mask, CellMask, TaskKind, TaskMaskSpec};
use crate::tensor::Matrix;

pub const FULL_STAGE_STEPS: [usize; 4] = [460_000, 460_000, 230_000, 920_000];
pub const FULL_BATCH_SIZES: [usize; 4] = [48, 48, 48, 16];
pub const FULL_LR_HORIZON: usize = 460_000;
pub const DEFAULT_CONDITION_DROPOUT: f64 = 0.1;
/// Length of the reference window taken from the preceding frames.
pub const REFERENCE_FRAMES: usize = 150;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LrPolicy {
    pub initial: f64,
    pub floor: f64,
    /// Steps over which the cosine runs, counted from the stage start.
    pub horizon: usize,
}

impl Default for LrPolicy {
    fn default() -> Self {
        Self { initial: 1e-4, floor: 1e-5, horizon: FULL_LR_HORIZON }
    }
}

/// Learning rate at `step` steps into a stage.
pub fn lr_at(step: usize, policy: &LrPolicy) -> f64 {
    if policy.horizon == 0 || step >= policy.horizon {
        return policy.floor;
    }
    let c = libm::cos(core::f64::consts::PI * step as f64 / policy.horizon as f64);
    policy.floor + (policy.initial - policy.floor) * 0.5 * (1.0 + c)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageSpec {
    pub name: String,
    pub channels: ChannelSet,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: LrPolicy,
    /// Probability of dropping each provided channel.
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurriculumSpec {
    pub stages: Vec<StageSpec>,
    /// Factor applied to the step budgets and the decay horizon.
    pub scale: f64,
}

fn scaled(n: usize, scale: f64) -> usize {
    libm::round(n as f64 * scale).max(1.0) as usize
}

impl CurriculumSpec {
    /// The four-stage schedule with budgets multiplied by `scale`.
    pub fn full(scale: f64) -> Self {
        let sets = [
            ChannelSet::of(&[Channel::Text]),
            ChannelSet::of(&[Channel::Text, Channel::Reference]),
            ChannelSet::of(&[Channel::Text, Channel::Reference, Channel::Global]),
            ChannelSet::ALL,
        ];
        let names = ["text", "reference", "global", "audio"];
        let stages = (0..4)
            .map(|i| StageSpec {
                name: String::from(names[i]),
                channels: sets[i],
                steps: scaled(FULL_STAGE_STEPS[i], scale),
                batch_size: FULL_BATCH_SIZES[i],
                lr: LrPolicy { horizon: scaled(FULL_LR_HORIZON, scale), ..LrPolicy::default() },
                dropout: DEFAULT_CONDITION_DROPOUT,
            })
            .collect();
        Self { stages, scale }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            bail!(InvalidArgument, "curriculum has no stages");
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.steps == 0 || s.batch_size == 0 {
                bail!(InvalidArgument, "stage '{}' needs positive steps and batch size", s.name);
            }
            if s.channels.is_empty() {
                bail!(InvalidArgument, "stage '{}' enables no channel", s.name);
            }
            if !(0.0..1.0).contains(&s.dropout) {
                bail!(InvalidArgument, "stage '{}' dropout must be in [0, 1)", s.name);
            }
            if !(s.lr.floor > 0.0 && s.lr.floor <= s.lr.initial) {
                bail!(InvalidArgument, "stage '{}' needs 0 < lr floor <= initial", s.name);
            }
            if i > 0 && !s.channels.is_superset(self.stages[i - 1].channels) {
                bail!(InvalidArgument, "stage '{}' drops a channel enabled earlier", s.name);
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.steps).sum()
    }

    /// `(stage index, step within stage)` of a global step.
    pub fn locate(&self, step: usize) -> Option<(usize, usize)> {
        let mut start = 0;
        for (i, s) in self.stages.iter().enumerate() {
            if step < start + s.steps {
                return Some((i, step - start));
            }
            start += s.steps;
        }
        None
    }

    pub fn lr_at_global(&self, step: usize) -> Option<f64> {
        self.locate(step).map(|(i, local)| lr_at(local, &self.stages[i].lr))
    }
}

/// A stored clip with everything training can condition on.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusClip {
    pub id: String,
    pub features: MotionFeatures,
    pub captions: Vec<String>,
    /// Frames immediately preceding this clip in its source sequence.
    pub reference: Option<MotionFeatures>,
    pub speech: Option<Matrix>,
    pub music: Option<Matrix>,
    /// Per-joint validity for the reconstruction loss.
    pub joint_valid: Vec<bool>,
    pub has_face: bool,
}

impl CorpusClip {
    pub fn provides(&self, c: Channel) -> bool {
        match c {
            Channel::Text => !self.captions.is_empty(),
            Channel::Global => true,
            Channel::Speech => self.speech.is_some(),
            Channel::Music => self.music.is_some(),
            Channel::Reference => self.reference.is_some(),
        }
    }
}

/// Draws a random task mask for a `frames`-long clip.
pub fn random_task_spec(rng: &mut ChaCha8Rng, kind: TaskKind, skeleton: &SkeletonSpec, frames: usize) -> TaskMaskSpec {
    match kind {
        TaskKind::Predict => TaskMaskSpec::predict(rng.gen_range(1..=frames.div_ceil(2))),
        TaskKind::Inbetween => {
            let q = (frames / 4).max(1);
            let pre = rng.gen_range(0..=q);
            let suf = rng.gen_range(usize::from(pre == 0)..=q);
            TaskMaskSpec::inbetween(pre, suf)
        }
        TaskKind::Complete => {
            let n = skeleton.joint_count();
            let count = (frames * n / 10).max(1);
            let cells = (0..count).map(|_| (rng.gen_range(0..frames), rng.gen_range(0..n))).collect();
            TaskMaskSpec::complete(cells)
        }
        TaskKind::Trajectory => {
            let mut joints = alloc::vec![0];
            if rng.gen_bool(0.5) {
                if let Some(&j) = skeleton.key_joints.iter().filter(|&&j| j != 0).collect::<Vec<_>>().choose(rng) {
                    joints.push(*j);
                }
            }
            TaskMaskSpec::trajectory(joints)
        }
        TaskKind::Dense => TaskMaskSpec::dense(),
    }
}

/// Samples one training batch for `stage`.
pub fn next_batch(
    clips: &[CorpusClip],
    stage: &StageSpec,
    skeleton: &SkeletonSpec,
    featurizer: &dyn TextFeaturizer,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainingSample>> {
    let eligible: Vec<&CorpusClip> =
        clips.iter().filter(|c| stage.channels.iter().any(|ch| c.provides(ch))).collect();
    if eligible.is_empty() {
        bail!(
            InvalidArgument,
            "stage '{}' has no eligible clips among {} (channels: {:?})",
            stage.name,
            clips.len(),
            stage.channels.iter().map(Channel::as_str).collect::<Vec<_>>()
        );
    }
    let mut batch = Vec::with_capacity(stage.batch_size);
    for _ in 0..stage.batch_size {
        let clip = eligible[rng.gen_range(0..eligible.len())];
        let frames = clip.features.frames();
        let mut bundle = ConditionBundle::default();
        let mut masks = MaskSet::new(skeleton);
        masks.recon = Some(CellMask::from_joint_validity(frames, &clip.joint_valid));
        masks.face_valid = clip.has_face;
        for ch in stage.channels.iter() {
            if !clip.provides(ch) || rng.gen::<f64>() < stage.dropout {
                continue;
            }
            match ch {
                Channel::Text => {
                    let caption = &clip.captions[rng.gen_range(0..clip.captions.len())];
                    let text = featurizer.featurize(caption);
                    if !text.is_empty() {
                        bundle.text = Some(text);
                    }
                }
                Channel::Global => {
                    let kind = TaskKind::ALL[rng.gen_range(0..TaskKind::ALL.len())];
                    let spec = random_task_spec(rng, kind, skeleton, frames);
                    masks.task = Some(make_task_mask(&spec, skeleton, frames)?);
                    if rng.gen_bool(0.5) {
                        masks = masks.key_joints_only(skeleton);
                    }
                    bundle.global = Some(clip.features.clone());
                }
                Channel::Speech => bundle.speech = clip.speech.clone(),
                Channel::Music => bundle.music = clip.music.clone(),
                Channel::Reference => bundle.reference = clip.reference.clone(),
            }
        }
        batch.push(TrainingSample { x0: clip.features.values.clone(), bundle, masks });
    }
    Ok(batch)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub stage: usize,
    pub stage_name: String,
    pub loss: f64,
    pub lr: f64,
}

/// Single-writer training state. Every random draw of step `s` comes from a
/// stream seeded by `(seed, s)`, so restoring `(model, optimizer, step)`
/// continues bit-identically.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Denoiser,
    pub optimizer: AdamW,
    pub curriculum: CurriculumSpec,
    pub schedule: NoiseSchedule,
    pub step: usize,
    pub seed: u64,
}

impl Trainer {
    pub fn new(model: Denoiser, curriculum: CurriculumSpec, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        curriculum.validate()?;
        if schedule.steps() != model.config.diffusion_steps {
            bail!(InvalidArgument, "schedule length differs from the model's diffusion steps");
        }
        let optimizer = AdamW::new(&model.params);
        Ok(Self { model, optimizer, curriculum, schedule, step: 0, seed })
    }

    pub fn tokenizer(&self) -> HashedTokenizer {
        HashedTokenizer { buckets: self.model.config.text_buckets, max_tokens: self.model.config.max_text_tokens }
    }

    pub fn finished(&self) -> bool {
        self.step >= self.curriculum.total_steps()
    }

    /// Runs one optimizer step. A non-finite loss or gradient aborts the step
    /// without touching the parameters.
    pub fn train_step(&mut self, clips: &[CorpusClip]) -> Result<StepLog> {
        let Some((si, local)) = self.curriculum.locate(self.step) else {
            bail!(InvalidArgument, "curriculum finished after {} steps", self.step);
        };
        let stage = &self.curriculum.stages[si];
        let mut rng = stream(self.seed, &[self.step as u64]);
        let tok = self.tokenizer();
        let batch = next_batch(clips, stage, &self.model.skeleton, &tok, &mut rng)?;
        let draws = draw_noise(&mut rng, &batch, &self.schedule);
        let mut drop_rng = stream(self.seed, &[self.step as u64, 1]);
        let (loss, grads) = loss_and_grad(&self.model, &batch, &self.schedule, &draws, Some(&mut drop_rng))?;
        if !loss.is_finite() || !grads.all_finite() {
            bail!(NonFinite, "loss {loss} at step {} (stage '{}')", self.step, stage.name);
        }
        let lr = lr_at(local, &stage.lr);
        self.optimizer.step(&mut self.model.params, &grads, lr);
        let log = StepLog { step: self.step, stage: si, stage_name: stage.name.clone(), loss, lr };
        self.step += 1;
        Ok(log)
    }
}
